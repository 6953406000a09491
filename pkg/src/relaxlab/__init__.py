"""relaxlab: a numerical laboratory for singular-perturbation energy
minimization with manifold-valued boundary data.

The package minimizes relaxed energies of the form

    E_eps(u) = 1/2 int |grad u|^2 + eps^-2 int f(u)

on bounded 2-D and 3-D domains, follows minimizers along decreasing eps,
computes the manifold-constrained Dirichlet minimizer they approach, and
measures the quantities that control that limit: renormalized energy
profiles and their monotonicity margins, stress-energy conservation,
the Bochner residual of the energy density, boundary gradient bounds, and
uniform convergence away from the estimated singular set.
"""

from .potentials import (Potential, VacuumManifold, NormalFormMatrix,
                         OutsideTubeError, make_ginzburg_landau,
                         make_landau_de_gennes, normal_form, verify_hypotheses)
from .discretization import (DomainSpec, Field, BoundaryData, build_domain,
                             make_boundary_data, ball_energy, save_field,
                             load_field)
from .solver import (SolverConfig, EpsSchedule, ConvergenceRecord,
                     energy, energy_parts, energy_gradient, minimize,
                     continuation, harmonic_interpolation, initial_guess,
                     harmonic_map_minimize)
from .diagnostics import (DiagnosticsError, DiagnosticsReport, energy_density,
                          profile_grid, renormalized_profile, compute_profiles,
                          monotonicity_check, fit_monotonicity_constant,
                          stress_tensor, stress_divergence_report,
                          bochner_residual, singular_set_estimate,
                          uniform_convergence_profile, boundary_gradient_report)
from .experiments import (ConfigError, RunConfig, load_config, run, compare,
                          emit_plot_data)

__version__ = "0.1.0"
