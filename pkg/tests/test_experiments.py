import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from relaxlab.experiments import (
    ConfigError,
    compare,
    emit_plot_data,
    format_compare,
    load_config,
    preset_centers,
    run,
)
from relaxlab.discretization import build_domain
from conftest import CONFIG_DIR, config_path, load_summary


def base_config() -> dict:
    with open(config_path("constant_box")) as f:
        return json.load(f)


def write_config(tmp_path: Path, cfg: dict) -> Path:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


# --- config parsing ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["hedgehog_b3", "constant_box",
                                  "hedgehog_ldg", "hedgehog_pair"])
def test_bundled_configs_parse(name):
    rc = load_config(config_path(name))
    assert rc.name == name
    assert rc.eps_values == sorted(rc.eps_values, reverse=True)
    rc.build_potential()
    rc.build_domain(fast=True)


def test_unknown_top_level_key(tmp_path):
    cfg = base_config()
    cfg["frobnicate"] = 1
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_unknown_diagnostics_key(tmp_path):
    cfg = base_config()
    cfg["diagnostics"]["mystery"] = 2
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_missing_required_section(tmp_path):
    cfg = base_config()
    del cfg["schedule"]
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_bad_eps_schedule(tmp_path):
    cfg = base_config()
    cfg["schedule"]["eps"] = [0.1, 0.2]
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_negative_collar_rejected(tmp_path):
    cfg = base_config()
    cfg["diagnostics"]["bochner_collar"] = -0.5
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_unknown_potential(tmp_path):
    cfg = base_config()
    cfg["potential"] = {"name": "sine_gordon"}
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, cfg))


def test_fast_requires_even_divisions(tmp_path):
    cfg = base_config()
    cfg["domain"]["divisions"] = 9
    rc = load_config(write_config(tmp_path, cfg))
    with pytest.raises(ConfigError):
        rc.build_domain(fast=True)


def test_unresolvable_rho_max_fails_fast(tmp_path):
    cfg = base_config()
    cfg["domain"]["divisions"] = 6
    cfg["diagnostics"]["rho_max"] = 0.2  # below 4h on this grid
    rc = load_config(write_config(tmp_path, cfg))
    with pytest.raises(ConfigError):
        run(rc, tmp_path / "out")


# --- center presets ------------------------------------------------------------------

def test_ball23_centers():
    dom = build_domain("ball", center=[0, 0, 0], radius=1.0, divisions=24)
    centers = preset_centers("ball23", dom)
    assert len(centers) == 23
    arr = np.array(centers)
    assert len(np.unique(arr.round(12), axis=0)) == 23
    touching = sum(1 for c in centers if abs(dom.sdf(np.array(c))) <= 1e-9)
    assert touching == 6
    # nobody outside the closed domain
    assert all(dom.sdf(np.array(c)) <= 1e-9 for c in centers)


def test_box9_centers():
    dom = build_domain("box", lo=[-0.5] * 3, hi=[0.5] * 3, divisions=8)
    centers = preset_centers("box9", dom)
    assert len(centers) == 9
    assert any(np.allclose(c, [0, 0, 0]) for c in centers)


def test_unknown_preset():
    dom = build_domain("box", lo=[-0.5] * 3, hi=[0.5] * 3, divisions=8)
    with pytest.raises(ConfigError):
        preset_centers("grid99", dom)


# --- artifacts ------------------------------------------------------------------------

def test_run_artifacts_complete(constant_fast):
    out, summary = constant_fast
    for name in ("summary.json", "config.json", "convergence.csv",
                 "phi_profiles.csv", "monotonicity.csv", "bochner.csv"):
        assert (out / name).is_file(), name
    assert (out / "fields" / "u_star.field").is_file()
    n_stages = len(summary["schedule"])
    traces = sorted((out / "traces").glob("stage_*.csv"))
    assert len(traces) == n_stages
    # acceptance lines cover ids 1..11 exactly once
    ids = [line["id"] for line in summary["acceptance"]]
    assert ids == list(range(1, 12))


def test_summary_echoes_config(constant_fast):
    out, summary = constant_fast
    with open(out / "config.json") as f:
        echoed = json.load(f)
    assert echoed["name"] == "constant_box"
    assert echoed["schedule"]["eps"] == summary["schedule"]


def test_convergence_csv_parses(constant_fast):
    out, _ = constant_fast
    rows = (out / "convergence.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    assert header[0] == "eps"
    assert len(rows) >= 2
    vals = [float(x) for x in rows[1].split(",")]
    assert len(vals) == len(header)


def test_determinism_repeated_run(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run(config_path("constant_box"), a, fast=True)
    run(config_path("constant_box"), b, fast=True)
    for f in sorted(a.rglob("*")):
        if f.is_dir() or f.name == "summary.json":
            continue
        rel = f.relative_to(a)
        assert f.read_bytes() == (b / rel).read_bytes(), rel
    result = compare(a, b)
    assert result["rows"] == []


# --- compare -----------------------------------------------------------------------------

def test_compare_self_is_empty(constant_fast):
    out, _ = constant_fast
    result = compare(out, out)
    assert result["rows"] == []
    assert "no differences" in format_compare(result)


def test_compare_refinement_verdicts(refinement_pair):
    coarse, fine = refinement_pair
    result = compare(coarse, fine)
    names = {c["name"]: c["status"] for c in result["checks"]}
    assert names.get("fitted_K_refinement_stability") == "PASS"
    assert names.get("bochner_refinement_stability") == "PASS"


# --- plots --------------------------------------------------------------------------------

def test_emit_plot_data(constant_fast):
    out, _ = constant_fast
    written = emit_plot_data(out)
    assert written
    svgs = [p for p in written if str(p).endswith(".svg")]
    assert svgs
    for svg in svgs:
        root = ET.parse(svg).getroot()
        assert root.tag.endswith("svg")
    dats = [p for p in written if str(p).endswith(".dat")]
    assert dats
    for dat in dats:
        text = Path(dat).read_text()
        assert text.startswith("#")


def test_plot_deterministic(constant_fast):
    out, _ = constant_fast
    first = {Path(p): Path(p).read_bytes() for p in emit_plot_data(out)}
    second = {Path(p): Path(p).read_bytes() for p in emit_plot_data(out)}
    assert first == second


# --- command line ---------------------------------------------------------------------------

def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "relaxlab.cli", *args],
                          capture_output=True, text=True)


def test_cli_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x"}))
    proc = run_cli("run", str(bad))
    assert proc.returncode == 2
    assert "config error" in proc.stderr


def test_cli_missing_file_is_config_error(tmp_path):
    proc = run_cli("run", str(tmp_path / "nope.json"))
    assert proc.returncode in (1, 2)


def test_cli_run_and_plot(tmp_path):
    out = tmp_path / "cli_run"
    proc = run_cli("run", str(config_path("constant_box")), "--fast",
                   "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert "[PASS]" in proc.stdout
    assert (out / "summary.json").is_file()
    proc2 = run_cli("plot", str(out))
    assert proc2.returncode == 0, proc2.stderr
    assert (out / "plots").is_dir()


def test_cli_compare(tmp_path):
    out = tmp_path / "r"
    run(config_path("constant_box"), out, fast=True)
    proc = run_cli("compare", str(out), str(out))
    assert proc.returncode == 0
    assert "no differences" in proc.stdout
