from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import simulate
from analysis import Violation
from errors import GridMismatchError
from integrator import TimeSpec, solve
from mesh_fields import Field, GridSpec, State
from models import InitialData, PredPreyParams
from run_config import parse_config
from simulate import (
    compare,
    diagnostics_frame,
    main,
    output_directory,
    read_snapshot,
    snapshot_frame,
    write_snapshot,
)

RUN = """\
[model]
model = competition
variant = {variant}

[grid]
n = 24

[time]
t_end = {t_end}
snapshot_stride = 10

[params]
chi = {chi}
eps = 0.05

[ic]
family = gaussian_bump
center = 0.4
width = 0.1
"""


def write_config(tmp_path: Path, name: str = "run.cfg", **fields) -> Path:
    values = {"variant": "indirect", "t_end": 0.02, "chi": 1.0} | fields
    path = tmp_path / name
    path.write_text(RUN.format(**values))
    return path


def read_summary(path: Path) -> dict[str, str]:
    items = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition(" = ")
        items[key] = value
    return items


def test_zero_horizon_writes_one_snapshot(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "run", "-c", str(write_config(tmp_path, t_end=0.0)), "-o", str(out)]) == 0
    assert sorted(p.name for p in out.glob("snapshot_*.csv")) == ["snapshot_00000.csv"]
    summary = read_summary(out / "summary.txt")
    assert summary["status"] == "ok"
    assert summary["steps"] == "0"
    assert (out / "config.cfg").exists()
    header, frame = read_snapshot(out / "snapshot_00000.csv")
    assert header["time"] == "0"
    assert header["model"] == "indirect"
    assert list(frame.columns) == ["x", "u", "v", "w"]
    assert len(frame) == 24


def test_run_outputs_and_determinism(tmp_path):
    config = write_config(tmp_path)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["-q", "run", "-c", str(config), "-o", str(first)]) == 0
    assert main(["-q", "run", "-c", str(config), "-o", str(second)]) == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        lines_a = [ln for ln in (first / name).read_text().splitlines() if "created" not in ln]
        lines_b = [ln for ln in (second / name).read_text().splitlines() if "created" not in ln]
        assert lines_a == lines_b, name
    diagnostics = pd.read_csv(first / "diagnostics.csv")
    assert diagnostics["t"].iloc[-1] == pytest.approx(0.02)
    assert {"min_u", "l1_w", "grad_gap"} <= set(diagnostics.columns)
    snapshot = sorted(first.glob("snapshot_*.csv"))[-1]
    assert main(["compare", str(snapshot), str(sorted(second.glob("snapshot_*.csv"))[-1])]) == 0


def test_decoupled_relaxed_and_limit_runs_compare_equal(tmp_path):
    relaxed, limit = tmp_path / "relaxed", tmp_path / "limit"
    for variant, out in (("indirect", relaxed), ("limit", limit)):
        config = write_config(tmp_path, f"{variant}.cfg", variant=variant, chi=0.0, t_end=0.05)
        assert main(["-q", "run", "-c", str(config), "-o", str(out)]) == 0
    final_relaxed = sorted(relaxed.glob("snapshot_*.csv"))[-1]
    final_limit = sorted(limit.glob("snapshot_*.csv"))[-1]
    assert final_relaxed.name == final_limit.name
    args = ["compare", str(final_relaxed), str(final_limit), "--tol", "1e-7", "--columns", "u", "v"]
    assert main(args) == 0
    limit_columns = pd.read_csv(limit / "diagnostics.csv").columns
    assert "min_w" not in limit_columns
    assert "grad_gap" not in limit_columns


def _snapshot(tmp_path, name, values, n=8):
    grid = GridSpec.uniform(n)
    f = Field(grid, values)
    path = tmp_path / name
    write_snapshot(path, State(f, f, f, 0.5), ("u", "v", "w"), "0123456789abcdef", "indirect")
    return path


def test_compare_reports_worst_cell(tmp_path):
    values = np.linspace(0.0, 1.0, 8)
    changed = values.copy()
    changed[5] += 1e-3
    a = _snapshot(tmp_path, "a.csv", values)
    b = _snapshot(tmp_path, "b.csv", changed)
    assert compare(a, a, 0.0).passed
    result = compare(a, b, 1e-6)
    assert not result.passed
    assert result.worst_row == 5
    assert result.worst_location == pytest.approx((11 / 16,))
    assert result.max_diff["u"] == pytest.approx(1e-3)
    assert compare(a, b, 1e-2).passed
    assert main(["compare", str(a), str(b), "--tol", "1e-6"]) == simulate.COMPARE_FAILED


def test_compare_rejects_other_grids(tmp_path):
    a = _snapshot(tmp_path, "a.csv", np.zeros(8))
    b = _snapshot(tmp_path, "b.csv", np.zeros(16), n=16)
    with pytest.raises(GridMismatchError):
        compare(a, b, 1.0)
    with pytest.raises(GridMismatchError):
        compare(a, a, 1.0, columns=["z"])


def test_snapshot_values_survive_text(tmp_path):
    values = np.random.default_rng(7).random(8)
    header, frame = read_snapshot(_snapshot(tmp_path, "a.csv", values))
    assert np.array_equal(frame["u"].to_numpy(), values)
    assert header["digest"] == "0123456789abcdef"
    assert header["grid"] == "dim=1 n=8 length=1.0"


def test_two_dimensional_snapshot_columns():
    grid = GridSpec(n=(3, 2), length=1.0)
    f = Field(grid, np.arange(6.0))
    frame = snapshot_frame(State(f, f, None), PredPreyParams.species)
    assert list(frame.columns) == ["x", "y", "z", "v"]
    assert frame["x"].tolist() == pytest.approx([1 / 6, 0.5, 5 / 6] * 2)
    assert frame["y"].tolist() == pytest.approx([0.25] * 3 + [0.75] * 3)
    assert frame["z"].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_predprey_diagnostics_use_species_names(line_grid, predprey):
    level = Field.constant(line_grid, 0.5)
    traj = solve(InitialData(level, level, level), predprey, TimeSpec(t_end=0.01))
    columns = diagnostics_frame(traj, predprey.species).columns
    assert {"t", "min_z", "max_z", "l1_z", "sq_z", "min_w", "grad_sq_v"} <= set(columns)
    assert "min_u" not in columns


@pytest.mark.parametrize(
    ("edit", "code"),
    [
        (lambda text: text.replace("eps = 0.05", "eps = 2"), 2),
        (lambda text: text.replace("width = 0.1", "width = 0.1\nvalue = 3"), 2),
        (
            lambda text: text.replace("center = 0.4", "center = 0.4\namplitude = 2e6").replace(
                "snapshot_stride = 10", "snapshot_stride = 10\ndt = 1e-3"
            ),
            4,
        ),
    ],
)
def test_exit_codes(tmp_path, edit, code):
    config = write_config(tmp_path)
    config.write_text(edit(config.read_text()))
    assert main(["-q", "run", "-c", str(config), "-o", str(tmp_path / "out")]) == code


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", "-c", str(tmp_path / "absent.cfg")]) == 5


def test_violations_still_exit_zero(tmp_path, monkeypatch):
    real = simulate.monitor_invariants

    def failing(traj, p):
        report = real(traj, p)
        return replace(report, violations=(Violation("linf_v", 0.01, 1.0, 1.5),))

    monkeypatch.setattr(simulate, "monitor_invariants", failing)
    out = tmp_path / "out"
    assert main(["-q", "run", "-c", str(write_config(tmp_path)), "-o", str(out)]) == 0
    summary = read_summary(out / "summary.txt")
    assert summary["status"] == "violations"
    assert summary["invariants"] == "failed"
    assert summary["violation.1"] == "linf_v t=0.01 observed=1.5 bound=1"


def test_sweep_outputs(tmp_path):
    config = write_config(tmp_path, t_end=0.01, chi=0.0)
    config.write_text(
        config.read_text().replace("snapshot_stride = 10", "snapshot_stride = 5\ndt = 1e-3")
        + "\n[sweep]\neps = [1e-1, 1e-2, 1e-3]\n"
    )
    out = tmp_path / "sweep"
    assert main(["-q", "sweep", "-c", str(config), "-o", str(out), "--plot"]) == 0
    report = pd.read_csv(out / "report.csv")
    assert report["eps"].tolist() == pytest.approx([0.1, 0.01, 0.001])
    assert (report["sup_t_L2_u"] == 0.0).all()
    summary = read_summary(out / "summary.txt")
    assert summary["status"] == "ok"
    assert summary["fit_status.sup_t_L2_u"] == "below floor"
    assert summary["eps"] == "0.10000000000000001, 0.01, 0.001"
    for member in ("limit", "eps_0.1", "eps_0.01", "eps_0.001"):
        assert (out / member / "diagnostics.csv").exists()
    assert (out / "convergence.png").exists()
    assert "[sweep]" in (out / "config.cfg").read_text()


def test_repeated_sweeps_write_identical_reports(tmp_path):
    config = write_config(tmp_path, t_end=0.01, chi=1.0)
    config.write_text(
        config.read_text().replace("snapshot_stride = 10", "snapshot_stride = 5\ndt = 1e-3")
        + "\n[sweep]\neps = [1e-1, 1e-2, 1e-3]\n"
    )
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        assert main(["-q", "sweep", "-c", str(config), "-o", str(out)]) == 0
    for name in ("report.csv", "summary.txt"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert (pd.read_csv(first / "report.csv")["sup_t_L2_u"] > 0.0).all()


def test_manufactured_solution_command(tmp_path):
    config = tmp_path / "mms.cfg"
    config.write_text(
        "[model]\nmodel = competition\n\n[grid]\nn = 16\n\n[time]\nt_end = 0.02\n\n"
        "[ic]\nfamily = constant\nvalue = 1.0\n\n[mms]\nlevels = 2\nn0 = 16\ndt0 = 2e-3\n"
    )
    out = tmp_path / "mms"
    assert main(["-q", "mms", "-c", str(config), "-o", str(out)]) == 0
    frame = pd.read_csv(out / "mms.csv")
    assert frame["n"].tolist() == [16, 32]
    assert (frame["err_u"] > 0).all()
    assert "order.u" in read_summary(out / "summary.txt")


def test_output_directory_precedence(tmp_path):
    cfg = parse_config(RUN.format(variant="indirect", t_end=0.1, chi=1.0))
    parser = simulate.build_parser()
    args = parser.parse_args(["run", "-c", "x.cfg"])
    assert output_directory(args, cfg, {}) == Path("results")
    assert output_directory(args, cfg, {"output": {"directory": "elsewhere"}}) == Path("elsewhere")
    with_output = replace(cfg, output="configured")
    assert output_directory(args, with_output, {}) == Path("configured")
    args = parser.parse_args(["run", "-c", "x.cfg", "-o", str(tmp_path)])
    assert output_directory(args, with_output, {}) == tmp_path
