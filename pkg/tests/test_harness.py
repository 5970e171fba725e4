import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from iim_poisson.errors import ConfigError
from iim_poisson.harness import (
    COLUMNS,
    FIELD_MAGIC,
    RunSpec,
    build_problem,
    fit_slope,
    load_run_file,
    main,
    parse_run_text,
    read_field,
    run_study,
    write_field,
)


def _csv(path):
    lines = path.read_text().splitlines()
    return lines[0], [l for l in lines[1:] if not l.startswith("#")], [l for l in lines if l.startswith("#")]


# ---------------------------------------------------------------- run files

def test_parse_run_text():
    values, gp = parse_run_text("""
        # a comment
        study = converge
        bc = Neumann          # alias
        resolutions = 16, 32
        beta_plus = 0.5
        geometry.r0 = 0.3
        geometry.center = 0.5, 0.5
        preconditioners = mg, SW
    """)
    assert values["study"] == "converge"
    assert values["condition"] == "neumann"
    assert values["resolutions"] == (16, 32)
    assert values["beta_plus"] == 0.5
    assert values["preconditioners"] == ("mg", "sw")
    assert gp == {"r0": 0.3, "center": (0.5, 0.5)}


@pytest.mark.parametrize("text", ["nonsense", "colour = red", "order = four",
                                  "geometry.r0 = big", "geometry_params = 1"])
def test_parse_run_text_rejects(text):
    with pytest.raises(ConfigError):
        parse_run_text(text)


def test_cli_overrides_file(tmp_path):
    f = tmp_path / "run.txt"
    f.write_text("study = truncation\norder = 6\nborder = 7\nresolutions = 16\n")
    spec = load_run_file(f, {"border": 8, "resolutions": None})
    assert (spec.order, spec.border, spec.resolutions) == (6, 8, (16,))
    assert spec.study == "truncation"


def test_missing_run_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_file(tmp_path / "absent.txt")


@pytest.mark.parametrize("kw", [
    {"study": "plot"}, {"order": 3}, {"border": 9}, {"resolutions": (30,)},
    {"resolutions": (96,)}, {"resolutions": ()}, {"beta_plus": 0.0}, {"condition": "robin"},
    {"cycle": ("f",)}, {"preconditioners": ("ilu",)}, {"geometry": "blob"}, {"case": "x"},
])
def test_runspec_validation(kw):
    with pytest.raises(ConfigError):
        RunSpec(**kw)


def test_geometry_params_reach_geometry():
    spec = RunSpec(geometry_params={"r0": 0.3})
    assert spec.make_geometry().r0 == 0.3
    with pytest.raises(ConfigError):
        RunSpec(geometry_params={"wobble": 1}).make_geometry()


# ------------------------------------------------------------------- fields

@settings(max_examples=20)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_field_round_trip(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("fld") / "u.fld"
    write_field(p, a)
    b = read_field(p)
    assert b.shape == a.shape
    assert b.tobytes() == np.ascontiguousarray(a, "<f8").tobytes()


def test_field_layout(tmp_path):
    p = tmp_path / "u.fld"
    write_field(p, np.arange(6.0).reshape(2, 3))
    raw = p.read_bytes()
    assert raw[:8] == FIELD_MAGIC
    assert int.from_bytes(raw[8:16], "little") == 2
    assert int.from_bytes(raw[16:24], "little") == 3
    assert np.frombuffer(raw[24:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]
    with pytest.raises(ValueError):
        write_field(p, np.zeros(3))
    p.write_bytes(b"garbage" * 4)
    with pytest.raises(ValueError):
        read_field(p)


def test_fit_slope():
    n = np.array([16, 32, 64])
    assert fit_slope(n, 3.0 * n**-2.5) == pytest.approx(2.5)
    assert np.isnan(fit_slope(n, [0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------- CLI

def test_cli_csv_header_and_runspec(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["truncation", "--nx", "16,32", "--out", str(out)]) == 0
    header, rows, comments = _csv(out)
    assert header == ",".join(COLUMNS["truncation"])
    assert len(rows) == 3 and rows[-1].startswith("slope")
    assert len(comments) == 1 and comments[0].startswith("# runspec ")
    spec = json.loads(comments[0][len("# runspec "):])
    assert spec["study"] == "truncation" and spec["resolutions"] == [16, 32]


def test_cli_deterministic(tmp_path):
    out = tmp_path / "a.csv"
    args = ["converge", "--nx", "16,32", "--bc", "neumann", "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


@pytest.mark.parametrize("argv", [
    ["converge", "--nx", "30"],
    ["converge", "--order", "5"],
    ["converge", "--bc", "robin"],
    ["nosuchstudy"],
    ["converge", "--run-file", "/nonexistent/run.txt"],
    ["iterations", "--preconditioners", "ilu"],
])
def test_cli_config_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_cli_nonconverged_exit_2(tmp_path):
    run = tmp_path / "run.txt"
    run.write_text("max_iter = 10\npreconditioners = none\n")
    out = tmp_path / "i.csv"
    assert main(["iterations", "--run-file", str(run), "--nx", "32", "--out", str(out)]) == 2
    _, rows, comments = _csv(out)
    assert rows == ["32,none,10,max_iterations"]
    assert comments


@pytest.mark.slow
def test_unpreconditioned_hits_cap():
    res = run_study(RunSpec(study="iterations", resolutions=(256,), preconditioners=("none",)))
    assert not res.converged
    assert res.rows == [(256, "none", 500, "max_iterations")]


def test_mgrate_rows(tmp_path):
    res = run_study(RunSpec(study="mgrate", resolutions=(32,), cycle=("v", "w"), mg_iterations=4))
    assert [r[2] for r in res.rows[:6]] == [0, 1, 2, 3, 4, "mean"]
    assert set(res.summary) == {("v", 32), ("w", 32)}
    assert 0 < res.summary["v", 32] < 1


def test_spectrum_rows():
    res = run_study(RunSpec(study="spectrum", resolutions=(16,), krylov_dim=30))
    re = [r[1] for r in res.rows]
    assert re == sorted(re)
    assert res.summary[16]["max_re"] <= 1e-8


# -------------------------------------------------------------------- solve

def test_solve_residual_below_tolerance(tmp_path):
    fld = tmp_path / "u.fld"
    spec = RunSpec(study="solve", resolutions=(32,), tol=1e-9, field_out=str(fld))
    res = run_study(spec)
    assert res.converged
    row = res.rows[0]
    assert row[0] == 32 and row[2] == "converged"
    prob = build_problem(spec, 32)
    u = read_field(fld).ravel()
    np.testing.assert_array_equal(u, res.summary[32]["solution"])
    r = prob.rhs - prob.op.apply(u)
    r[~prob.op.domain] = 0.0
    assert np.linalg.norm(r) <= 1e-6 * np.linalg.norm(prob.rhs)


def test_solve_field_names_per_resolution(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["solve", "--nx", "16,32", "--out", str(out)]) == 0
    assert (tmp_path / "s_nx16.fld").exists() and (tmp_path / "s_nx32.fld").exists()


def test_interface_error_decreases():
    spec = RunSpec(study="solve", condition="jump", beta_plus=0.5, resolutions=(64, 128))
    res = run_study(spec)
    errs = [r[4] for r in res.rows]
    assert res.converged and errs[1] < errs[0]
