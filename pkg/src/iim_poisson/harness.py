"""Study drivers and the ``iim-poisson`` command line.

Each ``run_*`` function takes a :class:`RunSpec`, streams CSV rows to an
optional sink as they are produced, and returns a :class:`StudyResult`.
The CLI writes the rows, closes the file with a comment row holding the
full run specification, and maps the outcome to an exit code (0 success,
2 non-converged entry, 1 configuration or solver error).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import struct
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigError, IIMError
from .geometry import GEOMETRIES, Condition, make_geometry
from .grid import Grid2D, PointClass
from .krylov import SolverConfig, exact_inverse, solve, solve_augmented
from .manufactured import CASES, get_case
from .multigrid import MGHierarchy
from .operator import ImmersedOperator, extremal_spectrum, interior_stencil, sigma_max
from .shortley_weller import SWOperator

STUDIES = ("converge", "truncation", "iterations", "mgrate", "spectrum", "solve")
PRECONDITIONERS = ("none", "mg", "sw", "iim23", "iim24", "iim43", "iim44")
FIELD_MAGIC = b"IIMFLD01"

COLUMNS = {
    "converge": ("nx", "solution_error", "boundary_error", "gradient_error", "iterations"),
    "truncation": ("nx", "affected_error", "interior_error"),
    "iterations": ("nx", "preconditioner", "iterations", "status"),
    "mgrate": ("nx", "cycle", "iteration", "residual", "rho"),
    "spectrum": ("nx", "re", "im"),
    "solve": ("nx", "iterations", "status", "residual", "solution_error"),
}


# tolerance used when a study measures discretisation error rather than
# iteration counts; the algebraic error must sit well below the truncation error
ACCURATE_TOL = 1e-12


@dataclass
class RunSpec:
    """Everything that determines a study's output."""

    study: str = "converge"
    geometry: str = "star"
    geometry_params: dict = field(default_factory=dict)
    condition: str = "dirichlet"
    order: int = 4
    border: int = 5
    resolutions: tuple = (64, 128, 256, 512)
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    case: str | None = None
    out: str | None = None
    field_out: str | None = None
    tol: float | None = None
    max_iter: int = 500
    restart: int | None = None
    side: str = "left"
    cycle: tuple = ("v",)
    preconditioners: tuple = ("mg",)
    mg_iterations: int = 10
    krylov_dim: int = 200
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.geometry not in GEOMETRIES and self.geometry != "none":
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        try:
            Condition(self.condition)
        except ValueError:
            raise ConfigError(f"unknown condition {self.condition!r}") from None
        if self.order not in (2, 4, 6) or not 3 <= self.border <= 8:
            raise ConfigError(f"(n, k) = ({self.order}, {self.border}) outside {{2,4,6}} x {{3..8}}")
        if not self.resolutions:
            raise ConfigError("resolution list is empty")
        for nx in self.resolutions:
            if nx < 8 or (nx // 8) * 8 != nx or (nx // 8) & (nx // 8 - 1):
                raise ConfigError(f"resolution {nx} is not of the form 8 * 2^L")
        if not (self.beta_plus > 0 and self.beta_minus > 0):
            raise ConfigError("coefficients must be positive")
        if self.case is not None and self.case not in CASES:
            raise ConfigError(f"unknown manufactured case {self.case!r}")
        if any(c not in ("v", "w") for c in self.cycle):
            raise ConfigError(f"cycle kinds must be v or w, got {self.cycle}")
        bad = [p for p in self.preconditioners if p not in PRECONDITIONERS]
        if bad:
            raise ConfigError(f"unknown preconditioner(s) {bad}; choose from {PRECONDITIONERS}")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tolerance must be positive")
        if self.side not in ("left", "right"):
            raise ConfigError("side must be left or right")

    @property
    def cond(self):
        return Condition(self.condition)

    @property
    def case_name(self):
        if self.case is not None:
            return self.case
        return "interface" if self.cond is Condition.JUMP else "sine"

    def make_geometry(self):
        if self.geometry == "none":
            return None
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in self.geometry_params.items()}
        try:
            return make_geometry(self.geometry, **params)
        except TypeError as exc:
            raise ConfigError(f"bad geometry parameters: {exc}") from None

    def solver_config(self, nx, accurate=False):
        tol = self.tol
        if tol is None:
            tol = ACCURATE_TOL if accurate else 1e-6 / nx
        return SolverConfig(tol=tol, max_iter=self.max_iter, restart=self.restart, side=self.side)

    def to_json(self):
        d = asdict(self)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


# -- run files ----------------------------------------------------------------

_INT_KEYS = {"order", "border", "max_iter", "restart", "mg_iterations", "krylov_dim", "seed"}
_FLOAT_KEYS = {"beta_plus", "beta_minus", "tol"}
_LIST_KEYS = {"resolutions", "cycle", "preconditioners"}


def _parse_number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _coerce(key, value):
    value = value.strip()
    try:
        if key in _INT_KEYS:
            return None if value.lower() == "none" else int(value)
        if key in _FLOAT_KEYS:
            return None if value.lower() == "none" else float(value)
        if key == "resolutions":
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
        if key in _LIST_KEYS:
            return tuple(v.strip().lower() for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {value!r}") from None
    if key in ("case", "out", "field_out") and value.lower() == "none":
        return None
    return value.lower() if key in ("study", "geometry", "condition", "side") else value


def parse_run_text(text):
    """``key = value`` lines with ``#`` comments; ``geometry.<name>`` sets geometry parameters."""
    known = {f.name for f in fields(RunSpec)}
    values, gparams = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key.startswith("geometry."):
            parts = [p for p in value.split(",") if p.strip()]
            try:
                nums = [_parse_number(p.strip()) for p in parts]
            except ValueError:
                raise ConfigError(f"line {lineno}: geometry parameter must be numeric") from None
            gparams[key.split(".", 1)[1]] = nums[0] if len(nums) == 1 else tuple(nums)
            continue
        if key == "bc":
            key = "condition"
        if key not in known or key == "geometry_params":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values, gparams


def load_run_file(path, overrides=None):
    """Build a :class:`RunSpec` from a run file plus CLI overrides (which win)."""
    try:
        text = Path(path).read_text() if path is not None else ""
    except OSError as exc:
        raise ConfigError(f"cannot read run file: {exc}") from None
    values, gparams = parse_run_text(text)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunSpec(geometry_params=gparams, **values)


# -- output -----------------------------------------------------------------

class CSVSink:
    """Streams rows to a text handle, flushing after each one."""

    def __init__(self, handle, columns):
        self.handle = handle
        self.writer = csv.writer(handle, lineterminator="\n")
        self.writer.writerow(columns)
        handle.flush()

    def row(self, values):
        self.writer.writerow([_fmt(v) for v in values])
        self.handle.flush()

    def close(self, spec):
        self.handle.write(f"# runspec {spec.to_json()}\n")
        self.handle.flush()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class StudyResult:
    columns: tuple
    rows: list = field(default_factory=list)
    converged: bool = True
    summary: dict = field(default_factory=dict)

    def to_csv(self, spec):
        buf = io.StringIO()
        sink = CSVSink(buf, self.columns)
        for r in self.rows:
            sink.row(r)
        sink.close(spec)
        return buf.getvalue()


class _Emitter:
    def __init__(self, result, sink):
        self.result = result
        self.sink = sink

    def __call__(self, *values):
        self.result.rows.append(tuple(values))
        if self.sink is not None:
            self.sink.row(values)


def write_field(path, values):
    """Binary dump: magic, two little-endian uint64 dims, row-major float64 data."""
    a = np.ascontiguousarray(values, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("field dump expects a 2-D array")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<QQ", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_field(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a field dump")
    nx, ny = struct.unpack("<QQ", raw[8:24])
    data = np.frombuffer(raw, dtype="<f8", count=nx * ny, offset=24)
    return data.reshape(nx, ny).astype(float)


def fit_slope(nxs, errors):
    """Order of convergence: minus the least-squares slope of log2(error) against log2(nx)."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(nxs, dtype=float)
    ok = e > 0
    if ok.sum() < 2:
        return float("nan")
    return float(-np.polyfit(np.log2(n[ok]), np.log2(e[ok]), 1)[0])


# -- problem set-up -----------------------------------------------------------

@dataclass
class Problem:
    """Operator, manufactured data and exact solution for one resolution."""

    grid: Grid2D
    op: ImmersedOperator
    case: object
    data: np.ndarray
    f: np.ndarray
    exact: np.ndarray
    side: np.ndarray

    @property
    def rhs(self):
        """Right-hand side for ``L_omega u`` once the boundary data is moved across."""
        return self.f - self.op.apply(np.zeros(self.grid.size), self.data)


def build_problem(spec, nx, order=None, border=None):
    grid = Grid2D.unit(nx)
    geo = spec.make_geometry()
    op = ImmersedOperator(grid, geo, order or spec.order, border or spec.border, spec.cond,
                          beta_plus=spec.beta_plus, beta_minus=spec.beta_minus)
    case = get_case(spec.case_name)
    x, y = (c.ravel() for c in grid.coords())
    side = op.side.ravel()
    data = case.boundary_data(op, spec.beta_plus, spec.beta_minus)
    f = case.rhs(x, y, side, spec.beta_plus, spec.beta_minus)
    f[~op.domain] = 0.0
    exact = case.u_sides(x, y, side)
    return Problem(grid, op, case, data, f, exact, side)


def mg_preconditioner(spec, grid, cycle="v"):
    sw = SWOperator(grid, spec.make_geometry(), spec.cond, spec.beta_plus, spec.beta_minus)
    return MGHierarchy(sw, cycle=cycle).preconditioner()


def low_order_preconditioner(spec, prob, name):
    """Exact inverse of Shortley-Weller or a low-order immersed discretisation."""
    op = prob.op
    scale = np.where(op.domain, 1.0 / np.where(op.beta_node > 0, op.beta_node, 1.0), 0.0)
    if name == "sw":
        low = SWOperator(prob.grid, op.geometry, spec.cond, spec.beta_plus, spec.beta_minus,
                         beta_divided=False)
        singular = low.is_singular and not low.pinned.any()
        return exact_inverse(low.A, low.dofs, singular, scale)
    n, k = int(name[3]), int(name[4])
    low = ImmersedOperator(prob.grid, op.geometry, n, k, spec.cond,
                           beta_plus=spec.beta_plus, beta_minus=spec.beta_minus)
    mat, _ = low.assemble()
    return exact_inverse(mat, low.dofs, low.is_singular, scale)


def solve_problem(prob, M, config, gamma=0.0):
    """Solve ``L_omega u = rhs``; singular operators go through the bordered system."""
    op = prob.op
    if op.is_singular:
        u, _, report = solve_augmented(op.apply, prob.rhs, op.domain, M, gamma, config)
    else:
        u, report = solve(op.apply, prob.rhs, M, config)
    return u, report


def _zero_mean_error(prob, u):
    dom = prob.op.domain
    err = (u - prob.exact)[dom]
    if prob.op.is_singular:
        err = err - err.mean()
    return err


def _exact_gradient(prob):
    x, y = (c.ravel() for c in prob.grid.coords())
    gp = prob.case.grad(x, y, 1)
    gm = prob.case.grad(x, y, -1)
    s = prob.side > 0
    return np.where(s, gp[0], gm[0]), np.where(s, gp[1], gm[1])


def _errors(prob, u):
    """L-infinity errors of the solution, boundary quantity and gradient."""
    op = prob.op
    dom = op.domain
    err = _zero_mean_error(prob, u)
    shifted = u.copy()
    shifted[dom] = prob.exact[dom] + err
    bq = op.boundary_quantity(shifted, prob.data)
    bq_exact = prob.case.boundary_quantity(op, op.beta_plus)
    gx, gy = op.gradient(shifted, prob.data)
    ex, ey = _exact_gradient(prob)
    g_err = max(np.abs(gx - ex)[dom].max(), np.abs(gy - ey)[dom].max())
    bq_err = float(np.abs(bq - bq_exact).max()) if bq.size else 0.0
    return float(np.abs(err).max()), bq_err, float(g_err)


# -- studies ----------------------------------------------------------------

def run_converge(spec, sink=None):
    """Solution, boundary-quantity and gradient errors per resolution, plus fitted slopes."""
    res = StudyResult(COLUMNS["converge"])
    emit = _Emitter(res, sink)
    errs = []
    for nx in spec.resolutions:
        prob = build_problem(spec, nx)
        M = mg_preconditioner(spec, prob.grid, spec.cycle[0])
        u, report = solve_problem(prob, M, spec.solver_config(nx, accurate=True))
        if not report.converged:
            res.converged = False
        e = _errors(prob, u)
        errs.append(e)
        emit(nx, *e, report.iterations)
    errs = np.array(errs)
    slopes = [fit_slope(spec.resolutions, errs[:, j]) for j in range(3)]
    res.summary = dict(zip(("solution", "boundary", "gradient"), slopes))
    emit("slope", *slopes, "")
    return res


def truncation_errors(prob):
    """L-infinity truncation error on affected and on interior nodes."""
    op = prob.op
    r = np.abs(op.apply(prob.exact, prob.data) - prob.f)
    tags = op.tags.ravel()
    aff = tags == PointClass.AFFECTED
    inner = tags == PointClass.INTERIOR
    return (float(r[aff].max()) if aff.any() else 0.0,
            float(r[inner].max()) if inner.any() else 0.0)


def run_truncation(spec, sink=None):
    res = StudyResult(COLUMNS["truncation"])
    emit = _Emitter(res, sink)
    errs = []
    for nx in spec.resolutions:
        e = truncation_errors(build_problem(spec, nx))
        errs.append(e)
        emit(nx, *e)
    errs = np.array(errs)
    slopes = [fit_slope(spec.resolutions, errs[:, j]) for j in range(2)]
    res.summary = {"affected": slopes[0], "interior": slopes[1]}
    emit("slope", *slopes)
    return res


def run_iterations(spec, sink=None):
    """GMRES iteration counts on the immersed system under each requested preconditioner."""
    res = StudyResult(COLUMNS["iterations"])
    emit = _Emitter(res, sink)
    counts = {}
    for nx in spec.resolutions:
        prob = build_problem(spec, nx)
        for name in spec.preconditioners:
            if name == "none":
                M = None
            elif name == "mg":
                M = mg_preconditioner(spec, prob.grid, spec.cycle[0])
            else:
                M = low_order_preconditioner(spec, prob, name)
            _, report = solve_problem(prob, M, spec.solver_config(nx))
            if not report.converged:
                res.converged = False
            counts.setdefault(name, []).append(report.iterations)
            emit(nx, name, report.iterations, report.status)
    res.summary = counts
    return res


def left_null_vector(A, dofs):
    """Left null vector of a singular operator restricted to ``dofs`` (bordered sparse solve)."""
    a = sp.csr_matrix(A)[dofs][:, dofs]
    n = dofs.size
    ones = np.ones((n, 1))
    k = sp.bmat([[a.T, ones], [ones.T, None]])
    z = splu(sp.csc_matrix(k)).solve(np.r_[np.zeros(n), 1.0])
    return z[:n]


def mgrate_rhs(spec, sw):
    """Manufactured right-hand side in the cycle's units, made compatible when singular."""
    grid = sw.grid
    case = get_case(spec.case_name)
    x, y = (c.ravel() for c in grid.coords())
    side = sw.side.ravel()
    f = case.rhs(x, y, side, spec.beta_plus, spec.beta_minus) * sw.rhs_scale()
    if sw.is_singular and not sw.pinned.any():
        d = sw.dofs
        z = left_null_vector(sw.A, d)
        fd = f[d] - (z @ f[d]) / (z @ z) * z
        f = np.zeros(grid.size)
        f[d] = fd
    return f


def run_mgrate(spec, sink=None):
    """Stand-alone multigrid cycles on the Shortley-Weller system with homogeneous data."""
    res = StudyResult(COLUMNS["mgrate"])
    emit = _Emitter(res, sink)
    for kind in spec.cycle:
        for nx in spec.resolutions:
            grid = Grid2D.unit(nx)
            sw = SWOperator(grid, spec.make_geometry(), spec.cond, spec.beta_plus, spec.beta_minus)
            h = MGHierarchy(sw, cycle=kind)
            f = mgrate_rhs(spec, sw)
            _, report = h.iterate(np.zeros(grid.size), f, spec.mg_iterations)
            emit(nx, kind, 0, report.residuals[0], "")
            for i, (r, rho) in enumerate(zip(report.residuals[1:], report.factors), 1):
                emit(nx, kind, i, r, rho)
            mean = report.mean_factor(2, spec.mg_iterations)
            res.summary[kind, nx] = mean
            emit(nx, kind, "mean", "", mean)
    return res


def run_spectrum(spec, sink=None):
    """Ritz values of ``dx^2 L_omega / beta_max`` sorted by real then imaginary part."""
    res = StudyResult(COLUMNS["spectrum"])
    emit = _Emitter(res, sink)
    sig = sigma_max(interior_stencil(spec.order))
    for nx in spec.resolutions:
        op = ImmersedOperator(Grid2D.unit(nx), spec.make_geometry(), spec.order, spec.border,
                              spec.cond, beta_plus=spec.beta_plus, beta_minus=spec.beta_minus)
        ritz, _ = extremal_spectrum(op, spec.krylov_dim, spec.seed)
        ritz = sorted(ritz, key=lambda z: (z.real, z.imag))
        for z in ritz:
            emit(nx, z.real, z.imag)
        re = np.array([z.real for z in ritz])
        res.summary[nx] = {"max_re": float(re.max()), "min_re": float(re.min()),
                           "bound": -2.0 * sig}
    return res


def _field_path(spec, nx):
    if spec.field_out is not None:
        base = Path(spec.field_out)
    elif spec.out is not None:
        base = Path(spec.out).with_suffix(".fld")
    else:
        return None
    if len(spec.resolutions) == 1:
        return base
    return base.with_name(f"{base.stem}_nx{nx}{base.suffix}")


def run_solve(spec, sink=None):
    """Solve per resolution, dump the field, report residual and error."""
    res = StudyResult(COLUMNS["solve"])
    emit = _Emitter(res, sink)
    for nx in spec.resolutions:
        prob = build_problem(spec, nx)
        M = mg_preconditioner(spec, prob.grid, spec.cycle[0])
        u, report = solve_problem(prob, M, spec.solver_config(nx, accurate=True))
        if not report.converged:
            res.converged = False
        b = prob.rhs
        r = b - prob.op.apply(u)
        if prob.op.is_singular:
            r -= (report.alpha or 0.0) * prob.op.domain
        rel = float(np.linalg.norm(r) / np.linalg.norm(b))
        err = float(np.abs(_zero_mean_error(prob, u)).max())
        path = _field_path(spec, nx)
        if path is not None:
            write_field(path, u.reshape(prob.grid.shape))
        res.summary[nx] = {"report": report, "path": path, "solution": u}
        emit(nx, report.iterations, report.status, rel, err)
    return res


RUNNERS = {
    "converge": run_converge,
    "truncation": run_truncation,
    "iterations": run_iterations,
    "mgrate": run_mgrate,
    "spectrum": run_spectrum,
    "solve": run_solve,
}


def run_study(spec, sink=None):
    return RUNNERS[spec.study](spec, sink)


# -- command line -------------------------------------------------------------

def _csv_list(cast):
    def parse(text):
        try:
            return tuple(cast(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser():
    p = argparse.ArgumentParser(prog="iim-poisson",
                                description="Immersed-interface Poisson studies (CSV output).")
    p.add_argument("study", choices=STUDIES)
    p.add_argument("--run-file")
    p.add_argument("--nx", type=_csv_list(int), dest="resolutions")
    p.add_argument("--order", type=int)
    p.add_argument("--border", type=int)
    p.add_argument("--bc", dest="condition", choices=[c.value for c in Condition])
    p.add_argument("--beta-plus", type=float)
    p.add_argument("--beta-minus", type=float)
    p.add_argument("--cycle", type=_csv_list(str.lower))
    p.add_argument("--geometry")
    p.add_argument("--case")
    p.add_argument("--tol", type=float)
    p.add_argument("--preconditioners", type=_csv_list(str.lower))
    p.add_argument("--field-out")
    p.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    overrides = {k: v for k, v in vars(args).items() if k != "run_file"}
    try:
        spec = load_run_file(args.run_file, overrides)
    except (ConfigError, TypeError) as exc:
        print(f"iim-poisson: configuration error: {exc}", file=sys.stderr)
        return 1
    handle = open(spec.out, "w", newline="") if spec.out else sys.stdout
    sink = None
    try:
        sink = CSVSink(handle, COLUMNS[spec.study])
        result = run_study(spec, sink)
    except (IIMError, ValueError) as exc:
        print(f"iim-poisson: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        if sink is not None:
            sink.close(spec)
        if handle is not sys.stdout:
            handle.close()
    if not result.converged:
        print("iim-poisson: at least one entry did not converge", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
