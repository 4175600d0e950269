"""Manufactured-solution problems, refinement studies and report output."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import kernels
from .lsfem import CoefficientField, SolverError, apply_inflow_bc, assemble, error_norms, solve
from .polymesh import (PolyMesh, classify_boundary, generate_nonconvex_polygonal, generate_triangular,
                       load_mesh)
from .weakcalc import WeakSpace, default_grad_degree

__all__ = [
    "ProblemSpec",
    "PROBLEMS",
    "make_problem",
    "StudyConfig",
    "LevelResult",
    "ConvergenceReport",
    "run_study",
    "compute_orders",
    "emit_report",
    "report_from_json",
    "FAMILIES",
    "CSV_COLUMNS",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "n_dofs", "h", "err_l2", "ord_l2", "err_wgrad", "ord_wgrad",
               "err_energy", "ord_energy", "cg_iters")
FAMILIES = ("triangular", "polygonal", "file")
_FAMILY_ALIASES = {"triangular": "triangular", "tri": "triangular", "polygonal": "polygonal",
                   "nonconvex-polygonal": "polygonal", "poly": "polygonal", "file": "file"}


# ----------------------------------------------------------------------
# problems
@dataclass(frozen=True)
class ProblemSpec:
    """Exact solution ``u`` with data of ``beta . grad u + c u = f``; ``g`` is the trace of ``u``."""

    name: str
    u: Callable
    grad_u: Callable
    beta: tuple
    c: Callable
    f: Callable
    params: dict = field(default_factory=dict)
    degree: Optional[int] = None  # polynomial degree of u, None if not a polynomial

    @property
    def g(self) -> Callable:
        return self.u

    def coefficients(self) -> CoefficientField:
        return CoefficientField(self.beta, self.c, self.f, self.g)

    def _points(self, n: int, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, 2))

    def residual_check(self, n: int = 100, seed: int = 0) -> float:
        """``max |beta . grad u + c u - f|`` at random points, relative to ``max(1, max |f|)``."""
        p = self._points(n, seed)
        g = self.grad_u(p)
        lhs = self.beta[0] * g[:, 0] + self.beta[1] * g[:, 1] + self.c(p) * self.u(p)
        f = self.f(p)
        return float(np.abs(lhs - f).max() / max(1.0, np.abs(f).max()))

    def gradient_check(self, n: int = 100, seed: int = 1, step: float = 1e-6) -> float:
        """Largest discrepancy between ``grad_u`` and central differences of ``u``."""
        p = self._points(n, seed)
        fd = np.empty_like(p)
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            fd[:, i] = (self.u(p + e) - self.u(p - e)) / (2 * step)
        return float(np.abs(fd - self.grad_u(p)).max())


def _reaction(lam: float) -> Callable:
    return lambda p: lam * (p[..., 0] - 0.5) * (p[..., 1] - 0.5)


def _sin_problem(lam: float = 1.0) -> ProblemSpec:
    c = _reaction(lam)

    def u(p):
        return np.sin(p[..., 0]) * np.sin(p[..., 1])

    def grad_u(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return np.cos(x) * np.sin(y) + np.sin(x) * np.cos(y) + c(p) * np.sin(x) * np.sin(y)

    return ProblemSpec("sin", u, grad_u, (1.0, 1.0), c, f, {"lambda": lam})


def _linear_problem(lam: float = 0.0) -> ProblemSpec:
    return ProblemSpec(
        "linear",
        lambda p: p[..., 0] + p[..., 1],
        lambda p: np.stack([np.ones(p.shape[:-1]), np.ones(p.shape[:-1])], axis=-1),
        (1.0, 1.0),
        lambda p: np.zeros(p.shape[:-1]),
        lambda p: np.full(p.shape[:-1], 2.0),
        {},
        1,
    )


def _quadratic_problem(lam: float = 0.0) -> ProblemSpec:
    return ProblemSpec(
        "quadratic",
        lambda p: p[..., 0] ** 2 - p[..., 1],
        lambda p: np.stack([2 * p[..., 0], -np.ones(p.shape[:-1])], axis=-1),
        (1.0, 1.0),
        lambda p: np.zeros(p.shape[:-1]),
        lambda p: 2 * p[..., 0] - 1.0,
        {},
        2,
    )


def _zero_problem(lam: float = 1.0) -> ProblemSpec:
    zero = lambda p: np.zeros(p.shape[:-1])  # noqa: E731
    return ProblemSpec("zero", zero, lambda p: np.zeros(p.shape), (1.0, 1.0), _reaction(lam), zero,
                       {"lambda": lam}, 0)


PROBLEMS: dict[str, Callable[..., ProblemSpec]] = {
    "sin": _sin_problem,
    "linear": _linear_problem,
    "quadratic": _quadratic_problem,
    "zero": _zero_problem,
}


def make_problem(name: str, lam: Optional[float] = None) -> ProblemSpec:
    """Look up a registered problem; ``lam`` is the reaction amplitude where it applies."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory() if lam is None else factory(float(lam))


# ----------------------------------------------------------------------
# study configuration and results
@dataclass
class StudyConfig:
    family: str = "triangular"
    levels: tuple = (1, 3)
    k: int = 1
    r: Optional[int] = None
    problem: str = "sin"
    lam: Optional[float] = None
    solver: str = "cholesky"
    tol: float = 1e-12
    max_dofs: int = 500_000
    mesh_files: tuple = ()
    stab_weight: float = 1.0

    def __post_init__(self):
        self.family = _FAMILY_ALIASES.get(self.family, self.family)
        self.levels = tuple(int(v) for v in self.levels)
        self.mesh_files = tuple(str(p) for p in self.mesh_files)
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mesh family {self.family!r}")
        if not 1 <= self.k <= 6:
            raise ValueError(f"degree k must satisfy 1 <= k <= 6, got {self.k}")
        if self.r is not None and self.r < self.k:
            raise ValueError(f"gradient degree r={self.r} must be >= k={self.k}")
        if len(self.levels) != 2 or self.levels[0] > self.levels[1]:
            raise ValueError(f"levels must be an ascending pair, got {self.levels}")
        if self.levels[0] < (1 if self.family == "polygonal" else 0):
            raise ValueError(f"level {self.levels[0]} is below the first level of the {self.family} family")
        if self.family == "file" and not self.mesh_files:
            raise ValueError("family 'file' needs at least one mesh file")
        if self.solver not in ("cg", "cholesky"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")

    def level_range(self) -> range:
        if self.family == "file":
            return range(len(self.mesh_files))
        return range(self.levels[0], self.levels[1] + 1)

    def mesh(self, level: int) -> PolyMesh:
        if self.family == "triangular":
            return generate_triangular(level)
        if self.family == "polygonal":
            return generate_nonconvex_polygonal(level)
        return load_mesh(self.mesh_files[level])


@dataclass
class LevelResult:
    level: int
    r: int
    n_cells: int
    n_dofs: int
    n_free: int
    h: float
    err_l2: float
    err_wgrad: float
    err_energy: float
    cg_iters: int
    residual: float
    seconds: float


@dataclass
class ConvergenceReport:
    config: StudyConfig
    rows: list = field(default_factory=list)
    error: Optional[str] = None
    truncated: bool = False
    backend: str = kernels.BACKEND
    exact: bool = False  # exact solution lies in the discrete space

    @property
    def complete(self) -> bool:
        return self.error is None

    def errors(self, name: str) -> list:
        return [getattr(row, name) for row in self.rows]

    def orders(self, name: str) -> list:
        """Order per row: ``None`` on the first row and where ``h`` did not halve,
        NaN when an error is not positive or the discrete solution is exact."""
        out: list = [None] * len(self.rows)
        raw = compute_orders(self.errors(name))
        if self.exact:
            raw = [math.nan] * len(raw)
        for i in range(1, len(self.rows)):
            ratio = self.rows[i - 1].h / self.rows[i].h
            if abs(ratio - 2.0) < 1e-6 * 2.0:
                out[i] = raw[i - 1]
        return out

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "backend": self.backend,
            "error": self.error,
            "truncated": self.truncated,
            "exact": self.exact,
            "rows": [asdict(r) for r in self.rows],
            "orders": {n: [_json_float(v) for v in self.orders(n)]
                       for n in ("err_l2", "err_wgrad", "err_energy")},
        }


def compute_orders(errors) -> list:
    """``log2(e[i-1] / e[i])`` for consecutive entries; NaN where an error is not positive."""
    e = [float(v) for v in errors]
    out = []
    for a, b in zip(e[:-1], e[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b) else math.nan)
    return out


def _free_count(space: WeakSpace, beta) -> int:
    inflow = classify_boundary(space.mesh, beta).inflow
    return space.n_dofs - len(inflow) * space.nb


def run_study(config: StudyConfig, progress: Optional[Callable[[LevelResult], None]] = None) -> ConvergenceReport:
    """Solve the configured problem on each level and collect the errors.

    A solver failure stops the study; the rows computed so far are kept and the
    message is stored in ``report.error``.  Levels exceeding ``max_dofs`` free
    unknowns are skipped and ``report.truncated`` is set.
    """
    problem = make_problem(config.problem, config.lam)
    coeffs = problem.coefficients()
    report = ConvergenceReport(config, exact=problem.degree is not None and problem.degree <= config.k)
    for level in config.level_range():
        t0 = time.perf_counter()
        mesh = config.mesh(level)
        r = config.r if config.r is not None else default_grad_degree(mesh, config.k)
        space = WeakSpace(mesh, config.k, r)
        n_free = _free_count(space, coeffs.beta)
        if n_free > config.max_dofs:
            log.warning("level %d has %d free dofs, above the budget %d; stopping", level, n_free, config.max_dofs)
            report.truncated = True
            break
        try:
            system = apply_inflow_bc(assemble(space, coeffs, stab_weight=config.stab_weight))
            sol = solve(system, method=config.solver, tol=config.tol)
        except SolverError as exc:
            report.error = f"level {level}: {exc}"
            log.error("%s", report.error)
            break
        err = error_norms(system, sol, problem.u)
        row = LevelResult(int(level), int(r), int(mesh.n_cells), int(space.n_dofs), int(system.n_free), float(mesh.h),
                          err.l2_interior, err.weak_grad, err.energy, int(sol.iterations), float(sol.residual),
                          time.perf_counter() - t0)
        report.rows.append(row)
        log.info("level %d: dofs=%d l2=%.3e wgrad=%.3e energy=%.3e (%.1fs)", level, row.n_dofs,
                 row.err_l2, row.err_wgrad, row.err_energy, row.seconds)
        if progress is not None:
            progress(row)
    return report


# ----------------------------------------------------------------------
# output
def _json_float(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return None
    return v


def _csv_num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sci_float(x: float) -> str:
    """Three-digit normalized mantissa, e.g. ``0.649E-4``."""
    if not math.isfinite(x):
        return "nan"
    if x == 0.0:
        return "0.000E0"
    e = math.floor(math.log10(abs(x))) + 1
    m = round(x / 10.0**e, 3)
    if abs(m) >= 1.0:
        e += 1
        m = round(x / 10.0**e, 3)
    return f"{m:.3f}E{e}"


def _order_str(v) -> str:
    if v is None:
        return ""
    return "---" if not math.isfinite(v) else f"{v:.1f}"


def _csv_text(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    orders = {n: report.orders(n) for n in ("err_l2", "err_wgrad", "err_energy")}
    for i, row in enumerate(report.rows):
        w.writerow([row.level, row.n_dofs, _csv_num(row.h),
                    _csv_num(row.err_l2), _csv_num(orders["err_l2"][i]),
                    _csv_num(row.err_wgrad), _csv_num(orders["err_wgrad"][i]),
                    _csv_num(row.err_energy), _csv_num(orders["err_energy"][i]),
                    row.cg_iters])
    return buf.getvalue()


def _markdown_text(report: ConvergenceReport) -> str:
    cfg = report.config
    r = report.rows[0].r if report.rows else cfg.r
    lam = "" if cfg.lam is None else f", lambda={cfg.lam:g}"
    lines = [
        f"P{cfg.k}-P{cfg.k}/P{r} on {cfg.family} grids, problem {cfg.problem}{lam}",
        "",
        r"| G_i | ‖Q_h u - u_h‖ | O(h^r) | ‖∇_w(Q_h u - u_h)‖ | O(h^r) | \|\|\|Q_h u - u_h\|\|\| | O(h^r) |",
        "|---:|---:|---:|---:|---:|---:|---:|",
    ]
    orders = {n: report.orders(n) for n in ("err_l2", "err_wgrad", "err_energy")}
    for i, row in enumerate(report.rows):
        cells = [str(row.level)]
        for n in ("err_l2", "err_wgrad", "err_energy"):
            cells += [_sci_float(getattr(row, n)), _order_str(orders[n][i])]
        lines.append("| " + " | ".join(cells) + " |")
    if report.error:
        lines += ["", f"study stopped: {report.error}"]
    if report.truncated:
        lines += ["", "study truncated by the dof budget"]
    return "\n".join(lines) + "\n"


def emit_report(report: ConvergenceReport, fmt: str = "csv", path=None) -> str:
    """Render ``report`` as ``csv``, ``json`` or ``markdown``; write it to ``path`` if given."""
    if fmt == "csv":
        text = _csv_text(report)
    elif fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"
    elif fmt in ("markdown", "md"):
        text = _markdown_text(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def report_from_json(text: str) -> ConvergenceReport:
    """Inverse of ``emit_report(report, "json")``."""
    data = json.loads(text)
    cfg = StudyConfig(**data["config"])
    rows = [LevelResult(**r) for r in data["rows"]]
    return ConvergenceReport(cfg, rows, data["error"], data["truncated"], data["backend"], data["exact"])
