"""Command-line interface: ``wgls study | mesh | verify``.

Exit codes: 0 success, 1 numerical failure (or unwritable output), 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .checks import SUITES, run_suite
from .convergence import FAMILIES, PROBLEMS, StudyConfig, emit_report, run_study
from .polymesh import (MeshFormatError, MeshValidationError, classify_boundary, generate_nonconvex_polygonal,
                       generate_triangular, load_mesh, save_mesh)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# config-file keys mapped to argparse destinations
_CONFIG_KEYS = {
    "family": "family", "levels": "levels", "degree": "degree", "grad_degree": "grad_degree",
    "grad-degree": "grad_degree", "problem": "problem", "lambda": "lam", "format": "format", "out": "out",
    "solver": "solver", "tol": "tol", "max_dofs": "max_dofs", "max-dofs": "max_dofs", "mesh": "mesh",
}
_STUDY_DEFAULTS = {
    "family": "triangular", "levels": "1..3", "degree": 1, "grad_degree": None, "problem": "sin", "lam": None,
    "format": "csv", "out": None, "solver": "cholesky", "tol": 1e-12, "max_dofs": 500_000, "mesh": None,
}


class UsageError(Exception):
    pass


def parse_levels(text: str) -> tuple[int, int]:
    """``"5..7"`` or ``"5"`` -> ``(5, 7)`` / ``(5, 5)``."""
    parts = str(text).split("..")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad level range {text!r}; expected A..B") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or vals[0] > vals[1] or vals[0] < 0:
        raise UsageError(f"bad level range {text!r}; expected A..B with A <= B")
    return vals[0], vals[1]


def read_config(path) -> dict:
    """Parse a ``key = value`` file (``#`` comments) into argparse destinations."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[_CONFIG_KEYS[key]] = val
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _degree(text: str) -> int:
    v = int(text)
    if not 1 <= v <= 6:
        raise argparse.ArgumentTypeError(f"degree must satisfy 1 <= k <= 6, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgls", description="Weak Galerkin least-squares solver for "
                                "beta . grad u + c u = f on polygonal meshes.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("study", help="run a refinement study and emit the error table")
    s.add_argument("--config", help="key=value file mirroring the flags; flags override it")
    s.add_argument("--family", choices=FAMILIES + ("nonconvex-polygonal",), default=None)
    s.add_argument("--levels", default=None, help="level range A..B")
    s.add_argument("--degree", type=_degree, default=None, help="polynomial degree k (1..6)")
    s.add_argument("--grad-degree", dest="grad_degree", type=int, default=None,
                   help="weak gradient degree r (default k+1 on triangles, k+2 otherwise)")
    s.add_argument("--problem", choices=sorted(PROBLEMS), default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=None, help="reaction amplitude")
    s.add_argument("--format", choices=("csv", "json", "markdown"), default=None)
    s.add_argument("--out", default=None, help="output file (default stdout)")
    s.add_argument("--solver", choices=("cg", "cholesky"), default=None)
    s.add_argument("--tol", type=float, default=None, help="CG relative tolerance")
    s.add_argument("--max-dofs", dest="max_dofs", type=_positive_int, default=None,
                   help="free dof budget per level")
    s.add_argument("--mesh", action="append", default=None,
                   help="mesh file for --family file (repeat for each level)")

    m = sub.add_parser("mesh", help="generate, save or inspect meshes")
    msub = m.add_subparsers(dest="action", required=True)
    for name, helptext in (("generate", "print a summary of a generated mesh"),
                           ("save", "generate a mesh and write it to a file")):
        g = msub.add_parser(name, help=helptext)
        g.add_argument("--family", choices=("triangular", "polygonal"), default="triangular")
        g.add_argument("--level", type=_positive_int, default=1)
        if name == "save":
            g.add_argument("path")
    i = msub.add_parser("inspect", help="load a mesh file and print a summary")
    i.add_argument("path")

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("--suite", choices=tuple(SUITES) + ("all",), default="all")
    v.add_argument("--degree", type=_degree, default=None)
    return p


def _study_config(args) -> tuple[StudyConfig, str, str | None]:
    merged = dict(_STUDY_DEFAULTS)
    if args.config:
        try:
            merged.update(read_config(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for key in _STUDY_DEFAULTS:
        val = getattr(args, key)
        if val is not None:
            merged[key] = val
    try:
        degree = int(merged["degree"])
        r = None if merged["grad_degree"] in (None, "", "default") else int(merged["grad_degree"])
        lam = None if merged["lam"] in (None, "") else float(merged["lam"])
        tol = float(merged["tol"])
        max_dofs = int(merged["max_dofs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meshes = merged["mesh"] or ()
    if isinstance(meshes, str):
        meshes = tuple(m.strip() for m in meshes.split(",") if m.strip())
    try:
        cfg = StudyConfig(family=merged["family"], levels=parse_levels(merged["levels"]), k=degree, r=r,
                          problem=merged["problem"], lam=lam, solver=merged["solver"], tol=tol,
                          max_dofs=max_dofs, mesh_files=meshes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fmt = merged["format"]
    if fmt not in ("csv", "json", "markdown"):
        raise UsageError(f"unknown format {fmt!r}")
    return cfg, fmt, merged["out"]


def cmd_study(args) -> int:
    cfg, fmt, out = _study_config(args)
    try:
        report = run_study(cfg)
    except (MeshFormatError, MeshValidationError) as exc:
        print(f"wgls: mesh error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"wgls: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        text = emit_report(report, fmt, out)
    except OSError as exc:
        print(f"wgls: cannot write report: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if out is None:
        sys.stdout.write(text)
    if report.error:
        print(f"wgls: {report.error}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _summary(mesh) -> str:
    convex = sum(mesh.is_cell_convex(c) for c in range(mesh.n_cells))
    bc = classify_boundary(mesh, (1.0, 1.0))
    nv = np.bincount(mesh.cell_nvert)
    shapes = ", ".join(f"{n}-gon: {cnt}" for n, cnt in enumerate(nv) if cnt)
    return "\n".join([
        f"vertices {mesh.n_vertices}",
        f"cells {mesh.n_cells} ({shapes})",
        f"facets {mesh.n_facets} (boundary {len(mesh.boundary_facets)})",
        f"nonconvex cells {mesh.n_cells - convex}",
        f"h {mesh.h:.6g}",
        f"area {mesh.cell_areas.sum():.12g}",
        f"inflow facets for beta=(1,1): {len(bc.inflow)}",
    ]) + "\n"


def cmd_mesh(args) -> int:
    if args.action == "inspect":
        try:
            mesh = load_mesh(args.path)
        except (MeshFormatError, MeshValidationError) as exc:
            print(f"wgls: {args.path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except OSError as exc:
            print(f"wgls: {exc}", file=sys.stderr)
            return EXIT_FAIL
    else:
        gen = generate_triangular if args.family == "triangular" else generate_nonconvex_polygonal
        mesh = gen(args.level)
        if args.action == "save":
            try:
                save_mesh(mesh, args.path)
            except OSError as exc:
                print(f"wgls: cannot write mesh: {exc}", file=sys.stderr)
                return EXIT_FAIL
    sys.stdout.write(_summary(mesh))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.suite, args.degree)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed (backend {kernels.BACKEND})")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handler = {"study": cmd_study, "mesh": cmd_mesh, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wgls: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
