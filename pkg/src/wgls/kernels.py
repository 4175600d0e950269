"""Backend selection and the batched per-cell operator kernel.

The compiled extension ``wgls._kernels`` is used when it was built; otherwise
the numpy implementation in ``wgls._kernels_py`` is used.  Setting
``WGLS_PURE_PYTHON=1`` forces the fallback.  ``WGLS_THREADS`` caps the number of
worker threads used to process cell chunks (compiled backend only, since it
releases the GIL).
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

RCOND_MIN = 1e-14


def _load_backend():
    if os.environ.get("WGLS_PURE_PYTHON", "").strip() not in ("", "0"):
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py
    return _kernels


backend = _load_backend()
BACKEND = backend.BACKEND


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def worker_count() -> int:
    try:
        n = int(os.environ.get("WGLS_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, min(n, os.cpu_count() or 1))


@dataclass
class LocalOperators:
    """Per-cell dense blocks for a whole mesh, stored flat with offset arrays.

    ``grad`` blocks have shape ``(2, nr, nloc)``; ``ls`` and ``stab`` blocks are
    ``(nloc, nloc)``; ``rhs`` blocks have length ``nloc``.
    """

    k: int
    r: int
    nloc: np.ndarray
    loc_ptr: np.ndarray
    blk_ptr: np.ndarray
    grad_ptr: np.ndarray
    mk: np.ndarray
    mr: np.ndarray
    grad: np.ndarray
    ls: np.ndarray
    stab: np.ndarray
    rhs: np.ndarray
    rcond: np.ndarray

    @property
    def nr(self) -> int:
        return self.mr.shape[1]

    def grad_block(self, c: int) -> np.ndarray:
        n = self.nloc[c]
        return self.grad[self.grad_ptr[c]:self.grad_ptr[c + 1]].reshape(2, self.nr, n)

    def ls_block(self, c: int) -> np.ndarray:
        n = self.nloc[c]
        return self.ls[self.blk_ptr[c]:self.blk_ptr[c + 1]].reshape(n, n)

    def stab_block(self, c: int) -> np.ndarray:
        n = self.nloc[c]
        return self.stab[self.blk_ptr[c]:self.blk_ptr[c + 1]].reshape(n, n)

    def rhs_block(self, c: int) -> np.ndarray:
        return self.rhs[self.loc_ptr[c]:self.loc_ptr[c + 1]]


def local_operators(k, r, stab_weight, centers, diam, cq_ptr, cq_pts, cq_w, cq_beta, cq_c, cq_f,
                    cf_ptr, lf_facet, lf_normal, fq_pts, fq_w, fq_s, impl=None,
                    chunk: int = 4096) -> LocalOperators:
    """Compute mass, weak-gradient, least-squares and stabilizer blocks of every cell.

    Cells whose ``P_r`` mass matrix has a reciprocal condition estimate below
    ``RCOND_MIN`` (or fails to factor) are recomputed with an orthonormalized
    basis through a QR factorization.
    """
    impl = backend if impl is None else impl
    ncell = len(diam)
    nk = (k + 1) * (k + 2) // 2
    nr = (r + 1) * (r + 2) // 2
    nf = np.diff(cf_ptr)
    nloc = nk + nf * (k + 1)
    loc_ptr = np.concatenate([[0], np.cumsum(nloc)]).astype(np.int64)
    blk_ptr = np.concatenate([[0], np.cumsum(nloc * nloc)]).astype(np.int64)
    grad_ptr = np.concatenate([[0], np.cumsum(2 * nr * nloc)]).astype(np.int64)
    mk = np.zeros((ncell, nk, nk))
    mr = np.zeros((ncell, nr, nr))
    grad = np.zeros(grad_ptr[-1])
    ls = np.zeros(blk_ptr[-1])
    stab = np.zeros(blk_ptr[-1])
    rhs = np.zeros(loc_ptr[-1])
    rcond = np.zeros(ncell)

    centers = np.ascontiguousarray(centers, dtype=float)
    diam = np.ascontiguousarray(diam, dtype=float)
    cq_ptr = np.ascontiguousarray(cq_ptr, dtype=np.int64)
    cf_ptr = np.ascontiguousarray(cf_ptr, dtype=np.int64)
    lf_facet = np.ascontiguousarray(lf_facet, dtype=np.int64)
    fl = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
    common = (k, r, float(stab_weight), centers, diam, cq_ptr, fl(cq_pts), fl(cq_w), fl(cq_beta), fl(cq_c),
              fl(cq_f), cf_ptr, lf_facet, fl(lf_normal), fl(fq_pts), fl(fq_w), fl(fq_s),
              loc_ptr, blk_ptr, grad_ptr, mk, mr, grad, ls, stab, rhs, rcond)

    bounds = [(a, min(a + chunk, ncell)) for a in range(0, ncell, chunk)]
    nthreads = worker_count() if impl is not _kernels_py else 1
    if nthreads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(lambda b: impl.fill_local_operators(*common, b[0], b[1]), bounds))
    else:
        for a, b in bounds:
            impl.fill_local_operators(*common, a, b)

    ops = LocalOperators(k, r, nloc, loc_ptr, blk_ptr, grad_ptr, mk, mr, grad, ls, stab, rhs, rcond)
    bad = np.flatnonzero(~(rcond >= RCOND_MIN))
    for c in bad:
        _recompute_orthonormal(ops, common, int(c))
    return ops


def _recompute_orthonormal(ops: LocalOperators, common, c: int) -> None:
    (k, r, sw, centers, diam, cq_ptr, cq_pts, cq_w, cq_beta, cq_c, cq_f, cf_ptr, lf_facet, lf_normal,
     fq_pts, fq_w, fq_s) = common[:17]
    q = slice(cq_ptr[c], cq_ptr[c + 1])
    lf = slice(cf_ptr[c], cf_ptr[c + 1])
    fids = lf_facet[lf]
    log.warning("cell %d: ill-conditioned P_%d mass matrix, using orthonormalized basis", c, r)
    out = _kernels_py.cell_operators(k, r, sw, centers[c], diam[c], cq_pts[q], cq_w[q], cq_beta[q], cq_c[q],
                                     cq_f[q], lf_normal[lf], fq_pts[fids], fq_w[fids], fq_s, orthonormal=True)
    ops.mk[c], ops.mr[c] = out[0], out[1]
    ops.grad[ops.grad_ptr[c]:ops.grad_ptr[c + 1]] = out[2].ravel()
    ops.ls[ops.blk_ptr[c]:ops.blk_ptr[c + 1]] = out[3].ravel()
    ops.stab[ops.blk_ptr[c]:ops.blk_ptr[c + 1]] = out[4].ravel()
    ops.rhs[ops.loc_ptr[c]:ops.loc_ptr[c + 1]] = out[5]
    ops.rcond[c] = out[6]
