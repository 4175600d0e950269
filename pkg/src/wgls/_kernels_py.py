"""Pure-Python (numpy) backend for the per-cell operator kernel.

Mirrors ``_kernels.pyx`` exactly; see :func:`wgls.kernels.local_operators` for
the array layout.
"""
import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .polyquad import scaled_monomials

BACKEND = "python"


def cell_operators(k, r, stab_weight, center, h, pts, w, beta, c, f,
                   normals, fpts, fw, fs, orthonormal=False):
    """Local matrices of one cell.

    Returns ``(mk, mr, grad, ls, stab, rhs, rcond)`` where ``grad`` has shape
    ``(2, nr, nloc)`` and holds monomial coefficients of the weak gradient of
    every local basis function.
    """
    nk = (k + 1) * (k + 2) // 2
    nb = k + 1
    nf = len(normals)
    nloc = nk + nf * nb

    nr = (r + 1) * (r + 2) // 2
    # monomials up to max(k, r): the first nk columns span P_k, the first nr span P_r
    V, Dx, Dy = scaled_monomials((pts[:, 0] - center[0]) / h, (pts[:, 1] - center[1]) / h, max(k, r), grad=True)
    Dx = Dx[:, :nr] / h
    Dy = Dy[:, :nr] / h
    Vk = V[:, :nk]
    V = V[:, :nr]
    mr = V.T @ (w[:, None] * V)
    mr = 0.5 * (mr + mr.T)
    mk = Vk.T @ (w[:, None] * Vk)
    mk = 0.5 * (mk + mk.T)

    B = np.zeros((2, nr, nloc))
    B[0, :, :nk] = -(Dx.T * w) @ Vk
    B[1, :, :nk] = -(Dy.T * w) @ Vk
    stab = np.zeros((nloc, nloc))
    for j in range(nf):
        off = nk + j * nb
        xf = fpts[j]
        Vf = scaled_monomials((xf[:, 0] - center[0]) / h, (xf[:, 1] - center[1]) / h, max(k, r))
        S = fs[:, None] ** np.arange(nb)
        wf = fw[j]
        B[0, :, off:off + nb] += (Vf[:, :nr].T * (wf * normals[j, 0])) @ S
        B[1, :, off:off + nb] += (Vf[:, :nr].T * (wf * normals[j, 1])) @ S
        D = np.zeros((len(wf), nloc))
        D[:, :nk] = Vf[:, :nk]
        D[:, off:off + nb] = -S
        stab += D.T @ (wf[:, None] * D)
    stab *= stab_weight / h

    if orthonormal:
        _, R = np.linalg.qr(V * np.sqrt(w)[:, None])
        Bt = np.stack([solve_triangular(R, B[i], trans="T") for i in range(2)])
        grad = np.stack([solve_triangular(R, Bt[i]) for i in range(2)])
        d = np.abs(np.diag(R))
        rcond = float((d.min() / d.max()) ** 2)
    else:
        fac = cho_factor(mr, lower=True)
        grad = np.stack([cho_solve(fac, B[i]) for i in range(2)])
        d = np.diag(fac[0])
        rcond = float((d.min() / d.max()) ** 2)

    gx = V @ grad[0]
    gy = V @ grad[1]
    L = beta[:, 0, None] * gx + beta[:, 1, None] * gy
    L[:, :nk] += c[:, None] * Vk
    ls = L.T @ (w[:, None] * L)
    ls = 0.5 * (ls + ls.T)
    rhs = L.T @ (w * f)
    return mk, mr, grad, ls, 0.5 * (stab + stab.T), rhs, rcond


def fill_local_operators(k, r, stab_weight, centers, diam, cq_ptr, cq_pts, cq_w, cq_beta, cq_c, cq_f,
                         cf_ptr, lf_facet, lf_normal, fq_pts, fq_w, fq_s,
                         loc_ptr, blk_ptr, grad_ptr, mk, mr, grad, ls, stab, rhs, rcond, c0, c1):
    for c in range(c0, c1):
        q = slice(cq_ptr[c], cq_ptr[c + 1])
        lf = slice(cf_ptr[c], cf_ptr[c + 1])
        fids = lf_facet[lf]
        try:
            out = cell_operators(k, r, stab_weight, centers[c], diam[c], cq_pts[q], cq_w[q], cq_beta[q],
                                 cq_c[q], cq_f[q], lf_normal[lf], fq_pts[fids], fq_w[fids], fq_s)
        except np.linalg.LinAlgError:
            rcond[c] = 0.0
            continue
        mk[c], mr[c] = out[0], out[1]
        grad[grad_ptr[c]:grad_ptr[c + 1]] = out[2].ravel()
        ls[blk_ptr[c]:blk_ptr[c + 1]] = out[3].ravel()
        stab[blk_ptr[c]:blk_ptr[c + 1]] = out[4].ravel()
        rhs[loc_ptr[c]:loc_ptr[c + 1]] = out[5]
        rcond[c] = out[6]
