# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backend for the per-cell operator kernel.

Same contract as ``_kernels_py.fill_local_operators``.  The loop over cells runs
without the GIL so that chunks may be dispatched to worker threads.
"""
from libc.math cimport sqrt, fabs
from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset

BACKEND = "cython"


cdef inline void _monomials(double xi, double eta, int r, const int64_t* ea, const int64_t* eb,
                            int nr, double* px, double* py, double* val) noexcept nogil:
    cdef int d, i
    px[0] = 1.0
    py[0] = 1.0
    for d in range(1, r + 1):
        px[d] = px[d - 1] * xi
        py[d] = py[d - 1] * eta
    for i in range(nr):
        val[i] = px[ea[i]] * py[eb[i]]


cdef inline void _monomials_grad(double xi, double eta, double hinv, int r, const int64_t* ea,
                                 const int64_t* eb, int nr, double* px, double* py,
                                 double* val, double* dx, double* dy) noexcept nogil:
    cdef int d, i, a, b
    px[0] = 1.0
    py[0] = 1.0
    for d in range(1, r + 1):
        px[d] = px[d - 1] * xi
        py[d] = py[d - 1] * eta
    for i in range(nr):
        a = ea[i]
        b = eb[i]
        val[i] = px[a] * py[b]
        dx[i] = a * px[a - 1] * py[b] * hinv if a > 0 else 0.0
        dy[i] = b * px[a] * py[b - 1] * hinv if b > 0 else 0.0


cdef int _cholesky(double* A, int n) noexcept nogil:
    """In-place lower Cholesky of a row-major n x n matrix; 1 on failure."""
    cdef int i, j, p
    cdef double s
    for j in range(n):
        s = A[j * n + j]
        for p in range(j):
            s -= A[j * n + p] * A[j * n + p]
        if not s > 0.0:
            return 1
        A[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = A[i * n + j]
            for p in range(j):
                s -= A[i * n + p] * A[j * n + p]
            A[i * n + j] = s / A[j * n + j]
    return 0


cdef void _cho_solve(const double* L, int n, double* B, int ncol) noexcept nogil:
    """Solve (L L^T) X = B in place; B is row-major n x ncol."""
    cdef int i, p, col
    cdef double s
    for col in range(ncol):
        for i in range(n):
            s = B[i * ncol + col]
            for p in range(i):
                s -= L[i * n + p] * B[p * ncol + col]
            B[i * ncol + col] = s / L[i * n + i]
        for i in range(n - 1, -1, -1):
            s = B[i * ncol + col]
            for p in range(i + 1, n):
                s -= L[p * n + i] * B[p * ncol + col]
            B[i * ncol + col] = s / L[i * n + i]


def fill_local_operators(int k, int r, double stab_weight,
                         const double[:, ::1] centers, const double[::1] diam,
                         const int64_t[::1] cq_ptr, const double[:, ::1] cq_pts, const double[::1] cq_w,
                         const double[:, ::1] cq_beta, const double[::1] cq_c, const double[::1] cq_f,
                         const int64_t[::1] cf_ptr, const int64_t[::1] lf_facet, const double[:, ::1] lf_normal,
                         const double[:, :, ::1] fq_pts, const double[:, ::1] fq_w, const double[::1] fq_s,
                         const int64_t[::1] loc_ptr, const int64_t[::1] blk_ptr, const int64_t[::1] grad_ptr,
                         double[:, :, ::1] mk, double[:, :, ::1] mr, double[::1] grad,
                         double[::1] ls, double[::1] stab, double[::1] rhs, double[::1] rcond,
                         Py_ssize_t c0, Py_ssize_t c1):
    cdef int nk = (k + 1) * (k + 2) // 2
    cdef int nb = k + 1
    cdef int nr = (r + 1) * (r + 2) // 2
    cdef int rm = r if r > k else k
    cdef int nm = (rm + 1) * (rm + 2) // 2  # monomials up to max(k, r); first nk span P_k, first nr span P_r
    cdef int nfq = fq_w.shape[1]
    cdef Py_ssize_t c
    cdef int maxq = 0, maxf = 0, nq, nf, nloc, q, i, j, l, m, jf, off, g
    cdef int64_t fid
    cdef double cx, cy, h, hinv, wq, n0, n1, s, acc, bx, by, cc, ff, dmin, dmax, sw

    for c in range(c0, c1):
        if cq_ptr[c + 1] - cq_ptr[c] > maxq:
            maxq = <int>(cq_ptr[c + 1] - cq_ptr[c])
        if cf_ptr[c + 1] - cf_ptr[c] > maxf:
            maxf = <int>(cf_ptr[c + 1] - cf_ptr[c])
    cdef int maxloc = nk + maxf * nb

    cdef int64_t* ea = <int64_t*> malloc(nm * sizeof(int64_t))
    cdef int64_t* eb = <int64_t*> malloc(nm * sizeof(int64_t))
    cdef double* px = <double*> malloc((rm + 1) * sizeof(double))
    cdef double* py = <double*> malloc((rm + 1) * sizeof(double))
    cdef double* V = <double*> malloc(maxq * nm * sizeof(double))
    cdef double* Dx = <double*> malloc(maxq * nm * sizeof(double))
    cdef double* Dy = <double*> malloc(maxq * nm * sizeof(double))
    cdef double* Vf = <double*> malloc(nm * sizeof(double))
    cdef double* sp = <double*> malloc(nb * sizeof(double))
    cdef double* M = <double*> malloc(nr * nr * sizeof(double))
    cdef double* G = <double*> malloc(2 * nr * maxloc * sizeof(double))
    cdef double* Lq = <double*> malloc(maxq * maxloc * sizeof(double))
    cdef double* Sb = <double*> malloc(maxloc * maxloc * sizeof(double))
    cdef double* D = <double*> malloc((nk + nb) * sizeof(double))
    cdef int* Didx = <int*> malloc((nk + nb) * sizeof(int))
    if (ea == NULL or eb == NULL or px == NULL or py == NULL or V == NULL or Dx == NULL or Dy == NULL
            or Vf == NULL or sp == NULL or M == NULL or G == NULL or Lq == NULL or Sb == NULL
            or D == NULL or Didx == NULL):
        free(ea); free(eb); free(px); free(py); free(V); free(Dx); free(Dy); free(Vf); free(sp)
        free(M); free(G); free(Lq); free(Sb); free(D); free(Didx)
        raise MemoryError()

    i = 0
    for m in range(rm + 1):
        for j in range(m + 1):
            ea[i] = m - j
            eb[i] = j
            i += 1

    with nogil:
        for c in range(c0, c1):
            nq = <int>(cq_ptr[c + 1] - cq_ptr[c])
            nf = <int>(cf_ptr[c + 1] - cf_ptr[c])
            nloc = nk + nf * nb
            cx = centers[c, 0]
            cy = centers[c, 1]
            h = diam[c]
            hinv = 1.0 / h

            for q in range(nq):
                g = <int>cq_ptr[c] + q
                _monomials_grad((cq_pts[g, 0] - cx) * hinv, (cq_pts[g, 1] - cy) * hinv, hinv, rm, ea, eb, nm,
                                px, py, V + q * nm, Dx + q * nm, Dy + q * nm)

            # mass matrices of P_k and P_r
            for i in range(nk):
                for j in range(i, nk):
                    acc = 0.0
                    for q in range(nq):
                        acc += cq_w[cq_ptr[c] + q] * V[q * nm + i] * V[q * nm + j]
                    mk[c, i, j] = acc
                    mk[c, j, i] = acc
            for i in range(nr):
                for j in range(i, nr):
                    acc = 0.0
                    for q in range(nq):
                        acc += cq_w[cq_ptr[c] + q] * V[q * nm + i] * V[q * nm + j]
                    M[i * nr + j] = acc
                    M[j * nr + i] = acc
            for i in range(nr):
                for j in range(nr):
                    mr[c, i, j] = M[i * nr + j]

            # right-hand sides of the weak-gradient systems, interior part
            memset(G, 0, 2 * nr * nloc * sizeof(double))
            memset(Sb, 0, nloc * nloc * sizeof(double))
            for i in range(nr):
                for j in range(nk):
                    bx = 0.0
                    by = 0.0
                    for q in range(nq):
                        wq = cq_w[cq_ptr[c] + q] * V[q * nm + j]
                        bx -= wq * Dx[q * nm + i]
                        by -= wq * Dy[q * nm + i]
                    G[i * nloc + j] = bx
                    G[nr * nloc + i * nloc + j] = by

            # facet parts and stabilizer
            for jf in range(nf):
                fid = lf_facet[cf_ptr[c] + jf]
                n0 = lf_normal[cf_ptr[c] + jf, 0]
                n1 = lf_normal[cf_ptr[c] + jf, 1]
                off = nk + jf * nb
                for i in range(nk):
                    Didx[i] = i
                for m in range(nb):
                    Didx[nk + m] = off + m
                for q in range(nfq):
                    _monomials((fq_pts[fid, q, 0] - cx) * hinv, (fq_pts[fid, q, 1] - cy) * hinv, rm, ea, eb, nm,
                               px, py, Vf)
                    s = fq_s[q]
                    sp[0] = 1.0
                    for m in range(1, nb):
                        sp[m] = sp[m - 1] * s
                    wq = fq_w[fid, q]
                    for i in range(nr):
                        for m in range(nb):
                            acc = wq * Vf[i] * sp[m]
                            G[i * nloc + off + m] += acc * n0
                            G[nr * nloc + i * nloc + off + m] += acc * n1
                    for i in range(nk):
                        D[i] = Vf[i]
                    for m in range(nb):
                        D[nk + m] = -sp[m]
                    for i in range(nk + nb):
                        for j in range(nk + nb):
                            Sb[Didx[i] * nloc + Didx[j]] += wq * D[i] * D[j]

            sw = stab_weight * hinv
            for i in range(nloc):
                for j in range(i, nloc):
                    acc = 0.5 * sw * (Sb[i * nloc + j] + Sb[j * nloc + i])
                    stab[blk_ptr[c] + i * nloc + j] = acc
                    stab[blk_ptr[c] + j * nloc + i] = acc

            if _cholesky(M, nr):
                rcond[c] = 0.0
                continue
            dmin = M[0]
            dmax = M[0]
            for i in range(nr):
                if M[i * nr + i] < dmin:
                    dmin = M[i * nr + i]
                if M[i * nr + i] > dmax:
                    dmax = M[i * nr + i]
            rcond[c] = (dmin / dmax) * (dmin / dmax)
            _cho_solve(M, nr, G, nloc)
            _cho_solve(M, nr, G + nr * nloc, nloc)
            for i in range(2 * nr * nloc):
                grad[grad_ptr[c] + i] = G[i]

            # least-squares residual operator at the quadrature points
            for q in range(nq):
                g = <int>cq_ptr[c] + q
                bx = cq_beta[g, 0]
                by = cq_beta[g, 1]
                cc = cq_c[g]
                for j in range(nloc):
                    acc = 0.0
                    for i in range(nr):
                        acc += V[q * nm + i] * (bx * G[i * nloc + j] + by * G[nr * nloc + i * nloc + j])
                    if j < nk:
                        acc += cc * V[q * nm + j]
                    Lq[q * nloc + j] = acc
            for j in range(nloc):
                for l in range(j, nloc):
                    acc = 0.0
                    for q in range(nq):
                        acc += cq_w[cq_ptr[c] + q] * Lq[q * nloc + j] * Lq[q * nloc + l]
                    ls[blk_ptr[c] + j * nloc + l] = acc
                    ls[blk_ptr[c] + l * nloc + j] = acc
                acc = 0.0
                for q in range(nq):
                    acc += cq_w[cq_ptr[c] + q] * cq_f[cq_ptr[c] + q] * Lq[q * nloc + j]
                rhs[loc_ptr[c] + j] = acc

    free(ea); free(eb); free(px); free(py); free(V); free(Dx); free(Dy); free(Vf); free(sp)
    free(M); free(G); free(Lq); free(Sb); free(D); free(Didx)
