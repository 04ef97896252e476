# cython: language_level=3
"""Compiled reduction kernels.

Every sum here is correctly rounded (Shewchuk partials with the same final
half-even fix-up as CPython's ``math.fsum``), so results do not depend on
loop order and match ``wxscale._pykernels`` bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, fabs, isfinite
from libc.stdlib cimport free, malloc, realloc

cnp.import_array()


cdef struct Acc:
    double *p
    Py_ssize_t n
    Py_ssize_t cap


cdef int acc_init(Acc *a) noexcept nogil:
    a.n = 0
    a.cap = 32
    a.p = <double *> malloc(32 * sizeof(double))
    return -1 if a.p == NULL else 0


cdef void acc_free(Acc *a) noexcept nogil:
    free(a.p)
    a.p = NULL


cdef int acc_add(Acc *a, double x) noexcept nogil:
    cdef Py_ssize_t i = 0, j
    cdef double y, t, hi, lo
    cdef double *grown
    for j in range(a.n):
        y = a.p[j]
        if fabs(x) < fabs(y):
            t = x
            x = y
            y = t
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            a.p[i] = lo
            i += 1
        x = hi
    if i >= a.cap:
        grown = <double *> realloc(a.p, 2 * a.cap * sizeof(double))
        if grown == NULL:
            return -1
        a.p = grown
        a.cap *= 2
    a.p[i] = x
    a.n = i + 1
    return 0


cdef double acc_result(Acc *a) noexcept nogil:
    cdef Py_ssize_t n = a.n
    cdef double hi = 0.0, lo = 0.0, x, y, yr
    cdef double *p = a.p
    if n > 0:
        n -= 1
        hi = p[n]
        while n > 0:
            x = hi
            n -= 1
            y = p[n]
            hi = x + y
            yr = hi - x
            lo = y - yr
            if lo != 0.0:
                break
        if n > 0 and ((lo < 0.0 and p[n - 1] < 0.0) or (lo > 0.0 and p[n - 1] > 0.0)):
            y = lo * 2.0
            x = hi + y
            yr = x - hi
            if y == yr:
                hi = x
    return hi


def exact_sum(values):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = v.shape[0]
    cdef Acc acc
    cdef int err = 0
    cdef bint finite = True
    cdef double r
    if acc_init(&acc):
        raise MemoryError()
    with nogil:
        for i in range(n):
            if not isfinite(v[i]):
                finite = False
                break
            if acc_add(&acc, v[i]):
                err = 1
                break
        r = acc_result(&acc)
        acc_free(&acc)
    if err:
        raise MemoryError()
    if not finite or not isfinite(r):
        raise OverflowError("non-finite value in exact sum")
    return r


def weighted_sq_column_sums(pred, truth, area):
    """Per column j: exact sum over cells i of area[i] * (pred[i,j] - truth[i,j])**2."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] P = np.ascontiguousarray(pred, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] T = np.ascontiguousarray(truth, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] A = np.ascontiguousarray(area, dtype=np.float64)
    cdef Py_ssize_t ncell = P.shape[0], ncol = P.shape[1], i, j
    if T.shape[0] != ncell or T.shape[1] != ncol or A.shape[0] != ncell:
        raise ValueError("shape mismatch")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(ncol, dtype=np.float64)
    cdef Acc *accs = <Acc *> malloc(max(ncol, 1) * sizeof(Acc))
    if accs == NULL:
        raise MemoryError()
    cdef Py_ssize_t ready = 0
    cdef int err = 0
    cdef bint finite = True
    cdef double d, term
    for j in range(ncol):
        if acc_init(&accs[j]):
            err = 1
            break
        ready += 1
    if not err:
        with nogil:
            for i in range(ncell):
                for j in range(ncol):
                    d = P[i, j] - T[i, j]
                    term = A[i] * (d * d)
                    if not isfinite(term):
                        finite = False
                        break
                    if acc_add(&accs[j], term):
                        err = 1
                        break
                if err or not finite:
                    break
            if not err and finite:
                for j in range(ncol):
                    out[j] = acc_result(&accs[j])
                    if not isfinite(out[j]):
                        finite = False
    for j in range(ready):
        acc_free(&accs[j])
    free(accs)
    if err:
        raise MemoryError()
    if not finite:
        raise OverflowError("non-finite value in exact sum")
    return out


cdef double crps_row(const double *x, Py_ssize_t n, double obs, bint fair, int *err) noexcept nogil:
    cdef Acc a1, a2
    cdef Py_ssize_t i, j
    cdef double t1, t2, r
    if acc_init(&a1):
        err[0] = 1
        return 0.0
    if acc_init(&a2):
        acc_free(&a1)
        err[0] = 1
        return 0.0
    for i in range(n):
        if acc_add(&a1, fabs(x[i] - obs)):
            err[0] = 1
        for j in range(n):
            if acc_add(&a2, fabs(x[i] - x[j])):
                err[0] = 1
    t1 = acc_result(&a1) / <double> n
    if fair and n > 1:
        t2 = acc_result(&a2) / <double> (2 * n * (n - 1))
    else:
        t2 = acc_result(&a2) / <double> (2 * n * n)
    acc_free(&a1)
    acc_free(&a2)
    r = t1 - t2
    if r < 0.0:
        r = 0.0
    return r


def crps_ensemble_rows(members, obs, bint fair=False):
    """CRPS of each row of ``members`` (S, N) against ``obs`` (S,)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] X = np.ascontiguousarray(members, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] O = np.ascontiguousarray(obs, dtype=np.float64)
    cdef Py_ssize_t S = X.shape[0], N = X.shape[1], s
    if O.shape[0] != S:
        raise ValueError("shape mismatch")
    if N < 1:
        raise ValueError("empty ensemble")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(S, dtype=np.float64)
    cdef int err = 0
    with nogil:
        for s in range(S):
            out[s] = crps_row(&X[s, 0], N, O[s], fair, &err)
    if err:
        raise MemoryError()
    return out


cdef inline Py_ssize_t count_le(const double *srt, Py_ssize_t n, double y) noexcept nogil:
    # number of sorted entries <= y
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if srt[mid] <= y:
            lo = mid + 1
        else:
            hi = mid
    return lo


def crps_quadrature(members, double obs, double step):
    """Composite midpoint rule for the integral of (F(y) - 1{y >= obs})**2.

    The domain [min - 1, max + 1] is split at every member and at ``obs`` so
    no cell straddles a jump of the integrand; each piece uses cells of
    width at most ``step``.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] srt = np.sort(np.ascontiguousarray(members, dtype=np.float64))
    cdef Py_ssize_t n = srt.shape[0]
    if n < 1:
        raise ValueError("empty ensemble")
    pts = np.unique(np.concatenate([srt, [obs]]))
    edges_arr = np.concatenate([[pts[0] - 1.0], pts, [pts[-1] + 1.0]])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] edges = edges_arr
    cdef Py_ssize_t k, i, m, ne = edges.shape[0]
    cdef double a, L, h, y, F, d, ind
    cdef double dn = <double> n
    cdef Acc acc
    cdef int err = 0
    if acc_init(&acc):
        raise MemoryError()
    with nogil:
        for k in range(ne - 1):
            a = edges[k]
            L = edges[k + 1] - a
            m = <Py_ssize_t> ceil(L / step)
            if m < 1:
                m = 1
            h = L / <double> m
            for i in range(m):
                y = a + (<double> i + 0.5) * h
                F = <double> count_le(&srt[0], n, y) / dn
                ind = 1.0 if y >= obs else 0.0
                d = F - ind
                if acc_add(&acc, (d * d) * h):
                    err = 1
                    break
            if err:
                break
        a = acc_result(&acc)
        acc_free(&acc)
    if err:
        raise MemoryError()
    return a
