# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels.

Point-by-point twins of the numpy routines in ``_fallback.py``: same
failure codes, same per-point first-failure semantics.  Loops over points
run without the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, log, sqrt, tanh, fabs, isfinite, isinf, NAN, fmax
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cnp.import_array()

NAME = "cython"

# opcodes, see scalarfield.py
cdef enum:
    CONST = 0
    VAR = 1
    ADD = 2
    SUB = 3
    MUL = 4
    DIV = 5
    NEG = 6
    POWI = 7
    POW = 8
    SIN = 9
    COS = 10
    EXP = 11
    LOG = 12
    SQRT = 13
    TANH = 14

# failure kinds and domain reasons, see _fallback.py
cdef enum:
    OK = 0
    DOMAIN = 1
    CRITICAL = 2
    NONCONV = 3
    UNRESOLVED = 4

cdef enum:
    R_DIV = 1
    R_LOG = 2
    R_SQRT_NEG = 3
    R_SQRT_ZERO = 4
    R_POW_BASE = 5
    R_OVERFLOW = 6


cdef struct Tape:
    const int* op
    const int* a0
    const int* a1
    const double* c
    int L
    int n


cdef inline double ipow(double b, long k) noexcept nogil:
    cdef double r = 1.0
    if k < 0:
        return 1.0 / ipow(b, -k)
    while k:
        if k & 1:
            r = r * b
        k >>= 1
        if k:
            b = b * b
    return r


cdef int run_point(const Tape* t, const double* x, double* v, double* d,
                   bint grad, int* bad) noexcept nogil:
    """Evaluate the tape at x.  Returns a domain reason (0 = fine)."""
    cdef int i, j, o, n = t.n
    cdef long k
    cdef double a, b, la, s
    cdef double* di
    cdef double* da
    cdef double* db
    for i in range(t.L):
        o = t.op[i]
        di = d + i * n
        if o == CONST:
            v[i] = t.c[i]
            if grad:
                for j in range(n):
                    di[j] = 0.0
            continue
        if o == VAR:
            v[i] = x[t.a0[i]]
            if grad:
                for j in range(n):
                    di[j] = 0.0
                di[t.a0[i]] = 1.0
            continue
        a = v[t.a0[i]]
        da = d + t.a0[i] * n
        if o == NEG:
            v[i] = -a
            if grad:
                for j in range(n):
                    di[j] = -da[j]
        elif o == ADD or o == SUB or o == MUL or o == DIV or o == POW:
            b = v[t.a1[i]]
            db = d + t.a1[i] * n
            if o == ADD:
                v[i] = a + b
                if grad:
                    for j in range(n):
                        di[j] = da[j] + db[j]
            elif o == SUB:
                v[i] = a - b
                if grad:
                    for j in range(n):
                        di[j] = da[j] - db[j]
            elif o == MUL:
                v[i] = a * b
                if grad:
                    for j in range(n):
                        di[j] = da[j] * b + a * db[j]
            elif o == DIV:
                if b == 0.0:
                    bad[0] = i
                    return R_DIV
                v[i] = a / b
                if grad:
                    for j in range(n):
                        di[j] = (da[j] - v[i] * db[j]) / b
            else:
                if not (a > 0.0):
                    bad[0] = i
                    return R_POW_BASE
                la = log(a)
                v[i] = exp(b * la)
                if not isfinite(v[i]):
                    bad[0] = i
                    return R_OVERFLOW
                if grad:
                    for j in range(n):
                        di[j] = v[i] * (db[j] * la + b * da[j] / a)
        elif o == POWI:
            k = <long>t.c[i]
            if k < 0 and a == 0.0:
                bad[0] = i
                return R_DIV
            if k == 0:
                v[i] = 1.0
                if grad:
                    for j in range(n):
                        di[j] = 0.0
            else:
                v[i] = ipow(a, k)
                if grad:
                    s = k * ipow(a, k - 1)
                    for j in range(n):
                        di[j] = s * da[j]
        elif o == SIN:
            v[i] = sin(a)
            if grad:
                s = cos(a)
                for j in range(n):
                    di[j] = s * da[j]
        elif o == COS:
            v[i] = cos(a)
            if grad:
                s = -sin(a)
                for j in range(n):
                    di[j] = s * da[j]
        elif o == EXP:
            v[i] = exp(a)
            if isinf(v[i]):
                bad[0] = i
                return R_OVERFLOW
            if grad:
                for j in range(n):
                    di[j] = v[i] * da[j]
        elif o == LOG:
            if not (a > 0.0):
                bad[0] = i
                return R_LOG
            v[i] = log(a)
            if grad:
                for j in range(n):
                    di[j] = da[j] / a
        elif o == SQRT:
            if a < 0.0:
                bad[0] = i
                return R_SQRT_NEG
            if grad and a == 0.0:
                bad[0] = i
                return R_SQRT_ZERO
            v[i] = sqrt(a)
            if grad:
                s = 2.0 * v[i]
                for j in range(n):
                    di[j] = da[j] / s
        else:  # TANH
            v[i] = tanh(a)
            if grad:
                s = 1.0 - v[i] * v[i]
                for j in range(n):
                    di[j] = s * da[j]
    return 0


cdef Tape make_tape(const int[::1] op, const int[::1] a0, const int[::1] a1,
                    const double[::1] c, int n):
    cdef Tape t
    t.op = &op[0]
    t.a0 = &a0[0]
    t.a1 = &a1[0]
    t.c = &c[0]
    t.L = op.shape[0]
    t.n = n
    return t


def eval_values(const int[::1] op, const int[::1] a0, const int[::1] a1,
                const double[::1] c, const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], p
    cdef int n = X.shape[1], b = -1, rc
    cdef Tape t = make_tape(op, a0, a1, c, n)
    out = np.empty(m)
    bad = np.full(m, -1, dtype=np.int64)
    reason = np.zeros(m, dtype=np.int64)
    cdef double[::1] o = out
    cdef long long[::1] bv = bad
    cdef long long[::1] rv = reason
    cdef double* v = <double*>malloc(t.L * sizeof(double))
    try:
        with nogil:
            for p in range(m):
                rc = run_point(&t, &X[p, 0], v, NULL, False, &b)
                if rc:
                    o[p] = NAN
                    bv[p] = b
                    rv[p] = rc
                else:
                    o[p] = v[t.L - 1]
    finally:
        free(v)
    return out, bad, reason


def eval_with_grad(const int[::1] op, const int[::1] a0, const int[::1] a1,
                   const double[::1] c, const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], p
    cdef int n = X.shape[1], b = -1, rc, j
    cdef Tape t = make_tape(op, a0, a1, c, n)
    out = np.empty(m)
    grads = np.empty((m, n))
    bad = np.full(m, -1, dtype=np.int64)
    reason = np.zeros(m, dtype=np.int64)
    cdef double[::1] o = out
    cdef double[:, ::1] g = grads
    cdef long long[::1] bv = bad
    cdef long long[::1] rv = reason
    cdef double* v = <double*>malloc(t.L * sizeof(double))
    cdef double* d = <double*>malloc(t.L * n * sizeof(double))
    cdef double* last
    try:
        with nogil:
            for p in range(m):
                rc = run_point(&t, &X[p, 0], v, d, True, &b)
                if rc:
                    o[p] = NAN
                    for j in range(n):
                        g[p, j] = NAN
                    bv[p] = b
                    rv[p] = rc
                else:
                    o[p] = v[t.L - 1]
                    last = d + (t.L - 1) * n
                    for j in range(n):
                        g[p, j] = last[j]
    finally:
        free(v)
        free(d)
    return out, grads, bad, reason


cdef struct Work:
    double* v
    double* d
    double* y
    double* s      # stage input
    double* k      # 4 stage slopes, 4*n


cdef struct Fail:
    int kind
    int instr
    int reason
    double gnorm


cdef int velocity(const Tape* t, const double* x, double* out, double eps,
                  Work* w, Fail* f) noexcept nogil:
    cdef int n = t.n, j, b = -1, rc
    cdef double gn2 = 0.0, gn
    cdef double* g
    rc = run_point(t, x, w.v, w.d, True, &b)
    if rc:
        f.kind = DOMAIN
        f.instr = b
        f.reason = rc
        return DOMAIN
    g = w.d + (t.L - 1) * n
    for j in range(n):
        gn2 += g[j] * g[j]
    gn = sqrt(gn2)
    if gn < eps:
        f.kind = CRITICAL
        f.gnorm = gn
        return CRITICAL
    for j in range(n):
        out[j] = g[j] / gn2
    return OK


cdef int project_point(const Tape* t, double* x, double target, double eps,
                       double tol, int maxit, double limit, double* fpre,
                       Work* w, Fail* f) noexcept nogil:
    """Newton projection of x (in place on success).  ``limit < 0`` disables
    the unresolved-step check."""
    cdef int n = t.n, j, it, b = -1, rc
    cdef double r, gn2, gn, fac
    cdef double* g
    cdef double* y = w.y
    for j in range(n):
        y[j] = x[j]
    fpre[0] = NAN
    for it in range(maxit + 1):
        rc = run_point(t, y, w.v, w.d, True, &b)
        if rc:
            f.kind = DOMAIN
            f.instr = b
            f.reason = rc
            return DOMAIN
        r = w.v[t.L - 1] - target
        g = w.d + (t.L - 1) * n
        gn2 = 0.0
        for j in range(n):
            gn2 += g[j] * g[j]
        gn = sqrt(gn2)
        if it == 0:
            fpre[0] = w.v[t.L - 1]
            if limit >= 0.0 and fabs(r) > limit:
                f.kind = UNRESOLVED
                f.gnorm = gn
                return UNRESOLVED
        if fabs(r) <= tol:
            for j in range(n):
                x[j] = y[j]
            return OK
        if it == maxit:
            f.kind = NONCONV
            f.gnorm = gn
            return NONCONV
        if gn < eps:
            f.kind = CRITICAL
            f.gnorm = gn
            return CRITICAL
        fac = r / gn2
        for j in range(n):
            y[j] -= fac * g[j]
    return NONCONV


cdef int alloc_work(Work* w, int L, int n) noexcept nogil:
    w.v = <double*>malloc(L * sizeof(double))
    w.d = <double*>malloc(L * n * sizeof(double))
    w.y = <double*>malloc(n * sizeof(double))
    w.s = <double*>malloc(n * sizeof(double))
    w.k = <double*>malloc(4 * n * sizeof(double))
    return w.v != NULL and w.d != NULL and w.y != NULL and w.s != NULL and w.k != NULL


cdef void free_work(Work* w) noexcept nogil:
    free(w.v)
    free(w.d)
    free(w.y)
    free(w.s)
    free(w.k)


def _failure_arrays(Py_ssize_t m):
    return (np.zeros(m, dtype=np.int64), np.full(m, -1, dtype=np.int64),
            np.full(m, -1, dtype=np.int64), np.zeros(m, dtype=np.int64),
            np.full(m, np.nan))


def project(const int[::1] op, const int[::1] a0, const int[::1] a1,
            const double[::1] c, X, double target, double eps, double tol, int maxit):
    Xo = np.array(X, dtype=float, order="C", copy=True)
    cdef double[:, ::1] x = Xo
    cdef Py_ssize_t m = x.shape[0], p
    cdef int n = x.shape[1], rc
    cdef Tape t = make_tape(op, a0, a1, c, n)
    kind, step, instr, reason, gnorm = _failure_arrays(m)
    cdef long long[::1] kv = kind, sv = step, iv = instr, rv = reason
    cdef double[::1] gv = gnorm
    cdef Work w
    cdef Fail f
    cdef double fpre
    if not alloc_work(&w, t.L, n):
        free_work(&w)
        raise MemoryError()
    try:
        with nogil:
            for p in range(m):
                f.kind = OK
                f.instr = -1
                f.reason = 0
                f.gnorm = NAN
                rc = project_point(&t, &x[p, 0], target, eps, tol, maxit, -1.0, &fpre, &w, &f)
                if rc:
                    kv[p] = rc
                    sv[p] = 0
                    iv[p] = f.instr
                    rv[p] = f.reason
                    gv[p] = f.gnorm
    finally:
        free_work(&w)
    return Xo, kind, step, instr, reason, gnorm


def transport(const int[::1] op, const int[::1] a0, const int[::1] a1,
              const double[::1] c, X, double t0, double t1, int nsteps,
              double eps, double tol, int maxit, double drift_ratio):
    Xo = np.array(X, dtype=float, order="C", copy=True)
    cdef double[:, ::1] x = Xo
    cdef Py_ssize_t m = x.shape[0], p
    cdef int n = x.shape[1], rc, k, s, j
    cdef Tape t = make_tape(op, a0, a1, c, n)
    drift_arr = np.zeros(m)
    cdef double[::1] drift = drift_arr
    kind, step, instr, reason, gnorm = _failure_arrays(m)
    cdef long long[::1] kv = kind, sv = step, iv = instr, rv = reason
    cdef double[::1] gv = gnorm
    if nsteps == 0:
        return Xo, drift_arr, kind, step, instr, reason, gnorm
    cdef double h = (t1 - t0) / nsteps
    cdef double limit = drift_ratio * fabs(h)
    cdef double target, fpre
    cdef double weights[3]
    weights[0] = 0.5
    weights[1] = 0.5
    weights[2] = 1.0
    cdef Work w
    cdef Fail f
    cdef double* xp
    if not alloc_work(&w, t.L, n):
        free_work(&w)
        raise MemoryError()
    try:
        with nogil:
            for p in range(m):
                xp = &x[p, 0]
                f.kind = OK
                f.instr = -1
                f.reason = 0
                f.gnorm = NAN
                rc = OK
                for k in range(1, nsteps + 1):
                    for j in range(n):
                        w.s[j] = xp[j]
                    for s in range(4):
                        rc = velocity(&t, w.s, w.k + s * n, eps, &w, &f)
                        if rc:
                            break
                        if s < 3:
                            for j in range(n):
                                w.s[j] = xp[j] + (weights[s] * h) * w.k[s * n + j]
                    if rc:
                        break
                    for j in range(n):
                        w.s[j] = xp[j] + (h / 6.0) * (w.k[j] + 2.0 * w.k[n + j]
                                                     + 2.0 * w.k[2 * n + j] + w.k[3 * n + j])
                    if k == nsteps:
                        target = t1
                    else:
                        target = t0 + k * h
                    rc = project_point(&t, w.s, target, eps, tol, maxit, limit, &fpre, &w, &f)
                    drift[p] = fmax(drift[p], fabs(fpre - target))
                    if rc:
                        break
                    for j in range(n):
                        xp[j] = w.s[j]
                if rc:
                    kv[p] = rc
                    sv[p] = k
                    iv[p] = f.instr
                    rv[p] = f.reason
                    gv[p] = f.gnorm
    finally:
        free_work(&w)
    return Xo, drift_arr, kind, step, instr, reason, gnorm
