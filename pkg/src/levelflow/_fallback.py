"""Pure numpy implementation of the batched kernels.

Every function works on a whole batch at once and reports failures per
point instead of raising, so that its results line up one-to-one with the
compiled kernels in ``_kernels.pyx``.  The wrapper in
:mod:`levelflow.kernels` turns the first failing point into an exception.
"""

import numpy as np

from .scalarfield import (
    ADD, CONST, COS, DIV, EXP, LOG, MUL, NEG, POW, POWI, SIN, SQRT, SUB, TANH, VAR,
)

# failure codes, shared with _kernels.pyx
OK, DOMAIN, CRITICAL, NONCONV, UNRESOLVED = 0, 1, 2, 3, 4
# domain reasons
R_DIV, R_LOG, R_SQRT_NEG, R_SQRT_ZERO, R_POW_BASE, R_OVERFLOW = 1, 2, 3, 4, 5, 6

NAME = "numpy"


def _ipow(base, k):
    if k < 0:
        return 1.0 / _ipow(base, -k)
    result = np.ones_like(base)
    first = True
    while k:
        if k & 1:
            result = base.copy() if first else result * base
            first = False
        k >>= 1
        if k:
            base = base * base
    return result


def _run(op, arg0, arg1, const, X, grad):
    """Execute the tape; returns (value, gradient or None, bad_instr, reason)."""
    m, n = X.shape
    L = len(op)
    vals = [None] * L
    dots = [None] * L if grad else None
    bad_instr = np.full(m, -1, dtype=np.int64)
    reason = np.zeros(m, dtype=np.int64)

    def flag(i, mask, code):
        new = mask & (bad_instr < 0)
        bad_instr[new] = i
        reason[new] = code

    with np.errstate(all="ignore"):
        for i in range(L):
            o = op[i]
            a = vals[arg0[i]] if o not in (CONST, VAR) else None
            da = dots[arg0[i]] if grad and a is not None else None
            if o == CONST:
                v = np.full(m, const[i])
                d = np.zeros((m, n)) if grad else None
            elif o == VAR:
                v = X[:, arg0[i]].copy()
                if grad:
                    d = np.zeros((m, n))
                    d[:, arg0[i]] = 1.0
            elif o == NEG:
                v = -a
                d = -da if grad else None
            elif o in (ADD, SUB, MUL, DIV):
                b = vals[arg1[i]]
                db = dots[arg1[i]] if grad else None
                if o == ADD:
                    v = a + b
                    d = da + db if grad else None
                elif o == SUB:
                    v = a - b
                    d = da - db if grad else None
                elif o == MUL:
                    v = a * b
                    d = da * b[:, None] + a[:, None] * db if grad else None
                else:
                    flag(i, b == 0.0, R_DIV)
                    v = a / b
                    d = (da - v[:, None] * db) / b[:, None] if grad else None
            elif o == POWI:
                k = int(const[i])
                if k < 0:
                    flag(i, a == 0.0, R_DIV)
                if k == 0:
                    v = np.ones(m)
                    d = np.zeros((m, n)) if grad else None
                else:
                    v = _ipow(a, k)
                    d = (k * _ipow(a, k - 1))[:, None] * da if grad else None
            elif o == POW:
                b = vals[arg1[i]]
                flag(i, a <= 0.0, R_POW_BASE)
                la = np.log(a)
                v = np.exp(b * la)
                flag(i, ~np.isfinite(v) & (a > 0.0), R_OVERFLOW)
                if grad:
                    db = dots[arg1[i]]
                    d = v[:, None] * (db * la[:, None] + b[:, None] * da / a[:, None])
            elif o == SIN:
                v = np.sin(a)
                d = np.cos(a)[:, None] * da if grad else None
            elif o == COS:
                v = np.cos(a)
                d = -np.sin(a)[:, None] * da if grad else None
            elif o == EXP:
                v = np.exp(a)
                flag(i, np.isinf(v), R_OVERFLOW)
                d = v[:, None] * da if grad else None
            elif o == LOG:
                flag(i, a <= 0.0, R_LOG)
                v = np.log(a)
                d = da / a[:, None] if grad else None
            elif o == SQRT:
                flag(i, a < 0.0, R_SQRT_NEG)
                if grad:
                    flag(i, a == 0.0, R_SQRT_ZERO)
                v = np.sqrt(a)
                d = da / (2.0 * v)[:, None] if grad else None
            elif o == TANH:
                v = np.tanh(a)
                d = (1.0 - v * v)[:, None] * da if grad else None
            else:  # pragma: no cover
                raise ValueError(f"bad opcode {o}")
            vals[i] = v
            if grad:
                dots[i] = d
    return vals[-1], (dots[-1] if grad else None), bad_instr, reason


def eval_values(op, arg0, arg1, const, X):
    v, _, bad, reason = _run(op, arg0, arg1, const, X, False)
    return v, bad, reason


def eval_with_grad(op, arg0, arg1, const, X):
    v, d, bad, reason = _run(op, arg0, arg1, const, X, True)
    return v, d, bad, reason


class _Failures:
    """Per-point record of the first failure."""

    def __init__(self, m):
        self.kind = np.zeros(m, dtype=np.int64)
        self.step = np.full(m, -1, dtype=np.int64)
        self.instr = np.full(m, -1, dtype=np.int64)
        self.reason = np.zeros(m, dtype=np.int64)
        self.gnorm = np.full(m, np.nan)

    def mark(self, idx, kind, step=-1, instr=None, reason=None, gnorm=None):
        fresh = self.kind[idx] == OK
        idx = idx[fresh]
        self.kind[idx] = kind
        self.step[idx] = step
        if instr is not None:
            self.instr[idx] = instr[fresh]
            self.reason[idx] = reason[fresh]
        if gnorm is not None:
            self.gnorm[idx] = gnorm[fresh]

    def as_tuple(self):
        return self.kind, self.step, self.instr, self.reason, self.gnorm


def _velocity(tape, Y, eps):
    """Return velocity and a per-row status: OK, DOMAIN or CRITICAL."""
    _, g, bad, reason = _run(*tape, Y, True)
    with np.errstate(all="ignore"):
        gn2 = np.einsum("ij,ij->i", g, g)
        gnorm = np.sqrt(gn2)
        vel = g / gn2[:, None]
    status = np.where(bad >= 0, DOMAIN, np.where(gnorm < eps, CRITICAL, OK))
    # a NaN norm without a domain flag cannot happen for finite inputs
    return vel, status, bad, reason, gnorm


def _project(tape, Y, target, eps, tol, maxit, fails, rows, step, drift_limit=None):
    """Newton projection of rows ``Y`` (global indices ``rows``) onto ``target``.

    Returns the corrected points and the level value before correction.
    Failed rows keep their input position.
    """
    Y = Y.copy()
    f_pre = np.full(len(Y), np.nan)
    live = np.arange(len(Y))
    start = Y.copy()
    for it in range(maxit + 1):
        if live.size == 0:
            break
        f, g, bad, reason = _run(*tape, Y[live], True)
        if it == 0:
            f_pre[live] = f
        with np.errstate(all="ignore"):
            r = f - target
            gn2 = np.einsum("ij,ij->i", g, g)
            gnorm = np.sqrt(gn2)
        dom = bad >= 0
        fails.mark(rows[live[dom]], DOMAIN, step, bad[dom], reason[dom])
        ok = ~dom
        if it == 0 and drift_limit is not None:
            with np.errstate(invalid="ignore"):
                unres = ok & (np.abs(r) > drift_limit)
            fails.mark(rows[live[unres]], UNRESOLVED, step, gnorm=gnorm[unres])
            ok &= ~unres
        done = ok & (np.abs(r) <= tol)
        pending = ok & ~done
        if it == maxit:
            fails.mark(rows[live[pending]], NONCONV, step, gnorm=gnorm[pending])
            break
        crit = pending & (gnorm < eps)
        fails.mark(rows[live[crit]], CRITICAL, step, gnorm=gnorm[crit])
        move = pending & ~crit
        mv = live[move]
        Y[mv] -= (r[move] / gn2[move])[:, None] * g[move]
        live = mv
    failed = fails.kind[rows] != OK
    Y[failed] = start[failed]
    return Y, f_pre


def project(op, arg0, arg1, const, X, target, eps, tol, maxit):
    tape = (op, arg0, arg1, const)
    X = np.array(X, dtype=float)
    fails = _Failures(len(X))
    rows = np.arange(len(X))
    Y, _ = _project(tape, X, target, eps, tol, maxit, fails, rows, 0)
    return (Y,) + fails.as_tuple()


def transport(op, arg0, arg1, const, X, t0, t1, nsteps, eps, tol, maxit, drift_ratio):
    """Fixed-step RK4 on x' = grad f / |grad f|^2 with projection after each step.

    Returns ``(positions, max_drift, kind, step, instr, reason, gnorm)``.
    Failed points keep their last valid position.
    """
    tape = (op, arg0, arg1, const)
    X = np.array(X, dtype=float)
    m = len(X)
    fails = _Failures(m)
    drift = np.zeros(m)
    if nsteps == 0:
        return (X, drift) + fails.as_tuple()
    h = (t1 - t0) / nsteps
    limit = drift_ratio * abs(h)
    for k in range(1, nsteps + 1):
        rows = np.flatnonzero(fails.kind == OK)
        if rows.size == 0:
            break
        Y = X[rows]
        slopes = []
        stage_input = Y
        status_all = np.zeros(len(rows), dtype=np.int64)
        for weight in (0.5, 0.5, 1.0, None):
            vel, status, bad, reason, gnorm = _velocity(tape, stage_input, eps)
            fresh = (status != OK) & (status_all == OK)
            dom = fresh & (status == DOMAIN)
            fails.mark(rows[dom], DOMAIN, k, bad[dom], reason[dom])
            crit = fresh & (status == CRITICAL)
            fails.mark(rows[crit], CRITICAL, k, gnorm=gnorm[crit])
            status_all[fresh] = status[fresh]
            slopes.append(vel)
            if weight is not None:
                stage_input = Y + (weight * h) * vel
        k1, k2, k3, k4 = slopes
        good = status_all == OK
        Ynew = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        target = t1 if k == nsteps else t0 + k * h
        grows = rows[good]
        Yp, f_pre = _project(tape, Ynew[good], target, eps, tol, maxit, fails, grows, k, limit)
        with np.errstate(invalid="ignore"):
            drift[grows] = np.fmax(drift[grows], np.abs(f_pre - target))
        accepted = fails.kind[grows] == OK
        X[grows[accepted]] = Yp[accepted]
    return (X, drift) + fails.as_tuple()
