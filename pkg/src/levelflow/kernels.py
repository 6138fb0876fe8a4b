"""Backend selection and error translation for the batch kernels.

The compiled extension ``levelflow._kernels`` is used when it imports;
otherwise the numpy implementation in ``levelflow._fallback`` takes over.
Set ``LEVELFLOW_BACKEND=numpy`` to force the fallback.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _fallback
from .errors import CriticalPointDetected, DomainError, NonConvergence

logger = logging.getLogger(__name__)

REASONS = {
    _fallback.R_DIV: "division by zero",
    _fallback.R_LOG: "log of non-positive value",
    _fallback.R_SQRT_NEG: "sqrt of negative value",
    _fallback.R_SQRT_ZERO: "sqrt not differentiable at 0",
    _fallback.R_POW_BASE: "non-integer power of non-positive base",
    _fallback.R_OVERFLOW: "overflow",
}

BACKENDS = {"numpy": _fallback}
try:
    from . import _kernels

    BACKENDS["cython"] = _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None
    logger.debug("compiled kernels unavailable; using numpy fallback")

_forced = os.environ.get("LEVELFLOW_BACKEND")
if _forced and _forced not in BACKENDS:
    raise ImportError(f"LEVELFLOW_BACKEND={_forced!r} is not available")
DEFAULT = _forced or ("cython" if "cython" in BACKENDS else "numpy")


def backend(name=None):
    return BACKENDS[name or DEFAULT]


def _as_points(tape, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != tape.dim:
        raise ValueError(f"expected points of shape (m, {tape.dim}), got {X.shape}")
    return X


def _args(tape):
    return tape.op, tape.arg0, tape.arg1, tape.const


def _raise_domain(tape, X, bad, reason):
    p = int(np.flatnonzero(bad >= 0)[0])
    raise DomainError(REASONS[int(reason[p])], tape.labels[int(bad[p])], X[p])


def eval_values(tape, X, name=None):
    X = _as_points(tape, X)
    if len(X) == 0:
        return np.empty(0)
    v, bad, reason = backend(name).eval_values(*_args(tape), X)
    if (bad >= 0).any():
        _raise_domain(tape, X, bad, reason)
    return v


def eval_with_grad(tape, X, name=None):
    X = _as_points(tape, X)
    if len(X) == 0:
        return np.empty(0), np.empty((0, tape.dim))
    v, g, bad, reason = backend(name).eval_with_grad(*_args(tape), X)
    if (bad >= 0).any():
        _raise_domain(tape, X, bad, reason)
    return v, g


def _raise_failure(tape, X_last, kind, step, instr, reason, gnorm, what):
    p = int(np.flatnonzero(kind != _fallback.OK)[0])
    k = int(kind[p])
    point = tuple(float(v) for v in X_last[p])
    info = dict(index=p, step=int(step[p]), grad_norm=float(gnorm[p]))
    if k == _fallback.DOMAIN:
        raise DomainError(REASONS[int(reason[p])], tape.labels[int(instr[p])], point)
    if k == _fallback.CRITICAL:
        raise CriticalPointDetected(
            f"{what}: |grad f| = {gnorm[p]:.3e} below threshold near x={point}",
            point, **info,
        )
    if k == _fallback.UNRESOLVED:
        raise CriticalPointDetected(
            f"{what}: flow step unresolved (level drift exceeds the step) near "
            f"x={point}, |grad f| = {gnorm[p]:.3e}; the flow speed 1/|grad f| "
            "blows up, which signals a critical point",
            point, **info,
        )
    raise NonConvergence(
        f"{what}: Newton projection did not converge from x={point}",
        point, **info,
    )


def project(tape, X, target, eps, tol, maxit, name=None):
    X = _as_points(tape, X)
    Y, kind, step, instr, reason, gnorm = backend(name).project(
        *_args(tape), X, float(target), float(eps), float(tol), int(maxit)
    )
    if (kind != 0).any():
        _raise_failure(tape, Y, kind, step, instr, reason, gnorm, "projection")
    return Y


def transport(tape, X, t0, t1, nsteps, eps, tol, maxit, drift_ratio,
              workers=1, name=None):
    """Batched RK4 + projection.  Returns ``(positions, max_pre_projection_drift)``.

    ``workers > 1`` splits the batch into contiguous chunks run on threads;
    results do not depend on the split because points are independent.
    """
    X = _as_points(tape, X)
    impl = backend(name)
    args = (float(t0), float(t1), int(nsteps), float(eps), float(tol),
            int(maxit), float(drift_ratio))

    def run(chunk):
        return impl.transport(*_args(tape), chunk, *args)

    if workers > 1 and len(X) >= 2 * workers:
        size = math.ceil(len(X) / workers)
        chunks = [X[i:i + size] for i in range(0, len(X), size)]
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
        out = tuple(np.concatenate([part[i] for part in parts]) for i in range(7))
    else:
        out = run(X)
    Y, drift, kind, step, instr, reason, gnorm = out
    if (kind != 0).any():
        _raise_failure(tape, Y, kind, step, instr, reason, gnorm, "transport")
    return Y, drift
