"""Normalized gradient flow ``x' = grad f / |grad f|^2``.

Along this flow ``d/dt f(x(t)) = 1``, so a point starting on the level set
``f = t0`` reaches ``f = t1`` after time ``t1 - t0``.  Integration is fixed
step RK4; after every step a Newton projection pins the level value back
onto the linear ramp, which keeps ``f(x(t)) = t`` to ``projection_tol``
regardless of the ODE error.  Backward flow (``t1 < t0``) is allowed.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CriticalPointDetected, LevelMismatch

# a step whose pre-projection level error exceeds this multiple of the
# step length is not resolved by the integrator (speed 1/|grad f| blows up)
DRIFT_RATIO = 1.0


@dataclass(frozen=True)
class FlowConfig:
    ode_steps_per_unit_t: int = 32
    projection_tol: float = 1e-9
    max_projection_iters: int = 50
    grad_floor: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if self.ode_steps_per_unit_t < 1:
            raise ValueError("ode_steps_per_unit_t must be >= 1")
        if not self.projection_tol > 0:
            raise ValueError("projection_tol must be > 0")
        if not self.grad_floor > 0:
            raise ValueError("grad_floor must be > 0")
        if self.max_projection_iters < 1:
            raise ValueError("max_projection_iters must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class FlowPoint:
    position: np.ndarray
    level: float
    # largest |f - ramp| seen right before a projection
    max_drift: float = 0.0


def n_steps(t0, t1, cfg):
    span = abs(t1 - t0)
    if span == 0.0:
        return 0
    return max(1, math.ceil(span * cfg.ode_steps_per_unit_t - 1e-9))


def velocity(f, x, cfg=FlowConfig()):
    g = f.grad(x)
    norm = float(np.linalg.norm(g))
    if norm < cfg.grad_floor:
        raise CriticalPointDetected(
            f"|grad f| = {norm:.3e} < {cfg.grad_floor:g} at x={tuple(map(float, x))}",
            np.asarray(x, dtype=float), grad_norm=norm,
        )
    return g / (norm * norm)


def project_to_level(f, x, t, cfg=FlowConfig()):
    """Newton iteration ``x <- x - (f(x) - t) grad f / |grad f|^2``."""
    return project_many(f, np.asarray(x, dtype=float)[None, :], t, cfg)[0]


def project_many(f, X, t, cfg=FlowConfig()):
    return kernels.project(
        f.tape, X, t, cfg.grad_floor, cfg.projection_tol, cfg.max_projection_iters
    )


def check_level(f, X, t, cfg, slack=1.0):
    """Raise LevelMismatch unless every row of X lies on ``f = t``."""
    values = kernels.eval_values(f.tape, X)
    err = np.abs(values - t)
    limit = slack * cfg.projection_tol
    if not (err <= limit).all():
        p = int(np.argmax(~(err <= limit)))
        raise LevelMismatch(
            f"point {p} has f = {float(values[p])!r}, expected {float(t)!r} within {limit:g}",
            np.asarray(X)[p], index=p, level=float(values[p]),
        )
    return values


def transport_many(f, X, t0, t1, cfg=FlowConfig()):
    """Flow every row of ``X`` from level ``t0`` to ``t1``.

    Returns ``(positions, max_drift)`` where ``max_drift[i]`` is the largest
    pre-projection level error along trajectory ``i``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    check_level(f, X, t0, cfg)
    return kernels.transport(
        f.tape, X, t0, t1, n_steps(t0, t1, cfg), cfg.grad_floor,
        cfg.projection_tol, cfg.max_projection_iters, DRIFT_RATIO, workers=cfg.workers,
    )


def transport(f, p, t0, t1, cfg=FlowConfig()):
    Y, drift = transport_many(f, np.asarray(p, dtype=float)[None, :], t0, t1, cfg)
    return FlowPoint(Y[0], float(t1), float(drift[0]))


def trajectory(f, p, levels, cfg=FlowConfig()):
    """Sample the trajectory through ``p`` (on ``levels[0]``) at each level."""
    levels = [float(t) for t in levels]
    x = np.asarray(p, dtype=float)
    check_level(f, x[None, :], levels[0], cfg)
    out = [FlowPoint(x.copy(), levels[0])]
    for t_prev, t_next in zip(levels, levels[1:]):
        fp = transport(f, out[-1].position, t_prev, t_next, cfg)
        out.append(FlowPoint(fp.position, t_next, max(fp.max_drift, out[-1].max_drift)))
    return out
