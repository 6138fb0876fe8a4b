"""Independent reference computations used by the tests.

Nothing here calls the code paths it is used to check: gradients come from
central differences of point evaluation, Jacobian determinants from full
n x n finite-difference matrices, and integrals from closed forms.
"""

import math

import numpy as np

from levelflow import kernels
from levelflow.chart import tangents


def fd_gradient(field, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        out[i] = (field.eval(x + e) - field.eval(x - e)) / (2 * h)
    return out


def radial_point(p, t):
    """Flow of f = |x|^2: x(t) = sqrt(t) p / |p|."""
    p = np.asarray(p, dtype=float)
    return math.sqrt(t) * p / np.linalg.norm(p)


def flow_time_derivative(f, x, dt, tol=1e-13, steps=64):
    """d/dt Phi at x by flowing +-dt from x's own level, tight projection."""
    t = float(kernels.eval_values(f.tape, x[None, :])[0])
    ends = []
    for target in (t + dt, t - dt):
        y, _ = kernels.transport(f.tape, x[None, :], t, target, 4, 1e-12, tol, 60, 10.0)
        ends.append(y[0])
    return (ends[0] - ends[1]) / (2 * dt)


def fd_jacobian_determinants(f, mesh, k, indices, dt=2e-3):
    """|det [d_t Phi, d_u Phi]| at the given u-indices of level k."""
    T = tangents(mesh.positions[k], mesh.grid)
    out = []
    for idx in indices:
        idx = tuple(idx)
        col = flow_time_derivative(f, mesh.positions[(k,) + idx], dt)
        M = np.column_stack([col, T[idx]])
        out.append(abs(np.linalg.det(M)))
    return np.array(out)


def hyperspherical(angles):
    """Point on the unit sphere S^{n-1} from n-1 hyperspherical angles."""
    angles = np.asarray(angles, dtype=float)
    n = len(angles) + 1
    x = np.empty(n)
    s = 1.0
    for i, a in enumerate(angles):
        x[i] = s * math.cos(a)
        s *= math.sin(a)
    x[n - 1] = s
    return x
