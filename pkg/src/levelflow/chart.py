"""Parametrized charts of level sets and their transport along the flow.

A :class:`Chart` samples a map ``u -> phi(u)`` from a rectangular parameter
grid ``U`` (n-1 axes) onto the seed level set ``f = a``.  Transporting every
node with the flow gives ``Phi(t, u) = eta(t, phi(u))`` on a set of levels;
the normal ``N_t(u)`` is the vector of signed maximal minors of the
tangent matrix ``d_u Phi``, and ``|det Phi'| = |N_t| / |grad f|``.

Grid nodes are cell centred (``lo + (j + 1/2) h``) on every axis, so the
quadrature weights are plain midpoint weights and the latitude axis of the
sphere chart never touches a pole.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import (
    CriticalPointDetected, DegenerateChart, DomainError, FlowError, LevelMismatch,
    NoBracket, NonConvergence,
)
from .flow import DRIFT_RATIO, FlowConfig, check_level, n_steps, project_many

NORMAL_FLOOR = 1e-12


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    nodes: int
    periodic: bool = False

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("a grid axis needs at least 2 nodes")
        if not self.hi > self.lo:
            raise ValueError("grid axis needs hi > lo")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.nodes

    @property
    def points(self) -> np.ndarray:
        return self.lo + (np.arange(self.nodes) + 0.5) * self.step


Grid = Tuple[GridAxis, ...]


def grid_shape(grid: Grid) -> tuple:
    return tuple(ax.nodes for ax in grid)


def grid_params(grid: Grid) -> np.ndarray:
    """Parameter values with shape ``(*dims, n-1)`` (ij indexing)."""
    mesh = np.meshgrid(*[ax.points for ax in grid], indexing="ij")
    return np.stack(mesh, axis=-1)


def cell_volume(grid: Grid) -> float:
    return math.prod(ax.step for ax in grid)


def angular_grid(n: int, shape: Sequence[int]) -> Grid:
    """Default angle grid: the circle for n=2, latitude x longitude for n=3."""
    shape = tuple(int(s) for s in shape)
    if n == 2 and len(shape) == 1:
        return (GridAxis(0.0, 2 * math.pi, shape[0], periodic=True),)
    if n == 3 and len(shape) == 2:
        return (
            GridAxis(0.0, math.pi, shape[0]),
            GridAxis(0.0, 2 * math.pi, shape[1], periodic=True),
        )
    raise ValueError(f"no angular grid of shape {shape} for n={n}")


def split_grid(grid: Grid, pieces: int, axis: int = -1) -> list:
    """Cut one axis into ``pieces`` equal, non-periodic sub-grids.

    The union of the returned node sets equals the original node set when
    the node count divides evenly.
    """
    ax = grid[axis]
    if pieces == 1:
        return [grid]
    if ax.nodes % pieces:
        raise ValueError(f"{ax.nodes} nodes cannot be split into {pieces} charts")
    width = (ax.hi - ax.lo) / pieces
    out = []
    for i in range(pieces):
        piece = GridAxis(ax.lo + i * width, ax.lo + (i + 1) * width, ax.nodes // pieces)
        g = list(grid)
        g[axis] = piece
        out.append(tuple(g))
    return out


def directions(n: int, params: np.ndarray) -> np.ndarray:
    """Unit vectors for angle parameters (n=2: angle; n=3: polar angle, azimuth)."""
    if n == 2:
        u = params[..., 0]
        return np.stack([np.cos(u), np.sin(u)], axis=-1)
    if n == 3:
        theta, psi = params[..., 0], params[..., 1]
        s = np.sin(theta)
        return np.stack([s * np.cos(psi), s * np.sin(psi), np.cos(theta)], axis=-1)
    raise ValueError("built-in angular directions exist only for n = 2, 3")


@dataclass(frozen=True, eq=False)
class Chart:
    grid: Grid
    params: np.ndarray  # (*dims, n-1)
    points: np.ndarray  # (*dims, n)
    level: float
    chart_id: int = 0
    center: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.points.shape[-1]

    @property
    def shape(self) -> tuple:
        return grid_shape(self.grid)


@dataclass(frozen=True, eq=False)
class ChartSet:
    """Charts whose images are interiorly disjoint (asserted by the caller;
    overlapping charts double-count surface measure)."""

    charts: tuple

    def __post_init__(self):
        if not self.charts:
            raise ValueError("a chart set needs at least one chart")
        dims = {c.dim for c in self.charts}
        if len(dims) != 1:
            raise ValueError("charts live in different dimensions")
        object.__setattr__(self, "charts", tuple(self.charts))

    def __iter__(self):
        return iter(self.charts)

    def __len__(self):
        return len(self.charts)


@dataclass(frozen=True, eq=False)
class TransportedMesh:
    grid: Grid
    levels: np.ndarray  # (K,)
    positions: np.ndarray  # (K, *dims, n)
    normals: np.ndarray  # (K, *dims, n)
    grad_norms: np.ndarray  # (K, *dims)
    chart_id: int = 0
    max_level_error: float = 0.0
    max_drift: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.positions.shape[-1]


# ------------------------------------------------------------------ seeding


def seed_radial(f, a, center, grid, cfg=FlowConfig(), search_radius=1e3, chart_id=0):
    """Chart of a level set that is star-shaped about ``center`` (n = 2, 3).

    Along each ray ``center + r w(u)`` the first sign change of ``f - a`` is
    bracketed on a geometric radius scan, refined by bisection and polished
    with Newton steps along the ray.
    """
    n = f.dim
    center = np.asarray(center, dtype=float)
    if center.shape != (n,):
        raise ValueError(f"center must have {n} coordinates")
    if isinstance(grid, (tuple, list)) and grid and isinstance(grid[0], GridAxis):
        grid = tuple(grid)
    else:
        grid = angular_grid(n, grid)
    if len(grid) != n - 1:
        raise ValueError(f"grid must have {n - 1} axes for n={n}")
    params = grid_params(grid)
    dirs = directions(n, params).reshape(-1, n)
    m = len(dirs)

    side = np.sign(f.eval(center) - a)
    if side == 0:
        raise NoBracket(f"center {tuple(center)} lies on the level set f = {a}")

    radii = search_radius * 2.0 ** -np.arange(48, -1, -1)
    pts = center + radii[None, :, None] * dirs[:, None, :]
    vals = kernels.eval_values(f.tape, pts.reshape(-1, n)).reshape(m, len(radii))
    crossed = np.sign(vals - a) != side
    found = crossed.any(axis=1)
    if not found.all():
        j = int(np.argmin(found))
        raise NoBracket(
            f"no crossing of f = {a} along ray {j} (direction {tuple(dirs[j])}) "
            f"within radius {search_radius:g} of {tuple(center)}"
        )
    first = np.argmax(crossed, axis=1)
    hi = radii[first]
    lo = np.where(first > 0, radii[np.maximum(first - 1, 0)], 0.0)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        v = kernels.eval_values(f.tape, center + mid[:, None] * dirs)
        same = np.sign(v - a) == side
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    r = 0.5 * (lo + hi)

    for _ in range(cfg.max_projection_iters):
        x = center + r[:, None] * dirs
        v, g = kernels.eval_with_grad(f.tape, x)
        res = v - a
        todo = np.abs(res) > cfg.projection_tol
        if not todo.any():
            break
        slope = np.einsum("ij,ij->i", g, dirs)
        flat = todo & (np.abs(slope) < cfg.grad_floor)
        if flat.any():
            j = int(np.argmax(flat))
            raise CriticalPointDetected(
                f"f has vanishing slope along ray {j} at x={tuple(x[j])}",
                x[j], index=j, grad_norm=float(np.linalg.norm(g[j])),
            )
        r = np.where(todo, r - res / np.where(todo, slope, 1.0), r)
    points = center + r[:, None] * dirs
    values, grads = kernels.eval_with_grad(f.tape, points)
    bad = np.abs(values - a) > cfg.projection_tol
    if bad.any():
        j = int(np.argmax(bad))
        raise NonConvergence(f"radial root on ray {j} did not reach tolerance", points[j], index=j)
    gnorm = np.linalg.norm(grads, axis=1)
    if (gnorm < cfg.grad_floor).any():
        j = int(np.argmin(gnorm))
        raise CriticalPointDetected(
            f"seed point {tuple(points[j])} is critical", points[j], index=j,
            grad_norm=float(gnorm[j]),
        )
    dims = grid_shape(grid)
    return Chart(grid, params, points.reshape(dims + (n,)), float(a), chart_id, center)


def infer_grid(params: np.ndarray, dims: Sequence[int], periodic=()) -> Grid:
    """Rebuild cell-centred axes from uniformly spaced parameter samples."""
    axes = []
    for k, count in enumerate(dims):
        values = np.unique(params[:, k])
        if len(values) != count:
            raise ValueError(f"axis {k}: expected {count} distinct values, found {len(values)}")
        steps = np.diff(values)
        h = float(np.mean(steps))
        if not np.allclose(steps, h, rtol=1e-6, atol=0.0):
            raise ValueError(f"axis {k}: parameter samples are not uniformly spaced")
        axes.append(GridAxis(values[0] - h / 2, values[-1] + h / 2, count, k in periodic))
    return tuple(axes)


def seed_from_samples(samples, grid, f, a, cfg=FlowConfig(), chart_id=0, periodic=()):
    """Wrap user-supplied parametrization samples ``(u, x)`` as a chart.

    ``grid`` may be ``None`` (inferred from the u values) or a sequence of
    :class:`GridAxis`.  Samples within ``10 * projection_tol`` of the level
    are accepted and Newton-projected onto it.
    """
    us = np.array([np.atleast_1d(np.asarray(u, dtype=float)) for u, _ in samples])
    xs = np.array([np.asarray(x, dtype=float) for _, x in samples])
    if xs.ndim != 2 or xs.shape[1] != f.dim:
        raise ValueError(f"sample points must have {f.dim} coordinates")
    n = f.dim
    if us.shape[1] != n - 1:
        raise ValueError(f"parameters must have {n - 1} coordinates")
    check_level(f, xs, a, cfg, slack=10.0)
    if grid is None:
        dims = [len(np.unique(us[:, k])) for k in range(n - 1)]
        grid = infer_grid(us, dims, periodic)
    grid = tuple(grid)
    dims = grid_shape(grid)
    if len(us) != math.prod(dims):
        raise ValueError(f"{len(us)} samples for a grid of {math.prod(dims)} nodes")
    index = []
    for k, ax in enumerate(grid):
        pos = (us[:, k] - ax.lo) / ax.step - 0.5
        idx = np.rint(pos).astype(int)
        if (np.abs(pos - idx) > 1e-6).any() or (idx < 0).any() or (idx >= ax.nodes).any():
            raise ValueError(f"axis {k}: samples do not sit on the grid nodes")
        index.append(idx)
    flat = np.ravel_multi_index(index, dims)
    if len(np.unique(flat)) != len(flat):
        raise ValueError("duplicate samples for a grid node")
    points = np.empty((math.prod(dims), n))
    points[flat] = project_many(f, xs, a, cfg)
    return Chart(grid, grid_params(grid), points.reshape(dims + (n,)), float(a), chart_id)


def read_samples(path):
    """Read a sample file: header ``n k d1 .. d_{n-1}`` (k = number of samples),
    then one line ``u1 .. u_{n-1} x1 .. xn`` per sample.  ``#`` starts a comment."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise ValueError(f"{path}: empty sample file")
    header = [int(v) for v in rows[0]]
    n, k, dims = header[0], header[1], header[2:]
    if len(dims) != n - 1:
        raise ValueError(f"{path}: header needs {n - 1} grid sizes")
    if k != math.prod(dims) or k != len(rows) - 1:
        raise ValueError(f"{path}: header announces {k} samples, grid has "
                         f"{math.prod(dims)}, file has {len(rows) - 1}")
    data = np.array(rows[1:], dtype=float)
    if data.shape[1] != 2 * n - 1:
        raise ValueError(f"{path}: sample lines need {2 * n - 1} values")
    samples = [(row[: n - 1], row[n - 1:]) for row in data]
    return n, dims, samples


def write_samples(path, chart: Chart):
    n = chart.dim
    params = chart.params.reshape(-1, n - 1)
    points = chart.points.reshape(-1, n)
    with open(path, "w") as fh:
        fh.write(" ".join(map(str, [n, len(points), *chart.shape])) + "\n")
        for u, x in zip(params, points):
            fh.write(" ".join(repr(float(v)) for v in (*u, *x)) + "\n")


# ------------------------------------------------------------- differential


def _derivative(F, axis, h, periodic):
    """d/du along ``axis`` of samples F, fourth order where the grid allows."""
    F = np.moveaxis(F, axis, 0)
    N = F.shape[0]
    D = np.empty_like(F)
    if periodic and N >= 3:
        if N >= 5:
            D = (np.roll(F, -1, 0) - np.roll(F, 1, 0)) * (8.0 / 12.0) \
                - (np.roll(F, -2, 0) - np.roll(F, 2, 0)) * (1.0 / 12.0)
        else:
            D = (np.roll(F, -1, 0) - np.roll(F, 1, 0)) * 0.5
    elif N >= 5:
        D[2:-2] = (8.0 * (F[3:-1] - F[1:-3]) - (F[4:] - F[:-4])) / 12.0
        D[0] = (-25 * F[0] + 48 * F[1] - 36 * F[2] + 16 * F[3] - 3 * F[4]) / 12.0
        D[1] = (-3 * F[0] - 10 * F[1] + 18 * F[2] - 6 * F[3] + F[4]) / 12.0
        D[-1] = (25 * F[-1] - 48 * F[-2] + 36 * F[-3] - 16 * F[-4] + 3 * F[-5]) / 12.0
        D[-2] = (3 * F[-1] + 10 * F[-2] - 18 * F[-3] + 6 * F[-4] - F[-5]) / 12.0
    elif N >= 3:
        D[1:-1] = 0.5 * (F[2:] - F[:-2])
        D[0] = (-3 * F[0] + 4 * F[1] - F[2]) / 2.0
        D[-1] = (3 * F[-1] - 4 * F[-2] + F[-3]) / 2.0
    else:
        D[:] = F[1] - F[0]
    return np.moveaxis(D / h, 0, axis)


def tangents(positions, grid):
    """``d_u Phi`` as an array ``(*dims, n, n-1)``."""
    cols = [_derivative(positions, k, ax.step, ax.periodic) for k, ax in enumerate(grid)]
    return np.stack(cols, axis=-1)


def signed_minors(J):
    """Generalized cross product of the columns of ``J`` (shape ``(..., n, n-1)``).

    Component i is ``(-1)^i`` times the determinant of J with row i removed
    (0-based), so that it is the cofactor of entry i of a prepended column.
    """
    n = J.shape[-2]
    out = np.empty(J.shape[:-1])
    for i in range(n):
        sub = np.delete(J, i, axis=-2)
        out[..., i] = (-1) ** i * np.linalg.det(sub)
    return out


def normal_vectors(positions, grid):
    """``N_t(u)`` at every node of one level; raises DegenerateChart on rank loss."""
    N = signed_minors(tangents(positions, grid))
    norms = np.linalg.norm(N, axis=-1)
    if not (norms >= NORMAL_FLOOR).all():
        idx = np.unravel_index(int(np.argmin(np.where(np.isnan(norms), -1.0, norms))), norms.shape)
        raise DegenerateChart(
            f"|N| = {norms[idx]:.3e} at u-index {tuple(map(int, idx))}: tangents do not have rank n-1"
        )
    return N


def normal_vector(positions, grid, index):
    return normal_vectors(positions, grid)[tuple(index)]


# ---------------------------------------------------------------- transport


def _annotate(err, k, t, flat_index, dims):
    where = f"level t[{k}]={t!r}"
    if flat_index is not None:
        where += f", u-index {tuple(int(i) for i in np.unravel_index(flat_index, dims))}"
    if isinstance(err, FlowError):
        info = dict(err.info, t_index=k)
        new = type(err)(f"{where}: {err}", err.point, **info)
    elif isinstance(err, DomainError):
        new = DomainError(f"{err.reason} ({where})", err.subexpression, err.point)
    else:
        new = type(err)(f"{where}: {err}")
    return new


def mesh_levels(a, b, t_nodes):
    if a == b:
        return np.array([float(a)])
    if t_nodes < 2:
        raise ValueError("need at least 2 levels for a non-degenerate band")
    return np.linspace(a, b, t_nodes)


def transport_chart(chart: Chart, f, a, b, t_nodes, cfg=FlowConfig(), levels=None):
    """Flow every chart node through the levels of ``[a, b]``.

    Consecutive levels are reached incrementally (the flow is a semigroup),
    so each trajectory is integrated once.
    """
    n = chart.dim
    dims = chart.shape
    levels = mesh_levels(a, b, t_nodes) if levels is None else np.asarray(levels, float)
    if levels[0] != a:
        raise ValueError("levels must start at a")
    X = chart.points.reshape(-1, n).copy()
    try:
        check_level(f, X, a, cfg)
    except LevelMismatch as err:
        raise _annotate(err, 0, a, err.info.get("index"), dims) from None

    K = len(levels)
    positions = np.empty((K,) + dims + (n,))
    normals = np.empty_like(positions)
    grad_norms = np.empty((K,) + dims)
    level_err = 0.0
    drift_max = 0.0
    for k, t in enumerate(levels):
        if k > 0:
            try:
                X, drift = kernels.transport(
                    f.tape, X, levels[k - 1], t, n_steps(levels[k - 1], t, cfg),
                    cfg.grad_floor, cfg.projection_tol, cfg.max_projection_iters,
                    DRIFT_RATIO, workers=cfg.workers,
                )
            except (FlowError, DomainError) as err:
                idx = err.info.get("index") if isinstance(err, FlowError) else None
                raise _annotate(err, k, float(t), idx, dims) from None
            drift_max = max(drift_max, float(drift.max()))
        P = X.reshape(dims + (n,))
        values, grads = kernels.eval_with_grad(f.tape, X)
        gnorm = np.linalg.norm(grads, axis=1)
        if (gnorm < cfg.grad_floor).any():
            j = int(np.argmin(gnorm))
            raise _annotate(
                CriticalPointDetected(f"|grad f| = {gnorm[j]:.3e} on the mesh", X[j], index=j),
                k, float(t), j, dims,
            )
        try:
            normals[k] = normal_vectors(P, chart.grid)
        except DegenerateChart as err:
            raise _annotate(err, k, float(t), None, dims) from None
        positions[k] = P
        grad_norms[k] = gnorm.reshape(dims)
        level_err = max(level_err, float(np.max(np.abs(values - t))))
    return TransportedMesh(
        chart.grid, levels, positions, normals, grad_norms, chart.chart_id,
        level_err, drift_max,
        stats={"min_grad_norm": float(grad_norms.min()),
               "min_normal_norm": float(np.linalg.norm(normals, axis=-1).min())},
    )


def coarea_jacobians(mesh: TransportedMesh) -> np.ndarray:
    """``|det Phi'(t, u)| = |N_t(u)| / |grad f(Phi(t, u))|`` at every node."""
    return np.linalg.norm(mesh.normals, axis=-1) / mesh.grad_norms


def coarea_jacobian(f, mesh: TransportedMesh, k: int, index, cfg=FlowConfig()) -> float:
    index = tuple(index)
    x = mesh.positions[(k,) + index]
    N = mesh.normals[(k,) + index]
    nn = float(np.linalg.norm(N))
    if nn < NORMAL_FLOOR:
        raise DegenerateChart(f"|N| = {nn:.3e} at t-index {k}, u-index {index}")
    g = float(np.linalg.norm(f.grad(x)))
    if g < cfg.grad_floor:
        raise CriticalPointDetected(f"|grad f| = {g:.3e} at {tuple(x)}", x, grad_norm=g)
    return nn / g
