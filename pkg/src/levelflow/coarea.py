"""Both sides of the coarea identity, computed by unrelated routes.

Left side: ``int_{a <= f <= b} g dx`` by sampling the bounding box (Monte
Carlo or a midpoint tensor grid) with an indicator of the band.

Right side: ``int_a^b dt int_{f = t} g / |grad f| dsigma``, obtained by
transporting charts of ``f = a`` along the gradient flow, integrating
``g |N_t| / |grad f|`` over each chart's parameter grid and applying
composite Simpson over the levels.

The two routes share no quadrature machinery; otherwise agreement would be
a tautology of the change of variables.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .chart import (
    Chart, ChartSet, TransportedMesh, angular_grid, cell_volume, coarea_jacobians,
    seed_radial, split_grid, transport_chart,
)
from .errors import CriticalPointDetected, LevelflowError
from .flow import FlowConfig, transport, velocity

logger = logging.getLogger(__name__)

BATCH = 1 << 16

Box = Tuple[Tuple[float, float], ...]


def _box(box, n) -> Box:
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(box) != n:
        raise ValueError(f"bounding box needs {n} intervals, got {len(box)}")
    if any(not hi > lo for lo, hi in box):
        raise ValueError("bounding box intervals need hi > lo")
    return box


@dataclass(frozen=True)
class MonteCarlo:
    samples: int
    rng_seed: int
    bounding_box: Box
    # "sobol": scrambled Sobol points (randomized QMC); "iid": numpy default_rng
    sampler: str = "sobol"

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.sampler not in ("sobol", "iid"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


@dataclass(frozen=True)
class TensorGrid:
    nodes_per_axis: int
    bounding_box: Box

    def __post_init__(self):
        if self.nodes_per_axis < 1:
            raise ValueError("nodes_per_axis must be >= 1")


@dataclass(frozen=True)
class QuadratureSpec:
    volume: Union[MonteCarlo, TensorGrid]
    t_nodes: int = 33

    def __post_init__(self):
        if self.t_nodes < 3 or self.t_nodes % 2 == 0:
            raise ValueError("t_nodes must be odd and >= 3")


@dataclass(frozen=True)
class RadialAtlas:
    """Recipe for star-shaped seeding: angle grid ``shape`` about ``center``,
    cut into ``pieces`` charts along the last (longitude) axis."""

    center: Sequence[float]
    shape: Sequence[int]
    pieces: int = 1
    search_radius: float = 1e3

    def build(self, f, a, cfg=FlowConfig()) -> ChartSet:
        grids = split_grid(angular_grid(f.dim, self.shape), self.pieces)
        return ChartSet(tuple(
            seed_radial(f, a, self.center, grid, cfg, self.search_radius, chart_id=i)
            for i, grid in enumerate(grids)
        ))


# -------------------------------------------------------------------- LHS


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    standard_error: float
    evaluated: int
    accepted: int
    min_grad_norm: float


def _point_batches(volume: Union[MonteCarlo, TensorGrid], n: int):
    box = _box(volume.bounding_box, n)
    lo = np.array([b[0] for b in box])
    width = np.array([b[1] - b[0] for b in box])
    if isinstance(volume, TensorGrid):
        N = volume.nodes_per_axis
        total = N ** n
        for start in range(0, total, BATCH):
            idx = np.unravel_index(np.arange(start, min(start + BATCH, total)), (N,) * n)
            yield lo + (np.stack(idx, axis=-1) + 0.5) * (width / N)
        return
    if volume.sampler == "iid":
        rng = np.random.default_rng(volume.rng_seed)
        draw = lambda m: rng.random((m, n))  # noqa: E731
    else:
        from scipy.stats import qmc

        sobol = qmc.Sobol(n, scramble=True, seed=volume.rng_seed)

        def draw(m):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                return sobol.random(m)

    for start in range(0, volume.samples, BATCH):
        yield lo + draw(min(BATCH, volume.samples - start)) * width


def volume_estimate(f, g, a, b, spec: QuadratureSpec, check_gradients=True) -> VolumeEstimate:
    """Integral of g over ``a <= f <= b`` with diagnostics."""
    n = f.dim
    if g.dim != n:
        raise ValueError("f and g must share a dimension")
    if a > b:
        raise ValueError("need a <= b")
    volume = spec.volume
    box = _box(volume.bounding_box, n)
    box_volume = math.prod(hi - lo for lo, hi in box)
    if a == b:
        return VolumeEstimate(0.0, 0.0, 0, 0, math.inf)
    sums, squares = [], []
    evaluated = accepted = 0
    min_grad = math.inf
    for X in _point_batches(volume, n):
        fv = kernels.eval_values(f.tape, X)
        inside = (fv >= a) & (fv <= b)
        Xin = X[inside]
        gv = kernels.eval_values(g.tape, Xin) if len(Xin) else np.empty(0)
        sums.append(float(np.sum(gv)))
        squares.append(float(np.sum(gv * gv)))
        evaluated += len(X)
        accepted += len(Xin)
        if check_gradients and len(Xin):
            _, grads = kernels.eval_with_grad(f.tape, Xin)
            min_grad = min(min_grad, float(np.min(np.linalg.norm(grads, axis=1))))
    total = math.fsum(sums)
    if isinstance(volume, TensorGrid):
        return VolumeEstimate(total * box_volume / evaluated, 0.0, evaluated, accepted, min_grad)
    mean = total / evaluated
    var = max(math.fsum(squares) / evaluated - mean * mean, 0.0)
    return VolumeEstimate(
        box_volume * mean, box_volume * math.sqrt(var / evaluated), evaluated, accepted, min_grad
    )


def lhs_volume_integral(f, g, a, b, spec: QuadratureSpec) -> float:
    return volume_estimate(f, g, a, b, spec, check_gradients=False).value


# -------------------------------------------------------------------- RHS


def level_surface_integral(mesh: TransportedMesh, g, k: int) -> float:
    """``int_{f = t_k} g / |grad f| dsigma`` over one chart, midpoint rule in u."""
    n = mesh.dim
    X = mesh.positions[k].reshape(-1, n)
    gv = kernels.eval_values(g.tape, X)
    jac = coarea_jacobians(mesh)[k].reshape(-1)
    return float(np.sum(gv * jac)) * cell_volume(mesh.grid)


def simpson(values, a, b) -> float:
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m < 3 or m % 2 == 0:
        raise ValueError("Simpson needs an odd number >= 3 of nodes")
    w = np.full(m, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    h = (b - a) / (m - 1)
    return h / 3.0 * math.fsum(w * values)


def trapezoid(values, a, b) -> float:
    values = np.asarray(values, dtype=float)
    h = (b - a) / (len(values) - 1)
    return h * (math.fsum(values) - 0.5 * (values[0] + values[-1]))


def simpson_error_estimate(values, a, b) -> float:
    """Conservative discretization estimate ``|S_h - S_2h|``.

    Falls back to ``|S_h - T_h|`` (trapezoid) when the nodes cannot be
    halved into another Simpson rule.
    """
    values = np.asarray(values, dtype=float)
    s = simpson(values, a, b)
    if (len(values) - 1) % 4 == 0:
        coarse = simpson(values[::2], a, b)
    else:
        coarse = trapezoid(values, a, b)
    return abs(s - coarse) + 8 * np.finfo(float).eps * abs(s)


@dataclass
class RhsResult:
    value: float
    levels: np.ndarray
    per_level: np.ndarray  # summed over charts
    per_chart: np.ndarray  # (charts, K)
    error_estimate: float
    meshes: list = field(repr=False, default_factory=list)


def _as_chartset(charts) -> ChartSet:
    if isinstance(charts, ChartSet):
        return charts
    if isinstance(charts, Chart):
        return ChartSet((charts,))
    return ChartSet(tuple(charts))


def rhs_coarea_integral(charts, f, g, a, b, spec: QuadratureSpec, cfg=FlowConfig()) -> RhsResult:
    charts = _as_chartset(charts)
    if a > b:
        raise ValueError("need a <= b")
    meshes = [transport_chart(c, f, a, b, spec.t_nodes, cfg) for c in charts]
    levels = meshes[0].levels
    per_chart = np.array([
        [level_surface_integral(mesh, g, k) for k in range(len(levels))] for mesh in meshes
    ])
    # fixed chart order keeps the sum reproducible
    per_level = np.array([math.fsum(per_chart[:, k]) for k in range(len(levels))])
    if a == b:
        return RhsResult(0.0, levels, per_level, per_chart, 0.0, meshes)
    value = simpson(per_level, a, b)
    return RhsResult(value, levels, per_level, per_chart,
                     simpson_error_estimate(per_level, a, b), meshes)


# ----------------------------------------------------------------- report


@dataclass
class CoareaReport:
    lhs: Optional[float]
    rhs: Optional[float]
    abs_error: Optional[float]
    rel_error: Optional[float]
    per_level: list
    diagnostics: dict
    passed: bool
    valid: bool = True
    error: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_error": self.abs_error,
            "rel_error": self.rel_error,
            "per_level": [{"t": t, "I": I} for t, I in self.per_level],
            "diagnostics": self.diagnostics,
            "pass": self.passed,
            "valid": self.valid,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def relative_error(lhs, rhs) -> float:
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def _probe_center(f, center, a, b, cfg):
    """A seeding center inside the band is a point of the band: follow the
    flow from it to both ends, which fails if a critical point is in the way."""
    center = np.asarray(center, dtype=float)
    fc = f.eval(center)
    if a <= fc <= b:
        velocity(f, center, cfg)
        for target in (a, b):
            transport(f, center, fc, target, cfg)


def verify(f, g, a, b, charts, spec: QuadratureSpec, cfg=FlowConfig(), rel_tol=1e-2) -> CoareaReport:
    """Run both sides and report.  Errors produce an invalid report."""
    diagnostics = {
        "volume_method": "tensor_grid" if isinstance(spec.volume, TensorGrid)
        else f"monte_carlo/{spec.volume.sampler}",
        "t_nodes": spec.t_nodes,
        "grad_floor": cfg.grad_floor,
        "rel_tol": rel_tol,
    }
    try:
        if a > b:
            raise ValueError(f"empty band: a={a} > b={b}")
        if isinstance(charts, RadialAtlas):
            _probe_center(f, charts.center, a, b, cfg)
            charts = charts.build(f, a, cfg)
        charts = _as_chartset(charts)
        diagnostics["charts"] = len(charts)
        logger.info("volume side: %s", diagnostics["volume_method"])
        vol = volume_estimate(f, g, a, b, spec)
        diagnostics.update(
            lhs_standard_error=vol.standard_error,
            volume_points=vol.evaluated,
            volume_points_in_band=vol.accepted,
            min_grad_norm_volume=vol.min_grad_norm if vol.accepted else None,
        )
        if vol.accepted and vol.min_grad_norm < cfg.grad_floor:
            raise CriticalPointDetected(
                f"volume sample with |grad f| = {vol.min_grad_norm:.3e} inside the band",
                grad_norm=vol.min_grad_norm,
            )
        logger.info("surface side: %d chart(s), %d levels", len(charts), spec.t_nodes)
        rhs = rhs_coarea_integral(charts, f, g, a, b, spec, cfg)
        diagnostics.update(
            min_grad_norm_mesh=min(m.stats["min_grad_norm"] for m in rhs.meshes),
            min_normal_norm=min(m.stats["min_normal_norm"] for m in rhs.meshes),
            max_level_error=max(m.max_level_error for m in rhs.meshes),
            max_pre_projection_drift=max(m.max_drift for m in rhs.meshes),
            simpson_error_estimate=rhs.error_estimate,
        )
    except (LevelflowError, ValueError) as err:
        logger.warning("verification aborted: %s", err)
        return CoareaReport(
            None, None, None, None, [], diagnostics, False, valid=False,
            error={"type": type(err).__name__, "message": str(err)},
        )
    abs_error = abs(vol.value - rhs.value)
    rel = relative_error(vol.value, rhs.value)
    per_level = [(float(t), float(I)) for t, I in zip(rhs.levels, rhs.per_level)]
    return CoareaReport(vol.value, rhs.value, abs_error, rel, per_level, diagnostics, rel <= rel_tol)
