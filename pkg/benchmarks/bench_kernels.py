"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 3] [--points 1000000]

Times value-only evaluation (the volume side), value+gradient evaluation,
and transport of a 64x128 sphere chart from t=1 to t=4 (the surface side).
Each case also checks that both backends return the same numbers.
"""

import argparse
import math
import time

import numpy as np

from levelflow import kernels
from levelflow.chart import seed_radial
from levelflow.flow import DRIFT_RATIO, FlowConfig, n_steps
from levelflow.scalarfield import parse


def best_of(repeat, fn):
    times = []
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def cases(points):
    rng = np.random.default_rng(0)
    f = parse("exp(x)*sin(y) + sqrt(1+z^2)*cos(x*y) + (x-1)^2+2*y^2", 3)
    X = rng.uniform(-2, 2, size=(points, 3))
    yield "eval_values", lambda name: kernels.eval_values(f.tape, X, name=name)
    yield "eval_with_grad", lambda name: kernels.eval_with_grad(f.tape, X, name=name)[1]

    sphere = parse("x^2+y^2+z^2", 3)
    cfg = FlowConfig()
    P = seed_radial(sphere, 1.0, (0, 0, 0), (64, 128)).points.reshape(-1, 3)
    steps = n_steps(1.0, 4.0, cfg)

    def chart_transport(name, workers=1):
        Y, _ = kernels.transport(
            sphere.tape, P, 1.0, 4.0, steps, cfg.grad_floor, cfg.projection_tol,
            cfg.max_projection_iters, DRIFT_RATIO, workers=workers, name=name,
        )
        return Y

    yield "transport 64x128", chart_transport
    yield "transport 64x128, 4 threads", lambda name: chart_transport(name, workers=4)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--points", type=int, default=1_000_000)
    args = parser.parse_args()

    # numpy first so that "speedup" reads numpy time / compiled time
    names = sorted(kernels.BACKENDS, key=lambda n: n != "numpy")
    if "cython" not in names:
        print("compiled backend not built; only the numpy timings are shown")
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + f"{'speedup':>10s}")
    for label, fn in cases(args.points):
        row, results = [], []
        for name in names:
            seconds, out = best_of(args.repeat, lambda: fn(name))
            row.append(seconds)
            results.append(out)
        for other in results[1:]:
            np.testing.assert_allclose(other, results[0], rtol=1e-12, atol=1e-12)
        speedup = row[0] / row[-1] if len(row) > 1 else math.nan
        print(f"{label:32s}" + "".join(f"{s:11.3f}s" for s in row) + f"{speedup:9.1f}x")


if __name__ == "__main__":
    main()
