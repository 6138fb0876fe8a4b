"""Command line front end.

JSON and tables go to stdout, progress and errors to stderr.

Exit codes: 0 success/pass, 1 verification FAIL, 2 validation error
(critical point, level mismatch, bad expression, ...), 64 bad flags.
"""

import argparse
import json
import logging
import re
import sys
import time

import numpy as np

from . import kernels
from .chart import ChartSet, read_samples, seed_from_samples, transport_chart
from .coarea import MonteCarlo, QuadratureSpec, RadialAtlas, TensorGrid, verify
from .errors import LevelflowError
from .flow import FlowConfig, trajectory
from .objfile import write_obj
from .scalarfield import gradient_check, parse

logger = logging.getLogger("levelflow")

EXIT_PASS, EXIT_FAIL, EXIT_INVALID, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _vector(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")


def _common(p, need_g=False):
    p.add_argument("--f", required=True, help="scalar field f")
    if need_g:
        p.add_argument("--g", default="1", help="density g (default 1)")
    p.add_argument("--n", type=int, required=True, help="dimension")
    p.add_argument("--ode-steps", type=int, default=32, help="RK4 steps per unit of t")
    p.add_argument("--tol", type=float, default=1e-9, help="level projection tolerance")
    p.add_argument("--grad-floor", type=float, default=1e-8, help="critical point threshold")
    p.add_argument("--workers", type=int, default=1, help="threads for transport")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")


def _chart_flags(p):
    p.add_argument("--center", type=_vector, help="seeding center (default origin)")
    p.add_argument("--u-grid", type=_ints, help="angle grid, e.g. 256 (n=2) or 64,128 (n=3)")
    p.add_argument("--charts", type=int, default=1, help="split the chart into this many pieces")
    p.add_argument("--samples-file", help="chart samples instead of radial seeding")
    p.add_argument("--periodic", type=_ints, default=[],
                   help="0-based parameter axes of the samples file that wrap around")
    p.add_argument("--search-radius", type=float, default=1e3)


def build_parser():
    parser = _Parser(prog="levelflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="compare both sides of the coarea identity")
    _common(v, need_g=True)
    _chart_flags(v)
    v.add_argument("--a", type=float, required=True)
    v.add_argument("--b", type=float, required=True)
    v.add_argument("--t-nodes", type=int, default=33)
    v.add_argument("--mc-samples", type=int, default=1_000_000)
    v.add_argument("--sampler", choices=("sobol", "iid"), default="sobol")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--grid-nodes", type=int, help="tensor-grid volume side instead of Monte Carlo")
    v.add_argument("--box", type=_vector, help="lo,hi applied to every axis")
    v.add_argument("--box-per-axis", help="lo,hi;lo,hi;... one interval per axis")
    v.add_argument("--rel-tol", type=float, default=1e-2)
    v.add_argument("--out", help="also write the JSON report here")

    t = sub.add_parser("transport", help="print a gradient-flow trajectory")
    _common(t)
    t.add_argument("--p", type=_vector, required=True, help="start point on level a")
    t.add_argument("--a", type=float, required=True)
    t.add_argument("--b", type=float, required=True)
    t.add_argument("--t-nodes", type=int, default=5)

    m = sub.add_parser("mesh", help="export transported level surfaces as OBJ files")
    _common(m)
    _chart_flags(m)
    m.add_argument("--a", type=float, required=True)
    m.add_argument("--b", type=float, required=True)
    m.add_argument("--t-nodes", type=int, default=5)
    m.add_argument("--out", default="mesh", help="file prefix")

    gc = sub.add_parser("grad-check", help="dual-number gradients vs central differences")
    gc.add_argument("--f", required=True)
    gc.add_argument("--n", type=int, required=True)
    gc.add_argument("--points", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--rtol", type=float, default=1e-6)
    gc.add_argument("--box", type=_vector, default=[-1.0, 1.0])
    gc.add_argument("-q", "--quiet", action="store_true")
    return parser


_NUMERIC = re.compile(r"^-\.?\d")


def _join_negative_values(argv):
    """Turn ``--box -2,2`` into ``--box=-2,2`` so argparse does not read a flag."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) \
                and _NUMERIC.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def _flow_config(args):
    return FlowConfig(
        ode_steps_per_unit_t=args.ode_steps, projection_tol=args.tol,
        grad_floor=args.grad_floor, workers=args.workers,
    )


def _bounding_box(args, n):
    if args.box_per_axis:
        parts = [_vector(s) for s in args.box_per_axis.split(";") if s.strip()]
    elif args.box:
        parts = [args.box] * n
    else:
        raise UsageError("a bounding box is required (--box lo,hi or --box-per-axis)")
    if len(parts) != n or any(len(p) != 2 for p in parts):
        raise UsageError(f"bounding box needs {n} intervals lo,hi")
    return [tuple(p) for p in parts]


def _center(args, n):
    center = args.center if args.center is not None else [0.0] * n
    if len(center) != n:
        raise UsageError(f"--center needs {n} coordinates")
    return center


def _default_u_grid(n):
    return {2: [256], 3: [64, 128]}.get(n)


def _charts(args, f, cfg, atlas_ok=True):
    """Either a RadialAtlas recipe (seeded lazily) or a ChartSet from a file."""
    n = f.dim
    if args.samples_file:
        n_file, dims, samples = read_samples(args.samples_file)
        if n_file != n:
            raise UsageError(f"samples file is for n={n_file}, not n={n}")
        chart = seed_from_samples(samples, None, f, args.a, cfg, periodic=args.periodic)
        return ChartSet((chart,))
    u_grid = args.u_grid or _default_u_grid(n)
    if u_grid is None or n not in (2, 3):
        raise UsageError("radial seeding supports n=2,3; use --samples-file otherwise")
    atlas = RadialAtlas(_center(args, n), u_grid, args.charts, args.search_radius)
    if atlas_ok:
        return atlas
    return atlas.build(f, args.a, cfg)


def cmd_verify(args):
    f = parse(args.f, args.n)
    g = parse(args.g, args.n)
    cfg = _flow_config(args)
    box = _bounding_box(args, args.n)
    if args.grid_nodes:
        volume = TensorGrid(args.grid_nodes, box)
    else:
        volume = MonteCarlo(args.mc_samples, args.seed, box, args.sampler)
    spec = QuadratureSpec(volume, args.t_nodes)
    start = time.perf_counter()
    try:
        charts = _charts(args, f, cfg)
    except LevelflowError as err:
        # errors while reading a sample chart still yield an invalid report
        from .coarea import CoareaReport

        report = CoareaReport(None, None, None, None, [], {}, False, valid=False,
                              error={"type": type(err).__name__, "message": str(err)})
    else:
        report = verify(f, g, args.a, args.b, charts, spec, cfg, args.rel_tol)
    logger.info("finished in %.2f s (%s kernels)", time.perf_counter() - start, kernels.DEFAULT)
    text = report.to_json()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if not report.valid:
        logger.error("%s: %s", report.error["type"], report.error["message"])
        return EXIT_INVALID
    logger.info("lhs=%.10g rhs=%.10g rel_error=%.3e -> %s", report.lhs, report.rhs,
                report.rel_error, "PASS" if report.passed else "FAIL")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_transport(args):
    f = parse(args.f, args.n)
    cfg = _flow_config(args)
    if len(args.p) != args.n:
        raise UsageError(f"--p needs {args.n} coordinates")
    levels = [args.a] if args.a == args.b else np.linspace(args.a, args.b, max(args.t_nodes, 2))
    for fp in trajectory(f, args.p, levels, cfg):
        print(" ".join(repr(float(v)) for v in (fp.level, *fp.position)))
    return EXIT_PASS


def cmd_mesh(args):
    if args.n != 3:
        logger.error("OBJ export needs n = 3 (got n = %d)", args.n)
        return EXIT_INVALID
    f = parse(args.f, args.n)
    cfg = _flow_config(args)
    charts = _charts(args, f, cfg, atlas_ok=False)
    meshes = [transport_chart(c, f, args.a, args.b, args.t_nodes, cfg) for c in charts]
    files = []
    for k, t in enumerate(meshes[0].levels):
        path = f"{args.out}_t{k}.obj"
        write_obj(path, [(m.positions[k], m.normals[k], m.grid) for m in meshes])
        files.append({"t": float(t), "path": path})
        logger.info("wrote %s", path)
    print(json.dumps({"files": files}, indent=2))
    return EXIT_PASS


def cmd_grad_check(args):
    f = parse(args.f, args.n)
    if len(args.box) != 2:
        raise UsageError("--box needs lo,hi")
    rng = np.random.default_rng(args.seed)
    lo, hi = args.box
    points = lo + (hi - lo) * rng.random((args.points, args.n))
    worst, checked, skipped = gradient_check(f, points, args.h, args.rtol)
    ok = checked > 0 and worst <= args.rtol
    print(json.dumps({"max_scaled_error": worst, "checked": checked, "skipped": skipped,
                      "rtol": args.rtol, "pass": ok}, indent=2))
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "verify": cmd_verify,
    "transport": cmd_transport,
    "mesh": cmd_mesh,
    "grad-check": cmd_grad_check,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s", stream=sys.stderr, force=True,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"levelflow: error: {err}\n")
        return EXIT_USAGE
    except (LevelflowError, ValueError) as err:
        sys.stderr.write(f"levelflow: {type(err).__name__}: {err}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
