"""Command-line interface.

Subcommands: kernel-sqrt, sample, crossing-sweep, influence, fold, gap,
report, lattice. Global flags --seed, --threads, --cache-dir. Exit codes:
0 success, 2 precondition violation, 3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from .errors import PreconditionError, QuadratureError, ResourceCapError

FIELD_MAGIC = b"GFPERCF1\n"


def _parse_grid(text: str) -> list[float]:
    """Comma list '10,20,40' or range 'a:b:step' (inclusive ends)."""
    if ":" in text:
        a, b, step = (float(t) for t in text.split(":"))
        count = int(round((b - a) / step))
        return [a + k * step for k in range(count + 1)]
    return [float(t) for t in text.split(",")]


def _write_field_binary(path, values: np.ndarray, header: dict) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field_binary(path):
    """Parse the `sample` dump: (header dict, row-major float64 array)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(FIELD_MAGIC))
        if magic != FIELD_MAGIC:
            raise PreconditionError(f"{path}: not a gfperc field dump")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = header.get("shape")
    return header, data.reshape(shape) if shape else data


def _cache_path(cache_dir, sqrt_kernel) -> Path | None:
    if cache_dir is None:
        return None
    d = Path(cache_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / (sqrt_kernel.cache_key() + ".json")


def _build_table(args, eps: float):
    from .kernels import build_sqrt_kernel, kernel_from_name, SqrtKernel

    kern = kernel_from_name(args.kernel)
    if args.cache_dir is not None:
        d = Path(args.cache_dir)
        if d.is_dir():
            for cached in sorted(d.glob("*.json")):
                try:
                    sk = SqrtKernel.load(cached)
                except Exception:
                    continue
                if sk.kernel == kern and abs(sk.mesh_eps - eps) < 1e-12:
                    return sk
    sk = build_sqrt_kernel(kern, eps)
    path = _cache_path(args.cache_dir, sk)
    if path is not None and not path.exists():
        sk.dump(path)
    return sk


# -- subcommand implementations ----------------------------------------------


def _cmd_kernel_sqrt(args) -> int:
    from .kernels import build_sqrt_kernel, kernel_from_name

    kern = kernel_from_name(args.kernel)
    sk = build_sqrt_kernel(
        kern,
        args.eps,
        grid_order=args.grid_order,
        support_radius=args.support_radius,
    )
    sk.dump(args.out)
    print(
        f"kernel-sqrt: {kern.label()} eps={args.eps:g} M={sk.support_radius} "
        f"grid={sk.grid_order} sum_abs={sk.sum_abs:.6g} residual={sk.conv_residual:.3g}"
    )
    return 0


def _cmd_sample(args) -> int:
    from .kernels import kernel_from_name
    from .lattice import Rect, build_region_graph, spectral_mesh
    from .sampler import sample_sqrt_convolution

    kern = kernel_from_name(args.kernel)
    w, h = args.rect
    graph = build_region_graph(args.eps, Rect(0.0, 0.0, w, h))
    sk = _build_table(args, spectral_mesh(args.eps))
    _ = kern
    sample = sample_sqrt_convolution(sk, graph, args.seed)
    header = {
        "format": "gfperc-field/1",
        "kernel": args.kernel,
        "mesh_eps": args.eps,
        "rect": [w, h],
        "seed": args.seed,
        "method": sample.method,
        "shape": [int(graph.n_sites)],
        "site_order": "rotated-z2-row-major",
    }
    _write_field_binary(args.out, sample.values, header)
    print(f"sample: {graph.n_sites} sites -> {args.out}")
    return 0


def _cmd_crossing_sweep(args) -> int:
    from .harness import ExperimentConfig, run_crossing_sweep, write_manifest, write_sweep_csv

    config = ExperimentConfig(
        kernel=args.kernel,
        R_grid=tuple(_parse_grid(args.R)),
        p_grid=tuple(_parse_grid(args.p)),
        rho=args.rho,
        eps=None if args.eps_rule else args.eps,
        eps_rule=args.eps_rule,
        n=int(args.n),
        seed=args.seed,
        threads=args.threads,
    )
    record = run_crossing_sweep(config)
    write_sweep_csv(record.rows, args.out)
    write_manifest(record, str(args.out) + ".manifest.json")
    print(f"crossing-sweep wall time: {record.wall_time:.1f}s", file=sys.stderr)
    print(f"crossing-sweep: {len(record.rows)} cells -> {args.out}")
    return 0


def _cmd_influence(args) -> int:
    from .influence import LatticeCrossingEvent, lattice_gaussian_spec, russo_check
    from .kernels import kernel_from_name
    from .lattice import Rect, build_region_graph

    if args.event != "cross":
        raise PreconditionError(f"unknown event {args.event!r}")
    kern = kernel_from_name(args.kernel)
    graph = build_region_graph(args.eps, Rect(0.0, 0.0, 2.0 * args.R, args.R))
    event = LatticeCrossingEvent(graph)
    spec = lattice_gaussian_spec(kern, graph)
    rep = russo_check(event, spec, args.p, args.h, int(args.n), args.seed)
    out = {
        "event": "cross",
        "kernel": args.kernel,
        "eps": args.eps,
        "R": args.R,
        "p": args.p,
        "n": int(args.n),
        "seed": args.seed,
        "influences": [
            {
                "site": e.site,
                "pivotal_prob": e.pivotal_prob.mean,
                "pivotal_stderr": e.pivotal_prob.stderr,
                "influence": e.influence,
                "influence_se": e.influence_se,
            }
            for e in rep.influences
        ],
        "influence_sum": rep.influence_sum,
        "influence_sum_se": rep.influence_sum_se,
        "derivative_fd": rep.derivative_fd,
        "derivative_fd_se": rep.derivative_fd_se,
        "h": rep.h,
        "russo_identity_passed": rep.passed,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"influence: sum={rep.influence_sum:.6g} fd={rep.derivative_fd:.6g} -> {args.out}")
    return 0


def _cmd_fold(args) -> int:
    import csv

    from .kernels import kernel_from_name
    from .sprinkling import FoldSpec, estimate_fold_probability

    kern = kernel_from_name(args.kernel)
    eps_grid = _parse_grid(args.eps)
    K_grid = [int(k) for k in _parse_grid(args.K)]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kernel", "eps", "p", "K", "n", "mean", "stderr", "seed"])
        stream = 0
        for eps in eps_grid:
            for K in K_grid:
                est = estimate_fold_probability(
                    kern, FoldSpec(eps, args.p, K, int(args.n)), args.seed, stream
                )
                writer.writerow(
                    [args.kernel, eps, args.p, K, est.n, repr(est.mean), repr(est.stderr), args.seed]
                )
                stream += 1
    print(f"fold: {len(eps_grid) * len(K_grid)} rows -> {args.out}")
    return 0


def _cmd_gap(args) -> int:
    import csv

    from .kernels import kernel_from_name
    from .sprinkling import estimate_sprinkled_gap

    kern = kernel_from_name(args.kernel)
    rep = estimate_sprinkled_gap(
        kern,
        args.eps,
        args.R,
        args.p,
        args.fine_factor,
        int(args.n),
        args.seed,
        instrument=args.instrument,
    )
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kernel", "eps", "R", "p", "fine_factor", "n", "gap", "gap_stderr",
             "coarse_rate", "fine_rate", "containment_checked", "containment_failures", "seed"]
        )
        writer.writerow(
            [args.kernel, args.eps, args.R, args.p, args.fine_factor, rep.estimate.n,
             repr(rep.estimate.mean), repr(rep.estimate.stderr), repr(rep.coarse_rate),
             repr(rep.fine_rate), rep.containment_checked, rep.containment_failures, args.seed]
        )
    print(f"gap: {rep.estimate.mean:.6g} +- {rep.estimate.stderr:.2g} -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .harness import read_sweep_csv
    from .report import render_sweep_report

    rows = read_sweep_csv(args.sweep)
    written = render_sweep_report(rows, args.outdir)
    print("report: wrote " + ", ".join(written))
    return 0


def _cmd_lattice(args) -> int:
    from .lattice import Annulus, Rect, build_region_graph, dump_edge_list

    if args.action != "dump":
        raise PreconditionError(f"unknown lattice action {args.action!r}")
    if args.annulus is not None:
        r_in, r_out = args.annulus
        region = Annulus(0.0, 0.0, r_in, r_out)
    else:
        w, h = args.rect
        region = Rect(0.0, 0.0, w, h)
    graph = build_region_graph(args.eps, region)
    if args.out == "-":
        dump_edge_list(graph, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            dump_edge_list(graph, fh)
        print(f"lattice dump: {graph.n_sites} sites, {len(graph.edges)} edges -> {args.out}")
    return 0


# -- parser -------------------------------------------------------------------


def _add_global_flags(parser, top: bool) -> None:
    # accepted both before and after the subcommand name
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--seed", type=int, default=d(0), help="root RNG seed")
    parser.add_argument("--threads", type=int, default=d(1), help="worker processes")
    parser.add_argument("--cache-dir", default=d(None), help="square-root table cache directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfperc",
        description="Excursion-set percolation experiments for planar Gaussian fields",
    )
    _add_global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    ks = sub.add_parser("kernel-sqrt", help="build and store a square-root table")
    ks.add_argument("--kernel", required=True)
    ks.add_argument("--eps", type=float, required=True)
    ks.add_argument("--grid-order", type=int, default=None, dest="grid_order")
    ks.add_argument("--support-radius", type=int, default=None, dest="support_radius")
    ks.add_argument("--out", required=True)
    ks.set_defaults(func=_cmd_kernel_sqrt)

    sa = sub.add_parser("sample", help="sample a field on a rectangle lattice")
    sa.add_argument("--kernel", required=True)
    sa.add_argument("--eps", type=float, required=True)
    sa.add_argument("--rect", type=float, nargs=2, required=True, metavar=("W", "H"))
    sa.add_argument("--out", required=True)
    sa.set_defaults(func=_cmd_sample)

    cs = sub.add_parser("crossing-sweep", help="crossing probabilities over (R, p) grids")
    cs.add_argument("--kernel", required=True)
    cs.add_argument("--eps", type=float, default=0.5)
    cs.add_argument("--eps-rule", default=None, dest="eps_rule", choices=["log_cuberoot"])
    cs.add_argument("--rho", type=float, default=2.0)
    cs.add_argument("--R", required=True, help="comma list or a:b:step")
    cs.add_argument("--p", required=True, help="comma list or a:b:step")
    cs.add_argument("--n", type=float, required=True)
    cs.add_argument("--out", required=True)
    cs.set_defaults(func=_cmd_crossing_sweep)

    infl = sub.add_parser("influence", help="influences and the Russo identity")
    infl.add_argument("--event", default="cross")
    infl.add_argument("--kernel", default="bf")
    infl.add_argument("--eps", type=float, required=True)
    infl.add_argument("--R", type=float, required=True)
    infl.add_argument("--p", type=float, required=True)
    infl.add_argument("--h", type=float, default=0.01)
    infl.add_argument("--n", type=float, required=True)
    infl.add_argument("--out", required=True)
    infl.set_defaults(func=_cmd_influence)

    fo = sub.add_parser("fold", help="fold-event probabilities (importance sampled)")
    fo.add_argument("--kernel", required=True)
    fo.add_argument("--eps", required=True, help="comma list or a:b:step")
    fo.add_argument("--p", type=float, required=True)
    fo.add_argument("--K", default="16", help="interior witness counts, comma list")
    fo.add_argument("--n", type=float, required=True)
    fo.add_argument("--out", required=True)
    fo.set_defaults(func=_cmd_fold)

    gp = sub.add_parser("gap", help="coarse-vs-fine sprinkled crossing gap")
    gp.add_argument("--kernel", required=True)
    gp.add_argument("--eps", type=float, required=True)
    gp.add_argument("--R", type=float, required=True)
    gp.add_argument("--p", type=float, required=True)
    gp.add_argument("--fine-factor", type=int, default=4, dest="fine_factor")
    gp.add_argument("--n", type=float, required=True)
    gp.add_argument("--instrument", action="store_true")
    gp.add_argument("--out", required=True)
    gp.set_defaults(func=_cmd_gap)

    rp = sub.add_parser("report", help="figures + derived tables from a sweep CSV")
    rp.add_argument("--sweep", required=True)
    rp.add_argument("--outdir", required=True)
    rp.set_defaults(func=_cmd_report)

    la = sub.add_parser("lattice", help="lattice utilities")
    la.add_argument("action", choices=["dump"])
    la.add_argument("--eps", type=float, required=True)
    la.add_argument("--rect", type=float, nargs=2, default=None, metavar=("W", "H"))
    la.add_argument("--annulus", type=float, nargs=2, default=None, metavar=("RIN", "ROUT"))
    la.add_argument("--out", default="-")
    la.set_defaults(func=_cmd_lattice)

    for sp in (ks, sa, cs, infl, fo, gp, rp, la):
        _add_global_flags(sp, top=False)

    return parser


_GRID_FLAGS = ("--p", "--R", "--eps", "--K")


def _join_grid_values(argv):
    """Rewrite '--p -0.2:0.2:0.05' as '--p=-0.2:0.2:0.05' so grids that start
    with a minus sign survive argparse."""
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a in _GRID_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(_join_grid_values(list(argv)))
    try:
        return args.func(args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
