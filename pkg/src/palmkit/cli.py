"""Command-line experiment runner.

Exit status is 0 on success, 2 when inputs are invalid and 3 when a
statistical check fails under ``--assert``.  The master seed can be overridden
with the ``PALMKIT_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .configuration import ConfigurationError, format_config, load_config
from .cost import COST_FIELDS, graphing_cost, gxz_convergence_experiment, parse_graphing, vertical_cost_experiment
from .graph import FactorGraph, distance_graph, load_graph, percolate_edges
from .palm import (
    VERIFIER_FIELDS,
    VerifierReport,
    ball_transport,
    functional_by_name,
    nn_transport,
    spawn_transport,
    verify_clmm,
    verify_mecke_slivnyak,
    verify_mtp,
    verify_palm_of_thickening,
    window_ball_count,
)
from .process import (
    decode_marks,
    delta_thin,
    encode_marks,
    p_thin,
    parse_process,
    quantize_marks,
    sample_poisson,
)
from .space import Box, parse_box, parse_space
from .stats import SEED_ENV, master_seed, poisson_gof, replica_rng
from .weakconv import FddWindowSet, factor_colouring, colours, fdd_compare, wobble_distance

EXIT_OK, EXIT_INPUT, EXIT_ASSERT = 0, 2, 3

VERIFY_MODES = (
    "poisson", "mecke", "clmm", "mtp", "thinning", "thickening",
    "percolation", "colouring", "encoding", "weakconv",
)


class InputError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------


def _seed(value) -> int:
    seed = master_seed(value)
    if not 0 <= seed < 2**64:
        raise InputError("seed must be a 64-bit unsigned integer")
    return seed


def _floats(text: str) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _displacements(text: str) -> np.ndarray:
    F = [tuple(float(v) for v in f.split(",")) for f in text.split("+")]
    if not any(all(v == 0 for v in f) for f in F):
        F.insert(0, tuple(0.0 for _ in F[0]))
    return np.array(F)


def _write_csv(rows: Sequence[dict], fields: Sequence[str], out: Optional[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{no}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return values


def _graph_for(config, desc: Optional[str]) -> Optional[FactorGraph]:
    if not desc:
        return None
    return parse_graphing(desc).build(config)


# -- subcommands ---------------------------------------------------------------------


def cmd_sample(args) -> int:
    space = parse_space(args.space)
    spec = parse_process(args.process)
    seed = _seed(args.seed)
    cfg = spec.sample(space, replica_rng(seed, 0))
    text = format_config(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.figure:
        from .plotting import render_configuration

        render_configuration(cfg, args.figure)
    return EXIT_OK


def cmd_render(args) -> int:
    from .plotting import render_configuration

    head = Path(args.input).read_text().lstrip()[:4]
    if head == "PPG1":
        g = load_graph(args.input)
        cfg = g.config
    else:
        cfg = load_config(args.input)
        g = _graph_for(cfg, args.graph)
    render_configuration(cfg, args.out, graph=g)
    return EXIT_OK


def _verify_poisson(args, space, seed):
    counts = np.array([len(sample_poisson(space, args.t, replica_rng(seed, r))) for r in range(args.replicas)])
    mean = args.t * space.volume
    _, _, p = poisson_gof(counts, mean)
    se = math.sqrt(mean / args.replicas)
    return VerifierReport("poisson", "count", args.replicas, float(counts.mean()), mean, se, p, seed, p > args.alpha)


def _verify_thinning(args, space, seed):
    counts = np.array([
        len(p_thin(sample_poisson(space, args.t, replica_rng(seed, r), marked=True), args.p))
        for r in range(args.replicas)
    ])
    mean = args.p * args.t * space.volume
    _, _, p = poisson_gof(counts, mean)
    return VerifierReport("thinning", f"count_p{args.p:g}", args.replicas, float(counts.mean()), mean,
                          math.sqrt(mean / args.replicas), p, seed, p > args.alpha)


def _verify_percolation(args, space, seed):
    kept = total = 0
    for r in range(args.replicas):
        cfg = sample_poisson(space, args.t, replica_rng(seed, r), marked=True)
        g = distance_graph(cfg, args.R)
        total += g.m
        kept += percolate_edges(g, args.eps).m
    if total == 0:
        raise InputError("no edges to percolate")
    frac = kept / total
    se = math.sqrt(args.eps * (1 - args.eps) / total)
    p = 1.0 if se == 0 and frac == args.eps else float(2 * stats.norm.sf(abs(frac - args.eps) / se)) if se else 0.0
    return VerifierReport("percolation", "survival", total, frac, args.eps, se, p, seed, p > args.alpha)


def _verify_colouring(args, space, seed):
    d = args.d
    counts = np.zeros(d)
    for r in range(args.replicas):
        rng = replica_rng(seed, r)
        cfg = sample_poisson(space, args.t, rng)
        if not len(cfg):
            continue
        col = colours(factor_colouring(cfg, d, args.rho, args.cell, seed), d)
        counts[col[rng.integers(len(cfg))]] += 1
    p = float(stats.chisquare(counts).pvalue) if d > 1 else 1.0
    n = counts.sum()
    return VerifierReport("colouring", "marginal", int(n), float(counts[0] / n), 1.0 / d,
                          math.sqrt((1 / d) * (1 - 1 / d) / n), p, seed, p > args.alpha)


def _verify_encoding(args, space, seed):
    ok = 0
    for r in range(args.replicas):
        rng = replica_rng(seed, r)
        cfg = delta_thin(sample_poisson(space, args.t, rng), args.delta)
        cfg = cfg.replace(marks=quantize_marks(rng.random(len(cfg))))
        ok += decode_marks(encode_marks(cfg, args.delta), args.delta).equals(cfg)
    passed = ok == args.replicas
    return VerifierReport("encoding", "round_trip", args.replicas, ok, args.replicas, 0.0,
                          1.0 if passed else 0.0, seed, passed)


def _verify_weakconv(args, space, seed):
    spec = parse_process(args.process)
    windows = FddWindowSet(tuple(parse_box(w) for w in args.windows.split(";")))
    a = [spec.sample(space, replica_rng(seed, r, "arm-a")) for r in range(args.replicas)]
    b = [spec.sample(space, replica_rng(seed, r, "arm-b")) for r in range(args.replicas)]
    rep = fdd_compare(a, b, windows)
    return VerifierReport("weakconv", "fdd_tv", args.replicas, rep.tv, 0.0, 0.0, rep.pvalue, seed,
                          rep.pvalue > args.alpha)


def cmd_verify(args) -> int:
    space = parse_space(args.space)
    seed = _seed(args.seed)
    mode = args.mode
    if mode == "poisson":
        rep = _verify_poisson(args, space, seed)
    elif mode == "mecke":
        rep = verify_mecke_slivnyak(args.t, space, functional_by_name(args.statistic), args.replicas, seed, args.alpha)
    elif mode == "clmm":
        U = parse_box(args.window) if args.window else Box((0.0,) * space.dim, (2.0,) * space.dim)
        f = window_ball_count(U, args.r, args.cap)
        rep = verify_clmm(parse_process(args.process), space, f, args.replicas, seed, workers=args.workers)
    elif mode == "mtp":
        name, _, arg = args.transport.partition(":")
        T = {"ball": lambda: ball_transport(float(arg or 1.0)), "nn": nn_transport, "spawn": spawn_transport}
        if name not in T:
            raise InputError(f"unknown transport {args.transport!r}")
        process = args.process
        if name == "spawn" and "thicken" not in process:
            process += "|thicken:" + (args.F or "0.5,0+0,0.5")
        rep = verify_mtp(parse_process(process), space, T[name](), args.replicas, seed)
    elif mode == "thinning":
        rep = _verify_thinning(args, space, seed)
    elif mode == "thickening":
        F = _displacements(args.F or "0.5,0")
        rep = verify_palm_of_thickening(args.t, space, F, functional_by_name(args.statistic), args.replicas, seed,
                                        args.alpha)
    elif mode == "percolation":
        rep = _verify_percolation(args, space, seed)
    elif mode == "colouring":
        rep = _verify_colouring(args, space, seed)
    elif mode == "encoding":
        rep = _verify_encoding(args, space, seed)
    else:
        rep = _verify_weakconv(args, space, seed)
    _write_csv([rep.row()], VERIFIER_FIELDS, args.out)
    return EXIT_ASSERT if args.assert_ and not rep.passed else EXIT_OK


def cmd_cost(args) -> int:
    seed = _seed(args.seed)
    if args.vertical:
        ests = vertical_cost_experiment(args.t, args.L, args.R, _floats(args.eps), args.levels, args.replicas, seed)
        ok = all(e.connected_frac >= args.min_connected for e in ests)
        ok &= all(abs(e.cost - e.detail["target_cost"]) <= 0.05 * e.detail["target_cost"] for e in ests)
        costs = [e.cost for e in sorted(ests, key=lambda e: e.eps)]
        ok &= all(a < b for a, b in zip(costs, costs[1:]))
        for e in ests:
            sys.stderr.write(
                f"eps={e.eps:g}: connected {e.connected_frac:.3f} (base {e.detail['base_connected_frac']:.3f}, "
                f"given base {e.detail['connected_given_base']:.3f}), target cost {e.detail['target_cost']:.4f}\n"
            )
        if args.figure:
            from .plotting import plot_cost

            plot_cost(ests, args.figure)
    else:
        spec = parse_process(args.process)
        est = graphing_cost(spec, parse_space(args.space), parse_graphing(args.graphing), args.replicas, seed)
        ests = [est]
        ok = est.connected_frac >= args.min_connected
    _write_csv([e.row() for e in ests], COST_FIELDS, args.out)
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


GXZ_FIELDS = (
    "n", "successor_prob", "successor_stderr", "bound", "strip_chi2", "strip_dof", "strip_pvalue",
    "wobble_exact_frac", "tightness_q", "progenitor_frac",
)


def cmd_gxz(args) -> int:
    seed = _seed(args.seed)
    res = gxz_convergence_experiment(args.t, _ints(args.ns), args.L, args.levels, args.replicas, seed,
                                     eps_succ=args.eps_succ)
    rows = [r.row() for r in res["rows"]]
    _write_csv(rows, GXZ_FIELDS, args.out)
    fdd, col, tight = res["fdd"], res["fdd_column"], res["tightness"]
    sys.stderr.write(
        f"fdd n={res['fdd_n']} cross windows: tv={fdd.tv:.4f} chi2={fdd.chi2:.3f} dof={fdd.dof} p={fdd.pvalue:.4g}\n"
        f"fdd n={res['fdd_n']} column windows: tv={col.tv:.4f} p={col.pvalue:.4g}\n"
        f"tightness: sup M={tight.sup} bound={tight.bound:g} stable={tight.stable}\n"
    )
    if args.figure:
        from .plotting import plot_gxz

        plot_gxz(res["rows"], args.figure)
    ok = all(r.successor_prob >= r.bound - 0.02 and r.strip_pvalue > args.alpha for r in res["rows"])
    ok &= fdd.pvalue > args.alpha
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


def cmd_wobble(args) -> int:
    a, b = load_config(args.a), load_config(args.b)
    w = wobble_distance(a, b, args.R)
    _write_csv([{"feasible": int(w.feasible), "eps": w.eps, "R": w.R, "n_a": w.n_a, "n_b": w.n_b}],
               ("feasible", "eps", "R", "n_a", "n_b"), args.out)
    ok = w.feasible and (args.max_eps is None or w.eps <= args.max_eps)
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


def cmd_fdd(args) -> int:
    seed = _seed(args.seed)
    space = parse_space(args.space)
    windows = FddWindowSet(tuple(parse_box(w) for w in args.windows.split(";")))
    windows.check_space(space)
    spa, spb = parse_process(args.a), parse_process(args.b)
    a = [windows.counts(spa.sample(space, replica_rng(seed, r, "fdd-a"))) for r in range(args.replicas)]
    b = [windows.counts(spb.sample(space, replica_rng(seed, r, "fdd-b"))) for r in range(args.replicas)]
    rep = fdd_compare(np.array(a), np.array(b), windows, args.max_count)
    _write_csv([rep.row()], ("tv", "chi2", "dof", "pvalue", "n_a", "n_b", "max_count", "windows"), args.out)
    ok = rep.pvalue > args.alpha if args.expect == "same" else rep.pvalue < args.alpha
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


def cmd_accept(args) -> int:
    from .experiments import CRITERIA, run_criterion

    numbers = _ints(args.criterion) if args.criterion else sorted(CRITERIA)
    rows, ok = [], True
    for k in numbers:
        explicit = args.seed is not None or SEED_ENV in os.environ
        res = run_criterion(k, _seed(args.seed) if explicit else None)
        print(res.line(), flush=True)
        ok &= res.passed
        rows.append({"criterion": k, "name": res.name, "passed": int(res.passed),
                     "seconds": round(res.seconds, 3), "seed": res.values["seed"]})
    if args.out:
        _write_csv(rows, ("criterion", "name", "passed", "seconds", "seed"), args.out)
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


# -- argument parsing ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, replicas: int = 1000, seed_default=0) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help=f"master seed (overridden by ${SEED_ENV})")
    p.add_argument("--replicas", type=int, default=replicas)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 if the check fails")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palmkit", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with defaults for the subcommand")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw one configuration")
    p.add_argument("--space", required=True)
    p.add_argument("--process", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--figure", help="also render the sample (svg/png)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("render", help="draw a PPC1/PPG1 file")
    p.add_argument("input")
    p.add_argument("--graph", help="graphing to draw, e.g. dist:2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("verify", help="run one identity check")
    p.add_argument("mode", choices=VERIFY_MODES)
    _common(p, replicas=2000)
    p.add_argument("--space", default="torus2:20")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--process", default="poisson:1")
    p.add_argument("--statistic", default="nn")
    p.add_argument("--transport", default="ball:1")
    p.add_argument("--window", help="statistics window, e.g. box:0,0:2,2")
    p.add_argument("--windows", default="box:0,0:1,1", help="fdd windows separated by ';'")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--cap", type=float, default=10.0)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--F", help="displacements joined by '+', e.g. 0.5,0+0,0.5")
    p.add_argument("--R", type=float, default=2.0)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--cell", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=0.5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("cost", help="cost bound of a graphing")
    _common(p, replicas=100)
    p.add_argument("--space", default="torus2:16")
    p.add_argument("--process", default="lattice:1")
    p.add_argument("--graphing", default="cayley")
    p.add_argument("--vertical", action="store_true", help="vertical coupling with a percolated lift")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--L", type=float, default=20.0)
    p.add_argument("--R", type=float, default=3.0)
    p.add_argument("--eps", default="0.2")
    p.add_argument("--levels", type=int, default=40)
    p.add_argument("--min-connected", type=float, default=1.0)
    p.add_argument("--figure")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gxz", help="straightening diagnostics on the cylinder")
    _common(p, replicas=2000)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--ns", default="2,5,10,20")
    p.add_argument("--L", type=float, default=20.0)
    p.add_argument("--levels", type=int, default=40)
    p.add_argument("--eps-succ", type=float, default=0.05)
    p.add_argument("--figure")
    p.set_defaults(func=cmd_gxz)

    p = sub.add_parser("wobble", help="bottleneck matching of two configurations")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--max-eps", type=float)
    p.add_argument("--out")
    p.add_argument("--assert", dest="assert_", action="store_true")
    p.set_defaults(func=cmd_wobble)

    p = sub.add_parser("fdd", help="compare joint window counts of two processes")
    _common(p, replicas=5000)
    p.add_argument("--space", default="torus2:10")
    p.add_argument("--a", default="poisson:1")
    p.add_argument("--b", default="poisson:1")
    p.add_argument("--windows", default="box:0,0:1,1")
    p.add_argument("--max-count", type=int)
    p.add_argument("--expect", choices=("same", "different"), default="same")
    p.set_defaults(func=cmd_fdd)

    p = sub.add_parser("accept", help="run the acceptance experiments")
    p.add_argument("--criterion", help="comma-separated numbers (default: all)")
    p.add_argument("--seed", type=int, default=None, help="override the documented seeds")
    p.add_argument("--out")
    p.add_argument("--assert", dest="assert_", action="store_true")
    p.set_defaults(func=cmd_accept)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    try:
        if known.config:
            values = _read_config_file(known.config)
            choices = parser._subparsers._group_actions[0].choices
            command = next((a for a in rest if a in choices), None)
            if command is None:
                raise InputError("--config needs a subcommand")
            subparser = choices[command]
            known_keys = {a.dest for a in subparser._actions}
            unknown = set(values) - known_keys
            if unknown:
                raise InputError(f"{known.config}: unknown keys {', '.join(sorted(unknown))}")
            typed = {}
            for a in subparser._actions:
                if a.dest in values:
                    v = values[a.dest]
                    if isinstance(a, argparse._StoreTrueAction):
                        typed[a.dest] = v.lower() in ("1", "true", "yes")
                    else:
                        typed[a.dest] = a.type(v) if a.type else v
            subparser.set_defaults(**typed)
            # required flags satisfied by the file must not be demanded again
            for a in subparser._actions:
                if a.dest in typed:
                    a.required = False
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InputError, ValueError) as exc:
        print(f"palmkit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ValueError, ConfigurationError, OSError) as exc:
        print(f"palmkit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
