"""Command-line front end.

    ctmcbounds check   MODEL --time T      explicit value at the initial state
    ctmcbounds bound   MODEL --time T      abstraction bounds [lo, hi]
    ctmcbounds compare MODEL --time T      both, and check containment

Exit codes: 0 ok, 1 usage or I/O, 2 parse error, 3 semantic error,
4 state cap exceeded, 5 infeasible abstraction, 6 containment violated.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .abstraction import AbstractionError, build_abstraction, dump_abstraction, load_abstraction
from .explicit import build_explicit, explicit_chain, explicit_value
from .intervalvi import chain_bounds, chain_ctmdp, load_ctmdp, value_bounds, value_ctmdp
from .lang import Num, ParseError, RewardItem, SemanticError, parse_file
from .partition import PartitionError, export_blocks, initial_partition, refine, s_abs
from .poisson import TruncationError
from .semantics import DEFAULT_STATE_CAP, StateCapError, UniformisedSemantics, apply_target_absorption
from .symbolic import DEFAULT_BLOCK_BITS, SymbolicModel

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_SEMANTIC = 3
EXIT_CAP = 4
EXIT_INFEASIBLE = 5
EXIT_CONTAINMENT = 6

log = logging.getLogger("ctmcbounds")


class Timer:
    def __init__(self):
        self.t: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.t[name] = self.t.get(name, 0.0) + time.perf_counter() - t0


class UsageError(Exception):
    """Bad command-line arguments (exit 1)."""


def _constants(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--const expects NAME=VALUE, got {item!r}")
        name, val = item.split("=", 1)
        val = val.strip()
        if val in ("true", "false"):
            out[name.strip()] = val == "true"
        else:
            try:
                out[name.strip()] = int(val)
            except ValueError:
                out[name.strip()] = float(val)
    return out


def _phases(args) -> list[float] | None:
    if not args.phases:
        return None
    try:
        deltas = [float(x) for x in args.phases.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--phases expects comma-separated numbers, got {args.phases!r}") from None
    if not deltas or any(d < 0 for d in deltas):
        raise UsageError("--phases needs non-negative durations")
    return deltas


def _validate(args) -> None:
    if args.time is not None and args.time < 0:
        raise UsageError("--time must be non-negative")
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be positive")
    if getattr(args, "refine_iters", 0) < 0:
        raise UsageError("--refine-iters must be non-negative")
    if args.time is None and not args.phases:
        raise UsageError("give --time or --phases")


def load_semantics(args) -> UniformisedSemantics:
    m = parse_file(args.model, _constants(args.const))
    if args.target:
        target = m.parse_expr(args.target)
        m = m.with_rewards(cumulative=(), final=(RewardItem(target, Num(1)),))
        sem = UniformisedSemantics(m, args.lam)
        return apply_target_absorption(sem, target)
    sem = UniformisedSemantics(m, args.lam)
    if m.target is not None:
        sem = apply_target_absorption(sem, m.target)
    return sem


def _horizon(args, deltas) -> float:
    return float(sum(deltas)) if deltas else float(args.time)


def _round(x: float) -> float:
    # 12 significant digits keeps output stable under harmless reorderings
    return float(f"{x:.12g}")


def run_check(args, timer: Timer) -> tuple[int, dict]:
    deltas = _phases(args)
    if args.model.endswith(".ctmdp"):
        m = load_ctmdp(args.model)
        direction = "min" if args.direction == "min" else "max"
        with timer.stage("iterate"):
            if deltas:
                q = chain_ctmdp(m, [(d, direction) for d in deltas], args.epsilon)[-1]
                k = None
            else:
                res = value_ctmdp(m, args.time, args.epsilon, direction)
                q, k = res.q, res.k
        return EXIT_OK, {
            "horizon": _horizon(args, deltas),
            "direction": direction,
            "epsilon": args.epsilon,
            "k": k,
            "value": _round(q[0]),
            "states": m.n,
        }
    sem = load_semantics(args)
    with timer.stage("explore"):
        c = build_explicit(sem, args.state_cap)
    if args.dump_matrix:
        c.dump(args.dump_matrix)
    with timer.stage("iterate"):
        if deltas:
            q = explicit_chain(c, deltas, args.epsilon)[-1]
            k = None
        else:
            res = explicit_value(c, args.time, args.epsilon, kahan=args.kahan)
            q, k = res.q, res.k
    return EXIT_OK, {
        "horizon": _horizon(args, deltas),
        "direction": "exact",
        "epsilon": args.epsilon,
        "k": k,
        "value": _round(q[0]),
        "states": c.n,
        "lambda": c.lam,
    }


def _read_predicates(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith(("//", "#"))]


def _abstract(args, sem, timer: Timer):
    with timer.stage("symbolic"):
        sym = SymbolicModel(sem, block_bits=args.block_bits)
        sym.reach()
    with timer.stage("refine"):
        preds = _read_predicates(args.predicates) if args.predicates else []
        p0 = initial_partition(sym, preds)
        ref = refine(sym, p0, args.refine_iters)
    p = ref.partition
    if args.replay_abstraction:
        a, rew = load_abstraction(args.replay_abstraction)
        a.validate()
    else:
        with timer.stage("abstract"):
            a, rew = build_abstraction(sym, p, workers=args.workers)
    if args.dump_abstraction:
        dump_abstraction(args.dump_abstraction, a, rew)
    if args.export_partition:
        export_blocks(sym, p, build_explicit(sem, args.state_cap).states, args.export_partition)
    return sym, p, ref, a, rew


def _bounds(args, a, rew, timer: Timer) -> dict:
    deltas = _phases(args)
    dirs = ["min", "max"] if args.direction == "both" else [args.direction]
    out = {}
    with timer.stage("iterate"):
        for d in dirs:
            if deltas:
                out[d] = (chain_bounds(a, rew, deltas, args.epsilon, d)[-1], None)
            else:
                res = value_bounds(a, rew, args.time, args.epsilon, d)
                out[d] = (res.q, res.k)
    return out


def _bound_result(args, a, out, ref) -> dict:
    z0 = a.initial_block
    deltas = _phases(args)
    res = {
        "horizon": _horizon(args, deltas),
        "direction": args.direction,
        "epsilon": args.epsilon,
        "k": (out["max"] if "max" in out else out["min"])[1],
        "blocks": a.n_blocks,
        "actions": a.n_actions,
        "lambda": a.lam,
    }
    if ref is not None:
        res["refine_iterations"] = ref.iterations
    if args.direction == "both":
        res["interval"] = [_round(out["min"][0][z0]), _round(out["max"][0][z0])]
    else:
        res["value"] = _round(out[args.direction][0][z0])
    if args.per_block:
        res["per_block"] = {d: [_round(x) for x in q.tolist()] for d, (q, _) in out.items()}
    return res


def run_bound(args, timer: Timer) -> tuple[int, dict]:
    sem = load_semantics(args)
    _, _, ref, a, rew = _abstract(args, sem, timer)
    out = _bounds(args, a, rew, timer)
    return EXIT_OK, _bound_result(args, a, out, ref)


def run_compare(args, timer: Timer) -> tuple[int, dict]:
    sem = load_semantics(args)
    with timer.stage("explore"):
        c = build_explicit(sem, args.state_cap)
    deltas = _phases(args)
    with timer.stage("exact"):
        if deltas:
            exact = explicit_chain(c, deltas, args.epsilon)[-1]
        else:
            exact = explicit_value(c, args.time, args.epsilon, kahan=args.kahan).q
    sym, p, ref, a, rew = _abstract(args, sem, timer)
    out = _bounds(args, a, rew, timer)

    blocks = np.array([s_abs(sym, p, s) for s in c.states])
    if blocks.max(initial=0) >= a.n_blocks:
        raise AbstractionError("abstraction has fewer blocks than the partition")
    lo = out["min"][0][blocks]
    hi = out["max"][0][blocks]
    slack = 2 * args.epsilon
    bad = np.flatnonzero((exact < lo - slack) | (exact > hi + slack))
    res = _bound_result(args, a, out, ref)
    res["value"] = _round(exact[0])
    res["states"] = c.n
    res["width"] = _round(res["interval"][1] - res["interval"][0])
    res["containment"] = "PASS" if len(bad) == 0 else "FAIL"
    if len(bad):
        s = int(bad[0])
        res["violation"] = {
            "state": sem.model.state_str(c.states[s]),
            "exact": _round(exact[s]),
            "interval": [_round(lo[s]), _round(hi[s])],
        }
        return EXIT_CONTAINMENT, res
    return EXIT_OK, res


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctmcbounds", description="Bounds on transient rewards of large CTMCs.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("model", help="model file (.ctmc, or .ctmdp for check)")
        p.add_argument("--time", type=float, help="time horizon")
        p.add_argument("--epsilon", type=float, default=1e-6, help="precision (default 1e-6)")
        p.add_argument("--lambda", dest="lam", type=float, help="uniformisation rate override")
        p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP, help="explicit state limit")
        p.add_argument("--target", help="reachability target: absorbing, final reward 1")
        p.add_argument("--phases", help="comma-separated phase durations for chained analysis")
        p.add_argument("--const", action="append", metavar="NAME=VALUE", help="model constant")
        p.add_argument("--json", metavar="PATH", help="also write the result JSON here")
        p.add_argument("--kahan", action="store_true", help="compensated summation in the explicit engine")
        p.add_argument("-v", "--verbose", action="store_true")

    def abstract(p):
        p.add_argument("--refine-iters", type=int, default=0, help="bisimulation refinement passes")
        p.add_argument("--predicates", metavar="FILE", help="initial predicates, one expression per line")
        p.add_argument("--dump-abstraction", metavar="PATH")
        p.add_argument("--replay-abstraction", metavar="PATH", help="use a dumped abstraction instead of building one")
        p.add_argument("--export-partition", metavar="PATH", help="write 'stateIndex blockIndex' lines")
        p.add_argument("--block-bits", type=int, default=DEFAULT_BLOCK_BITS)
        p.add_argument("--workers", type=int, default=1, help="threads for the abstraction sweep")
        p.add_argument("--per-block", action="store_true", help="include per-block values")

    p = sub.add_parser("check", help="explicit-state value at the initial state")
    common(p)
    p.add_argument("--direction", choices=["min", "max"], default="max", help="for .ctmdp input")
    p.add_argument("--dump-matrix", metavar="PATH")
    p = sub.add_parser("bound", help="lower and upper bounds from the abstraction")
    common(p)
    abstract(p)
    p.add_argument("--direction", choices=["min", "max", "both"], default="both")
    p = sub.add_parser("compare", help="explicit value against abstraction bounds")
    common(p)
    abstract(p)
    p.add_argument("--direction", choices=["both"], default="both")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    timer = Timer()
    run = {"check": run_check, "bound": run_bound, "compare": run_compare}[args.cmd]
    try:
        _validate(args)
        code, res = run(args, timer)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except StateCapError as e:
        print(f"state cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except (SemanticError, TruncationError, PartitionError, ZeroDivisionError) as e:
        print(f"semantic error: {e}", file=sys.stderr)
        return EXIT_SEMANTIC
    except AbstractionError as e:
        print(f"infeasible abstraction: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    res["timings"] = {k: round(v, 6) for k, v in timer.t.items()}
    text = json.dumps(res, indent=1, sort_keys=True, allow_nan=False)
    print(text)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
