"""ECTMC abstraction of a guarded model under a partition.

One depth-first sweep over the partition diagram visits every reachable
state together with its block. For each state the enabled commands are
evaluated, their successors looked up with ``s_abs``, and the resulting
per-block rates widen the interval row of the pair ``(block, signature)``,
where the signature maps each enabled command to its successor block.
Reward bounds are widened in both directions in the same sweep.

The entry of a row for the block itself is completed by the uniformisation
residual: a member with total rate ``out`` to other blocks sends
``lam - out`` into its own block, so that entry is
``[lam - max out, lam - min out]``. Tracking ``out`` rather than the self rate
lets ``lam`` be fixed after the sweep.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lang import SemanticError
from .obdd import FALSE, TRUE
from .partition import Partition, s_abs
from .semantics import resolve_rate
from .symbolic import SymbolicModel

FEAS_TOL = 1e-9


class AbstractionError(Exception):
    """An abstraction violates the interval or feasibility constraints."""


@dataclass
class AbstractRewards:
    r_lo: np.ndarray
    r_hi: np.ndarray
    f_lo: np.ndarray
    f_hi: np.ndarray

    def for_direction(self, direction: str) -> tuple[np.ndarray, np.ndarray]:
        return (self.r_hi, self.f_hi) if direction == "max" else (self.r_lo, self.f_lo)


@dataclass
class Ectmc:
    """Abstract actions stored flat.

    Action ``a`` belongs to block ``act_block[a]``; its interval entries are
    ``ent_dst/ent_lo/ent_hi[act_ptr[a]:act_ptr[a+1]]``, sorted by target block
    and always including the block itself. Actions are sorted by block, so
    ``block_ptr[z]:block_ptr[z+1]`` are the actions of block ``z``.
    """

    n_blocks: int
    lam: float
    act_block: np.ndarray
    act_ptr: np.ndarray
    ent_dst: np.ndarray
    ent_lo: np.ndarray
    ent_hi: np.ndarray
    signatures: list = field(default_factory=list)  # per action: tuple of (command label, block)
    initial_block: int = 0

    @property
    def n_actions(self) -> int:
        return len(self.act_block)

    @property
    def block_ptr(self) -> np.ndarray:
        return np.searchsorted(self.act_block, np.arange(self.n_blocks + 1))

    def row(self, a: int) -> list[tuple[int, float, float]]:
        s = slice(self.act_ptr[a], self.act_ptr[a + 1])
        return list(zip(self.ent_dst[s].tolist(), self.ent_lo[s].tolist(), self.ent_hi[s].tolist()))

    def actions_of(self, z: int) -> range:
        bp = self.block_ptr
        return range(bp[z], bp[z + 1])

    def validate(self, tol: float = FEAS_TOL) -> None:
        lam = self.lam
        slack = tol * max(1.0, lam)
        if self.n_actions == 0:
            raise AbstractionError("abstraction has no actions")
        if np.any(np.diff(self.act_block) < 0):
            raise AbstractionError("actions are not sorted by block")
        have = np.zeros(self.n_blocks, bool)
        have[self.act_block] = True
        if not have.all():
            raise AbstractionError(f"block {int(np.flatnonzero(~have)[0])} has no action")
        if np.any(self.ent_lo < -slack) or np.any(self.ent_hi > lam + slack) or np.any(self.ent_lo > self.ent_hi + slack):
            raise AbstractionError("rate interval outside 0 <= lo <= hi <= lambda")
        ptr = self.act_ptr[:-1]
        lo_sum = np.add.reduceat(self.ent_lo, ptr)
        hi_sum = np.add.reduceat(self.ent_hi, ptr)
        bad = (lo_sum > lam + slack) | (hi_sum < lam - slack)
        if np.any(bad):
            a = int(np.flatnonzero(bad)[0])
            raise AbstractionError(
                f"infeasible row for block {int(self.act_block[a])}: sum lo {lo_sum[a]}, sum hi {hi_sum[a]}, lambda {lam}"
            )

    # serialisation ----------------------------------------------------

    def to_json(self, rew: AbstractRewards) -> dict:
        actions = []
        for a in range(self.n_actions):
            actions.append(
                {
                    "block": int(self.act_block[a]),
                    "signature": [[lab, int(b)] for lab, b in self.signatures[a]] if self.signatures else [],
                    "rates": [[d, lo, hi] for d, lo, hi in self.row(a)],
                }
            )
        return {
            "format": "ectmc-1",
            "lambda": self.lam,
            "n_blocks": self.n_blocks,
            "initial_block": self.initial_block,
            "rewards": {
                "r_lo": rew.r_lo.tolist(),
                "r_hi": rew.r_hi.tolist(),
                "f_lo": rew.f_lo.tolist(),
                "f_hi": rew.f_hi.tolist(),
            },
            "actions": actions,
        }


def ectmc_from_rows(n_blocks: int, lam: float, rows, initial_block: int = 0) -> Ectmc:
    """Build from ``[(block, signature, {dst: (lo, hi)}), ...]``.

    A missing entry for the block itself is added as ``[0, 0]``.
    """
    rows = sorted(rows, key=lambda x: (x[0], tuple(x[1])))
    act_block, ptr, dst, lo, hi, sigs = [], [0], [], [], [], []
    for z, sig, ent in rows:
        ent = dict(ent)
        ent.setdefault(z, (0.0, 0.0))
        for d in sorted(ent):
            dst.append(d)
            lo.append(float(ent[d][0]))
            hi.append(float(ent[d][1]))
        act_block.append(z)
        ptr.append(len(dst))
        sigs.append(tuple(tuple(x) for x in sig))
    return Ectmc(
        n_blocks,
        float(lam),
        np.asarray(act_block, dtype=np.int64),
        np.asarray(ptr, dtype=np.int64),
        np.asarray(dst, dtype=np.int64),
        np.asarray(lo, float),
        np.asarray(hi, float),
        sigs,
        initial_block,
    )


def dump_abstraction(path, a: Ectmc, rew: AbstractRewards) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(a.to_json(rew), fh, indent=1)
        fh.write("\n")


def load_abstraction(path) -> tuple[Ectmc, AbstractRewards]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return abstraction_from_json(d)


def abstraction_from_json(d: dict) -> tuple[Ectmc, AbstractRewards]:
    if d.get("format") != "ectmc-1":
        raise AbstractionError("not an abstraction dump")
    rows = []
    for act in d["actions"]:
        ent = {int(x[0]): (float(x[1]), float(x[2])) for x in act["rates"]}
        rows.append((int(act["block"]), [tuple(s) for s in act["signature"]], ent))
    a = ectmc_from_rows(int(d["n_blocks"]), float(d["lambda"]), rows, int(d.get("initial_block", 0)))
    rw = d["rewards"]
    rew = AbstractRewards(*(np.asarray(rw[k], float) for k in ("r_lo", "r_hi", "f_lo", "f_hi")))
    return a, rew


# sweep ------------------------------------------------------------------------


@dataclass
class PartialAbstraction:
    """Mergeable result of sweeping part of the state space."""

    rows: dict = field(default_factory=dict)  # (block, sig) -> [vec {dst: [lo, hi]}, [out_lo, out_hi]]
    rewards: dict = field(default_factory=dict)  # block -> [r_lo, r_hi, f_lo, f_hi]
    max_exit: float = 0.0
    n_states: int = 0

    def add_state(self, z: int, sig: tuple, vec: dict, out: float, exit_rate: float, r: float, f: float) -> None:
        self.n_states += 1
        self.max_exit = max(self.max_exit, exit_rate)
        rw = self.rewards.get(z)
        if rw is None:
            self.rewards[z] = [r, r, f, f]
        else:
            rw[0] = min(rw[0], r)
            rw[1] = max(rw[1], r)
            rw[2] = min(rw[2], f)
            rw[3] = max(rw[3], f)
        key = (z, sig)
        row = self.rows.get(key)
        if row is None:
            self.rows[key] = [{d: [x, x] for d, x in vec.items()}, [out, out]]
            return
        ivs, o = row
        if ivs.keys() != vec.keys():
            raise AbstractionError(f"members of block {z} with one signature reach different blocks")
        for d, x in vec.items():
            iv = ivs[d]
            if x < iv[0]:
                iv[0] = x
            if x > iv[1]:
                iv[1] = x
        o[0] = min(o[0], out)
        o[1] = max(o[1], out)

    def merge(self, other: "PartialAbstraction") -> "PartialAbstraction":
        """Interval union; associative and commutative, returns a new object."""
        out = PartialAbstraction()
        out.max_exit = max(self.max_exit, other.max_exit)
        out.n_states = self.n_states + other.n_states
        for src in (self, other):
            for z, rw in src.rewards.items():
                cur = out.rewards.get(z)
                if cur is None:
                    out.rewards[z] = list(rw)
                else:
                    out.rewards[z] = [min(cur[0], rw[0]), max(cur[1], rw[1]), min(cur[2], rw[2]), max(cur[3], rw[3])]
            for key, (ivs, o) in src.rows.items():
                cur = out.rows.get(key)
                if cur is None:
                    out.rows[key] = [{d: list(iv) for d, iv in ivs.items()}, list(o)]
                    continue
                if cur[0].keys() != ivs.keys():
                    raise AbstractionError("partial abstractions disagree on a row's targets")
                for d, iv in ivs.items():
                    c = cur[0][d]
                    c[0] = min(c[0], iv[0])
                    c[1] = max(c[1], iv[1])
                cur[1] = [min(cur[1][0], o[0]), max(cur[1][1], o[1])]
        return out

    def finalize(self, n_blocks: int, lam: float, labels, initial_block: int = 0) -> tuple[Ectmc, AbstractRewards]:
        if self.max_exit > lam * (1 + 1e-12):
            raise AbstractionError(f"a state has exit rate {self.max_exit} above lambda {lam}")
        missing = set(range(n_blocks)) - self.rewards.keys()
        if missing:
            raise AbstractionError(f"block {min(missing)} has no member states")
        rows = []
        for (z, sig), (ivs, (out_lo, out_hi)) in self.rows.items():
            ent = {d: tuple(iv) for d, iv in ivs.items()}
            ent[z] = (max(0.0, lam - out_hi), max(0.0, lam - out_lo))
            rows.append((z, tuple((labels[c], b) for c, b in sig), ent))
        a = ectmc_from_rows(n_blocks, lam, rows, initial_block)
        rw = np.array([self.rewards[z] for z in range(n_blocks)], float).reshape(n_blocks, 4)
        rew = AbstractRewards(rw[:, 0].copy(), rw[:, 1].copy(), rw[:, 2].copy(), rw[:, 3].copy())
        return a, rew


def iter_members(sym: SymbolicModel, p: Partition, root: int | None = None, prefix: dict | None = None):
    """Yield ``(state, block)`` for every state in the partition.

    Depth-first over the state levels of the partition diagram; levels
    skipped on a path are enumerated with both values.
    """
    mgr = sym.mgr
    lay = sym.layout
    levels = lay.cur_levels
    nl = len(levels)
    wstart = lay.w_start
    var, lo, hi = mgr._var, mgr._lo, mgr._hi
    bits = [0] * (2 * lay.nstate)
    prefix = prefix or {}
    for lvl, b in prefix.items():
        bits[lvl] = b

    def block_of(u: int) -> int:
        idx = 0
        while u > TRUE:
            if lo[u] == FALSE:
                idx |= 1 << (var[u] - wstart)
                u = hi[u]
            else:
                u = lo[u]
        return idx

    def rec(u: int, i: int):
        if u == FALSE:
            return
        if i == nl:
            yield sym.decode_levels(bits), block_of(u)
            return
        lvl = levels[i]
        if lvl in prefix:
            yield from rec(u, i + 1)
            return
        if u > TRUE and var[u] == lvl:
            bits[lvl] = 0
            yield from rec(lo[u], i + 1)
            bits[lvl] = 1
            yield from rec(hi[u], i + 1)
        else:
            bits[lvl] = 0
            yield from rec(u, i + 1)
            bits[lvl] = 1
            yield from rec(u, i + 1)

    yield from rec(p.bdd.node if root is None else root, 0)


def sweep(sym: SymbolicModel, p: Partition, root=None, prefix=None) -> PartialAbstraction:
    """Visit the states below ``root`` (default: all) and widen the rows."""
    model = sym.model
    sem = sym.sem
    part = PartialAbstraction()
    cache: dict = {}
    for s, z in iter_members(sym, p, root, prefix):
        vec: dict[int, float] = {}
        sig = []
        exit_rate = 0.0
        for ci, t, rate in sem.command_successors(s):
            zt = cache.get(t)
            if zt is None:
                zt = s_abs(sym, p, t)
                cache[t] = zt
            sig.append((ci, zt))
            exit_rate += rate
            if zt != z:
                vec[zt] = vec.get(zt, 0.0) + rate
        out = math.fsum(vec.values())
        r = model.cumulative_reward(s)
        f = model.final_reward(s)
        if not (math.isfinite(r) and math.isfinite(f)) or r < 0 or f < 0:
            raise SemanticError(f"reward at {model.state_str(s)} is negative or not finite")
        part.add_state(z, tuple(sig), vec, out, exit_rate, r, f)
    return part


def _split_roots(sym: SymbolicModel, p: Partition, depth: int):
    """Cofactors of the partition over the first ``depth`` state levels."""
    mgr = sym.mgr
    levels = sym.layout.cur_levels[:depth]
    out = []
    for vals in range(1 << len(levels)):
        asg = {lvl: (vals >> j) & 1 for j, lvl in enumerate(levels)}
        u = p.bdd.node
        for lvl in levels:
            if u > TRUE and mgr._var[u] == lvl:
                u = mgr._hi[u] if asg[lvl] else mgr._lo[u]
        if u != FALSE:
            out.append((u, asg))
    return out


def build_abstraction(sym: SymbolicModel, p: Partition, workers: int = 1) -> tuple[Ectmc, AbstractRewards]:
    """Abstraction and reward bounds of the model under ``p``.

    ``workers > 1`` sweeps the top-level cofactors concurrently and merges
    the partial results; the outcome is identical to the sequential sweep.
    """
    if workers > 1:
        depth = min(len(sym.layout.cur_levels), max(1, math.ceil(math.log2(workers)) + 1))
        roots = _split_roots(sym, p, depth)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda ra: sweep(sym, p, ra[0], ra[1]), roots))
        part = PartialAbstraction()
        for x in parts:
            part = part.merge(x)
    else:
        part = sweep(sym, p)
    lam = resolve_rate(sym.sem, part.max_exit)
    labels = [c.label for c in sym.model.commands]
    z0 = s_abs(sym, p, sym.model.initial)
    a, rew = part.finalize(p.n_blocks, lam, labels, z0)
    a.validate()
    return a, rew
