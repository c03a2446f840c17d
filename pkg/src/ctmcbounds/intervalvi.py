"""Maximal and minimal transient values of ECTMCs and finite CTMDPs.

Both use the backward uniformisation loop

    q_i(z) = opt_action  sum_z' x(z') q_{i+1}(z') / lam  + phi(i) f(z) + psi(i) r(z) / lam

where for a finite CTMDP ``x`` is the action's rate row and for an ECTMC
the inner optimum over the interval row is found greedily: every entry
starts at its lower bound and the remaining budget ``lam - sum lo`` is
handed out in order of decreasing (max) or increasing (min) successor
value, ties going to the lower block index.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .abstraction import AbstractionError, AbstractRewards, Ectmc
from .explicit import SparseCtmc
from .poisson import PoissonTerms, poisson_terms

DIRECTIONS = ("max", "min")


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'max' or 'min', not {direction!r}")


# single row --------------------------------------------------------------------


def optimize_rate_row(lo, hi, q, lam: float, direction: str = "max", tol: float = 1e-9):
    """Rate vector in ``[lo, hi]`` summing to ``lam`` that optimises ``x . q``.

    The block's own entry is passed like any other entry. Returns
    ``(x, sum(x * q) / lam)``.
    """
    _check_direction(direction)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    q = np.asarray(q, float)
    if lo.shape != hi.shape or lo.shape != q.shape:
        raise ValueError("lo, hi and q must have equal length")
    slack = tol * max(1.0, lam)
    if np.any(lo > hi + slack) or np.any(lo < -slack):
        raise AbstractionError("rate interval with lo > hi or lo < 0")
    if lo.sum() > lam + slack or hi.sum() < lam - slack:
        raise AbstractionError(f"infeasible rate row: sum lo {lo.sum()}, sum hi {hi.sum()}, lambda {lam}")
    idx = np.arange(len(q))
    order = np.lexsort((idx, -q if direction == "max" else q))
    x = lo.copy()
    budget = lam - lo.sum()
    for j in order:
        if budget <= 0:
            break
        give = min(hi[j] - lo[j], budget)
        x[j] += give
        budget -= give
    return x, float(np.dot(x, q) / lam)


def vertex_enumeration(lo, hi, q, lam: float, direction: str = "max", tol: float = 1e-9) -> float:
    """Optimum of ``x . q / lam`` over the vertices of the row polytope.

    A vertex has every coordinate at a bound except at most one, which is
    fixed by the sum constraint. Exponential; for checking only.
    """
    _check_direction(direction)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    q = np.asarray(q, float)
    n = len(q)
    best = None
    for free in range(n):
        others = [j for j in range(n) if j != free]
        for pick in itertools.product((0, 1), repeat=len(others)):
            x = np.empty(n)
            for j, b in zip(others, pick):
                x[j] = hi[j] if b else lo[j]
            x[free] = lam - x[others].sum() if others else lam
            if x[free] < lo[free] - tol or x[free] > hi[free] + tol:
                continue
            v = float(np.dot(x, q) / lam)
            if best is None or (v > best if direction == "max" else v < best):
                best = v
    if best is None:
        raise AbstractionError("infeasible rate row")
    return best


# ECTMC -----------------------------------------------------------------------------


@dataclass
class ValueResult:
    q: np.ndarray
    eps: float
    k: int
    direction: str
    scheduler: "CdScheduler | None" = None


@dataclass
class CdScheduler:
    """Choice per (step, state): ``action[i, s]`` is a global action index.

    For ECTMCs ``rates[i]`` holds the chosen rate of every interval entry at
    step ``i`` (entries of unchosen actions are unused).
    """

    action: np.ndarray
    rates: list = field(default_factory=list)


class _EctmcKernel:
    """Vectorised greedy step for all actions of an ECTMC."""

    def __init__(self, a: Ectmc, direction: str):
        self.a = a
        self.direction = direction
        lo, hi = a.ent_lo, a.ent_hi
        ptr = a.act_ptr
        n_ent = len(lo)
        self.ent_act = np.repeat(np.arange(a.n_actions), np.diff(ptr))
        self.block_ptr = a.block_ptr
        width = np.add.reduceat(hi - lo, ptr[:-1]) if n_ent else np.zeros(0)
        fixed = width <= 0
        # actions whose row is a single point go through one sparse product
        fe = fixed[self.ent_act]
        self.fixed_P = sp.csr_matrix(
            (lo[fe] / a.lam, (self.ent_act[fe], a.ent_dst[fe])), shape=(a.n_actions, a.n_blocks)
        )
        self.flex_ent = np.flatnonzero(~fe)
        self.flex_act = self.ent_act[self.flex_ent]
        self.flex_dst = a.ent_dst[self.flex_ent]
        self.flex_lo = lo[self.flex_ent]
        self.flex_width = hi[self.flex_ent] - lo[self.flex_ent]
        flex_actions = np.flatnonzero(~fixed)
        self.flex_actions = flex_actions
        budget = a.lam - np.add.reduceat(lo, ptr[:-1]) if n_ent else np.zeros(0)
        self.flex_budget = np.maximum(budget[flex_actions], 0.0)
        # position of each flexible action's first entry within the flexible entries
        self.flex_start = np.searchsorted(self.flex_act, flex_actions)
        self.budget_of_ent = np.zeros(0)
        if len(flex_actions):
            slot = np.searchsorted(flex_actions, self.flex_act)
            self.budget_of_ent = self.flex_budget[slot]
            # sorting keeps every action's entries in the same index range, so
            # a sorted position maps to a fixed (row, column) of a padded table
            pos = np.arange(len(slot)) - self.flex_start[slot]
            self.pad_shape = (len(flex_actions), int(pos.max()) + 1)
            self.pad_row = slot
            self.pad_col = pos

    def step(self, q: np.ndarray, want_rates: bool = False):
        """Per-action optimal ``x . q / lam`` and optionally the rate vectors."""
        a = self.a
        vals = self.fixed_P @ q
        rates = None
        if want_rates:
            rates = a.ent_lo.copy()
        if len(self.flex_actions):
            qe = q[self.flex_dst]
            key = -qe if self.direction == "max" else qe
            order = np.lexsort((self.flex_dst, key, self.flex_act))
            w = self.flex_width[order]
            # exclusive prefix sums per action, on a padded table so that no
            # action's sum depends on the entries of earlier actions
            table = np.zeros(self.pad_shape)
            table[self.pad_row, self.pad_col] = w
            before = (np.cumsum(table, axis=1) - table)[self.pad_row, self.pad_col]
            give = np.clip(self.budget_of_ent - before, 0.0, w)
            x = self.flex_lo[order] + give
            contrib = x * qe[order]
            flex_vals = np.add.reduceat(contrib, self.flex_start) / a.lam
            vals[self.flex_actions] += flex_vals
            if want_rates:
                rates[self.flex_ent[order]] = x
        return vals, rates

    def choose(self, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Best value per block and the first action attaining it."""
        return _choose(vals, self.block_ptr, self.a.act_block, self.direction)


def _choose(vals, block_ptr, act_block, direction):
    starts = block_ptr[:-1]
    if direction == "max":
        best = np.maximum.reduceat(vals, starts)
    else:
        best = np.minimum.reduceat(vals, starts)
    hit = np.flatnonzero(vals == best[act_block])
    _, first = np.unique(act_block[hit], return_index=True)
    return best, hit[first]


def _terms(lam: float, t: float, eps: float, r: np.ndarray, f: np.ndarray) -> PoissonTerms:
    if t < 0:
        raise ValueError("time horizon must be non-negative")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(f))):
        raise ValueError("rewards must be finite")
    return poisson_terms(lam * t, eps, float(r.max(initial=0.0)), float(f.max(initial=0.0)), lam)


def value_bounds(
    a: Ectmc,
    rew: AbstractRewards,
    t: float,
    eps: float = 1e-6,
    direction: str = "max",
    f: np.ndarray | None = None,
    r: np.ndarray | None = None,
    keep_scheduler: bool = False,
) -> ValueResult:
    """Maximal (upper) or minimal (lower) value of every block.

    ``max`` uses the upper reward bounds, ``min`` the lower ones; ``f``/``r``
    override them (used for chaining).
    """
    _check_direction(direction)
    r0, f0 = rew.for_direction(direction)
    r = r0 if r is None else np.asarray(r, float)
    f = f0 if f is None else np.asarray(f, float)
    terms = _terms(a.lam, t, eps, r, f)
    if t == 0:
        return ValueResult(f.copy(), eps, 0, direction)
    ker = _EctmcKernel(a, direction)
    k = terms.k
    q = np.zeros(a.n_blocks)
    sr = r / a.lam
    sched = CdScheduler(np.zeros((k + 1, a.n_blocks), dtype=np.int64)) if keep_scheduler else None
    for i in range(k, -1, -1):
        vals, rates = ker.step(q, keep_scheduler)
        best, arg = ker.choose(vals)
        q = best + terms.phi[i] * f + terms.psi[i] * sr
        if sched is not None:
            sched.action[i] = arg
            sched.rates.append(rates)
    if sched is not None:
        sched.rates.reverse()
    return ValueResult(q, eps, k, direction, sched)


def revalue_ectmc(a: Ectmc, sched: CdScheduler, t: float, eps: float, r, f) -> np.ndarray:
    """Value of a fixed scheduler (action and rate vector per step)."""
    r = np.asarray(r, float)
    f = np.asarray(f, float)
    terms = _terms(a.lam, t, eps, r, f)
    if t == 0:
        return f.copy()
    k = terms.k
    if sched.action.shape[0] != k + 1:
        raise ValueError("scheduler length does not match the truncation depth")
    ent_act = np.repeat(np.arange(a.n_actions), np.diff(a.act_ptr))
    q = np.zeros(a.n_blocks)
    for i in range(k, -1, -1):
        x = sched.rates[i]
        acts = sched.action[i]
        P = sp.csr_matrix((x / a.lam, (ent_act, a.ent_dst)), shape=(a.n_actions, a.n_blocks))
        q = (P @ q)[acts] + terms.phi[i] * f + terms.psi[i] * r / a.lam
    return q


def chain_bounds(a: Ectmc, rew: AbstractRewards, deltas, eps: float, direction: str) -> list[np.ndarray]:
    """Chained analysis: each phase's result is the next phase's final reward."""
    out = []
    per = eps / max(1, len(deltas))
    f = None
    for d in deltas:
        res = value_bounds(a, rew, d, per, direction, f=f)
        out.append(res.q)
        f = res.q
    return out


# finite CTMDP --------------------------------------------------------------------------


@dataclass
class FiniteCtmdp:
    """Uniform CTMDP with explicit actions.

    Actions are sorted by state; ``P`` has one row per action holding
    ``rate / lam`` (rows sum to one).
    """

    n: int
    lam: float
    act_state: np.ndarray
    act_name: list
    P: sp.csr_matrix
    r: np.ndarray
    f: np.ndarray
    state_names: list = field(default_factory=list)

    @property
    def state_ptr(self) -> np.ndarray:
        return np.searchsorted(self.act_state, np.arange(self.n + 1))

    def actions_of(self, s: int) -> range:
        sp_ = self.state_ptr
        return range(sp_[s], sp_[s + 1])

    def index_of(self, name: str) -> int:
        return self.state_names.index(name)


def make_ctmdp(lam: float, actions, r, f, state_names=None, pad: bool = True, tol: float = 1e-9) -> FiniteCtmdp:
    """From ``{state: [(name, {dst: rate}), ...]}`` (or a list indexed by state).

    With ``pad`` the missing rate ``lam - sum`` becomes a self-loop;
    otherwise rows must already sum to ``lam``.
    """
    n = len(r)
    items = actions.items() if isinstance(actions, dict) else enumerate(actions)
    table = dict(items)
    rows, cols, vals, act_state, act_name = [], [], [], [], []
    for s in range(n):
        acts = table.get(s, [])
        if not acts:
            raise ValueError(f"state {s} has no action")
        for name, row in acts:
            total = math.fsum(row.values())
            if any(v < 0 for v in row.values()):
                raise ValueError("negative rate")
            if total > lam * (1 + tol):
                raise ValueError(f"action {name} of state {s} has total rate {total} > {lam}")
            row = dict(row)
            if pad:
                row[s] = row.get(s, 0.0) + max(0.0, lam - total)
            elif abs(total - lam) > tol * lam:
                raise ValueError(f"action {name} of state {s} sums to {total}, not {lam}")
            a = len(act_state)
            for d in sorted(row):
                if row[d] > 0:
                    rows.append(a)
                    cols.append(d)
                    vals.append(row[d] / lam)
            act_state.append(s)
            act_name.append(name)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(act_state), n))
    P.sort_indices()
    return FiniteCtmdp(
        n, float(lam), np.asarray(act_state, dtype=np.int64), act_name, P,
        np.asarray(r, float), np.asarray(f, float), list(state_names or []),
    )


def ctmdp_from_ctmc(m: SparseCtmc) -> FiniteCtmdp:
    """Single-action CTMDP with the same embedded DTMC."""
    return FiniteCtmdp(m.n, m.lam, np.arange(m.n), ["tau"] * m.n, m.P.copy(), m.r.copy(), m.f.copy())


def value_ctmdp(
    m: FiniteCtmdp,
    t: float,
    eps: float = 1e-6,
    direction: str = "max",
    f: np.ndarray | None = None,
    keep_scheduler: bool = False,
) -> ValueResult:
    _check_direction(direction)
    f = m.f if f is None else np.asarray(f, float)
    terms = _terms(m.lam, t, eps, m.r, f)
    if t == 0:
        return ValueResult(f.copy(), eps, 0, direction)
    k = terms.k
    ptr = m.state_ptr
    if np.any(np.diff(ptr) == 0):
        raise ValueError("a state has no action")
    q = np.zeros(m.n)
    sr = m.r / m.lam
    sched = CdScheduler(np.zeros((k + 1, m.n), dtype=np.int64)) if keep_scheduler else None
    for i in range(k, -1, -1):
        vals = m.P @ q
        best, arg = _choose(vals, ptr, m.act_state, direction)
        q = best + terms.phi[i] * f + terms.psi[i] * sr
        if sched is not None:
            sched.action[i] = arg
    return ValueResult(q, eps, k, direction, sched)


def revalue_ctmdp(m: FiniteCtmdp, sched: CdScheduler, t: float, eps: float, f=None) -> np.ndarray:
    """Value of a fixed counting scheduler by the backward loop with ``P[sigma(., i)]``."""
    f = m.f if f is None else np.asarray(f, float)
    terms = _terms(m.lam, t, eps, m.r, f)
    if t == 0:
        return f.copy()
    k = terms.k
    if sched.action.shape[0] != k + 1:
        raise ValueError("scheduler length does not match the truncation depth")
    q = np.zeros(m.n)
    sr = m.r / m.lam
    for i in range(k, -1, -1):
        acts = sched.action[i]
        if np.any(m.act_state[acts] != np.arange(m.n)):
            raise ValueError(f"scheduler picks a foreign action at step {i}")
        q = m.P[acts] @ q + terms.phi[i] * f + terms.psi[i] * sr
    return q


def extract_and_validate_scheduler(m, t: float, eps: float = 1e-6, direction: str = "max", rew: AbstractRewards | None = None):
    """Optimal values, the CD scheduler attaining them, and its re-evaluation.

    ``m`` is a FiniteCtmdp or an Ectmc (then ``rew`` is required).
    Returns ``(result, revalue)``.
    """
    if isinstance(m, Ectmc):
        if rew is None:
            raise ValueError("an ECTMC needs its reward bounds")
        res = value_bounds(m, rew, t, eps, direction, keep_scheduler=True)
        if res.scheduler is None:
            return res, res.q.copy()
        r, f = rew.for_direction(direction)
        return res, revalue_ectmc(m, res.scheduler, t, eps, r, f)
    res = value_ctmdp(m, t, eps, direction, keep_scheduler=True)
    if res.scheduler is None:
        return res, res.q.copy()
    return res, revalue_ctmdp(m, res.scheduler, t, eps)


def enumerate_cd_schedulers(m: FiniteCtmdp, t: float, eps: float, direction: str = "max") -> np.ndarray:
    """Optimum over all counting deterministic schedulers by brute force.

    Every scheduler is evaluated with the fixed-scheduler loop. Exponential
    in ``(k + 1)`` times the number of states with a choice; tiny instances only.
    """
    terms = _terms(m.lam, t, eps, m.r, m.f)
    k = terms.k
    ptr = m.state_ptr
    dense = m.P.toarray()
    choices = [range(ptr[s], ptr[s + 1]) for s in range(m.n)]
    sr = m.r / m.lam
    best = None
    for combo in itertools.product(*(choices * (k + 1))):
        acts = np.asarray(combo, dtype=np.int64).reshape(k + 1, m.n)
        q = np.zeros(m.n)
        for i in range(k, -1, -1):
            q = dense[acts[i]] @ q + terms.phi[i] * m.f + terms.psi[i] * sr
        if best is None:
            best = q
        elif direction == "max":
            best = np.maximum(best, q)
        else:
            best = np.minimum(best, q)
    return best


def chain_ctmdp(m: FiniteCtmdp, phases, eps: float = 1e-6) -> list[np.ndarray]:
    """Phases ``[(delta, direction), ...]`` computed in order, each phase's
    values serving as the next phase's final reward; ``eps`` is split evenly."""
    out = []
    per = eps / max(1, len(phases))
    f = m.f
    for d, direction in phases:
        res = value_ctmdp(m, d, per, direction, f=f)
        out.append(res.q)
        f = res.q
    return out


# explicit CTMDP files --------------------------------------------------------


def load_ctmdp(path) -> FiniteCtmdp:
    """Read the explicit CTMDP format.

    Header ``n lam``, then ``state action dst rate`` lines, then a line
    ``rewards`` followed by ``state r f`` lines. ``#`` starts a comment. The
    rate missing from ``lam`` in each action becomes a self-loop. States
    may be given names on ``name index label`` lines before the transitions.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty CTMDP file")
    head = lines[0].split()
    n, lam = int(head[0]), float(head[1])
    acts: dict[int, dict[str, dict[int, float]]] = {}
    order: dict[int, list[str]] = {}
    r = [0.0] * n
    f = [0.0] * n
    names = [str(i) for i in range(n)]
    in_rewards = False
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "rewards":
            in_rewards = True
            continue
        if tok[0] == "name":
            names[int(tok[1])] = tok[2]
            continue
        if in_rewards:
            s = int(tok[0])
            r[s], f[s] = float(tok[1]), float(tok[2])
            continue
        s, a, d, rate = int(tok[0]), tok[1], int(tok[2]), float(tok[3])
        if not (0 <= s < n and 0 <= d < n):
            raise ValueError(f"state index out of range in line {ln!r}")
        row = acts.setdefault(s, {}).setdefault(a, {})
        if a not in order.setdefault(s, []):
            order[s].append(a)
        row[d] = row.get(d, 0.0) + rate
    table = {}
    for s in range(n):
        if s in acts:
            table[s] = [(a, acts[s][a]) for a in order[s]]
        else:
            table[s] = [("idle", {})]
    return make_ctmdp(lam, table, r, f, names)
