"""Explicit-state transient analysis of the uniformised CTMC.

This is the reference engine: it enumerates all reachable states, builds the
embedded DTMC as a sparse matrix and runs the backward uniformisation sum

    q_i = P q_{i+1} + phi(i) f + psi(i) r / lam,   i = k, ..., 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lang import State
from .poisson import poisson_terms
from .semantics import DEFAULT_STATE_CAP, as_semantics, reachable


@dataclass
class SparseCtmc:
    """Embedded DTMC of a uniformised CTMC plus reward vectors.

    ``P`` is a CSR matrix whose rows sum to one (the self-loop carries the
    uniformisation residual). ``r`` is a reward rate, ``f`` a final reward.
    """

    P: sp.csr_matrix
    lam: float
    r: np.ndarray
    f: np.ndarray
    states: list = field(default_factory=list)
    initial: int = 0

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def rows(self):
        """Per-state ``[(successor, probability), ...]`` in index order."""
        P = self.P
        return [
            list(zip(P.indices[P.indptr[i]:P.indptr[i + 1]].tolist(), P.data[P.indptr[i]:P.indptr[i + 1]].tolist()))
            for i in range(self.n)
        ]

    def check(self, tol: float = 1e-12) -> None:
        sums = np.asarray(self.P.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > tol):
            raise ValueError("a row of the embedded DTMC does not sum to one")
        if self.P.nnz and (self.P.data.min() < 0 or self.P.data.max() > 1 + tol):
            raise ValueError("probability outside [0, 1]")
        if np.any(self.r < 0) or np.any(self.f < 0):
            raise ValueError("negative reward")

    def index_of(self, s: State) -> int:
        if not hasattr(self, "_index"):
            self._index = {t: i for i, t in enumerate(self.states)}
        return self._index[s]

    def dump(self, path) -> None:
        """Write ``n lam`` followed by one ``src dst prob`` line per transition."""
        P = self.P.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n} {self.lam!r}\n")
            for i, j, p in sorted(zip(P.row.tolist(), P.col.tolist(), P.data.tolist())):
                fh.write(f"{i} {j} {p!r}\n")


def from_rates(rates, lam: float, r, f, states=None) -> SparseCtmc:
    """Build from a dict-of-dicts (or list of dicts) of explicit rates."""
    n = len(r)
    rows, cols, vals = [], [], []
    items = rates.items() if isinstance(rates, dict) else enumerate(rates)
    for i, row in items:
        total = math.fsum(row.values())
        if total > lam * (1 + 1e-12):
            raise ValueError(f"exit rate {total} of state {i} exceeds uniformisation rate {lam}")
        self_p = 0.0
        for j, rate in sorted(row.items()):
            if j == i:
                self_p += rate / lam
            else:
                rows.append(i)
                cols.append(j)
                vals.append(rate / lam)
        self_p += max(0.0, 1.0 - total / lam)
        if self_p > 0:
            rows.append(i)
            cols.append(i)
            vals.append(self_p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    P.sort_indices()
    return SparseCtmc(P, float(lam), np.asarray(r, float), np.asarray(f, float), list(states or []))


def build_explicit(m, state_cap: int = DEFAULT_STATE_CAP) -> SparseCtmc:
    """Explicit uniformised CTMC of a model or semantics, states in BFS order."""
    sem = as_semantics(m)
    states, lam = reachable(sem, state_cap)
    index = {s: i for i, s in enumerate(states)}
    model = sem.model
    rates = []
    for s in states:
        rates.append({index[t]: v for t, v in sem.succ_set(s).items()})
    r = [model.cumulative_reward(s) for s in states]
    f = [model.final_reward(s) for s in states]
    for x in r + f:
        if not math.isfinite(x) or x < 0:
            raise ValueError("rewards must be finite and non-negative")
    return from_rates(rates, lam, r, f, states)


def _kahan_matvec(P: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    out = np.empty(P.shape[0])
    ip, ind, dat = P.indptr, P.indices, P.data
    for i in range(P.shape[0]):
        a, b = ip[i], ip[i + 1]
        out[i] = math.fsum((dat[a:b] * x[ind[a:b]]).tolist())
    return out


def backward_sum(P, phi, psi, r, f, lam, kahan: bool = False) -> np.ndarray:
    """Run the backward loop for a fixed matrix; ``phi``/``psi`` have length k+1."""
    k = len(phi) - 1
    q = np.zeros(P.shape[0])
    scaled_r = r / lam
    for i in range(k, -1, -1):
        nxt = _kahan_matvec(P, q) if kahan else P @ q
        q = nxt + phi[i] * f + psi[i] * scaled_r
    return q


@dataclass
class ExplicitResult:
    q: np.ndarray
    k: int
    eps: float


def explicit_value(
    m: SparseCtmc,
    t: float,
    eps: float = 1e-6,
    r: np.ndarray | None = None,
    f: np.ndarray | None = None,
    kahan: bool = False,
) -> ExplicitResult:
    """Expected cumulative plus final reward up to ``t`` for every state.

    Each entry is within ``eps`` of the exact value. ``r``/``f`` override the
    reward vectors stored in ``m``.
    """
    if t < 0:
        raise ValueError("time horizon must be non-negative")
    if not eps > 0:
        raise ValueError("eps must be positive")
    r = m.r if r is None else np.asarray(r, float)
    f = m.f if f is None else np.asarray(f, float)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(f))):
        raise ValueError("rewards must be finite")
    terms = poisson_terms(m.lam * t, eps, float(r.max(initial=0.0)), float(f.max(initial=0.0)), m.lam)
    if t == 0:
        return ExplicitResult(f.copy(), 0, eps)
    q = backward_sum(m.P, terms.phi, terms.psi, r, f, m.lam, kahan)
    return ExplicitResult(q, terms.k, eps)


def explicit_chain(m: SparseCtmc, deltas, eps: float = 1e-6) -> list[np.ndarray]:
    """Values at cumulative horizons ``deltas[0], deltas[0]+deltas[1], ...``.

    Each phase reuses the previous values as final reward; ``eps`` is split
    evenly over the phases.
    """
    out = []
    f = m.f
    per = eps / max(1, len(deltas))
    for d in deltas:
        res = explicit_value(m, d, per, f=f)
        out.append(res.q)
        f = res.q
    return out
