"""Explicit CTMC semantics of a guarded model.

States are tuples of variable values. ``successor`` evaluates one command,
``succ_set`` aggregates the rates of all commands that reach the same state
and ``reachable`` does the breadth-first closure from the initial state,
returning the uniformisation rate as the largest total exit rate.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace

from .lang import Expr, GuardedModel, SemanticError, State

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 2_000_000


class StateCapError(Exception):
    """The explicit state space grew beyond the configured cap."""


def encode(m: GuardedModel, s: State) -> tuple[int, ...]:
    """Bit encoding of a state: offset binary per variable, LSB first."""
    bits: list[int] = []
    for v, x in zip(m.vars, s):
        off = x - v.lo
        bits.extend((off >> j) & 1 for j in range(v.nbits))
    return tuple(bits)


def decode(m: GuardedModel, bits) -> State:
    out = []
    k = 0
    for v in m.vars:
        off = 0
        for j in range(v.nbits):
            off |= int(bits[k + j]) << j
        k += v.nbits
        out.append(v.lo + off)
    return tuple(out)


def successor(m: GuardedModel, s: State, ci: int) -> tuple[State, float] | None:
    """Successor and rate of command ``ci`` at ``s``, or None if its guard is false."""
    c = m.commands[ci]
    try:
        if not m.guard_holds(ci, s):
            return None
        lam = m.rate(ci, s)
        t = m.update(ci, s)
    except ZeroDivisionError:
        raise SemanticError(f"division by zero in command [{c.label}] at {m.state_str(s)}", c.line or None) from None
    if not lam > 0:
        raise SemanticError(f"command [{c.label}] has non-positive rate {lam} at {m.state_str(s)}", c.line or None)
    if not m.in_range(t):
        raise SemanticError(f"command [{c.label}] leaves the variable range at {m.state_str(s)}", c.line or None)
    return t, lam


@dataclass(frozen=True)
class UniformisedSemantics:
    """A model together with its uniformisation and target handling.

    ``lam`` is either a user override or None, in which case the rate is
    derived from the reachable states. ``target`` makes every state that
    satisfies it absorbing (only the uniformisation self-loop remains).
    """

    model: GuardedModel
    lam: float | None = None
    target: Expr | None = None

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise SemanticError("uniformisation rate must be positive")
        if self.target is not None:
            object.__setattr__(self, "_target_fn", self.model.compile_expr(self.target, "bool"))
        else:
            object.__setattr__(self, "_target_fn", None)

    def absorbing(self, s: State) -> bool:
        return self._target_fn is not None and bool(self._target_fn(s))

    def command_successors(self, s: State) -> list[tuple[int, State, float]]:
        """``(command index, successor, rate)`` for every enabled command."""
        if self.absorbing(s):
            return []
        out = []
        for ci in range(len(self.model.commands)):
            r = successor(self.model, s, ci)
            if r is not None:
                out.append((ci, r[0], r[1]))
        return out

    def succ_set(self, s: State) -> dict[State, float]:
        return succ_set(self.model, s, self)


def succ_set(m: GuardedModel, s: State, sem: UniformisedSemantics | None = None) -> dict[State, float]:
    """Successor states of ``s`` with rates summed over commands."""
    sem = sem if sem is not None else UniformisedSemantics(m)
    out: dict[State, float] = {}
    for _, t, lam in sem.command_successors(s):
        out[t] = out.get(t, 0.0) + lam
    return out


def apply_target_absorption(sem: UniformisedSemantics, target: Expr | str) -> UniformisedSemantics:
    """Make ``target`` states absorbing; ``target`` may be source text."""
    if isinstance(target, str):
        target = sem.model.parse_expr(target)
    if sem.target is not None:
        from .lang import Binary

        target = Binary("|", sem.target, target)
    return replace(sem, target=target)


def as_semantics(m) -> UniformisedSemantics:
    return m if isinstance(m, UniformisedSemantics) else UniformisedSemantics(m)


def reachable(m, state_cap: int = DEFAULT_STATE_CAP):
    """Breadth-first reachable states and the uniformisation rate.

    Returns ``(states, lam)`` where ``states`` is in discovery order. With a
    rate override in the semantics, the override is validated instead.
    """
    sem = as_semantics(m)
    model = sem.model
    s0 = model.initial
    order = [s0]
    index = {s0: 0}
    queue = deque([s0])
    lam = 0.0
    deadlocks = 0
    while queue:
        s = queue.popleft()
        succ = sem.succ_set(s)
        if not succ and not sem.absorbing(s):
            deadlocks += 1
        lam = max(lam, sum(succ.values()))
        for t in succ:
            if t not in index:
                if len(order) >= state_cap:
                    raise StateCapError(f"more than {state_cap} reachable states")
                index[t] = len(order)
                order.append(t)
                queue.append(t)
    if deadlocks:
        log.warning("%d reachable deadlock state(s); they only keep the uniformisation self-loop", deadlocks)
    return order, resolve_rate(sem, lam)


def resolve_rate(sem: UniformisedSemantics, max_exit: float) -> float:
    """Uniformisation rate from the largest exit rate, honouring an override."""
    if sem.lam is not None:
        if max_exit > sem.lam * (1 + 1e-12):
            raise SemanticError(f"uniformisation rate {sem.lam} is below the exit rate {max_exit} of a reachable state")
        return float(sem.lam)
    return max_exit if max_exit > 0 else 1.0
