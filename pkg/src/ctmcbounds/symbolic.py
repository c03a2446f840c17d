"""OBDD representation of a guarded model.

Variable order (top to bottom): current and next-state bits interleaved
(``x0, x0', x1, x1', ...``, LSB first per model variable), then ``K`` block
bits ``W``, then ``K + 1`` scratch block bits ``Wc`` used during refinement
(``Wc[K]`` flags whether the command was enabled). Block bits always sit
below every state bit, so a state's block can be read off by walking its path.

Transition relations are built per command. Guards and update expressions
are turned into diagrams by enumerating the values of the variables they
read, so a command touching many large variables is expensive; the cost is
bounded by ``max_combos``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .lang import Expr, GuardedModel, SemanticError, State, expr_vars
from .obdd import FALSE, TRUE, Function, Manager
from .semantics import UniformisedSemantics, as_semantics

DEFAULT_BLOCK_BITS = 24
DEFAULT_MAX_COMBOS = 1_000_000


@dataclass(frozen=True)
class Layout:
    """Mapping from model variables to manager levels."""

    var_bits: tuple  # per model variable, tuple of global state-bit indices
    nstate: int
    block_bits: int

    @property
    def nvars(self) -> int:
        return 2 * self.nstate + 2 * self.block_bits + 1

    def cur(self, b: int) -> int:
        return 2 * b

    def nxt(self, b: int) -> int:
        return 2 * b + 1

    @property
    def cur_levels(self) -> list[int]:
        return [2 * b for b in range(self.nstate)]

    @property
    def next_levels(self) -> list[int]:
        return [2 * b + 1 for b in range(self.nstate)]

    @property
    def w_start(self) -> int:
        return 2 * self.nstate

    def w(self, j: int) -> int:
        return 2 * self.nstate + j

    def wc(self, j: int) -> int:
        return 2 * self.nstate + self.block_bits + j

    @property
    def wc_flag(self) -> int:
        return self.wc(self.block_bits)

    def names(self, m: GuardedModel) -> list[str]:
        names = [""] * self.nvars
        for v, bits in zip(m.vars, self.var_bits):
            for j, b in enumerate(bits):
                names[self.cur(b)] = f"{v.name}.{j}"
                names[self.nxt(b)] = f"{v.name}.{j}'"
        for j in range(self.block_bits):
            names[self.w(j)] = f"w{j}"
            names[self.wc(j)] = f"wc{j}"
        names[self.wc_flag] = "wc_en"
        return names


def make_layout(m: GuardedModel, block_bits: int = DEFAULT_BLOCK_BITS) -> Layout:
    bits = []
    k = 0
    for v in m.vars:
        bits.append(tuple(range(k, k + v.nbits)))
        k += v.nbits
    return Layout(tuple(bits), k, block_bits)


class SymbolicModel:
    """Init set, per-command transition relations and reachable set as OBDDs."""

    def __init__(
        self,
        sem,
        block_bits: int = DEFAULT_BLOCK_BITS,
        max_combos: int = DEFAULT_MAX_COMBOS,
        mgr: Manager | None = None,
    ):
        self.sem: UniformisedSemantics = as_semantics(sem)
        self.model = self.sem.model
        self.layout = make_layout(self.model, block_bits)
        if mgr is None:
            mgr = Manager(self.layout.nvars, self.layout.names(self.model))
        elif mgr.nvars < self.layout.nvars:
            raise SemanticError(
                f"manager has {mgr.nvars} variables, the model needs {self.layout.nvars}"
            )
        self.mgr = mgr
        self.max_combos = max_combos
        self._valid = [self._valid_var(i) for i in range(len(self.model.vars))]
        self.init = self.state_cube(self.model.initial)
        absorb = self.expr_bdd(self.sem.target) if self.sem.target is not None else mgr.false
        self.trans: list[Function] = []
        self.errors: list[Function] = []
        for ci in range(len(self.model.commands)):
            t, err = self._command(ci)
            self.trans.append(t & ~absorb)
            self.errors.append(err & ~absorb)
        self._reach: Function | None = None
        self.reach_iterations = 0

    # encoding helpers ---------------------------------------------------

    def state_cube(self, s: State, nxt: bool = False) -> Function:
        lay = self.layout
        asg = {}
        for v, bits, x in zip(self.model.vars, lay.var_bits, s):
            off = x - v.lo
            for j, b in enumerate(bits):
                asg[lay.nxt(b) if nxt else lay.cur(b)] = (off >> j) & 1
        return self.mgr.cube(asg)

    def _var_cube(self, vi: int, value: int, nxt: bool = False) -> dict[int, int]:
        lay = self.layout
        v = self.model.vars[vi]
        off = value - v.lo
        return {
            (lay.nxt(b) if nxt else lay.cur(b)): (off >> j) & 1
            for j, b in enumerate(lay.var_bits[vi])
        }

    def valuation(self, s: State) -> dict[int, int]:
        """Current-state levels of ``s`` as a valuation."""
        out: dict[int, int] = {}
        for vi, x in enumerate(s):
            out.update(self._var_cube(vi, x))
        return out

    def decode_levels(self, val) -> State:
        """State encoded by a valuation (dict or sequence) of current levels."""
        lay = self.layout
        out = []
        for v, bits in zip(self.model.vars, lay.var_bits):
            off = 0
            for j, b in enumerate(bits):
                off |= int(val[lay.cur(b)]) << j
            out.append(v.lo + off)
        return tuple(out)

    def _valid_var(self, vi: int) -> Function:
        v = self.model.vars[vi]
        span = v.hi - v.lo
        bits = [self.layout.cur(b) for b in self.layout.var_bits[vi]]
        return _le_const(self.mgr, bits, span)

    def _combos(self, names: set[str]):
        idx = sorted(self.model.var_index[n] for n in names if n in self.model.var_index)
        total = 1
        for i in idx:
            total *= self.model.vars[i].hi - self.model.vars[i].lo + 1
        if total > self.max_combos:
            raise SemanticError(
                f"expression reads {total} variable combinations; symbolic construction is capped at {self.max_combos}"
            )
        ranges = [range(self.model.vars[i].lo, self.model.vars[i].hi + 1) for i in idx]
        base = list(self.model.initial)
        for vals in itertools.product(*ranges):
            for i, x in zip(idx, vals):
                base[i] = x
            yield idx, vals, tuple(base)

    def expr_bdd(self, e: Expr | str) -> Function:
        """Set of (in-range) current states satisfying a Boolean expression."""
        if isinstance(e, str):
            e = self.model.parse_expr(e)
        fn = self.model.compile_expr(e, "bool")
        f = self.mgr.false
        for idx, vals, s in self._combos(expr_vars(e)):
            try:
                holds = fn(s)
            except ZeroDivisionError:
                raise SemanticError("division by zero while evaluating a predicate") from None
            if holds:
                asg: dict[int, int] = {}
                for i, x in zip(idx, vals):
                    asg.update(self._var_cube(i, x))
                f = f | self.mgr.cube(asg)
        return f & self.valid

    @property
    def valid(self) -> Function:
        f = self.mgr.true
        for g in self._valid:
            f = f & g
        return f

    def _command(self, ci: int) -> tuple[Function, Function]:
        m = self.model
        mgr = self.mgr
        c = m.commands[ci]
        guard_fn = m._guards[ci]
        guard = mgr.false
        err = mgr.false
        for idx, vals, s in self._combos(expr_vars(c.guard)):
            asg: dict[int, int] = {}
            for i, x in zip(idx, vals):
                asg.update(self._var_cube(i, x))
            try:
                holds = guard_fn(s)
            except ZeroDivisionError:
                err = err | mgr.cube(asg)
                continue
            if holds:
                guard = guard | mgr.cube(asg)
        written = {i for i, _ in c.updates}
        rel = guard
        bad = mgr.false
        for wi, ue in c.updates:
            v = m.vars[wi]
            fn = m.compile_expr(ue)
            eq = mgr.false
            for idx, vals, s in self._combos(expr_vars(ue)):
                asg = {}
                for i, x in zip(idx, vals):
                    asg.update(self._var_cube(i, x))
                try:
                    new = int(fn(s))
                except ZeroDivisionError:
                    bad = bad | mgr.cube(asg)
                    continue
                if not v.lo <= new <= v.hi:
                    bad = bad | mgr.cube(asg)
                    continue
                asg.update(self._var_cube(wi, new, nxt=True))
                eq = eq | mgr.cube(asg)
            rel = rel & eq
        for vi in range(len(m.vars)):
            rel = rel & self._valid[vi]
            if vi not in written:
                for b in self.layout.var_bits[vi]:
                    x = mgr.var(self.layout.cur(b))
                    y = mgr.var(self.layout.nxt(b))
                    rel = rel & ~(x ^ y)
        err = (err | (guard & bad)) & self.valid
        return rel, err

    # reachability -------------------------------------------------------

    @property
    def transition(self) -> Function:
        t = self.mgr.false
        for tc in self.trans:
            t = t | tc
        return t

    def image(self, states: Function) -> Function:
        lay = self.layout
        cur = lay.cur_levels
        out = self.mgr.false
        for tc in self.trans:
            out = out | self.mgr.and_exists(cur, states, tc)
        return self.mgr.rename(out, lay.next_levels, cur)

    def reach(self) -> Function:
        """Reachable states by breadth-first image iteration (cached)."""
        if self._reach is None:
            r = self.init
            frontier = self.init
            it = 0
            while not frontier.is_false:
                new = self.image(frontier) & ~r
                r = r | new
                frontier = new
                it += 1
            for ci, err in enumerate(self.errors):
                bad = err & r
                if not bad.is_false:
                    s = self.decode_levels(next(self.mgr.pick_iter(bad, self.layout.cur_levels)))
                    c = self.model.commands[ci]
                    raise SemanticError(
                        f"command [{c.label}] has an undefined update at reachable state {self.model.state_str(s)}",
                        c.line or None,
                    )
            self._reach = r
            self.reach_iterations = it
        return self._reach

    def states(self, f: Function) -> list[State]:
        """Explicit list of the states in ``f`` (small sets only)."""
        return [self.decode_levels(a) for a in self.mgr.pick_iter(f, self.layout.cur_levels)]

    def count(self, f: Function) -> int:
        return self.mgr.count(f, self.layout.cur_levels)


def build_symbolic(m, mgr: Manager | None = None, block_bits: int = DEFAULT_BLOCK_BITS) -> SymbolicModel:
    return SymbolicModel(m, block_bits=block_bits, mgr=mgr)


def _le_const(mgr: Manager, bits: list[int], c: int) -> Function:
    """Unsigned ``value(bits) <= c``; ``bits`` are LSB first."""
    n = len(bits)
    if c >= (1 << n) - 1:
        return mgr.true
    # scan from the most significant bit, which sits lowest in the order
    # among these levels only if LSB-first; build bottom-up over LSB..MSB
    f = TRUE
    for j in range(n):
        lvl = bits[j]
        # f: condition on bits[0..j-1] for value_low <= c_low
        cj = (c >> j) & 1
        if cj:
            # bit j = 0 -> always <= ; bit j = 1 -> compare lower bits
            f = _ite_var(mgr, lvl, f, TRUE)
        else:
            # bit j = 1 -> greater ; bit j = 0 -> compare lower bits
            f = _ite_var(mgr, lvl, FALSE, f)
    return Function(mgr, f)


def _ite_var(mgr: Manager, lvl: int, hi: int, lo: int) -> int:
    """Node for ``lvl ? hi : lo`` where ``hi``/``lo`` only mention levels above ``lvl``."""
    a = mgr._apply(0, mgr.mk(lvl, FALSE, TRUE), hi)
    b = mgr._apply(0, mgr.mk(lvl, TRUE, FALSE), lo)
    return mgr._apply(1, a, b)
