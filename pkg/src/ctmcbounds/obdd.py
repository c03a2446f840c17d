"""Reduced ordered binary decision diagrams.

A small hash-consed BDD package. Nodes are integers indexing into three
parallel lists (``var``, ``lo``, ``hi``); node ``0`` is the false leaf and
node ``1`` the true leaf. No complement edges are used, so following a
valuation from the root is a plain walk down ``lo``/``hi`` edges.

The variable order is fixed when the :class:`Manager` is created: variable
``i`` sits at level ``i``. Users get :class:`Function` handles, which carry
their manager so that mixing diagrams of two managers is rejected.
"""
from __future__ import annotations

import itertools
import sys
from typing import Iterable, Iterator, Mapping, Sequence

FALSE = 0
TRUE = 1

_AND, _OR, _XOR = 0, 1, 2
_OPS = {"and": _AND, "or": _OR, "xor": _XOR}


class BddError(Exception):
    """Raised on misuse of the BDD manager (foreign handles, bad renames)."""


class Manager:
    """Owner of the shared node store, unique table and operation caches.

    Parameters
    ----------
    nvars:
        Number of Boolean variables. Variable ``i`` has level ``i``.
    names:
        Optional variable names, used by :meth:`to_dot` and :meth:`var_named`.
    """

    def __init__(self, nvars: int, names: Sequence[str] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be non-negative")
        self.nvars = nvars
        if names is None:
            names = [f"v{i}" for i in range(nvars)]
        if len(names) != nvars:
            raise ValueError("one name per variable required")
        self.names = list(names)
        self._index = {n: i for i, n in enumerate(self.names)}
        # leaves sit below every variable
        self._var = [nvars, nvars]
        self._lo = [-1, -1]
        self._hi = [-1, -1]
        self._unique: dict[tuple[int, int, int], int] = {}
        self._cache: dict[tuple, int] = {}
        self.false = Function(self, FALSE)
        self.true = Function(self, TRUE)
        if sys.getrecursionlimit() < 4 * nvars + 1000:
            sys.setrecursionlimit(4 * nvars + 1000)

    # -- node level -----------------------------------------------------

    def mk(self, v: int, lo: int, hi: int) -> int:
        """Return the unique node ``(v, lo, hi)``, reducing ``lo == hi``."""
        if lo == hi:
            return lo
        key = (v, lo, hi)
        u = self._unique.get(key)
        if u is None:
            u = len(self._var)
            self._var.append(v)
            self._lo.append(lo)
            self._hi.append(hi)
            self._unique[key] = u
        return u

    def node_var(self, u: int) -> int:
        return self._var[u]

    def node_lo(self, u: int) -> int:
        return self._lo[u]

    def node_hi(self, u: int) -> int:
        return self._hi[u]

    def __len__(self) -> int:
        return len(self._var)

    def clear_cache(self) -> None:
        self._cache.clear()

    def _apply(self, op: int, f: int, g: int) -> int:
        if op == _AND:
            if f == FALSE or g == FALSE:
                return FALSE
            if f == TRUE:
                return g
            if g == TRUE or f == g:
                return f
        elif op == _OR:
            if f == TRUE or g == TRUE:
                return TRUE
            if f == FALSE:
                return g
            if g == FALSE or f == g:
                return f
        else:
            if f == g:
                return FALSE
            if f == FALSE:
                return g
            if g == FALSE:
                return f
            if f == TRUE:
                return self._neg(g)
            if g == TRUE:
                return self._neg(f)
        if f > g:
            f, g = g, f
        key = (op, f, g)
        r = self._cache.get(key)
        if r is not None:
            return r
        vf, vg = self._var[f], self._var[g]
        v = min(vf, vg)
        f0, f1 = (self._lo[f], self._hi[f]) if vf == v else (f, f)
        g0, g1 = (self._lo[g], self._hi[g]) if vg == v else (g, g)
        r = self.mk(v, self._apply(op, f0, g0), self._apply(op, f1, g1))
        self._cache[key] = r
        return r

    def _neg(self, f: int) -> int:
        if f <= TRUE:
            return 1 - f
        key = ("not", f)
        r = self._cache.get(key)
        if r is not None:
            return r
        r = self.mk(self._var[f], self._neg(self._lo[f]), self._neg(self._hi[f]))
        self._cache[key] = r
        return r

    def _exists(self, f: int, qs: frozenset, last: int) -> int:
        if f <= TRUE or self._var[f] > last:
            return f
        key = ("ex", f, qs)
        r = self._cache.get(key)
        if r is not None:
            return r
        v = self._var[f]
        lo = self._exists(self._lo[f], qs, last)
        if v in qs:
            if lo == TRUE:
                r = TRUE
            else:
                r = self._apply(_OR, lo, self._exists(self._hi[f], qs, last))
        else:
            r = self.mk(v, lo, self._exists(self._hi[f], qs, last))
        self._cache[key] = r
        return r

    def _and_exists(self, f: int, g: int, qs: frozenset, last: int) -> int:
        if f == FALSE or g == FALSE:
            return FALSE
        if f == TRUE and g == TRUE:
            return TRUE
        if f == TRUE or f == g:
            return self._exists(g, qs, last)
        if g == TRUE:
            return self._exists(f, qs, last)
        if f > g:
            f, g = g, f
        vf, vg = self._var[f], self._var[g]
        v = min(vf, vg)
        if v > last:
            return self._apply(_AND, f, g)
        key = ("ae", f, g, qs)
        r = self._cache.get(key)
        if r is not None:
            return r
        f0, f1 = (self._lo[f], self._hi[f]) if vf == v else (f, f)
        g0, g1 = (self._lo[g], self._hi[g]) if vg == v else (g, g)
        lo = self._and_exists(f0, g0, qs, last)
        if v in qs:
            if lo == TRUE:
                r = TRUE
            else:
                r = self._apply(_OR, lo, self._and_exists(f1, g1, qs, last))
        else:
            r = self.mk(v, lo, self._and_exists(f1, g1, qs, last))
        self._cache[key] = r
        return r

    def _rename(self, f: int, mapping: dict[int, int], memo: dict[int, int]) -> int:
        if f <= TRUE:
            return f
        r = memo.get(f)
        if r is not None:
            return r
        v = self._var[f]
        r = self.mk(
            mapping.get(v, v),
            self._rename(self._lo[f], mapping, memo),
            self._rename(self._hi[f], mapping, memo),
        )
        memo[f] = r
        return r

    def support_nodes(self, f: int) -> set[int]:
        seen: set[int] = set()
        stack = [f]
        out: set[int] = set()
        while stack:
            u = stack.pop()
            if u <= TRUE or u in seen:
                continue
            seen.add(u)
            out.add(self._var[u])
            stack.append(self._lo[u])
            stack.append(self._hi[u])
        return out

    # -- handle level ---------------------------------------------------

    def _own(self, f: Function) -> int:
        if not isinstance(f, Function):
            raise TypeError(f"expected a BDD handle, got {type(f).__name__}")
        if f.mgr is not self:
            raise BddError("handle belongs to a different manager")
        return f.node

    def _wrap(self, u: int) -> Function:
        return Function(self, u)

    def _check_var(self, i: int) -> int:
        if not 0 <= i < self.nvars:
            raise BddError(f"variable index {i} out of range 0..{self.nvars - 1}")
        return i

    def var(self, i: int) -> Function:
        """The projection function of variable ``i``."""
        return self._wrap(self.mk(self._check_var(i), FALSE, TRUE))

    def var_named(self, name: str) -> Function:
        return self.var(self._index[name])

    def cube(self, assignment: Mapping[int, int | bool]) -> Function:
        """Conjunction of literals, one per assigned variable."""
        u = TRUE
        for v in sorted(assignment, reverse=True):
            self._check_var(v)
            u = self.mk(v, u, FALSE) if not assignment[v] else self.mk(v, FALSE, u)
        return self._wrap(u)

    def apply(self, op: str, f: Function, g: Function) -> Function:
        try:
            code = _OPS[op]
        except KeyError:
            raise ValueError(f"unknown operator {op!r}") from None
        return self._wrap(self._apply(code, self._own(f), self._own(g)))

    def negate(self, f: Function) -> Function:
        return self._wrap(self._neg(self._own(f)))

    def ite(self, c: Function, f: Function, g: Function) -> Function:
        return (c & f) | (~c & g)

    def exists(self, vars: Iterable[int], f: Function) -> Function:
        u = self._own(f)
        qs = frozenset(self._check_var(v) for v in vars)
        if not qs:
            return f
        return self._wrap(self._exists(u, qs, max(qs)))

    def forall(self, vars: Iterable[int], f: Function) -> Function:
        return ~self.exists(vars, ~f)

    def and_exists(self, vars: Iterable[int], f: Function, g: Function) -> Function:
        """``exists(vars, f & g)`` without building the conjunction."""
        a, b = self._own(f), self._own(g)
        qs = frozenset(self._check_var(v) for v in vars)
        if not qs:
            return self._wrap(self._apply(_AND, a, b))
        return self._wrap(self._and_exists(a, b, qs, max(qs)))

    def rename(self, f: Function, src: Sequence[int], dst: Sequence[int]) -> Function:
        """Substitute ``dst[i]`` for ``src[i]``.

        The substitution is done structurally, so it must keep every path
        ordered: listing the support of ``f`` in level order and mapping it
        must give a strictly increasing sequence of levels.
        """
        u = self._own(f)
        if len(src) != len(dst):
            raise BddError("rename lists differ in length")
        mapping = {}
        for a, b in zip(src, dst):
            self._check_var(a)
            self._check_var(b)
            if a != b:
                mapping[a] = b
        if not mapping:
            return f
        supp = sorted(self.support_nodes(u))
        image = [mapping.get(v, v) for v in supp]
        if any(x >= y for x, y in zip(image, image[1:])):
            raise BddError("rename would violate the variable order")
        return self._wrap(self._rename(u, mapping, {}))

    def eval(self, f: Function, valuation: Mapping[int, int | bool]) -> int:
        """Follow the path induced by ``valuation`` to a leaf."""
        u = self._own(f)
        while u > TRUE:
            v = self._var[u]
            try:
                bit = valuation[v]
            except (KeyError, IndexError):
                raise BddError(f"valuation does not assign variable {v}") from None
            u = self._hi[u] if bit else self._lo[u]
        return u

    def support(self, f: Function) -> set[int]:
        return self.support_nodes(self._own(f))

    def count(self, f: Function, nvars: Iterable[int] | None = None) -> int:
        """Number of satisfying assignments over the given variables.

        ``nvars`` defaults to the support of ``f``; it must contain it.
        """
        u = self._own(f)
        levels = sorted(self.support_nodes(u) if nvars is None else set(nvars))
        if not self.support_nodes(u) <= set(levels):
            raise BddError("count variables must cover the support")
        pos = {v: i for i, v in enumerate(levels)}
        n = len(levels)
        memo: dict[int, int] = {}

        def level_of(w: int) -> int:
            return n if w <= TRUE else pos[self._var[w]]

        def rec(w: int) -> int:
            if w == FALSE:
                return 0
            if w == TRUE:
                return 1
            if w in memo:
                return memo[w]
            i = pos[self._var[w]]
            lo, hi = self._lo[w], self._hi[w]
            c = rec(lo) * 2 ** (level_of(lo) - i - 1) + rec(hi) * 2 ** (level_of(hi) - i - 1)
            memo[w] = c
            return c

        return rec(u) * 2 ** level_of(u)

    def pick_iter(self, f: Function, care: Sequence[int] | None = None) -> Iterator[dict[int, int]]:
        """Enumerate satisfying assignments over ``care`` in lexicographic order.

        Variables in ``care`` that the diagram skips are expanded, so every
        yielded dict is total over ``care``. ``care`` defaults to the support.
        """
        u = self._own(f)
        care = sorted(self.support_nodes(u) if care is None else care)
        if not self.support_nodes(u) <= set(care):
            raise BddError("care set must cover the support")

        def rec(w: int, i: int, acc: dict[int, int]) -> Iterator[dict[int, int]]:
            if w == FALSE:
                return
            if i == len(care):
                yield dict(acc)
                return
            v = care[i]
            if w > TRUE and self._var[w] == v:
                lo, hi = self._lo[w], self._hi[w]
            else:
                lo = hi = w
            acc[v] = 0
            yield from rec(lo, i + 1, acc)
            acc[v] = 1
            yield from rec(hi, i + 1, acc)
            del acc[v]

        return rec(u, 0, {})

    def dag_size(self, f: Function) -> int:
        u = self._own(f)
        seen: set[int] = set()
        stack = [u]
        while stack:
            w = stack.pop()
            if w in seen:
                continue
            seen.add(w)
            if w > TRUE:
                stack.append(self._lo[w])
                stack.append(self._hi[w])
        return len(seen)

    def check_invariants(self, f: Function) -> None:
        """Assert reducedness and orderedness of everything reachable from ``f``."""
        u = self._own(f)
        seen: set[int] = set()
        keys: set[tuple[int, int, int]] = set()
        stack = [u]
        while stack:
            w = stack.pop()
            if w <= TRUE or w in seen:
                continue
            seen.add(w)
            v, lo, hi = self._var[w], self._lo[w], self._hi[w]
            assert lo != hi, f"node {w} is redundant"
            assert v < self._var[lo] and v < self._var[hi], f"node {w} breaks the order"
            key = (v, lo, hi)
            assert key not in keys, f"node {w} is a duplicate"
            keys.add(key)
            stack.append(lo)
            stack.append(hi)

    def to_dot(self, f: Function) -> str:
        """DOT text for debugging."""
        u = self._own(f)
        lines = ["digraph bdd {", '  0 [shape=box,label="0"];', '  1 [shape=box,label="1"];']
        seen: set[int] = set()
        stack = [u]
        while stack:
            w = stack.pop()
            if w <= TRUE or w in seen:
                continue
            seen.add(w)
            lines.append(f'  {w} [label="{self.names[self._var[w]]}"];')
            lines.append(f"  {w} -> {self._lo[w]} [style=dashed];")
            lines.append(f"  {w} -> {self._hi[w]};")
            stack.extend((self._lo[w], self._hi[w]))
        lines.append("}")
        return "\n".join(lines) + "\n"


class Function:
    """Handle of a BDD node inside a :class:`Manager`.

    Two handles of one manager are equal iff they denote the same Boolean
    function (canonicity of reduced ordered diagrams).
    """

    __slots__ = ("mgr", "node")

    def __init__(self, mgr: Manager, node: int):
        self.mgr = mgr
        self.node = node

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Function) and self.mgr is other.mgr and self.node == other.node

    def __hash__(self) -> int:
        return hash((id(self.mgr), self.node))

    def __repr__(self) -> str:
        return f"Function(node={self.node})"

    def __and__(self, other: Function) -> Function:
        return self.mgr.apply("and", self, other)

    def __or__(self, other: Function) -> Function:
        return self.mgr.apply("or", self, other)

    def __xor__(self, other: Function) -> Function:
        return self.mgr.apply("xor", self, other)

    def __invert__(self) -> Function:
        return self.mgr.negate(self)

    @property
    def is_false(self) -> bool:
        return self.node == FALSE

    @property
    def is_true(self) -> bool:
        return self.node == TRUE


def truth_table(mgr: Manager, f: Function, vars: Sequence[int]) -> list[int]:
    """Evaluate ``f`` on every valuation of ``vars`` (first variable is the MSB)."""
    out = []
    for bits in itertools.product((0, 1), repeat=len(vars)):
        out.append(mgr.eval(f, dict(zip(vars, bits))))
    return out


def from_truth_table(mgr: Manager, vars: Sequence[int], table: Sequence[int]) -> Function:
    """Build the function with the given table (ordering as in :func:`truth_table`)."""
    f = mgr.false
    for bits, val in zip(itertools.product((0, 1), repeat=len(vars)), table):
        if val:
            f = f | mgr.cube(dict(zip(vars, bits)))
    return f
