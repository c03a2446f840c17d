"""Partitionings of the reachable states encoded as one OBDD over V and W.

A partition with ``n`` blocks uses ``k = ceil(log2 n)`` block bits
``W[0:k]`` (LSB first). ``bdd(v, w) = 1`` iff ``v`` is reachable and ``w``
encodes the block of ``v``. Block bits lie below all state bits, so the part
of the diagram under the state levels is, for each state, a single cube.

Refinement splits blocks by the command signature ``{(c, block(succ_c(s)))}``
where a disabled command contributes its own token. The split is done one
command at a time; each pass sorts the realised ``(old block, enabled,
successor block)`` triples lexicographically, so the final numbering is
lexicographic in ``(old block, sig_c0, sig_c1, ...)`` with "disabled" first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .obdd import FALSE, TRUE, BddError, Function
from .symbolic import SymbolicModel

MAX_PREDICATES = 30


class PartitionError(Exception):
    pass


@dataclass(frozen=True)
class Partition:
    bdd: Function
    n_blocks: int
    k_bits: int

    def __post_init__(self):
        if self.n_blocks < 1:
            raise PartitionError("a partition needs at least one block")


def bits_for(n: int) -> int:
    return 0 if n <= 1 else math.ceil(math.log2(n))


def block_cube(sym: SymbolicModel, index: int, k: int | None = None, scratch: bool = False) -> Function:
    """Encoding of a block index on ``W[0:k]`` (or on the scratch bits ``Wc``)."""
    lay = sym.layout
    k = bits_for(index + 1) if k is None else k
    if k > lay.block_bits:
        raise PartitionError(f"{index + 1} blocks need {k} block bits, only {lay.block_bits} reserved")
    if index >= (1 << k):
        raise PartitionError(f"block index {index} does not fit in {k} bits")
    lvl = lay.wc if scratch else lay.w
    return sym.mgr.cube({lvl(j): (index >> j) & 1 for j in range(k)})


def from_cells(sym: SymbolicModel, cells: list[Function]) -> Partition:
    """Partition whose block ``i`` is the state set ``cells[i]`` (all non-empty, disjoint)."""
    n = len(cells)
    k = bits_for(n)
    f = sym.mgr.false
    for i, c in enumerate(cells):
        f = f | (c & block_cube(sym, i, k))
    return Partition(f, n, k)


def initial_partition(sym: SymbolicModel, predicates=()) -> Partition:
    """Non-empty cells of the predicate signatures inside the reachable set.

    Cells are ordered lexicographically by their truth vector (false before
    true, first predicate most significant).
    """
    preds = [sym.expr_bdd(p) if not isinstance(p, Function) else p for p in predicates]
    if len(preds) > MAX_PREDICATES:
        raise PartitionError(f"{len(preds)} predicates give more than 2^{MAX_PREDICATES} candidate cells")
    cells = [sym.reach()]
    for p in preds:
        nxt = []
        for c in cells:
            for part in (c & ~p, c & p):
                if not part.is_false:
                    nxt.append(part)
        cells = nxt
    return from_cells(sym, cells)


def singleton_partition(sym: SymbolicModel, states=None) -> Partition:
    """Every reachable state its own block (``states`` fixes the order)."""
    if states is None:
        states = sorted(sym.states(sym.reach()))
    return from_cells(sym, [sym.state_cube(s) for s in states])


def partition_from_blocks(sym: SymbolicModel, states, blocks) -> Partition:
    """Partition from an explicit ``state -> block`` assignment.

    Block indices are compacted to ``0..n-1`` keeping their relative order.
    """
    used = sorted(set(blocks))
    remap = {b: i for i, b in enumerate(used)}
    cells = [sym.mgr.false] * len(used)
    for s, b in zip(states, blocks):
        cells[remap[b]] = cells[remap[b]] | sym.state_cube(s)
    return from_cells(sym, cells)


# block lookup -------------------------------------------------------------


def s_abs(sym: SymbolicModel, p: Partition, s) -> int:
    """Block of state ``s`` by following its path through ``p.bdd``.

    ``s`` is a state tuple or a dict of current-level bits. Block bits left
    free on the path read as 0. Raises PartitionError if the path ends in
    the false leaf (state not covered).
    """
    mgr = sym.mgr
    lay = sym.layout
    val = sym.valuation(s) if isinstance(s, tuple) else s
    u = p.bdd.node
    wstart = lay.w_start
    var, lo, hi = mgr._var, mgr._lo, mgr._hi
    while u > TRUE and var[u] < wstart:
        u = hi[u] if val[var[u]] else lo[u]
    if u == FALSE:
        raise PartitionError("state is not covered by the partition")
    index = 0
    while u > TRUE:
        j = var[u] - wstart
        if lo[u] == FALSE:
            index |= 1 << j
            u = hi[u]
        else:
            u = lo[u]
    if u == FALSE:
        raise PartitionError("state is not covered by the partition")
    return index


def block_of_states(sym: SymbolicModel, p: Partition, states) -> list[int]:
    return [s_abs(sym, p, s) for s in states]


def block_sets(sym: SymbolicModel, p: Partition) -> list[Function]:
    """State set of every block."""
    lay = sym.layout
    wl = [lay.w(j) for j in range(p.k_bits)]
    return [sym.mgr.exists(wl, p.bdd & block_cube(sym, i, p.k_bits)) for i in range(p.n_blocks)]


def export_blocks(sym: SymbolicModel, p: Partition, states, path) -> None:
    """Write ``stateIndex blockIndex`` lines for an explicit state list."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, s in enumerate(states):
            fh.write(f"{i} {s_abs(sym, p, s)}\n")


# refinement ---------------------------------------------------------------


def _region_cube(sym: SymbolicModel, u: int) -> dict[int, int]:
    """Single satisfying assignment of a block-bit subdiagram (must be a cube)."""
    mgr = sym.mgr
    out: dict[int, int] = {}
    while u > TRUE:
        if mgr._lo[u] == FALSE:
            out[mgr._var[u]] = 1
            u = mgr._hi[u]
        elif mgr._hi[u] == FALSE:
            out[mgr._var[u]] = 0
            u = mgr._lo[u]
        else:
            raise PartitionError("a state maps to more than one block signature")
    if u == FALSE:
        raise PartitionError("empty block signature region")
    return out


def _split(sym: SymbolicModel, h: Function, k_old: int, k_succ: int) -> tuple[Function, int, int]:
    """Renumber the ``(W, Wc)`` cubes under the state levels of ``h``.

    Returns the relabelled diagram over ``V, W``, the new block count and
    the new number of block bits.
    """
    mgr = sym.mgr
    lay = sym.layout
    wstart = lay.w_start
    regions: dict[int, tuple] = {}
    seen: set[int] = set()
    stack = [h.node]
    while stack:
        u = stack.pop()
        if u in seen or u == FALSE:
            continue
        seen.add(u)
        if u == TRUE or mgr._var[u] >= wstart:
            cube = _region_cube(sym, u)
            old = sum(cube.get(lay.w(j), 0) << j for j in range(k_old))
            flag = cube.get(lay.wc_flag, 0)
            succ = sum(cube.get(lay.wc(j), 0) << j for j in range(k_succ))
            regions[u] = (old, flag, succ)
            continue
        stack.append(mgr._lo[u])
        stack.append(mgr._hi[u])
    keys = sorted(set(regions.values()))
    n = len(keys)
    k = bits_for(n)
    rank = {key: i for i, key in enumerate(keys)}
    enc = {i: block_cube(sym, i, k).node for i in range(n)}
    memo: dict[int, int] = {FALSE: FALSE}

    def rebuild(u: int) -> int:
        r = memo.get(u)
        if r is not None:
            return r
        if u in regions:
            r = enc[rank[regions[u]]]
        else:
            r = mgr.mk(mgr._var[u], rebuild(mgr._lo[u]), rebuild(mgr._hi[u]))
        memo[u] = r
        return r

    return Function(mgr, rebuild(h.node)), n, k


def refine_step(sym: SymbolicModel, p: Partition) -> Partition:
    """One signature-refinement pass over all commands."""
    mgr = sym.mgr
    lay = sym.layout
    cur = lay.cur_levels
    nxt = lay.next_levels
    k = p.k_bits
    src = sorted(cur + [lay.w(j) for j in range(k)])
    dst = sorted(nxt + [lay.wc(j) for j in range(k)])
    try:
        moved = mgr.rename(p.bdd, src, dst)
    except BddError as e:  # pragma: no cover - layout guarantees order
        raise PartitionError(str(e)) from None
    flag = mgr.var(lay.wc_flag)
    no_succ = ~flag & block_cube(sym, 0, k, scratch=True)
    g = p.bdd
    kg = k
    n = p.n_blocks
    for tc in sym.trans:
        enabled = mgr.exists(nxt, tc)
        succ = mgr.and_exists(nxt, tc, moved)
        sig = (succ & flag) | (~enabled & no_succ)
        g, n, kg = _split(sym, g & sig, kg, k)
    return Partition(g, n, kg)


@dataclass(frozen=True)
class RefineResult:
    partition: Partition
    iterations: int
    block_counts: tuple


def refine(sym: SymbolicModel, p: Partition, n_iters: int) -> RefineResult:
    """Up to ``n_iters`` refinement passes, stopping at a fixpoint.

    ``iterations`` counts the passes that were run, including a final pass
    that found no split.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be non-negative")
    counts = [p.n_blocks]
    it = 0
    while it < n_iters:
        q = refine_step(sym, p)
        it += 1
        counts.append(q.n_blocks)
        if q.n_blocks == p.n_blocks:
            # refinement never merges, so equal counts mean equal partitions
            break
        p = q
    return RefineResult(p, it, tuple(counts))
