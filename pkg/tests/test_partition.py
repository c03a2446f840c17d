import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmcbounds.lang import parse, parse_file
from ctmcbounds.partition import (
    MAX_PREDICATES,
    PartitionError,
    block_cube,
    block_sets,
    export_blocks,
    initial_partition,
    partition_from_blocks,
    refine,
    refine_step,
    s_abs,
)
from ctmcbounds.semantics import reachable, successor
from ctmcbounds.symbolic import SymbolicModel
from randmodels import random_model, random_partition


def blocks_of(sym, p, states):
    return [s_abs(sym, p, s) for s in states]


def explicit_step(m, states, blocks):
    """Signature refinement on explicit states; lexicographic renumbering."""
    where = dict(zip(states, blocks))
    sigs = []
    for s, b in zip(states, blocks):
        sig = [b]
        for ci in range(len(m.commands)):
            r = successor(m, s, ci)
            sig.append((0, 0) if r is None else (1, where[r[0]]))
        sigs.append(tuple(sig))
    rank = {g: i for i, g in enumerate(sorted(set(sigs)))}
    return [rank[g] for g in sigs]


def refines(fine, coarse):
    parent = {}
    for f, c in zip(fine, coarse):
        if parent.setdefault(f, c) != c:
            return False
    return True


def test_no_predicates(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = initial_partition(sym)
    assert p.n_blocks == 1 and p.k_bits == 0
    assert blocks_of(sym, p, [(0,), (1,)]) == [0, 0]


def test_one_predicate(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = initial_partition(sym, ["x=1"])
    assert p.n_blocks == 2
    assert blocks_of(sym, p, [(0,), (1,)]) == [0, 1]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_predicates_match_bucketing(seed):
    rng = random.Random(seed)
    m = random_model(rng)
    sym = SymbolicModel(m, block_bits=8)
    states, _ = reachable(m)
    preds = []
    for _ in range(3):
        v = rng.choice(m.vars)
        preds.append(f"{v.name}{rng.choice(['<', '>=', '='])}{rng.randint(v.lo, v.hi)}")
    p = initial_partition(sym, preds)
    fns = [m.compile_expr(m.parse_expr(x), "bool") for x in preds]
    sig = {tuple(bool(f(s)) for f in fns) for s in states}
    assert p.n_blocks == len(sig)
    got = blocks_of(sym, p, states)
    # same cells, numbered lexicographically by truth vector
    rank = {g: i for i, g in enumerate(sorted(sig))}
    assert got == [rank[tuple(bool(f(s)) for f in fns)] for s in states]


def test_too_many_predicates(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    with pytest.raises(PartitionError):
        initial_partition(sym, ["x=1"] * (MAX_PREDICATES + 1))


def test_refine_twostate(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = refine_step(sym, initial_partition(sym))
    assert p.n_blocks == 2
    assert s_abs(sym, p, (0,)) != s_abs(sym, p, (1,))
    q = refine_step(sym, p)
    assert q.n_blocks == 2


def test_refine_zero_and_fixpoint(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p0 = initial_partition(sym)
    r = refine(sym, p0, 0)
    assert r.partition is p0 and r.iterations == 0
    r = refine(sym, p0, 10**6)
    assert r.partition.n_blocks == 2
    assert r.iterations == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_symbolic_step_matches_explicit(seed):
    rng = random.Random(seed)
    m = random_model(rng)
    sym = SymbolicModel(m, block_bits=8)
    states, _ = reachable(m)
    p, _ = random_partition(rng, sym, states, rng.randint(1, 3))
    blocks = blocks_of(sym, p, states)
    for _ in range(3):
        want = explicit_step(m, states, blocks)
        p = refine_step(sym, p)
        got = blocks_of(sym, p, states)
        assert got == want
        assert p.n_blocks == len(set(want))
        blocks = got


def test_cluster_refinement_chain(data_dir):
    m = parse_file(data_dir / "cluster_N.ctmc", {"N": 4})
    sym = SymbolicModel(m, block_bits=12)
    states, _ = reachable(m)
    prev = [0] * len(states)
    counts = []
    for n in (1, 2, 3):
        p = refine(sym, initial_partition(sym), n).partition
        cur = blocks_of(sym, p, states)
        assert refines(cur, prev)
        counts.append(p.n_blocks)
        prev = cur
    assert counts == sorted(counts)


def test_partition_property_and_block_sets(data_dir):
    m = parse_file(data_dir / "cluster_N.ctmc", {"N": 3})
    sym = SymbolicModel(m, block_bits=12)
    states, _ = reachable(m)
    p = refine(sym, initial_partition(sym), 2).partition
    sets = block_sets(sym, p)
    assert all(not b.is_false for b in sets)
    assert sum(sym.count(b) for b in sets) == len(states)
    got = blocks_of(sym, p, states)
    assert sorted(set(got)) == list(range(p.n_blocks))
    for i, b in enumerate(sets):
        assert all(got[j] == i for j, s in enumerate(states) if s in set(sym.states(b)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_s_abs_matches_eval_scan(seed):
    rng = random.Random(seed)
    m = random_model(rng)
    sym = SymbolicModel(m, block_bits=8)
    states, _ = reachable(m)
    p, _ = random_partition(rng, sym, states)
    lay = sym.layout
    for s in states:
        val = sym.valuation(s)
        hits = []
        for i in range(p.n_blocks):
            v = dict(val)
            v.update({lay.w(j): (i >> j) & 1 for j in range(lay.block_bits)})
            v.update({lay.nxt(b): 0 for b in range(lay.nstate)})
            v.update({lay.wc(j): 0 for j in range(lay.block_bits + 1)})
            if sym.mgr.eval(p.bdd, v):
                hits.append(i)
        assert hits == [s_abs(sym, p, s)]


def test_s_abs_uncovered(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = partition_from_blocks(sym, [(0,)], [0])
    with pytest.raises(PartitionError):
        s_abs(sym, p, (1,))


def test_block_cube_capacity(twostate):
    sym = SymbolicModel(twostate, block_bits=2)
    with pytest.raises(PartitionError):
        block_cube(sym, 4, 3)


def test_deterministic_numbering(data_dir):
    text = (data_dir / "cluster_N.ctmc").read_text()
    runs = []
    for _ in range(2):
        m = parse(text, {"N": 3})
        sym = SymbolicModel(m, block_bits=12)
        states, _ = reachable(m)
        p = refine(sym, initial_partition(sym), 3).partition
        runs.append(blocks_of(sym, p, states))
    assert runs[0] == runs[1]


def test_export(tmp_path, twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = refine(sym, initial_partition(sym), 5).partition
    out = tmp_path / "blocks.txt"
    export_blocks(sym, p, [(0,), (1,)], out)
    assert out.read_text() == "0 1\n1 0\n"
