import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmcbounds.abstraction import AbstractionError, AbstractRewards, PartialAbstraction, ectmc_from_rows
from ctmcbounds.explicit import build_explicit, explicit_value
from ctmcbounds.intervalvi import (
    _EctmcKernel,
    chain_bounds,
    chain_ctmdp,
    ctmdp_from_ctmc,
    enumerate_cd_schedulers,
    extract_and_validate_scheduler,
    load_ctmdp,
    make_ctmdp,
    optimize_rate_row,
    value_bounds,
    value_ctmdp,
    vertex_enumeration,
)
from ctmcbounds.partition import singleton_partition
from ctmcbounds.symbolic import SymbolicModel
from ctmcbounds.abstraction import build_abstraction


def random_row(rng, n, lam=10.0):
    lo = [rng.uniform(0, lam / n) for _ in range(n)]
    hi = [x + rng.choice([0.0, rng.uniform(0, lam)]) for x in lo]
    if sum(hi) < lam:
        hi[rng.randrange(n)] += lam - sum(hi) + rng.uniform(0, 1)
    q = [rng.choice([0.0, 0.5, 1.0, rng.random()]) for _ in range(n)]
    return lo, hi, q


def random_ectmc(rng, n_blocks=4, max_actions=3, lam=6.0):
    rows = []
    for z in range(n_blocks):
        for a in range(rng.randint(1, max_actions)):
            tg = sorted(rng.sample(range(n_blocks), rng.randint(1, n_blocks)))
            ent = {}
            for d in tg:
                lo = rng.uniform(0, lam / len(tg))
                ent[d] = (lo, min(lam, lo + rng.choice([0.0, rng.uniform(0, lam / 2)])))
            hs = sum(h for _, h in ent.values())
            if hs < lam:
                d = rng.choice(tg)
                ent[d] = (ent[d][0], ent[d][1] + lam - hs)
            rows.append((z, (("c", a),), ent))
    a = ectmc_from_rows(n_blocks, lam, rows)
    a.validate()
    r = np.array([rng.random() for _ in range(n_blocks)])
    f = np.array([rng.random() for _ in range(n_blocks)])
    rew = AbstractRewards(r * 0.5, r, f * 0.5, f)
    return a, rew


def random_ctmdp(rng, n=4, lam=3.0, max_actions=2):
    acts = {}
    for s in range(n):
        acts[s] = []
        for a in range(rng.randint(1, max_actions)):
            row = {}
            budget = lam
            for d in rng.sample(range(n), rng.randint(1, n)):
                x = rng.uniform(0, budget)
                row[d] = row.get(d, 0.0) + x
                budget -= x
            acts[s].append((f"a{a}", row))
    r = [rng.choice([0.0, rng.random()]) for _ in range(n)]
    f = [rng.choice([0.0, 1.0]) for _ in range(n)]
    return make_ctmdp(lam, acts, r, f)


# rate rows -------------------------------------------------------------------


def test_row_examples():
    x, v = optimize_rate_row([0, 0, 0], [10, 10, 10], [1, 0.5, 0], 10, "max")
    assert list(x) == [10, 0, 0] and v == 1.0
    x, v = optimize_rate_row([2, 2, 2], [6, 6, 6], [1, 0.5, 0], 10, "max")
    assert list(x) == [6, 2, 2] and v == pytest.approx(0.7)
    x, v = optimize_rate_row([2, 2, 2], [6, 6, 6], [1, 0.5, 0], 10, "min")
    assert list(x) == [2, 2, 6] and v == pytest.approx(0.3)
    assert vertex_enumeration([2, 2, 2], [6, 6, 6], [1, 0.5, 0], 10, "max") == pytest.approx(0.7)


def test_row_ties_prefer_lower_index():
    x, _ = optimize_rate_row([0, 0], [10, 10], [1, 1], 10, "max")
    assert list(x) == [10, 0]


def test_row_infeasible():
    with pytest.raises(AbstractionError):
        optimize_rate_row([6, 6], [7, 7], [0, 1], 10)
    with pytest.raises(AbstractionError):
        optimize_rate_row([0, 0], [1, 2], [0, 1], 10)
    with pytest.raises(AbstractionError):
        optimize_rate_row([3, 0], [2, 10], [0, 1], 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.sampled_from(["max", "min"]))
def test_greedy_equals_vertices(seed, n, direction):
    lo, hi, q = random_row(random.Random(seed), n)
    x, v = optimize_rate_row(lo, hi, q, 10.0, direction)
    assert abs(v - vertex_enumeration(lo, hi, q, 10.0, direction)) <= 1e-12
    assert abs(sum(x) - 10.0) <= 1e-9
    assert all(l - 1e-12 <= xi <= h + 1e-12 for l, xi, h in zip(lo, x, hi))
    # at most one entry strictly inside its interval
    inner = [l + 1e-12 < xi < h - 1e-12 for l, xi, h in zip(lo, x, hi)]
    assert sum(inner) <= 1


# ECTMC ------------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["max", "min"]))
def test_kernel_matches_rowwise_and_two_level_brute_force(seed, direction):
    rng = random.Random(seed)
    a, _ = random_ectmc(rng)
    q = np.array([rng.choice([0.0, 1.0, rng.random()]) for _ in range(a.n_blocks)])
    ker = _EctmcKernel(a, direction)
    vals, rates = ker.step(q, want_rates=True)
    for i in range(a.n_actions):
        d, lo, hi = zip(*a.row(i))
        _, v = optimize_rate_row(lo, hi, q[list(d)], a.lam, direction)
        assert vals[i] == pytest.approx(v, abs=1e-12)
        s = slice(a.act_ptr[i], a.act_ptr[i + 1])
        assert rates[s].sum() == pytest.approx(a.lam, abs=1e-9)
    best, arg = ker.choose(vals)
    for z in range(a.n_blocks):
        brute = [vertex_enumeration(*[list(x) for x in zip(*a.row(i))][1:], q[[d for d, _, _ in a.row(i)]], a.lam, direction) for i in a.actions_of(z)]
        want = max(brute) if direction == "max" else min(brute)
        assert best[z] == pytest.approx(want, abs=1e-12)
        assert a.act_block[arg[z]] == z


def test_conservation():
    rng = random.Random(4)
    a, rew = random_ectmc(rng)
    ones = AbstractRewards(np.zeros(4), np.zeros(4), np.ones(4), np.ones(4))
    for d in ("max", "min"):
        q = value_bounds(a, ones, 2.0, 1e-7, d).q
        assert np.all(np.abs(q - 1) < 1e-7)


def test_singleton_twostate(twostate):
    sym = SymbolicModel(twostate, block_bits=4)
    p = singleton_partition(sym, [(0,), (1,)])
    a, rew = build_abstraction(sym, p)
    for d in ("max", "min"):
        assert value_bounds(a, rew, 1.0, 1e-6, d).q[0] == pytest.approx(0.565934, abs=2e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 3.0))
def test_upper_above_lower(seed, t):
    a, rew = random_ectmc(random.Random(seed))
    eps = 1e-6
    hi = value_bounds(a, rew, t, eps, "max").q
    lo = value_bounds(a, rew, t, eps, "min").q
    assert np.all(hi >= lo - 2 * eps)


def test_ectmc_scheduler_revalue():
    for seed in range(10):
        a, rew = random_ectmc(random.Random(seed))
        for d in ("max", "min"):
            res, rv = extract_and_validate_scheduler(a, 1.5, 1e-6, d, rew)
            assert np.max(np.abs(res.q - rv)) < 2e-6
            sched = res.scheduler
            assert np.all(a.act_block[sched.action] == np.arange(a.n_blocks))


def test_ectmc_chain_one_phase():
    a, rew = random_ectmc(random.Random(8))
    one = chain_bounds(a, rew, [1.2], 1e-6, "max")[-1]
    assert np.array_equal(one, value_bounds(a, rew, 1.2, 1e-6, "max").q)


def test_refinement_can_widen_upper_bound():
    # two members of block 0 with the same signature; coarse targets {1,3} and {2,4}
    # are split in the refined partition. Refined intervals admit rate 4 into {1,3},
    # the coarse row fixes it at 3, so the refined upper bound is larger.
    members = [{1: 2.0, 2: 2.0, 3: 1.0, 4: 1.0}, {1: 1.0, 2: 1.0, 3: 2.0, 4: 2.0}]
    lam = 6.0

    def abstraction(block_of, n):
        part = PartialAbstraction()
        for vec in members:
            agg = {}
            for tgt, rate in vec.items():
                agg[block_of[tgt]] = agg.get(block_of[tgt], 0.0) + rate
            sig = tuple((c, block_of[c + 1]) for c in range(4))
            part.add_state(0, sig, agg, sum(agg.values()), lam, 0.0, 0.0)
        for z in range(1, n):
            f = 1.0 if z in {block_of[1], block_of[3]} else 0.0
            part.add_state(z, (), {}, 0.0, 0.0, 0.0, f)
        return part.finalize(n, lam, ["c0", "c1", "c2", "c3"])

    coarse = abstraction({1: 1, 3: 1, 2: 2, 4: 2}, 3)
    fine = abstraction({1: 1, 2: 2, 3: 3, 4: 4}, 5)
    t = 0.5
    hi_coarse = value_bounds(*coarse, t, 1e-9, "max").q[0]
    hi_fine = value_bounds(*fine, t, 1e-9, "max").q[0]
    assert hi_coarse == pytest.approx(0.5 * (1 - math.exp(-6 * t)), abs=1e-8)
    assert hi_fine == pytest.approx(4 / 6 * (1 - math.exp(-6 * t)), abs=1e-8)
    assert hi_fine > hi_coarse + 0.1


# finite CTMDPs --------------------------------------------------------------------------------


@pytest.fixture
def fig1(data_dir):
    return load_ctmdp(data_dir / "fig1.ctmdp")


def test_fig1_max(fig1):
    assert fig1.lam == 10 and fig1.n == 34
    q = value_ctmdp(fig1, 4.0, 1e-5, "max").q
    assert q[fig1.index_of("s0")] == pytest.approx(0.659593, abs=2e-4)


def test_fig1_chain(fig1):
    single = value_ctmdp(fig1, 4.0, 1e-5, "max").q[0]
    q = chain_ctmdp(fig1, [(3.0, "max"), (1.0, "max")], 1e-5)[-1]
    assert q[0] == pytest.approx(0.671162, abs=4e-4)
    assert q[0] > single


def test_fig1_precision_contract(fig1):
    eps = 1e-4
    a = value_ctmdp(fig1, 4.0, eps, "max").q
    b = value_ctmdp(fig1, 4.0, eps / 10, "max").q
    assert np.max(np.abs(a - b)) < eps + eps / 10


def test_fig1_scheduler_shape(fig1):
    res, rv = extract_and_validate_scheduler(fig1, 4.0, 1e-5, "max")
    names = [fig1.act_name[x] for x in res.scheduler.action[:, 0]]
    assert names[0] == "beta"  # much time left
    assert names[-1] == "alpha"  # few steps left
    switch = names.index("alpha")
    assert set(names[switch:]) == {"alpha"}
    assert abs(rv[0] - res.q[0]) < 2e-5


def test_single_action_equals_explicit(data_dir):
    from ctmcbounds.lang import parse_file

    c = build_explicit(parse_file(data_dir / "cluster_N.ctmc", {"N": 2}))
    m = ctmdp_from_ctmc(c)
    eps = 1e-6
    v = value_ctmdp(m, 20.0, eps, "max").q
    e = explicit_value(c, 20.0, eps).q
    assert np.max(np.abs(v - e)) <= 2 * eps
    res, rv = extract_and_validate_scheduler(m, 20.0, eps, "max")
    assert np.array_equal(rv, res.q)


def _three_state(second_choice: bool):
    acts = {
        0: [("a", {1: 1.0, 2: 0.5}), ("b", {0: 2.0})],
        1: [("a", {0: 2.0})] + ([("b", {2: 1.0})] if second_choice else []),
        2: [("a", {2: 2.0})],
    }
    return make_ctmdp(2.0, acts, r=[0.5, 0.0, 1.0], f=[0.0, 1.0, 0.0])


@pytest.mark.parametrize("second_choice,t", [(True, 0.3), (False, 1.0), (False, 2.0)])
@pytest.mark.parametrize("d", ["max", "min"])
def test_three_state_exhaustive(second_choice, t, d):
    m = _three_state(second_choice)
    res = value_ctmdp(m, t, 1e-3, d)
    assert res.k <= 12
    brute = enumerate_cd_schedulers(m, t, 1e-3, d)
    assert np.max(np.abs(res.q - brute)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["max", "min"]))
def test_random_ctmdp_scheduler(seed, d):
    m = random_ctmdp(random.Random(seed))
    res, rv = extract_and_validate_scheduler(m, 1.0, 1e-6, d)
    assert np.max(np.abs(res.q - rv)) < 2e-6


def test_make_ctmdp_errors():
    with pytest.raises(ValueError):
        make_ctmdp(1.0, {0: []}, [0], [0])
    with pytest.raises(ValueError):
        make_ctmdp(1.0, {0: [("a", {0: 2.0})]}, [0], [0])
    with pytest.raises(ValueError):
        make_ctmdp(1.0, {0: [("a", {0: 0.5})]}, [0], [0], pad=False)


def test_twostate_chain_two_halves(twostate):
    c = build_explicit(twostate)
    m = ctmdp_from_ctmc(c)
    eps = 1e-7
    q = chain_ctmdp(m, [(0.5, "max"), (0.5, "max")], eps)[-1]
    assert q[0] == pytest.approx(0.75 - 3 / 16 * (1 - math.exp(-4)), abs=2 * eps)
