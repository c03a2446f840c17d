"""Acceptance criteria 1-9, each reporting one PASS/FAIL line.

The lines are printed in the pytest terminal summary, and also when the
file is run directly with ``python tests/test_acceptance.py``.
"""
import math
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import DATA  # noqa: E402
from randmodels import random_model, random_partition, random_split  # noqa: E402

from ctmcbounds.abstraction import build_abstraction  # noqa: E402
from ctmcbounds.explicit import build_explicit, explicit_value  # noqa: E402
from ctmcbounds.intervalvi import (  # noqa: E402
    chain_ctmdp,
    enumerate_cd_schedulers,
    extract_and_validate_scheduler,
    load_ctmdp,
    make_ctmdp,
    optimize_rate_row,
    value_bounds,
    value_ctmdp,
    vertex_enumeration,
)
from ctmcbounds.lang import parse_file  # noqa: E402
from ctmcbounds.partition import partition_from_blocks, s_abs, singleton_partition  # noqa: E402
from ctmcbounds.poisson import poisson_terms  # noqa: E402
from ctmcbounds.symbolic import SymbolicModel  # noqa: E402

REPORT: list[str] = []


def report(n: int, ok: bool, detail: str, seconds: float, limit: float) -> None:
    ok_time = seconds < limit
    status = "PASS" if ok and ok_time else "FAIL"
    line = f"criterion {n}: {status}  {detail}  ({seconds:.2f} s, limit {limit:g} s)"
    REPORT.append(line)
    print(line)
    assert ok, line
    assert ok_time, line


def fig1_max():
    m = load_ctmdp(DATA / "fig1.ctmdp")
    return m, value_ctmdp(m, 4.0, 1e-5, "max").q[m.index_of("s0")]


def test_criterion_1_fig1_max():
    t0 = time.perf_counter()
    _, v = fig1_max()
    dt = time.perf_counter() - t0
    report(1, abs(v - 0.659593) <= 2e-4, f"v(s0) = {v:.6f}, expected 0.659593 +- 2e-4", dt, 1.0)


def test_criterion_2_fig1_chain():
    t0 = time.perf_counter()
    m, single = fig1_max()
    v = chain_ctmdp(m, [(3.0, "max"), (1.0, "max")], 1e-5)[-1][m.index_of("s0")]
    dt = time.perf_counter() - t0
    ok = abs(v - 0.671162) <= 4e-4 and v > single
    report(2, ok, f"v'(s0) = {v:.6f}, expected 0.671162 +- 4e-4, single phase {single:.6f}", dt, 1.0)


def test_criterion_3_cluster():
    t0 = time.perf_counter()
    c = build_explicit(parse_file(DATA / "cluster_N.ctmc", {"N": 32}))
    v = explicit_value(c, 500.0, 1e-4).q[0]
    dt = time.perf_counter() - t0
    report(3, abs(v - 64.176) <= 0.01, f"repairs = {v:.5f} over {c.n} states, expected 64.176 +- 0.01", dt, 600.0)


def test_criterion_4_soundness():
    eps = 1e-6
    t0 = time.perf_counter()
    fails = 0
    worst = -math.inf
    for seed in range(200):
        rng = random.Random(seed)
        m = random_model(rng)
        sym = SymbolicModel(m, block_bits=8)
        c = build_explicit(m)
        t = rng.choice([0.1, 0.5, 1.0, 2.0, 5.0])
        exact = explicit_value(c, t, eps).q
        p, _ = random_partition(rng, sym, c.states)
        a, rew = build_abstraction(sym, p)
        bz = np.array([s_abs(sym, p, s) for s in c.states])
        lo = value_bounds(a, rew, t, eps, "min").q[bz]
        hi = value_bounds(a, rew, t, eps, "max").q[bz]
        gap = max(np.max(lo - exact), np.max(exact - hi))
        worst = max(worst, gap)
        fails += gap > 2 * eps
    dt = time.perf_counter() - t0
    report(4, fails == 0, f"{200 - fails}/200 models contained, worst excess {worst:.2e}", dt, 120.0)


def test_criterion_5_monotonicity():
    eps = 1e-6
    t0 = time.perf_counter()
    fails = 0
    for seed in range(1000, 1100):
        rng = random.Random(seed)
        m = random_model(rng)
        sym = SymbolicModel(m, block_bits=8)
        c = build_explicit(m)
        t = rng.choice([0.5, 1.0, 2.0])
        blocks = [rng.randrange(rng.randint(1, c.n)) for _ in c.states]
        prev = None
        ok = True
        lam = None
        for _ in range(3):
            p = partition_from_blocks(sym, c.states, blocks)
            a, rew = build_abstraction(sym, p)
            lam = a.lam if lam is None else lam
            ok &= a.lam == lam
            bz = np.array([s_abs(sym, p, s) for s in c.states])
            lo = value_bounds(a, rew, t, eps, "min").q[bz]
            hi = value_bounds(a, rew, t, eps, "max").q[bz]
            if prev is not None:
                ok &= bool(np.all(lo >= prev[0] - 2 * eps) and np.all(hi <= prev[1] + 2 * eps))
            prev = (lo, hi)
            blocks = random_split(rng, blocks)
        fails += not ok
    dt = time.perf_counter() - t0
    report(5, fails == 0, f"{100 - fails}/100 chains nested", dt, 120.0)


def test_criterion_6_singleton():
    eps = 1e-6
    t0 = time.perf_counter()
    m = parse_file(DATA / "twostate.ctmc")
    sym = SymbolicModel(m, block_bits=4)
    p = singleton_partition(sym, [(0,), (1,)])
    a, rew = build_abstraction(sym, p)
    z = s_abs(sym, p, (0,))
    lo = value_bounds(a, rew, 1.0, eps, "min").q[z]
    hi = value_bounds(a, rew, 1.0, eps, "max").q[z]
    dt = time.perf_counter() - t0
    exact = 0.75 - 3 / 16 * (1 - math.exp(-4))
    mid = (lo + hi) / 2
    ok = hi - lo <= 4 * eps and abs(mid - exact) <= 2 * eps
    report(6, ok, f"[{lo:.9f}, {hi:.9f}], closed form {exact:.9f}", dt, 1.0)


def _k_conditions(terms, eps, r_max, f_max, rate, k):
    ok = True
    if r_max > 0:
        ok &= math.fsum(terms.psi[: k + 1]) > terms.lambda_t - eps * rate / (2 * r_max)
    if f_max > 0:
        ok &= terms.psi[k] * f_max < eps / 2
    return ok


def test_criterion_7_poisson():
    t0 = time.perf_counter()
    ok = True
    worst = 0.0
    for lt in (0.1, 1.0, 10.0, 100.0, 10000.0):
        terms = poisson_terms(lt, 1e-8, 1.0, 1.0, 1.0)
        err = abs(math.fsum(terms.phi) + terms.psi[-1] - 1.0)
        worst = max(worst, err)
        ok &= err <= 1e-10
    rng = random.Random(7)
    minimal = 0
    for _ in range(100):
        lt = 10 ** rng.uniform(-1, 3.5)
        eps = 10 ** rng.uniform(-9, -2)
        r_max = rng.choice([0.0, 0.5, 1.0, 7.0])
        f_max = rng.choice([0.5, 1.0, 3.0]) if r_max == 0 else rng.choice([0.0, 0.5, 1.0, 3.0])
        rate = rng.uniform(0.5, 20.0)
        terms = poisson_terms(lt, eps, r_max, f_max, rate)
        good = _k_conditions(terms, eps, r_max, f_max, rate, terms.k)
        if terms.k > 0:
            good &= not _k_conditions(terms, eps, r_max, f_max, rate, terms.k - 1)
        minimal += good
    ok &= minimal == 100
    dt = time.perf_counter() - t0
    report(7, ok, f"max mass error {worst:.1e}, minimal k in {minimal}/100 tuples", dt, 10.0)


def test_criterion_8_greedy():
    t0 = time.perf_counter()
    rng = random.Random(8)
    worst = 0.0
    n_rows = 0
    lam = 10.0
    for _ in range(1000):
        n = rng.randint(1, 5)
        lo = [rng.uniform(0, lam / n) for _ in range(n)]
        hi = [min(lam, x + rng.choice([0.0, rng.uniform(0, lam)])) for x in lo]
        if sum(hi) < lam:
            j = rng.randrange(n)
            hi[j] = min(lam, hi[j] + lam - sum(hi))
            if sum(hi) < lam:
                hi = [lam] * n
        q = [rng.choice([0.0, 1.0, rng.random(), rng.uniform(0, 50)]) for _ in range(n)]
        for d in ("max", "min"):
            _, v = optimize_rate_row(lo, hi, q, lam, d)
            worst = max(worst, abs(v - vertex_enumeration(lo, hi, q, lam, d)))
        n_rows += 1
    dt = time.perf_counter() - t0
    report(8, worst <= 1e-12, f"{n_rows} rows x 2 directions, max deviation {worst:.1e}", dt, 10.0)


def _random_ctmdp(rng, n, lam, max_actions):
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
    f = [rng.choice([0.0, rng.random(), 1.0]) for _ in range(n)]
    return make_ctmdp(lam, acts, r, f)


def test_criterion_9_schedulers():
    eps = 1e-6
    t0 = time.perf_counter()
    fig1 = load_ctmdp(DATA / "fig1.ctmdp")
    res, rv = extract_and_validate_scheduler(fig1, 4.0, 1e-5, "max")
    ok = np.max(np.abs(res.q - rv)) <= 2e-5
    rng = random.Random(9)
    revalued = 0
    for _ in range(50):
        m = _random_ctmdp(rng, rng.randint(2, 8), rng.uniform(1, 5), 3)
        d = rng.choice(["max", "min"])
        res, rv = extract_and_validate_scheduler(m, rng.uniform(0.1, 3), eps, d)
        revalued += np.max(np.abs(res.q - rv)) <= 2 * eps
    ok &= revalued == 50
    exhaustive = 0
    while exhaustive < 10:
        m = _random_ctmdp(rng, 3, 2.0, 2)
        choice_states = int(np.sum(np.diff(m.state_ptr) > 1))
        t = rng.uniform(0.1, 2.0)
        d = rng.choice(["max", "min"])
        e = 1e-3
        res = value_ctmdp(m, t, e, d)
        if res.k > 12 or choice_states * (res.k + 1) > 16:
            continue
        brute = enumerate_cd_schedulers(m, t, e, d)
        ok &= bool(np.max(np.abs(res.q - brute)) <= 1e-12)
        exhaustive += 1
    dt = time.perf_counter() - t0
    report(9, bool(ok), f"fig1 + {revalued}/50 random CTMDPs revalued within 2 eps, {exhaustive} exhaustive checks", dt, 60.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
