"""Exact value of a two-state chain, and the same value from the abstraction.

Run: python demos/twostate.py
"""
import math
from importlib.resources import files

from ctmcbounds.abstraction import build_abstraction
from ctmcbounds.explicit import build_explicit, explicit_value
from ctmcbounds.intervalvi import value_bounds
from ctmcbounds.lang import parse_file
from ctmcbounds.partition import initial_partition, refine
from ctmcbounds.symbolic import SymbolicModel

model = parse_file(files("ctmcbounds") / "data" / "twostate.ctmc")
eps = 1e-6

# expected time spent in x=1 during [0, t]
for t in (0.5, 1.0, 2.0):
    exact = explicit_value(build_explicit(model), t, eps).q[0]
    closed = 0.75 * t - 3 / 16 * (1 - math.exp(-4 * t))
    print(f"t={t}: explicit {exact:.9f}   closed form {closed:.9f}")

sym = SymbolicModel(model, block_bits=4)
p = initial_partition(sym)
for n in range(3):
    part = refine(sym, p, n).partition
    a, rew = build_abstraction(sym, part)
    lo = value_bounds(a, rew, 1.0, eps, "min").q[a.initial_block]
    hi = value_bounds(a, rew, 1.0, eps, "max").q[a.initial_block]
    print(f"{n} refinement passes, {part.n_blocks} blocks: [{lo:.9f}, {hi:.9f}]")
