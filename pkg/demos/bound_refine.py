"""Bounds on the cluster model as the partition is refined.

Starts from a partition given by two availability predicates and shows the
interval shrinking around the explicit value.

Run: python demos/bound_refine.py [N] [t]
"""
import sys
import time
from importlib.resources import files

from ctmcbounds.abstraction import build_abstraction
from ctmcbounds.explicit import build_explicit, explicit_value
from ctmcbounds.intervalvi import value_bounds
from ctmcbounds.lang import parse_file
from ctmcbounds.partition import initial_partition, refine_step
from ctmcbounds.symbolic import SymbolicModel

n = int(sys.argv[1]) if len(sys.argv) > 1 else 4
t = float(sys.argv[2]) if len(sys.argv) > 2 else 50.0
eps = 1e-6

model = parse_file(files("ctmcbounds") / "data" / "cluster_N.ctmc", {"N": n})
exact = explicit_value(build_explicit(model), t, eps).q[0]
print(f"N={n}, t={t}: explicit value {exact:.6f}")

sym = SymbolicModel(model)
print(f"{sym.count(sym.reach())} reachable states")
p = initial_partition(sym, ["left_n + right_n >= 2", "toleft_n & toright_n & line_n"])
for it in range(30):
    t0 = time.perf_counter()
    a, rew = build_abstraction(sym, p)
    lo = value_bounds(a, rew, t, eps, "min").q[a.initial_block]
    hi = value_bounds(a, rew, t, eps, "max").q[a.initial_block]
    dt = time.perf_counter() - t0
    print(f"pass {it:2d}: {p.n_blocks:5d} blocks  [{lo:.6f}, {hi:.6f}]  width {hi - lo:.2e}  ({dt:.2f} s)")
    q = refine_step(sym, p)
    if q.n_blocks == p.n_blocks:
        print("fixpoint reached")
        break
    p = q
