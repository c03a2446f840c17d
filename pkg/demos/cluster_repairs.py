"""Expected number of repairs in the workstation cluster, explicit engine.

Run: python demos/cluster_repairs.py [N] [t]
"""
import sys
import time
from importlib.resources import files

from ctmcbounds.explicit import build_explicit, explicit_value
from ctmcbounds.lang import parse_file

n = int(sys.argv[1]) if len(sys.argv) > 1 else 8
t = float(sys.argv[2]) if len(sys.argv) > 2 else 500.0

t0 = time.perf_counter()
c = build_explicit(parse_file(files("ctmcbounds") / "data" / "cluster_N.ctmc", {"N": n}))
t1 = time.perf_counter()
res = explicit_value(c, t, 1e-4)
t2 = time.perf_counter()
print(f"N={n}: {c.n} states, lambda={c.lam:.4g}, k={res.k}")
print(f"expected repairs within t={t}: {res.q[0]:.5f}")
print(f"explore {t1 - t0:.2f} s, iterate {t2 - t1:.2f} s")
