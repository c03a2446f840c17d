"""Optimal counting scheduler of the small CTMDP shipped as fig1.ctmdp.

The maximising scheduler at s0 prefers the slow safe action while much
time is left and switches to the fast action near the end.

Run: python demos/fig1_scheduler.py
"""
from importlib.resources import files

from ctmcbounds.intervalvi import chain_ctmdp, extract_and_validate_scheduler, load_ctmdp

m = load_ctmdp(files("ctmcbounds") / "data" / "fig1.ctmdp")
s0 = m.index_of("s0")
res, revalued = extract_and_validate_scheduler(m, 4.0, 1e-5, "max")
print(f"max value at s0, t=4: {res.q[s0]:.6f} (k={res.k}), scheduler revalued: {revalued[s0]:.6f}")

names = [m.act_name[a] for a in res.scheduler.action[:, s0]]
switch = names.index("alpha") if "alpha" in names else None
print(f"steps 0..{switch - 1 if switch else len(names) - 1} choose {names[0]}; from step {switch} on: {names[-1]}")

two = chain_ctmdp(m, [(3.0, "max"), (1.0, "max")], 1e-5)[-1][s0]
print(f"two phases (3 then 1), re-optimised in between: {two:.6f}")
