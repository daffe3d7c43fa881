"""
Where does Q(T) change sign?
============================

For a two-exponential g2 with full antibunching at zero delay, Q(T) has a
closed form. With a bunching amplitude of 0.3 the antibunching dip
wins at short T and bunching wins beyond a crossover time.
"""
import numpy as np

from photonq.models import AnalyticCwQParams, analytic_cw_q, analytic_cw_q_crossing, analytic_cw_q_limit

NS = 1000

p = AnalyticCwQParams(a=0.3, t1=2.7 * NS, t2=200 * NS, mean_rate=34e3)

for T in np.geomspace(0.1 * NS, 100_000 * NS, 13):
    print(f"T = {T / NS:10.1f} ns   Q = {analytic_cw_q(T, p):+.4e}")

print(f"\ncrossover {analytic_cw_q_crossing(p) / NS:.2f} ns, large-T limit {analytic_cw_q_limit(p):.4e}")

# sweep the bunching amplitude: weaker bunching pushes the crossover out
for a in (0.05, 0.1, 0.3, 1.0):
    q = AnalyticCwQParams(a, 2.7 * NS, 200 * NS, 34e3)
    print(f"a = {a:4.2f}: crossover {analytic_cw_q_crossing(q) / NS:8.2f} ns")
