"""
Trigger filtering and Q at one pulse period
===========================================

Only detections within a window after each laser pulse are kept. A wide
window keeps nearly every photon and leaves Q(tau_rep) unchanged; narrow
windows throw photons away, and since Q(tau_rep) is minus the mean count
per period it shrinks toward zero.
"""
import numpy as np

from photonq import DetectionChainParams, EmitterRates, Pulsed
from photonq.simulate import detection_chain, simulate_emission_pulsed
from photonq.stats import lifetime_histogram, mandel_q_series, trigger_filter

NS = 1000
S = 10**12
tau_rep = 100 * NS

rates = EmitterRates(100, 2.7 * NS, 2.4 * NS, 420 * NS)
em, _ = simulate_emission_pulsed(rates, tau_rep, 2 * S, seed=5, record_triggers=False)
# no background: every period holds 0 or 1 detections, so Q is exactly -mean
acq = detection_chain(em, DetectionChainParams(2.54e-3), 2 * S, seed=5, mode=Pulsed(tau_rep))

h = lifetime_histogram(acq, 500)
print("delay histogram, first 10 ns:", h.counts[:20].tolist())

raw = mandel_q_series([acq], [tau_rep]).mean[0]
print(f"\nunfiltered Q(tau_rep) = {raw:.3e}")
for w in np.array([0.5, 1, 2, 5, 10, 20, 50]) * NS:
    f = trigger_filter(acq, 0, int(w))
    q = mandel_q_series([f], [tau_rep]).mean[0]
    print(f"width {w / NS:5.1f} ns: kept {len(f):6d}, Q = {q:.3e}, -mean = {-len(f) / (2 * S / tau_rep):.3e}")
