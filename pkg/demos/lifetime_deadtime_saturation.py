"""
Detector and emitter calibration
================================

Three small calibrations: the radiative lifetime from a delay-after-trigger
histogram, the detector deadtime from the nearest-neighbour gap histogram,
and the saturation curve of count rate versus power.
"""
import numpy as np

from photonq import DetectionChainParams, EmitterRates, Pulsed
from photonq.fit import fit_lifetime, fit_saturation
from photonq.models import SaturationParams, saturation_rate
from photonq.simulate import detection_chain, simulate_emission_cw, simulate_emission_pulsed
from photonq.stats import estimate_deadtime, lifetime_histogram

NS = 1000
S = 10**12

# %% lifetime: two-level emitter, pulsed, with background
rates = EmitterRates(100, 2.7 * NS)
em, _ = simulate_emission_pulsed(rates, 100 * NS, S // 2, seed=1, record_triggers=False)
acq = detection_chain(em, DetectionChainParams(0.02, background_rate=160.0), S // 2, seed=1, mode=Pulsed(100 * NS))
res = fit_lifetime(lifetime_histogram(acq, 100))
print(f"tau21 = {res['tau21'] / NS:.3f} +- {res.error('tau21') / NS:.3f} ns, "
      f"background {res['background']:.2f} counts/bin")

# %% deadtime: a bright CW stream where most gaps are shorter than the deadtime
em = simulate_emission_cw(EmitterRates(100 * NS, 2.7 * NS), S // 20, seed=2)
acq = detection_chain(em, DetectionChainParams(1.0, deadtime=(81_350, 80_350)), S // 20, seed=2)
for ch in (1, 2):
    td, err = estimate_deadtime(acq.channel(ch), bin_width=200)
    print(f"detector {ch}: t_d = {td / NS:.2f} +- {err / NS:.2f} ns")

# %% saturation
rng = np.random.default_rng(3)
P = np.geomspace(10, 5000, 20)
true = SaturationParams(1.2e5, 240.0, b=8.0, c=300.0)
y = saturation_rate(P, true) * (1 + rng.normal(0, 0.02, P.size))
res = fit_saturation(P, y, sigma=0.02 * y)
for name, v, e, u in zip(res.names, res.values, res.stderr, res.units):
    print(f"{name:6s} = {v:10.4g} +- {e:.2g} {u}")
