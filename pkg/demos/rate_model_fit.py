"""
Three-level fit to g2 at several powers
=======================================

Log-binned coincidence histograms are generated from the rate-equation
g2 at three excitation powers, with Poisson counting noise and an
uncorrelated background, then fitted jointly with the excitation rate
tied to power and the radiative lifetime held fixed.
"""
import numpy as np

from photonq import EmitterRates
from photonq.fit import fit_rate_model
from photonq.models import background_uncorrect, rate_model_g2
from photonq.stats import CorrelationHistogram, log_edges

NS = 1000
rng = np.random.default_rng(0)

powers = [250.0, 540.0, 760.0]
truth = [EmitterRates(415 * NS * 250 / P, 2.7 * NS, 1.93 * NS, 204 * NS) for P in powers]
sigma = 0.962

edges = log_edges(100, 10_000 * NS, 120)  # 100 ps to 10 us
n = 10**7  # counts per detector
duration = 10**14
hists = []
for r in truth:
    empty = CorrelationHistogram(edges, np.zeros(120), n, n, duration, folded=True)
    mean = empty.expected * background_uncorrect(rate_model_g2(empty.centers, r), sigma)
    hists.append(CorrelationHistogram(edges, rng.poisson(mean), n, n, duration, folded=True))

res = fit_rate_model(hists, powers, tau21=2.7 * NS)
print(res.message, f"({res.iterations} iterations)")
print(f"alpha = {res['alpha']:.4g} /(ps uW)")
for P, r, w, s in zip(powers, res.extra["rates"], truth, res.extra["sigma"]):
    print(f"{P:5.0f} uW: tau12 {r.tau12 / NS:6.1f} ns (true {w.tau12 / NS:6.1f}), "
          f"tau23 {r.tau23 / NS:5.2f} ns (1.93), tau31 {r.tau31 / NS:6.1f} ns (204), sigma {s:.3f}")
