import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonq.core import Acquisition, DetectionChainParams, EmitterRates, InsufficientDataError, PhotonqError, Pulsed
from photonq.simulate import SimulationConfig, apply_deadtime, simulate
from photonq.stats import (QSeries, estimate_deadtime, g2_histogram_cw, g2_zero_pulsed, lifetime_histogram,
                           linear_edges, log_edges, mandel_q, mandel_q_series, photon_number_distribution,
                           trigger_filter)

from oracles import brute_mandel_q, brute_pair_counts

NS = 1000
S = 10**12
HAND = np.array([5, 15, 25, 95]) * NS


# ---------------------------------------------------------------- Mandel Q

def test_mandel_q_hand_example():
    q, K = mandel_q(HAND, 50 * NS, 100 * NS)
    assert q == -0.5 and K == 2


def test_mandel_q_regular_train():
    t = np.arange(0, 10**6, 1000) + 17
    q, K = mandel_q(t, 1000, 10**6)
    assert q == -1.0 and K == 1000


def test_mandel_q_errors():
    with pytest.raises(InsufficientDataError, match="insufficient counts"):
        mandel_q(np.empty(0, np.int64), 10, 100)
    with pytest.raises(InsufficientDataError):
        mandel_q(np.array([1]), 60, 100)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 99_999), min_size=1, max_size=300), st.integers(1, 20_000), st.integers(0, 500))
def test_mandel_q_matches_brute_force_and_bound(ts, T, origin):
    t = np.sort(np.array(ts, dtype=np.int64))
    duration = 100_000
    K = (duration - origin) // T
    if K < 2:
        return
    inside = t[(t >= origin) & (t < origin + K * T)]
    if inside.size == 0:
        return
    q, k = mandel_q(t, T, duration, origin=origin)
    ref, kref = brute_mandel_q(t, T, duration, origin)
    assert k == kref
    assert q == pytest.approx(ref, rel=1e-9, abs=1e-12)
    assert q >= -1.0 - 1e-12


def test_mandel_q_k_max_uses_first_windows():
    t = np.concatenate([np.arange(0, 1000, 10), [5000, 5001, 5002]])
    q_all, K_all = mandel_q(t, 10, 6000)
    q_cap, K_cap = mandel_q(t, 10, 6000, k_max=100)
    assert K_cap == 100 and K_all == 600
    assert q_cap == -1.0 and q_all != -1.0


# ---------------------------------------------------------------- QSeries

def _acq(times, duration, **kw):
    return Acquisition.from_channel_arrays({1: np.asarray(times)}, duration, **kw)


def test_qseries_single_acquisition_has_no_std():
    qs = mandel_q_series([_acq(HAND, 100 * NS)], [50 * NS])
    assert qs.n_acquisitions == 1
    assert qs.mean[0] == -0.5
    assert math.isnan(qs.std[0])
    assert qs.to_dict()["Q_std"] == [None]


def test_qseries_duplicates_have_zero_std():
    a = _acq(HAND, 100 * NS)
    qs = mandel_q_series([a, a, a], [20 * NS, 50 * NS])
    assert np.all(qs.std == 0)
    assert qs.t.tolist() == [20 * NS, 50 * NS]
    rows = list(qs.rows())
    assert rows[1][:2] == (50 * NS, -0.5)


def test_qseries_rejects_unsorted():
    with pytest.raises(PhotonqError):
        QSeries([2, 1], [[0, 0]], [[1, 1]])


def test_pulsed_q_needs_multiple_of_period():
    a = _acq([5, 150, 260], 1000, mode=Pulsed(100))
    with pytest.raises(PhotonqError, match="not a multiple"):
        mandel_q_series([a], [150])
    with pytest.raises(PhotonqError):
        mandel_q_series([_acq(HAND, 100 * NS)], [50 * NS], pulsed=True)


def test_pulsed_windows_start_at_first_trigger():
    acq = Acquisition.from_channel_arrays({0: np.arange(30, 1000, 100), 1: np.array([40, 45, 140, 240])}, 1000,
                                          mode=Pulsed(100), channel_set=(0, 1, 2))
    qs = mandel_q_series([acq], [100])
    # windows [30,130),[130,230),...: counts 2,1,1,0,...,0 over 9 windows
    counts = np.array([2, 1, 1] + [0] * 6)
    expect = counts.var() / counts.mean() - 1
    assert qs.mean[0] == pytest.approx(expect, rel=1e-12)


def test_bernoulli_identity_on_simulated_pulsed():
    rates = EmitterRates(100, 2.7 * NS, 2.4 * NS, 420 * NS)
    acq = simulate(SimulationConfig(rates, DetectionChainParams(efficiency=0.05), Pulsed(100 * NS), S // 10, seed=3))
    q, K = mandel_q(acq.times[acq.channels != 0], 100 * NS, acq.duration)
    qs = mandel_q_series([acq], [100 * NS])
    mean = (acq.channels != 0).sum() / K
    assert qs.mean[0] == pytest.approx(-mean, rel=1e-10)


# ---------------------------------------------------------------- photon number

def test_pnd_empty_stream():
    p = photon_number_distribution(np.empty(0, np.int64), 10, 100)
    assert p.probabilities.tolist() == [1.0] and p.mean == 0


def test_pnd_regular_train():
    t = np.arange(0, 1000, 10)
    p = photon_number_distribution(t, 10, 1000)
    assert p.probabilities.tolist() == [0.0, 1.0] and p.std == 0


def test_pnd_hand_example():
    p = photon_number_distribution(HAND, 50 * NS, 100 * NS)
    assert p.probabilities.tolist() == [0.0, 0.5, 0.0, 0.5]
    assert p.mean == 2 and p.std == 1 and p.poisson_std == math.sqrt(2)


# ---------------------------------------------------------------- coincidences

def test_g2_single_pair():
    h = g2_histogram_cw([0], [10 * NS], 100 * NS, max_lag=20 * NS, width=1 * NS)
    assert h.counts.sum() == 1
    k = int(np.flatnonzero(h.counts)[0])
    assert h.edges[k] <= 10 * NS < h.edges[k + 1]
    assert h.centers[k] == 10 * NS


def test_g2_swap_mirrors():
    rng = np.random.default_rng(1)
    a = np.sort(rng.integers(0, 10**7, 300))
    b = np.sort(rng.integers(0, 10**7, 300))
    h1 = g2_histogram_cw(a, b, 10**7, max_lag=50_000, width=1000)
    h2 = g2_histogram_cw(b, a, 10**7, max_lag=50_000, width=1000)
    assert np.array_equal(h1.counts, h2.counts[::-1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5000), min_size=1, max_size=40), st.lists(st.integers(0, 5000), min_size=1, max_size=40))
def test_g2_matches_all_pairs(a, b):
    edges = linear_edges(800, 50)
    a, b = sorted(a), sorted(b)
    h = g2_histogram_cw(a, b, 5001, edges=edges)
    assert np.array_equal(h.counts, brute_pair_counts(a, b, edges))


def test_log_bins_fold_both_signs():
    h = g2_histogram_cw([1000], [0, 2000], 3000, max_lag=2000, log_bins=5, min_lag=100)
    assert h.folded and h.counts.sum() == 2
    assert np.allclose(h.edges, log_edges(100, 2000, 5))
    # the expected count spans both signs of lag
    assert np.allclose(h.expected, 1 * 2 * 2 * h.widths / 3000)


def test_poisson_streams_flat_at_one():
    rng = np.random.default_rng(2)
    duration = 10**11
    a = np.sort(rng.integers(0, duration, 200_000))
    b = np.sort(rng.integers(0, duration, 200_000))
    h = g2_histogram_cw(a, b, duration, max_lag=100 * NS, width=2 * NS)
    z = (h.counts - h.expected) / np.sqrt(h.expected)
    assert np.all(np.abs(z) < 5)
    assert abs(h.normalized.mean() - 1) < 0.01


def test_g2_empty_channel():
    with pytest.raises(InsufficientDataError):
        g2_histogram_cw([], [1], 10, max_lag=5, width=1)


# ---------------------------------------------------------------- pulsed g2(0)

def _peaks(zero_pairs, side_pairs, tau=1000, m=9):
    """Channel A fires every period; B fires at offsets giving the requested peak areas."""
    n = 400
    a = np.arange(n) * tau * 100
    b = []
    for i in range(n):
        for k in range(-m, m + 1):
            pairs = zero_pairs if k == 0 else side_pairs
            if i < pairs:
                b.append(a[i] + k * tau)
    return a + 50 * tau, np.sort(np.array(b)) + 50 * tau


def test_g2_zero_equal_peaks_is_one():
    a, b = _peaks(5, 5)
    g, err = g2_zero_pulsed(a, b, 1000, half_width=100)
    assert g == 1.0 and err == 0.0


def test_g2_zero_empty_centre_is_zero():
    a, b = _peaks(0, 5)
    g, _ = g2_zero_pulsed(a, b, 1000, half_width=100)
    assert g == 0.0


def test_g2_zero_parameter_errors():
    a, b = _peaks(1, 1)
    with pytest.raises(PhotonqError):
        g2_zero_pulsed(a, b, 1000, half_width=600)
    with pytest.raises(PhotonqError):
        g2_zero_pulsed(a, b, 1000, half_width=100, n_side_peaks=3)
    with pytest.raises(PhotonqError, match="trigger"):
        g2_zero_pulsed(a, b, 1000, half_width=100, triggers=[])


# ---------------------------------------------------------------- trigger filter & lifetime

def _pulsed_acq(det, trig=(0, 100 * NS), duration=200 * NS):
    return Acquisition.from_channel_arrays({0: np.array(trig), 1: np.array(det)}, duration,
                                           mode=Pulsed(100 * NS), channel_set=(0, 1, 2))


def test_trigger_filter_window():
    acq = _pulsed_acq([8 * NS, 13 * NS, 107 * NS, 119 * NS])
    out = trigger_filter(acq, 7 * NS, 5 * NS)
    assert out.channel(1).tolist() == [8 * NS, 107 * NS]
    assert out.channel(0).tolist() == [0, 100 * NS]
    assert out.metadata["filter.window_ps"] == "7000:12000"
    assert trigger_filter(acq, 7 * NS, 0).channel(1).size == 0


def test_trigger_filter_edges_half_open():
    acq = _pulsed_acq([7 * NS, 12 * NS])
    assert trigger_filter(acq, 7 * NS, 5 * NS).channel(1).tolist() == [7 * NS]


def test_trigger_filter_implicit_clock_matches_explicit():
    rng = np.random.default_rng(3)
    det = np.sort(rng.integers(0, 10**8, 2000))
    explicit = Acquisition.from_channel_arrays({0: np.arange(0, 10**8, 100 * NS), 1: det}, 10**8,
                                               mode=Pulsed(100 * NS), channel_set=(0, 1, 2))
    implicit = Acquisition.from_channel_arrays({1: det}, 10**8, mode=Pulsed(100 * NS))
    a = trigger_filter(explicit, 7 * NS, 5 * NS).channel(1)
    b = trigger_filter(implicit, 7 * NS, 5 * NS).channel(1)
    assert np.array_equal(a, b) and 0 < a.size < det.size


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10**6 - 1), max_size=100), st.integers(0, 99_000), st.integers(0, 50_000))
def test_trigger_filter_idempotent(det, start, width):
    width = min(width, 100_000 - start)
    acq = Acquisition.from_channel_arrays({1: np.array(det, dtype=np.int64)}, 10**6, mode=Pulsed(100_000))
    once = trigger_filter(acq, start, width)
    twice = trigger_filter(once, start, width)
    assert np.array_equal(once.times, twice.times)
    assert len(once) <= len(acq)


def test_trigger_filter_errors():
    with pytest.raises(PhotonqError):
        trigger_filter(_acq(HAND, 100 * NS), 0, 5)
    with pytest.raises(PhotonqError, match="pulse period"):
        trigger_filter(_pulsed_acq([8 * NS]), 98 * NS, 5 * NS)
    no_trig = Acquisition.from_channel_arrays({1: np.array([5])}, 100 * NS, mode=Pulsed(100 * NS),
                                              channel_set=(0, 1, 2))
    with pytest.raises(PhotonqError, match="no trigger"):
        trigger_filter(no_trig, 0, 5)


def test_lifetime_single_detection():
    acq = _pulsed_acq([103 * NS])
    h = lifetime_histogram(acq, 1 * NS)
    assert h.counts.sum() == 1 and h.counts[3] == 1
    assert h.edges[3] == 3 * NS and h.counts.size == 100


def test_lifetime_ignores_detections_before_first_trigger():
    acq = _pulsed_acq([5 * NS, 103 * NS], trig=(50 * NS, 150 * NS))
    h = lifetime_histogram(acq, 1 * NS)
    assert h.counts.sum() == 1 and h.counts[53] == 1


# ---------------------------------------------------------------- deadtime

def test_deadtime_step_stream():
    rng = np.random.default_rng(4)
    gaps = 80 * NS + rng.exponential(200 * NS, 100_000).astype(np.int64)
    t = np.cumsum(gaps)
    td, err = estimate_deadtime(t, bin_width=500)
    assert abs(td - 80 * NS) <= 500
    assert 0 < err < 500


def test_deadtime_on_chain_output():
    rng = np.random.default_rng(5)
    t = np.cumsum(rng.exponential(30 * NS, 400_000).astype(np.int64) + 1)
    kept = apply_deadtime(t, 80 * NS)
    td, err = estimate_deadtime(kept, bin_width=200)
    assert abs(td - 80 * NS) < 500


def test_deadtime_insufficient_statistics():
    with pytest.raises(InsufficientDataError, match="insufficient statistics"):
        estimate_deadtime(np.arange(100) * 1000)
