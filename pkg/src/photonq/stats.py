"""
Estimators on timestamp streams: Mandel Q(T), photon-number distributions,
coincidence histograms, trigger filtering, lifetime curves and deadtime.

Window statistics are computed from the non-empty windows only, so ``K``
can be as large as 1e8 without allocating a per-window array:
with ``S1 = sum(N)`` and ``S2 = sum(N**2)`` over ``K`` windows,
``Q = S2/S1 - S1/K - 1`` (population variance over mean, minus one).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numba
import numpy as np

from .core import (
    Acquisition,
    InsufficientDataError,
    PhotonqError,
    Pulsed,
    as_sorted_times,
    merge_channels,
    window_occupancy,
)

K_MAX = 10**8


# ---------------------------------------------------------------- Mandel Q

def mandel_q(series, T: int, duration: int, k_max: int = K_MAX, origin: int = 0) -> Tuple[float, int]:
    """Mandel Q of window counts for integration time ``T``.

    Parameters
    ----------
    series : array of int
        Sorted timestamps (ps).
    T : int
        Window length (ps).
    duration : int
        Acquisition length (ps); the trailing partial window is dropped.
    k_max : int
        Upper limit on the number of windows; the first ``k_max`` are used.
    origin : int
        Start of the first window.

    Returns
    -------
    (Q, K)
        Q and the number of windows it was computed from.
    """
    K, _, counts = window_occupancy(series, T, duration, k_max, origin)
    if K < 2:
        raise InsufficientDataError(f"need at least 2 complete windows, got {K}")
    s1 = int(counts.sum())
    if s1 == 0:
        raise InsufficientDataError("insufficient counts: no photons in any window")
    s2 = int(np.dot(counts, counts))
    return s2 / s1 - s1 / K - 1.0, K


@dataclass
class QSeries:
    """Q(T) per acquisition and aggregated over acquisitions.

    ``q`` and ``n_windows`` have shape ``(n_acquisitions, len(t))``.
    ``std`` is the sample standard deviation across acquisitions (NaN when
    there is only one).
    """

    t: np.ndarray
    q: np.ndarray
    n_windows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.n_windows = np.atleast_2d(np.asarray(self.n_windows, dtype=np.int64))
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise PhotonqError("T values must be strictly increasing")

    @property
    def n_acquisitions(self) -> int:
        return self.q.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.q.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        if self.n_acquisitions < 2:
            return np.full(self.t.size, np.nan)
        return self.q.std(axis=0, ddof=1)

    @property
    def sem(self) -> np.ndarray:
        return self.std / math.sqrt(self.n_acquisitions)

    def rows(self):
        for i in range(self.t.size):
            yield (int(self.t[i]), self.mean[i], self.std[i], self.sem[i],
                   self.n_acquisitions, int(self.n_windows[:, i].min()))

    columns = ("T_ps", "Q_mean", "Q_std", "Q_sem", "n_acquisitions", "n_windows")

    def to_dict(self) -> dict:
        return {
            "T_ps": self.t.tolist(),
            "Q": self.q.tolist(),
            "Q_mean": self.mean.tolist(),
            "Q_std": [None if math.isnan(x) else x for x in self.std.tolist()],
            "n_windows": self.n_windows.tolist(),
            "n_acquisitions": self.n_acquisitions,
            "metadata": dict(self.metadata),
        }


def _window_origin(acq: Acquisition, pulsed: bool) -> int:
    return acq.first_trigger() if pulsed else 0


def mandel_q_series(acquisitions: Sequence[Acquisition], t_values: Iterable[int], pulsed: Optional[bool] = None,
                    k_max: int = K_MAX, channels=None) -> QSeries:
    """Q(T) for every acquisition and every ``T``; detector channels are merged.

    In pulsed mode every ``T`` must be a whole number of pulse periods and the
    windows start at the first trigger. ``pulsed=None`` follows the
    acquisitions' excitation mode.
    """
    acqs = list(acquisitions)
    if not acqs:
        raise PhotonqError("no acquisitions given")
    ts = np.unique(np.asarray(list(t_values), dtype=np.int64))
    if ts.size == 0 or ts[0] <= 0:
        raise PhotonqError("T values must be positive")
    q = np.empty((len(acqs), ts.size))
    nw = np.empty((len(acqs), ts.size), dtype=np.int64)
    for i, acq in enumerate(acqs):
        is_pulsed = isinstance(acq.mode, Pulsed) if pulsed is None else pulsed
        if is_pulsed:
            if not isinstance(acq.mode, Pulsed):
                raise PhotonqError("pulsed analysis requested for a CW acquisition")
            bad = ts[ts % acq.mode.tau_rep != 0]
            if bad.size:
                raise PhotonqError(f"T = {int(bad[0])} ps is not a multiple of tau_rep = {acq.mode.tau_rep} ps")
        origin = _window_origin(acq, is_pulsed)
        series = merge_channels(acq, channels)
        for j, T in enumerate(ts):
            q[i, j], nw[i, j] = mandel_q(series, int(T), acq.duration, k_max, origin)
    return QSeries(ts, q, nw)


# ---------------------------------------------------------------- photon number

@dataclass(frozen=True)
class PhotonNumberDistribution:
    T: int
    probabilities: np.ndarray
    mean: float
    std: float
    n_windows: int

    @property
    def poisson_std(self) -> float:
        return math.sqrt(self.mean)


def photon_number_distribution(series, T: int, duration: int, k_max: int = K_MAX,
                               origin: int = 0) -> PhotonNumberDistribution:
    """Empirical P(N) of window counts, with mean and standard deviation."""
    K, _, counts = window_occupancy(series, T, duration, k_max, origin)
    hist = np.bincount(counts, minlength=1).astype(np.int64)
    hist[0] += K - counts.size
    p = hist / K
    s1 = int(counts.sum())
    s2 = int(np.dot(counts, counts))
    mean = s1 / K
    var = max(s2 / K - mean * mean, 0.0)
    return PhotonNumberDistribution(int(T), p, mean, math.sqrt(var), K)


# ---------------------------------------------------------------- coincidences

@numba.njit(cache=True)
def _pair_histogram(a, b, edges, fold):
    nb = edges.size - 1
    counts = np.zeros(nb, dtype=np.int64)
    lo_edge = edges[0]
    hi_edge = edges[-1]
    if fold:
        reach = hi_edge
    else:
        reach = max(abs(lo_edge), abs(hi_edge))
    j0 = 0
    for i in range(a.size):
        ta = a[i]
        while j0 < b.size and b[j0] < ta - reach:
            j0 += 1
        j = j0
        while j < b.size and b[j] <= ta + reach:
            lag = float(b[j] - ta)
            if fold:
                lag = abs(lag)
            if lag >= lo_edge and lag < hi_edge:
                k = np.searchsorted(edges, lag, side="right") - 1
                if k >= 0 and k < nb:
                    counts[k] += 1
            j += 1
    return counts


@dataclass
class CorrelationHistogram:
    """Coincidence counts between two channels versus lag ``t_b - t_a``.

    ``folded`` histograms bin ``|lag|``. ``expected`` is the coincidence count
    of two uncorrelated streams with the same totals, so
    ``normalized = counts / expected`` sits at 1 on the Poisson plateau.
    """

    edges: np.ndarray
    counts: np.ndarray
    n_a: int
    n_b: int
    duration: int
    folded: bool = False

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts)
        if np.any(np.diff(self.edges) <= 0):
            raise PhotonqError("bin edges must be strictly increasing")
        if self.counts.shape != (self.edges.size - 1,):
            raise PhotonqError("counts must have one entry per bin")
        if np.any(self.counts < 0):
            raise PhotonqError("counts must be non-negative")

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        if self.folded and self.edges[0] > 0:
            return np.sqrt(self.edges[:-1] * self.edges[1:])
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def expected(self) -> np.ndarray:
        span = self.widths * (2.0 if self.folded else 1.0)
        return self.n_a * self.n_b * span / self.duration

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.expected

    columns = ("bin_left_ps", "bin_right_ps", "counts", "normalized")

    def rows(self):
        for lo, hi, c, g in zip(self.edges[:-1], self.edges[1:], self.counts, self.normalized):
            yield (lo, hi, c, g)

    def header(self) -> dict:
        return {"n_a": str(self.n_a), "n_b": str(self.n_b), "duration_ps": str(self.duration),
                "folded": str(int(self.folded))}

    @classmethod
    def from_table(cls, header: dict, cols: dict) -> "CorrelationHistogram":
        edges = np.concatenate((cols["bin_left_ps"], cols["bin_right_ps"][-1:]))
        counts = cols["counts"]
        if np.all(counts == np.round(counts)):
            counts = counts.astype(np.int64)
        return cls(edges, counts, int(header["n_a"]), int(header["n_b"]), int(header["duration_ps"]),
                   bool(int(header.get("folded", "0"))))

    def to_dict(self) -> dict:
        return {"edges_ps": self.edges.tolist(), "counts": self.counts.tolist(),
                "n_a": self.n_a, "n_b": self.n_b, "duration_ps": self.duration,
                "folded": self.folded, "normalized": self.normalized.tolist()}


def linear_edges(max_lag: float, width: float) -> np.ndarray:
    """Two-sided edges with bins centred on multiples of ``width``, covering ``[-max_lag, max_lag]``."""
    if width <= 0 or max_lag <= 0:
        raise PhotonqError("max_lag and width must be positive")
    n = int(math.ceil(max_lag / width - 0.5))
    return (np.arange(-n, n + 2) - 0.5) * width


def log_edges(min_lag: float, max_lag: float, n_bins: int) -> np.ndarray:
    if not 0 < min_lag < max_lag:
        raise PhotonqError("need 0 < min_lag < max_lag")
    return np.geomspace(min_lag, max_lag, n_bins + 1)


def g2_histogram_cw(cha, chb, duration: int, max_lag: Optional[float] = None, width: Optional[float] = None,
                    edges=None, log_bins: Optional[int] = None, min_lag: float = 100.0) -> CorrelationHistogram:
    """Coincidence histogram between two detector streams.

    Binning is either explicit ``edges``, linear two-sided (``max_lag`` and
    ``width``), or log-spaced on ``|lag|`` (``max_lag``, ``log_bins`` and
    ``min_lag``). Log-spaced histograms fold negative lags onto positive ones.
    """
    a = as_sorted_times(cha)
    b = as_sorted_times(chb)
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("empty channel")
    if edges is not None:
        e = np.asarray(edges, dtype=float)
        folded = bool(e[0] >= 0)
    elif log_bins is not None:
        e = log_edges(min_lag, max_lag, log_bins)
        folded = True
    else:
        if max_lag is None or width is None:
            raise PhotonqError("give edges, (max_lag, width) or (max_lag, log_bins)")
        e = linear_edges(max_lag, width)
        folded = False
    counts = _pair_histogram(a, b, e, folded)
    return CorrelationHistogram(e, counts, int(a.size), int(b.size), int(duration), folded)


def g2_zero_pulsed(cha, chb, tau_rep: int, half_width: int = 10_000, n_side_peaks: int = 18,
                   duration: Optional[int] = None, triggers=None) -> Tuple[float, float]:
    """g2(0) from coincidence peak areas under pulsed excitation.

    The zero-delay peak area (coincidences with lag in ``[-w, w]``) is
    divided by the mean area of the ``n_side_peaks`` nearest peaks at
    ``k * tau_rep``. The uncertainty is the sample standard deviation of the
    side-peak areas over their mean.
    """
    if triggers is not None and len(triggers) == 0:
        raise PhotonqError("no trigger events")
    if not 0 < half_width < tau_rep / 2:
        raise PhotonqError("peak half-width must lie in (0, tau_rep/2)")
    if n_side_peaks < 2 or n_side_peaks % 2:
        raise PhotonqError("n_side_peaks must be a positive even number")
    a = as_sorted_times(cha)
    b = as_sorted_times(chb)
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("empty channel")
    m = n_side_peaks // 2
    span = duration if duration is not None else int(max(a[-1], b[-1]) - min(a[0], b[0]))
    if m * tau_rep + half_width >= span:
        raise InsufficientDataError(f"fewer than {n_side_peaks} resolvable side peaks")
    ks = np.arange(-m, m + 1)
    # peak windows [k*tau - w, k*tau + w] inclusive in integer ps
    edges = np.empty(2 * ks.size)
    edges[0::2] = ks * tau_rep - half_width
    edges[1::2] = ks * tau_rep + half_width + 1
    areas = _pair_histogram(a, b, edges, False)[0::2].astype(float)
    side = np.delete(areas, m)
    mean_side = side.mean()
    if mean_side == 0:
        raise InsufficientDataError("no coincidences in side peaks")
    return areas[m] / mean_side, side.std(ddof=1) / mean_side


# ---------------------------------------------------------------- trigger-based

def delays_after_trigger(acq: Acquisition, times: np.ndarray) -> np.ndarray:
    """Delay of each time after the most recent trigger (-1 if none precedes it)."""
    trig = acq.trigger_times()
    t = np.asarray(times, dtype=np.int64)
    if trig.size:
        idx = np.searchsorted(trig, t, side="right") - 1
        out = np.where(idx >= 0, t - trig[np.maximum(idx, 0)], -1)
        return out
    if not acq.has_trigger_clock():
        raise PhotonqError("acquisition has no trigger events")
    tau = acq.mode.tau_rep
    rel = t - acq.trigger_offset
    return np.where(rel >= 0, rel % tau, -1)


def trigger_filter(acq: Acquisition, window_start: int, window_width: int) -> Acquisition:
    """Keep detections whose delay after the last trigger lies in ``[start, start + width)``.

    Trigger records, if present, are kept unchanged.
    """
    if not isinstance(acq.mode, Pulsed):
        raise PhotonqError("trigger filtering needs a pulsed acquisition")
    if not acq.trigger_times().size and acq.mode.trigger_channel in acq.channel_set:
        raise PhotonqError("no trigger events")
    if window_start < 0 or window_width < 0 or window_start + window_width > acq.mode.tau_rep:
        raise PhotonqError("filter window must fit within one pulse period")
    is_trig = acq.channels == acq.mode.trigger_channel
    d = delays_after_trigger(acq, acq.times)
    keep = is_trig | ((d >= window_start) & (d < window_start + window_width))
    meta = dict(acq.metadata)
    meta["filter.window_ps"] = f"{int(window_start)}:{int(window_start + window_width)}"
    return acq.replace(channels=acq.channels[keep], times=acq.times[keep], metadata=meta)


@dataclass(frozen=True)
class LifetimeHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    columns = ("bin_left_ps", "bin_right_ps", "counts")

    def rows(self):
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield (int(lo), int(hi), int(c))


def lifetime_histogram(acq: Acquisition, bin_width: int, channels=None) -> LifetimeHistogram:
    """Histogram of detection delays after the most recent trigger over one period."""
    if not isinstance(acq.mode, Pulsed):
        raise PhotonqError("lifetime histogram needs a pulsed acquisition")
    if acq.mode.trigger_channel in acq.channel_set and not acq.trigger_times().size:
        raise PhotonqError("no trigger events")
    if bin_width <= 0:
        raise PhotonqError("bin width must be positive")
    tau = acq.mode.tau_rep
    d = delays_after_trigger(acq, merge_channels(acq, channels))
    d = d[d >= 0]
    nb = int(math.ceil(tau / bin_width))
    edges = np.arange(nb + 1, dtype=np.int64) * int(bin_width)
    counts = np.bincount(d // int(bin_width), minlength=nb)[:nb]
    return LifetimeHistogram(edges, counts.astype(np.int64))


# ---------------------------------------------------------------- deadtime

MIN_DEADTIME_EVENTS = 10_000


def estimate_deadtime(times, bin_width: int = 500, max_gap: Optional[int] = None,
                      smooth: int = 5) -> Tuple[float, float]:
    """Detector deadtime from the rise of the nearest-neighbour gap histogram.

    The plateau is the maximum of a ``smooth``-bin moving average of the
    histogram; the deadtime is the gap at which the raw histogram first
    reaches half the plateau, linearly interpolated between bin centres.
    The uncertainty propagates Poisson errors of the two bracketing bins and
    of the plateau estimate through the interpolation, plus the bin-width
    quantisation (width / sqrt(12)) in quadrature.

    Returns
    -------
    (deadtime_ps, uncertainty_ps)
    """
    t = as_sorted_times(times)
    if t.size < MIN_DEADTIME_EVENTS:
        raise InsufficientDataError(f"insufficient statistics: {t.size} events, need {MIN_DEADTIME_EVENTS}")
    gaps = np.diff(t)
    if max_gap is None:
        max_gap = int(4 * np.median(gaps)) + bin_width
    nb = int(max_gap // bin_width)
    counts = np.bincount(gaps[gaps < nb * bin_width] // bin_width, minlength=nb)[:nb].astype(float)
    kernel = np.ones(smooth) / smooth
    smoothed = np.convolve(counts, kernel, mode="valid")
    plateau = smoothed.max()
    if plateau <= 0:
        raise InsufficientDataError("empty gap histogram")
    half = plateau / 2
    i = int(np.argmax(counts >= half))
    centers = (np.arange(nb) + 0.5) * bin_width
    if i == 0:
        return float(centers[0]), float(bin_width)
    c0, c1 = counts[i - 1], counts[i]
    frac = (half - c0) / (c1 - c0)
    td = centers[i - 1] + frac * bin_width
    # d(td)/d(c0), d(td)/d(c1), d(td)/d(half)
    dc = c1 - c0
    g0 = bin_width * (half - c1) / dc**2
    g1 = -bin_width * (half - c0) / dc**2
    gh = bin_width / dc
    var = g0**2 * c0 + g1**2 * c1 + gh**2 * (plateau / smooth) / 4 + bin_width**2 / 12
    return float(td), float(math.sqrt(var))
