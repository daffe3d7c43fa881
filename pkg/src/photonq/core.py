"""
Domain types and timestamp-stream primitives.

Times are integer picoseconds held in ``int64`` arrays (a 100 s acquisition
is 1e14 ps, far inside the range). Channel 0 is reserved for laser trigger
events; detector channels are 1 and up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

TRIGGER_CHANNEL = 0
MAX_CHANNEL = 255

PS_PER_S = 10**12


class PhotonqError(ValueError):
    """Base error for invalid configuration or data."""


class InsufficientDataError(PhotonqError):
    pass


@dataclass(frozen=True)
class DetectionRecord:
    channel: int
    time: int


@dataclass(frozen=True)
class EmitterRates:
    """Transition lifetimes of a two- or three-level emitter, in picoseconds.

    ``tau23`` and ``tau31`` are both ``None`` for a two-level emitter.
    Rates ``k_ij = 1 / tau_ij`` are exposed as properties (1/ps).
    """

    tau12: float
    tau21: float
    tau23: Optional[float] = None
    tau31: Optional[float] = None

    def __post_init__(self):
        if (self.tau23 is None) != (self.tau31 is None):
            raise PhotonqError("two-level mode needs both tau23 and tau31 absent")
        for name in ("tau12", "tau21", "tau23", "tau31"):
            v = getattr(self, name)
            if v is None:
                continue
            if not (v > 0) or math.isnan(v):
                raise PhotonqError(f"{name} must be positive, got {v!r}")

    @property
    def two_level(self) -> bool:
        return self.tau23 is None

    @property
    def k12(self) -> float:
        return 1.0 / self.tau12

    @property
    def k21(self) -> float:
        return 1.0 / self.tau21

    @property
    def k23(self) -> float:
        return 0.0 if self.tau23 is None else 1.0 / self.tau23

    @property
    def k31(self) -> float:
        return 0.0 if self.tau31 is None else 1.0 / self.tau31

    def without_shelving(self) -> "EmitterRates":
        return EmitterRates(self.tau12, self.tau21)


@dataclass(frozen=True)
class DetectionChainParams:
    """Loss, beamsplitter, deadtime and background of the detection setup.

    ``deadtime`` (ps) and ``background_rate`` (Hz) are either scalars applied
    to both detectors or 2-tuples giving per-detector values.
    """

    efficiency: float = 1.0
    deadtime: Union[int, tuple] = 0
    split_ratio: float = 0.5
    background_rate: Union[float, tuple] = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise PhotonqError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 < self.split_ratio < 1.0:
            raise PhotonqError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        for d in self.deadtimes:
            if d < 0:
                raise PhotonqError("deadtime must be non-negative")
        for b in self.background_rates:
            if b < 0:
                raise PhotonqError("background_rate must be non-negative")

    @staticmethod
    def _pair(v):
        if isinstance(v, (tuple, list)):
            if len(v) != 2:
                raise PhotonqError("per-channel values need exactly two entries")
            return tuple(v)
        return (v, v)

    @property
    def deadtimes(self) -> tuple:
        return tuple(int(round(d)) for d in self._pair(self.deadtime))

    @property
    def background_rates(self) -> tuple:
        return tuple(float(b) for b in self._pair(self.background_rate))


@dataclass(frozen=True)
class CW:
    power_label: Optional[float] = None

    name = "cw"


@dataclass(frozen=True)
class Pulsed:
    tau_rep: int
    trigger_channel: int = TRIGGER_CHANNEL
    power_label: Optional[float] = None

    name = "pulsed"

    def __post_init__(self):
        if self.tau_rep <= 0:
            raise PhotonqError("tau_rep must be positive")


ExcitationMode = Union[CW, Pulsed]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Acquisition:
    """A channel-tagged timestamp stream covering ``[0, duration)``.

    Records are held column-wise in ``channels`` (uint8) and ``times`` (int64)
    and are sorted by time, ties broken by ascending channel id.

    A pulsed acquisition may omit explicit trigger records when the laser
    clock is strictly periodic; trigger-based analyses then fall back on the
    grid ``trigger_offset + i * tau_rep`` (see :meth:`has_trigger_clock`).
    """

    duration: int
    channels: np.ndarray
    times: np.ndarray
    channel_set: tuple = (1, 2)
    mode: ExcitationMode = field(default_factory=CW)
    seed: Optional[int] = None
    trigger_offset: int = 0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        duration = int(self.duration)
        if duration <= 0:
            raise PhotonqError("duration must be positive")
        ch = np.asarray(self.channels)
        t = np.asarray(self.times)
        if ch.shape != t.shape or ch.ndim != 1:
            raise PhotonqError("channels and times must be 1-D arrays of equal length")
        if t.size and (t.min() < 0 or t.max() >= duration):
            raise PhotonqError("record times must lie in [0, duration)")
        if ch.size and (ch.min() < 0 or ch.max() > MAX_CHANNEL):
            raise PhotonqError(f"channel ids must lie in [0, {MAX_CHANNEL}]")
        ch = ch.astype(np.uint8)
        t = t.astype(np.int64)
        if t.size > 1:
            d = np.diff(t)
            unsorted = np.any(d < 0) or np.any((d == 0) & (np.diff(ch.astype(np.int16)) < 0))
            if unsorted:
                order = np.lexsort((ch, t))
                ch, t = ch[order], t[order]
        cset = tuple(sorted(set(int(c) for c in self.channel_set)))
        present = np.unique(ch)
        unknown = [int(c) for c in present if int(c) not in cset]
        if unknown:
            raise PhotonqError(f"records on undeclared channel(s) {unknown}")
        if isinstance(self.mode, Pulsed) and not 0 <= self.trigger_offset < self.mode.tau_rep:
            raise PhotonqError("trigger_offset must lie in [0, tau_rep)")
        object.__setattr__(self, "duration", duration)
        object.__setattr__(self, "channels", _frozen(ch))
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "channel_set", cset)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self):
        return self.times.size

    def __iter__(self):
        for c, t in zip(self.channels.tolist(), self.times.tolist()):
            yield DetectionRecord(c, t)

    @classmethod
    def from_records(cls, records: Iterable, duration: int, **kwargs) -> "Acquisition":
        recs = [(r.channel, r.time) if isinstance(r, DetectionRecord) else tuple(r) for r in records]
        ch = np.array([r[0] for r in recs], dtype=np.int64)
        t = np.array([r[1] for r in recs], dtype=np.int64)
        if "channel_set" not in kwargs:
            kwargs["channel_set"] = tuple(sorted(set(ch.tolist()) | {1, 2}))
        return cls(duration, ch, t, **kwargs)

    @classmethod
    def from_channel_arrays(cls, streams: Mapping[int, np.ndarray], duration: int, **kwargs) -> "Acquisition":
        """Build from ``{channel: times}`` without requiring pre-sorted input."""
        chans = [np.full(len(v), c, dtype=np.uint8) for c, v in streams.items()]
        times = [np.asarray(v, dtype=np.int64) for v in streams.values()]
        ch = np.concatenate(chans) if chans else np.empty(0, np.uint8)
        t = np.concatenate(times) if times else np.empty(0, np.int64)
        order = np.lexsort((ch, t))
        kwargs.setdefault("channel_set", tuple(sorted(set(streams) | {1, 2})))
        return cls(duration, ch[order], t[order], **kwargs)

    @property
    def detector_channels(self) -> tuple:
        trig = self.mode.trigger_channel if isinstance(self.mode, Pulsed) else TRIGGER_CHANNEL
        return tuple(c for c in self.channel_set if c != trig)

    def channel(self, ch: int) -> np.ndarray:
        """Times on a single channel."""
        if ch not in self.channel_set:
            raise PhotonqError(f"unknown channel {ch}")
        return self.times[self.channels == ch]

    def trigger_times(self) -> np.ndarray:
        """Explicit trigger records (empty when the clock is implicit)."""
        if not isinstance(self.mode, Pulsed) or self.mode.trigger_channel not in self.channel_set:
            return np.empty(0, dtype=np.int64)
        return self.channel(self.mode.trigger_channel)

    def has_trigger_clock(self) -> bool:
        """True if trigger timing is known, explicitly or as a periodic grid."""
        return isinstance(self.mode, Pulsed)

    def first_trigger(self) -> int:
        trig = self.trigger_times()
        if trig.size:
            return int(trig[0])
        if isinstance(self.mode, Pulsed):
            return int(self.trigger_offset)
        raise PhotonqError("acquisition has no trigger events")

    def replace(self, **changes) -> "Acquisition":
        kw = dict(duration=self.duration, channels=self.channels, times=self.times,
                  channel_set=self.channel_set, mode=self.mode, seed=self.seed,
                  trigger_offset=self.trigger_offset, metadata=self.metadata)
        kw.update(changes)
        return Acquisition(**kw)

    def equals(self, other: "Acquisition") -> bool:
        return (self.duration == other.duration
                and self.channel_set == other.channel_set
                and self.mode == other.mode
                and self.seed == other.seed
                and self.trigger_offset == other.trigger_offset
                and dict(self.metadata) == dict(other.metadata)
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.times, other.times))


def merge_channels(acq: Acquisition, channels: Optional[Iterable[int]] = None) -> np.ndarray:
    """Sorted times of the selected channels merged into one series.

    By default all detector channels are merged and the trigger channel is
    left out; pass it explicitly in ``channels`` to include it.
    """
    if channels is None:
        chosen = acq.detector_channels
    else:
        chosen = tuple(int(c) for c in channels)
        if not chosen:
            raise PhotonqError("channel selection is empty")
        for c in chosen:
            if c not in acq.channel_set:
                raise PhotonqError(f"unknown channel {c}")
    # records are already time-sorted with channel tie-break, so a mask keeps order
    mask = np.isin(acq.channels, np.array(chosen, dtype=np.uint8))
    return acq.times[mask]


def n_windows(duration: int, T: int, k_max: int = 10**8, origin: int = 0) -> int:
    if T <= 0:
        raise PhotonqError("window length T must be positive")
    if origin < 0:
        raise PhotonqError("origin must be non-negative")
    return int(min(k_max, max(0, (int(duration) - int(origin)) // int(T))))


def window_occupancy(series: np.ndarray, T: int, duration: int, k_max: int = 10**8,
                     origin: int = 0):
    """Sparse window counts: ``(K, window_index, count)`` for non-empty windows.

    Only the first ``K = min(k_max, floor((duration - origin) / T))`` complete
    windows ``[origin + iT, origin + (i+1)T)`` are used.
    """
    T = int(T)
    K = n_windows(duration, T, k_max, origin)
    if K == 0:
        raise InsufficientDataError("insufficient duration: no complete window")
    t = np.asarray(series, dtype=np.int64)
    lo = np.searchsorted(t, origin, side="left")
    hi = np.searchsorted(t, origin + K * T, side="left")
    idx = (t[lo:hi] - origin) // T
    if idx.size == 0:
        return K, np.empty(0, np.int64), np.empty(0, np.int64)
    starts = np.flatnonzero(np.diff(idx)) + 1
    starts = np.concatenate(([0], starts))
    counts = np.diff(np.concatenate((starts, [idx.size])))
    return K, idx[starts], counts


def partition_windows(series: np.ndarray, T: int, duration: int, k_max: int = 10**8,
                      origin: int = 0) -> np.ndarray:
    """Photon count in each complete window of length ``T`` (trailing partial window dropped)."""
    K, widx, counts = window_occupancy(series, T, duration, k_max, origin)
    out = np.zeros(K, dtype=np.int64)
    out[widx] = counts
    return out


_UNITS = {"ps": 1, "ns": 10**3, "us": 10**6, "µs": 10**6, "μs": 10**6, "ms": 10**9, "s": 10**12}


def parse_duration(text: Union[str, int, float]) -> int:
    """Parse ``"80ns"``, ``"1.5 us"``, ``"100s"`` or bare picoseconds into integer ps."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    if isinstance(text, float):
        return int(round(text))
    s = text.strip().replace(" ", "")
    for unit in sorted(_UNITS, key=len, reverse=True):
        if s.endswith(unit):
            num = s[: -len(unit)]
            try:
                return int(round(float(num) * _UNITS[unit]))
            except ValueError:
                break
    try:
        return int(round(float(s)))
    except ValueError:
        raise PhotonqError(f"cannot parse duration {text!r}") from None


def as_sorted_times(values: Sequence) -> np.ndarray:
    t = np.asarray(values, dtype=np.int64)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise PhotonqError("timestamp series must be sorted")
    return t
