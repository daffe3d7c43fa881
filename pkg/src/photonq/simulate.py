"""
Kinetic Monte Carlo timestamps for a two- or three-level emitter.

Every excitation attempt is an independent draw: a wait ``Exp(tau12)`` in
the ground state, an excited-state dwell ``min(t21, t23)``, and, when the
shelving branch wins, a stay ``Exp(tau31)`` in the metastable level. Because
attempts are i.i.d., whole blocks of them are drawn at once and placed on
the time axis with a cumulative sum over integer picoseconds.

The detection chain (loss, beamsplitter, background, per-detector deadtime)
draws from its own RNG sub-streams so that switching one stage on or off
leaves the draws of the others untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numba
import numpy as np

from .core import (
    CW,
    PS_PER_S,
    TRIGGER_CHANNEL,
    Acquisition,
    DetectionChainParams,
    EmitterRates,
    ExcitationMode,
    PhotonqError,
    Pulsed,
)

_STREAMS = ("emission", "thinning", "splitting", "background")
_BLOCK = 1 << 21


def rng_streams(seed: int) -> dict:
    """Independent generators for each simulation stage, derived from one seed."""
    if seed < 0 or seed >= 2**64:
        raise PhotonqError("seed must be a 64-bit unsigned integer")
    children = np.random.SeedSequence(int(seed)).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


class Cycles(NamedTuple):
    """A block of excitation attempts.

    ``length`` is the time from the start of the attempt until the emitter is
    back in the ground state; ``emit_delay`` is the emission time relative to
    the start of the attempt, valid where ``radiative`` is set. Both are
    integer picoseconds.
    """

    length: np.ndarray
    emit_delay: np.ndarray
    radiative: np.ndarray


def draw_cycles(rates: EmitterRates, n: int, rng: np.random.Generator) -> Cycles:
    e12 = rng.exponential(rates.tau12, n)
    e21 = rng.exponential(rates.tau21, n)
    if rates.two_level:
        radiative = np.ones(n, dtype=bool)
        dwell = e21
        shelf = 0.0
    else:
        e23 = rng.exponential(rates.tau23, n)
        e31 = rng.exponential(rates.tau31, n)
        radiative = e21 < e23
        dwell = np.minimum(e21, e23)
        shelf = np.where(radiative, 0.0, e31)
    # emission happens at least 1 ps into the attempt so emission times stay strictly increasing
    emit = np.maximum(np.rint(e12 + e21), 1).astype(np.int64)
    length = np.rint(e12 + dwell + shelf).astype(np.int64)
    length = np.where(radiative, emit, length)
    return Cycles(length, emit, radiative)


def _mean_attempt_length(rates: EmitterRates) -> float:
    if rates.two_level:
        return rates.tau12 + rates.tau21
    k = rates.k21 + rates.k23
    return rates.tau12 + 1.0 / k + (rates.k23 / k) * rates.tau31


def _block_size(expected: float) -> int:
    return int(min(_BLOCK, max(1024, 1.05 * expected + 64)))


def simulate_emission_cw(rates: EmitterRates, duration: int, seed: int) -> np.ndarray:
    """Emission times (ps) of a continuously driven emitter on ``[0, duration)``.

    The emitter starts in the ground state at t = 0.
    """
    duration = _check_duration(duration)
    rng = rng_streams(seed)["emission"]
    out = []
    start = 0
    remaining = duration / _mean_attempt_length(rates)
    while start < duration:
        cyc = draw_cycles(rates, _block_size(remaining), rng)
        ends = start + np.cumsum(cyc.length)
        starts = ends - cyc.length
        emissions = (starts + cyc.emit_delay)[cyc.radiative]
        out.append(emissions[emissions < duration])
        start = int(ends[-1])
        remaining = (duration - start) / _mean_attempt_length(rates)
    return np.concatenate(out) if out else np.empty(0, np.int64)


def simulate_emission_pulsed(rates: EmitterRates, tau_rep: int, duration: int, seed: int,
                             record_triggers: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Emission and trigger times (ps) under instantaneous pulses every ``tau_rep``.

    An attempt starts at a pulse; the excitation follows after ``Exp(tau12)``.
    Pulses arriving while the emitter is excited or shelved are lost, and the
    next attempt starts at the first pulse at or after its return to ground.
    With ``record_triggers=False`` the trigger array is not materialised and
    ``None`` is returned in its place.
    """
    duration = _check_duration(duration)
    tau_rep = int(tau_rep)
    if tau_rep <= 0:
        raise PhotonqError("tau_rep must be positive")
    rng = rng_streams(seed)["emission"]
    n_pulses = -(-duration // tau_rep)
    out = []
    pulse = 0
    periods_per_attempt = 1.0 + _mean_attempt_length(rates) / tau_rep
    while pulse < n_pulses:
        cyc = draw_cycles(rates, _block_size((n_pulses - pulse) / periods_per_attempt), rng)
        step = np.maximum(1, -(-cyc.length // tau_rep))
        next_pulse = pulse + np.cumsum(step)
        this_pulse = next_pulse - step
        emissions = (this_pulse * tau_rep + cyc.emit_delay)[cyc.radiative]
        out.append(emissions[emissions < duration])
        pulse = int(next_pulse[-1])
    emissions = np.concatenate(out) if out else np.empty(0, np.int64)
    triggers = np.arange(0, duration, tau_rep, dtype=np.int64) if record_triggers else None
    return emissions, triggers


@numba.njit(cache=True)
def _deadtime_keep(times, deadtime):
    keep = np.zeros(times.size, dtype=np.bool_)
    last = np.int64(0)
    have = False
    for i in range(times.size):
        t = times[i]
        if not have or t - last >= deadtime:
            keep[i] = True
            last = t
            have = True
    return keep


def apply_deadtime(times: np.ndarray, deadtime: int) -> np.ndarray:
    """Drop detections closer than ``deadtime`` to the previous kept detection."""
    t = np.ascontiguousarray(times, dtype=np.int64)
    if deadtime <= 0 or t.size < 2:
        return t.copy()
    return t[_deadtime_keep(t, np.int64(deadtime))]


def _thin(n: int, efficiency: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of survivors when each of ``n`` items is kept with probability ``efficiency``."""
    if efficiency <= 0.0 or n == 0:
        return np.empty(0, np.int64)
    if efficiency >= 1.0:
        return np.arange(n, dtype=np.int64)
    # geometric gaps between survivors: cost scales with the number kept, not with n
    out = []
    pos = -1
    block = int(min(_BLOCK, max(256, 1.1 * n * efficiency + 64)))
    while pos < n:
        gaps = rng.geometric(efficiency, block)
        idx = pos + np.cumsum(gaps)
        out.append(idx[idx < n])
        pos = int(idx[-1])
    return np.concatenate(out)


def poisson_times(rate_hz: float, duration: int, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson event times (ps) on ``[0, duration)``."""
    if rate_hz <= 0:
        return np.empty(0, np.int64)
    n = rng.poisson(rate_hz * duration / PS_PER_S)
    t = np.floor(rng.random(n) * duration).astype(np.int64)
    t.sort()
    return t


def detection_chain(emissions: np.ndarray, chain: DetectionChainParams, duration: int, seed: int,
                    mode: Optional[ExcitationMode] = None, triggers: Optional[np.ndarray] = None,
                    metadata: Optional[dict] = None) -> Acquisition:
    """Turn emission times into a two-detector acquisition.

    Order of operations: keep each emission with probability ``efficiency``;
    send survivors to detector 1 with probability ``split_ratio`` (else 2);
    add homogeneous Poisson background on each detector; then sweep each
    detector in time order dropping events within ``deadtime`` of the last
    kept one. Trigger times, if given, are stored on channel 0.
    """
    duration = _check_duration(duration)
    emissions = np.asarray(emissions, dtype=np.int64)
    streams = rng_streams(seed)
    kept = emissions[_thin(emissions.size, chain.efficiency, streams["thinning"])]
    to_first = streams["splitting"].random(kept.size) < chain.split_ratio
    per_channel = {1: kept[to_first], 2: kept[~to_first]}
    bg_rng = streams["background"]
    for (ch, times), rate, dead in zip(list(per_channel.items()), chain.background_rates, chain.deadtimes):
        bg = poisson_times(rate, duration, bg_rng)
        if bg.size:
            times = np.sort(np.concatenate((times, bg)), kind="stable")
        per_channel[ch] = apply_deadtime(times, dead)
    mode = mode if mode is not None else CW()
    if triggers is not None:
        if not isinstance(mode, Pulsed):
            raise PhotonqError("trigger times given for a CW acquisition")
        per_channel[mode.trigger_channel] = np.asarray(triggers, dtype=np.int64)
    cset = tuple(sorted(set(per_channel) | ({mode.trigger_channel} if triggers is not None else set())))
    return Acquisition.from_channel_arrays(per_channel, duration, channel_set=cset, mode=mode,
                                           seed=seed, metadata=metadata or {})


@dataclass(frozen=True)
class SimulationConfig:
    rates: EmitterRates
    chain: DetectionChainParams = field(default_factory=DetectionChainParams)
    mode: ExcitationMode = field(default_factory=CW)
    duration: int = 10**12
    seed: int = 0
    record_triggers: bool = True

    def __post_init__(self):
        _check_duration(self.duration)
        if not 0 <= self.seed < 2**64:
            raise PhotonqError("seed must be a 64-bit unsigned integer")

    def as_flat(self) -> dict:
        """Flat ``section.key`` mapping (units: ps, Hz, dimensionless)."""
        r, c = self.rates, self.chain
        d = {
            "sim.tau12_ps": r.tau12, "sim.tau21_ps": r.tau21,
            "sim.duration_ps": self.duration, "sim.seed": self.seed,
            "sim.mode": self.mode.name,
            "chain.efficiency": c.efficiency, "chain.split_ratio": c.split_ratio,
            "chain.deadtime_ps": _join(c.deadtimes, str),
            "chain.background_hz": _join(c.background_rates, repr),
        }
        if not r.two_level:
            d["sim.tau23_ps"] = r.tau23
            d["sim.tau31_ps"] = r.tau31
        if isinstance(self.mode, Pulsed):
            d["sim.tau_rep_ps"] = self.mode.tau_rep
            d["sim.record_triggers"] = int(self.record_triggers)
        if self.mode.power_label is not None:
            d["sim.power_uw"] = self.mode.power_label
        return {k: str(v) for k, v in d.items()}

    @classmethod
    def from_flat(cls, flat: dict) -> "SimulationConfig":
        from .core import parse_duration

        def dur(key, default=None):
            if key not in flat:
                if default is None:
                    raise PhotonqError(f"missing config key {key!r}")
                return default
            return parse_duration(flat[key])

        def opt_dur(key):
            return float(parse_duration(flat[key])) if key in flat else None

        def pair(key, conv, default):
            if key not in flat:
                return default
            parts = [conv(p) for p in str(flat[key]).split(",")]
            return parts[0] if len(parts) == 1 else tuple(parts)

        rates = EmitterRates(float(dur("sim.tau12_ps")), float(dur("sim.tau21_ps")),
                             opt_dur("sim.tau23_ps"), opt_dur("sim.tau31_ps"))
        chain = DetectionChainParams(
            efficiency=float(flat.get("chain.efficiency", 1.0)),
            deadtime=pair("chain.deadtime_ps", parse_duration, 0),
            split_ratio=float(flat.get("chain.split_ratio", 0.5)),
            background_rate=pair("chain.background_hz", float, 0.0),
        )
        power = float(flat["sim.power_uw"]) if "sim.power_uw" in flat else None
        mode_name = flat.get("sim.mode", "pulsed" if "sim.tau_rep_ps" in flat else "cw")
        if mode_name == "pulsed":
            mode = Pulsed(dur("sim.tau_rep_ps"), power_label=power)
        elif mode_name == "cw":
            mode = CW(power)
        else:
            raise PhotonqError(f"unknown mode {mode_name!r}")
        return cls(rates, chain, mode, dur("sim.duration_ps"), int(flat.get("sim.seed", 0)),
                   bool(int(flat.get("sim.record_triggers", 1))))


def simulate(config: SimulationConfig, metadata: Optional[dict] = None) -> Acquisition:
    """Emission plus detection chain; the seed fully determines the output."""
    meta = dict(metadata or {})
    if isinstance(config.mode, Pulsed):
        emissions, triggers = simulate_emission_pulsed(config.rates, config.mode.tau_rep, config.duration,
                                                       config.seed, record_triggers=config.record_triggers)
    else:
        emissions, triggers = simulate_emission_cw(config.rates, config.duration, config.seed), None
    return detection_chain(emissions, config.chain, config.duration, config.seed,
                           mode=config.mode, triggers=triggers, metadata=meta)


def _join(pair, fmt) -> str:
    # a shared value is written once so it reads back as a scalar
    return fmt(pair[0]) if pair[0] == pair[1] else ",".join(fmt(x) for x in pair)


def _check_duration(duration) -> int:
    d = int(duration)
    if d <= 0:
        raise PhotonqError("duration must be positive")
    return d
