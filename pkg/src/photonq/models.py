"""
Closed-form photon-statistics models.

Durations are in picoseconds unless noted; count rates are in Hz and
excitation powers in microwatts.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import EmitterRates, PS_PER_S, PhotonqError


# ---------------------------------------------------------------- saturation

@dataclass(frozen=True)
class SaturationParams:
    i_inf: float
    p_sat: float
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if not (self.i_inf > 0 and self.p_sat > 0):
            raise PhotonqError("i_inf and p_sat must be positive")


def saturation_rate(power, params: SaturationParams):
    """Count rate ``I_inf P / (P + P_sat) + b P + c``."""
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise PhotonqError("power must be non-negative")
    out = params.i_inf * p / (p + params.p_sat) + params.b * p + params.c
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- g2 shapes

@dataclass(frozen=True)
class TwoExpG2Params:
    a: float
    b: float
    tau1: float
    tau2: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise PhotonqError("tau1 and tau2 must be positive")

    @property
    def g2_zero(self) -> float:
        return self.b - self.a


def g2_two_exp(tau, params: TwoExpG2Params):
    """``1 - (1 + A) exp(-|tau|/tau1) + B exp(-|tau|/tau2)``."""
    x = np.abs(np.asarray(tau, dtype=float))
    out = 1.0 - (1.0 + params.a) * np.exp(-x / params.tau1) + params.b * np.exp(-x / params.tau2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BackgroundRatio:
    sbr: float

    def __post_init__(self):
        if self.sbr < 0:
            raise PhotonqError("SBR must be non-negative")

    @property
    def sigma(self) -> float:
        return self.sbr / (1.0 + self.sbr)


def _check_sigma(sigma):
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0) or np.any(s > 1):
        raise PhotonqError("sigma must lie in (0, 1]")


def background_correct(g2_raw, sigma):
    """Remove uncorrelated background: ``(g2_raw + sigma^2 - 1) / sigma^2``."""
    _check_sigma(sigma)
    s2 = np.asarray(sigma, dtype=float) ** 2
    out = (np.asarray(g2_raw, dtype=float) + s2 - 1.0) / s2
    return out if out.ndim else float(out)


def background_uncorrect(g2_corrected, sigma):
    """Inverse of :func:`background_correct`: add background to a clean g2."""
    _check_sigma(sigma)
    s2 = np.asarray(sigma, dtype=float) ** 2
    out = s2 * np.asarray(g2_corrected, dtype=float) + 1.0 - s2
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- rate equations

DEGENERACY_GAP = 1e-9


@dataclass(frozen=True)
class RateModelSolution:
    """``rho2(tau) = rho2_inf * (1 + c_plus e^{l_plus tau} + c_minus e^{l_minus tau})``.

    ``kind`` is ``"distinct"`` for two real eigenvalues, ``"degenerate"`` when
    they coincide (then ``rho2 = rho2_inf (1 + (c_plus + c_minus tau) e^{l tau})``)
    and ``"complex"`` for a damped oscillation
    (``rho2 = rho2_inf (1 + e^{Re l tau} (c_plus cos(Im l tau) + c_minus sin(Im l tau)))``).
    Two-level emitters have ``c_minus = 0``.
    """

    lambda_plus: complex
    lambda_minus: complex
    c_plus: float
    c_minus: float
    rho1_inf: float
    rho2_inf: float
    rho3_inf: float
    kind: str = "distinct"

    @property
    def degenerate(self) -> bool:
        return self.kind == "degenerate"

    def g2(self, tau):
        x = np.abs(np.asarray(tau, dtype=float))
        if self.kind == "degenerate":
            lam = self.lambda_plus.real
            out = 1.0 + (self.c_plus + self.c_minus * x) * np.exp(lam * x)
        elif self.kind == "complex":
            mu, om = self.lambda_plus.real, abs(self.lambda_plus.imag)
            out = 1.0 + np.exp(mu * x) * (self.c_plus * np.cos(om * x) + self.c_minus * np.sin(om * x))
        else:
            out = 1.0 + self.c_plus * np.exp(self.lambda_plus.real * x) + self.c_minus * np.exp(self.lambda_minus.real * x)
        return out if out.ndim else float(out)


def solve_rates(k12: float, k21: float, k23: float = 0.0, k31: float = 0.0) -> RateModelSolution:
    """Eigen-solution of the three-level populations from the ground state.

    Population conservation reduces the system to excited and shelved
    populations ``x = (rho2, rho3)`` with ``x' = M x + (k12, 0)`` and
    ``x(0) = 0``.
    """
    if k12 <= 0 or k21 < 0 or k23 < 0 or k31 < 0:
        raise PhotonqError("rates must be non-negative and k12 positive")
    a = k12 + k21 + k23
    if k23 == 0.0:
        # two-level: rho2 = k12/a (1 - e^{-a tau})
        r2 = k12 / a
        return RateModelSolution(complex(-a), complex(-a), -1.0, 0.0, 1.0 - r2, r2, 0.0, "distinct")
    if k31 <= 0:
        raise PhotonqError("shelving without return (k31 = 0) has no steady state")
    det = a * k31 + k12 * k23
    r2 = k12 * k31 / det
    r3 = k12 * k23 / det
    r1 = 1.0 - r2 - r3
    tr = -(a + k31)
    disc = (a - k31) ** 2 - 4.0 * k12 * k23
    slope = k12 / r2  # rho2'(0) / rho2_inf
    if disc > 0:
        sq = math.sqrt(disc)
        lm = 0.5 * (tr - sq)
        # lp from the product of roots avoids cancellation in tr + sq
        lp = det / lm
        gap = abs(lp - lm) / max(abs(lp), abs(lm))
        if gap >= DEGENERACY_GAP:
            cp = (slope + lm) / (lp - lm)
            return RateModelSolution(complex(lp), complex(lm), cp, -1.0 - cp, r1, r2, r3, "distinct")
    if abs(disc) <= (DEGENERACY_GAP * tr) ** 2 or disc > 0:
        lam = 0.5 * tr
        return RateModelSolution(complex(lam), complex(lam), -1.0, slope + lam, r1, r2, r3, "degenerate")
    mu = 0.5 * tr
    om = 0.5 * math.sqrt(-disc)
    return RateModelSolution(complex(mu, om), complex(mu, -om), -1.0, (slope + mu) / om, r1, r2, r3, "complex")


def solve_rate_model(rates: EmitterRates) -> RateModelSolution:
    return solve_rates(rates.k12, rates.k21, rates.k23, rates.k31)


def rate_model_g2(tau, rates: EmitterRates):
    """Normalised ``g2(tau) = rho2(tau) / rho2(inf)`` of the rate-equation model (even in tau)."""
    return solve_rate_model(rates).g2(tau)


# ---------------------------------------------------------------- pulsed Q

def pulsed_q0(eta, g2_0):
    """Q over one pulse period: ``eta (g2(0)/2 - 1)``."""
    return eta * (g2_0 / 2.0 - 1.0)


def efficiency_from_q0(q0, g2_0):
    """Invert :func:`pulsed_q0` for the detection efficiency."""
    return q0 / (g2_0 / 2.0 - 1.0)


@dataclass(frozen=True)
class PulsedQModelParams:
    """Parameters of the shelving model for pulsed Q(k tau_rep).

    ``tau23`` and ``tau31`` are effective shelving/deshelving times of the
    pulsed dynamics. They are not the CW rate-equation lifetimes of
    :class:`EmitterRates` and take very different values.
    """

    eta: float
    tau23: float
    tau31: float
    tau_rep: float

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise PhotonqError("eta must lie in (0, 1]")
        if not (self.tau23 > 0 and self.tau31 > 0 and self.tau_rep > 0):
            raise PhotonqError("lifetimes and tau_rep must be positive")

    @property
    def beta(self) -> float:
        return self.tau_rep * (1.0 / self.tau23 + 1.0 / self.tau31)


def _int_pow(x: float, k: int) -> float:
    """``x**k`` for integer ``k >= 0`` by repeated squaring (valid for negative ``x``)."""
    result = 1.0
    base = x
    while k:
        if k & 1:
            result *= base
        base *= base
        k >>= 1
    return result


def _mean_geometric(r: float, k: int) -> float:
    """``(1/k) sum_{j<k} r**j``, summed directly for small ``k``."""
    if k <= 64:
        total, term = 0.0, 1.0
        for _ in range(k):
            total += term
            term *= r
        return total / k
    return (1.0 - _int_pow(r, k)) / ((1.0 - r) * k)


def _pulsed_q(k: int, eta: float, tau23: float, tau31: float, beta: float) -> float:
    # eta [frac 2(1-b)/b (1 - mean_{j<k}(1-b)^j) - (1 - frac)], free of the frac - 1 cancellation
    shelved = tau23 / (tau23 + tau31)
    bright = tau31 / (tau23 + tau31)
    one_minus = 1.0 - beta
    g = 1.0 - _mean_geometric(one_minus, k)
    return eta * (bright * 2.0 * one_minus / beta * g - shelved)


def pulsed_q_model(k, params: PulsedQModelParams):
    """Q at ``T = k tau_rep`` for an emitter with a shelving state.

    ``Q = eta [ tau31/(tau23+tau31) ((2-b)/b - 2(1-b)/k (1-(1-b)^k)/b^2) - 1 ]``
    with ``b = tau_rep (1/tau23 + 1/tau31)``.
    """
    beta = params.beta
    if beta <= 0:
        raise PhotonqError("beta must be positive")
    if beta >= 2:
        warnings.warn(f"beta = {beta:.3g} >= 2: (1-beta)^k alternates, model validity doubtful", RuntimeWarning)
    ks = np.asarray(k)
    if np.any(ks < 1) or np.any(ks != np.round(ks)):
        raise PhotonqError("k must be a positive integer")
    vals = [_pulsed_q(int(kk), params.eta, params.tau23, params.tau31, beta) for kk in np.ravel(ks)]
    if ks.ndim == 0:
        return vals[0]
    return np.array(vals).reshape(ks.shape)


def pulsed_q_limit(params: PulsedQModelParams) -> float:
    """Large-``k`` limit of :func:`pulsed_q_model` (for 0 < beta < 2)."""
    beta = params.beta
    bright = params.tau31 / (params.tau23 + params.tau31)
    shelved = params.tau23 / (params.tau23 + params.tau31)
    return params.eta * (bright * 2.0 * (1.0 - beta) / beta - shelved)


# ---------------------------------------------------------------- analytic CW Q

@dataclass(frozen=True)
class AnalyticCwQParams:
    """``g2 = 1 - (1+a) e^{-|t|/t1} + a e^{-|t|/t2}`` with mean detected rate ``mean_rate`` (Hz)."""

    a: float
    t1: float
    t2: float
    mean_rate: float

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0 and self.mean_rate > 0):
            raise PhotonqError("t1, t2 and mean_rate must be positive")


def _phi(x):
    """``x - 1 + exp(-x)``, accurate for small ``x``."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs**2 / 2 - xs**3 / 6 + xs**4 / 24 - xs**5 / 120
    return np.where(small, series, np.expm1(-x) + x)


def analytic_cw_q(T, params: AnalyticCwQParams):
    """Closed-form CW Q(T) of a two-exponential g2 with g2(0) = 0.

    ``Q(T) = (2<I>/T) [t1^2 (1+a) - t2^2 a - (t1 (1+a) - t2 a) T
    - t1^2 (1+a) e^{-T/t1} + t2^2 a e^{-T/t2}]``, evaluated in the
    cancellation-free form ``(2<I>/T) [a t2^2 phi(T/t2) - (1+a) t1^2 phi(T/t1)]``
    with ``phi(x) = x - 1 + e^{-x}``.
    """
    t = np.asarray(T, dtype=float)
    if np.any(t <= 0):
        raise PhotonqError("T must be positive")
    p = params
    rate = p.mean_rate / PS_PER_S
    out = (2.0 * rate / t) * (p.a * p.t2**2 * _phi(t / p.t2) - (1.0 + p.a) * p.t1**2 * _phi(t / p.t1))
    return out if out.ndim else float(out)


def analytic_cw_q_limit(params: AnalyticCwQParams) -> float:
    """``T -> inf`` limit ``-2<I>(t1 (1+a) - t2 a)``."""
    p = params
    return -2.0 * p.mean_rate / PS_PER_S * (p.t1 * (1.0 + p.a) - p.t2 * p.a)


def analytic_cw_q_crossing(params: AnalyticCwQParams, lo: float = 1.0, hi: float = 1e9) -> float:
    """Integration time (ps) where the analytic CW Q changes sign."""
    from scipy.optimize import brentq

    f = lambda t: analytic_cw_q(t, params)  # noqa: E731
    if f(lo) * f(hi) > 0:
        raise PhotonqError("no sign change of Q(T) in the search interval")
    return brentq(f, lo, hi, xtol=1e-9, rtol=1e-14)
