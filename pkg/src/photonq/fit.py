"""
Damped Gauss-Newton least squares and the model-specific fit drivers.

The minimiser works in an internal coordinate per parameter: the logarithm
for parameters declared positive, the value itself otherwise. Box bounds
are enforced by projecting each trial step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .core import EmitterRates, InsufficientDataError, PhotonqError
from .models import (
    PulsedQModelParams,
    SaturationParams,
    TwoExpG2Params,
    _pulsed_q,
    background_uncorrect,
    g2_two_exp,
    pulsed_q_model,
    saturation_rate,
    solve_rates,
)
from .stats import CorrelationHistogram, LifetimeHistogram, QSeries

MAX_ITER = 500
RSS_RTOL = 1e-10
PARAM_RTOL = 1e-8
FD_STEP = 1e-6
LAMBDA0 = 1e-3
LAMBDA_MAX = 1e16


@dataclass
class FitResult:
    names: List[str]
    values: np.ndarray
    stderr: np.ndarray
    units: List[str]
    rss: float
    initial_rss: float
    converged: bool
    iterations: int
    n_points: int
    message: str = ""
    covariance: Optional[np.ndarray] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    @property
    def params(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return None if math.isnan(x) else x

        return {
            "parameters": [
                {"name": n, "value": num(v), "unit": u, "stderr": num(s)}
                for n, v, u, s in zip(self.names, self.values, self.units, self.stderr)
            ],
            "rss": num(self.rss),
            "initial_rss": num(self.initial_rss),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_points": int(self.n_points),
            "message": self.message,
        }


def _to_internal(p, positive):
    return np.where(positive, np.log(np.where(positive, p, 1.0)), p)


def _to_natural(u, positive):
    with np.errstate(over="ignore", under="ignore"):
        return np.where(positive, np.exp(np.where(positive, u, 0.0)), u)


def least_squares(model: Callable, x, y, p0, weights=None, bounds=None, mask=None,
                  positive=None, names=None, units=None, scale=None,
                  max_iter: int = MAX_ITER) -> FitResult:
    """Minimise ``sum w (model(x, p) - y)^2`` by damped Gauss-Newton.

    Parameters
    ----------
    model : callable
        ``model(x, p) -> predicted y`` for a parameter vector ``p``.
    x, y : array_like
        Data points; ``x`` is passed through to ``model`` untouched.
    p0 : array_like
        Initial guess, inside ``bounds``.
    weights : array_like, optional
        Per-point weights (inverse variances); uniform if omitted.
    bounds : (lower, upper), optional
        Box bounds in natural units.
    mask : array of bool, optional
        True for points to exclude from the fit.
    positive : array of bool, optional
        Parameters fitted in log space (must start positive).
    scale : array_like, optional
        Typical magnitude of each non-log parameter, used for the
        finite-difference step.

    Notes
    -----
    The damping ``lam`` on ``diag(J^T J)`` starts at 1e-3, is divided by 10
    after an accepted step and multiplied by 10 after a rejected one.
    Iteration stops when an accepted step changes the residual sum of squares
    by less than 1e-10 (relative) or the parameters by less than 1e-8
    (relative), or after ``max_iter`` iterations. Derivatives are central
    differences with relative step 1e-6. Standard errors come from
    ``(J^T W J)^-1`` scaled by the reduced chi-square; parameters along a
    numerically flat direction get NaN.
    """
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    npar = p0.size
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    use = np.isfinite(y) & (w > 0)
    if mask is not None:
        use &= ~np.asarray(mask, dtype=bool)
    sw = np.sqrt(np.where(use, w, 0.0))
    n_used = int(use.sum())
    if n_used < npar:
        raise InsufficientDataError(f"{n_used} usable points for {npar} parameters")
    positive = np.zeros(npar, bool) if positive is None else np.asarray(positive, bool)
    if np.any(p0[positive] <= 0):
        raise PhotonqError("log-space parameters need a positive initial value")
    lo, hi = (np.full(npar, -np.inf), np.full(npar, np.inf)) if bounds is None else map(
        lambda b: np.asarray(b, dtype=float), bounds)
    if np.any(p0 < lo) or np.any(p0 > hi):
        raise PhotonqError("initial guess outside bounds")
    with np.errstate(divide="ignore"):
        ulo = np.where(positive, np.log(np.maximum(lo, 0.0)), lo)
        uhi = np.where(positive, np.log(hi), hi)
    scale = np.ones(npar) if scale is None else np.asarray(scale, dtype=float)
    names = list(names) if names is not None else [f"p{i}" for i in range(npar)]
    units = list(units) if units is not None else [""] * npar

    def residual(u):
        pred = np.asarray(model(x, _to_natural(u, positive)), dtype=float)
        r = sw * (pred - y)
        r[~use] = 0.0
        return r

    def jacobian(u):
        J = np.empty((y.size, npar))
        for i in range(npar):
            h = FD_STEP * (max(abs(u[i]), 1.0) if positive[i] else max(abs(u[i]), scale[i]))
            up, dn = u.copy(), u.copy()
            up[i] = min(u[i] + h, uhi[i])
            dn[i] = max(u[i] - h, ulo[i])
            J[:, i] = (residual(up) - residual(dn)) / (up[i] - dn[i])
        return J

    u = _to_internal(p0, positive)
    r = residual(u)
    rss = float(r @ r)
    if not np.isfinite(rss):
        raise PhotonqError("model is not finite at the initial guess")
    rss0 = rss
    lam = LAMBDA0
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < max_iter:
        it += 1
        if rss == 0.0:
            converged, message = True, "exact fit"
            break
        with np.errstate(all="ignore"):
            J = jacobian(u)
        A = J.T @ J
        g = J.T @ r
        d = np.diag(A).copy()
        d[d <= 0] = 1.0
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            u_new = np.clip(u + step, ulo, uhi)
            try:
                with np.errstate(all="ignore"):
                    r_new = residual(u_new)
                rss_new = float(r_new @ r_new)
            except (PhotonqError, FloatingPointError, ZeroDivisionError):
                rss_new = np.inf  # trial left the model's domain
            if np.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged, message = True, "no further descent at numerical precision"
            break
        drss = (rss - rss_new) / rss
        dpar = np.max(np.abs(u_new - u) / np.maximum(np.abs(u), 1e-300))
        u, r, rss = u_new, r_new, rss_new
        lam = max(lam / 10, 1e-300)
        if drss < RSS_RTOL or dpar < PARAM_RTOL:
            converged, message = True, "converged"
            break

    p = _to_natural(u, positive)
    stderr, cov = _standard_errors(jacobian(u), rss, n_used, p, positive)
    if np.any(np.isnan(stderr)):
        message += "; curvature singular for some parameters, their errors are unavailable"
    return FitResult(names, p, stderr, units, rss, rss0, converged, it, n_used, message, cov)


def _standard_errors(J, rss, n, p, positive):
    npar = p.size
    dof = n - npar
    A = J.T @ J
    s = np.sqrt(np.diag(A))
    s[s == 0] = 1.0
    An = A / np.outer(s, s)
    evals, evecs = np.linalg.eigh(An)
    tol = max(evals.max(), 0.0) * 1e-12 if evals.size else 0.0
    good = evals > tol
    inv = (evecs[:, good] / evals[good]) @ evecs[:, good].T
    cov_u = inv / np.outer(s, s)
    s2 = rss / dof if dof > 0 else np.nan
    cov_u = cov_u * s2
    jac = np.where(positive, p, 1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        cov = cov_u * np.outer(jac, jac)
    se = np.sqrt(np.abs(np.diag(cov)))
    if not np.all(good):
        flat = np.abs(evecs[:, ~good]).max(axis=1) > 1e-3
        se[flat] = np.nan
    return se, cov


# ---------------------------------------------------------------- lifetime

def fit_lifetime(hist: LifetimeHistogram, tail_start=None) -> FitResult:
    """Fit ``amplitude exp(-(t - t_peak)/tau21) + background`` after the peak.

    Times are bin centres (ps); the fit runs from the peak bin (or
    ``tail_start``) to the end of the histogram with Poisson weights.
    """
    counts = np.asarray(hist.counts, dtype=float)
    t = hist.centers.astype(float)
    if counts.sum() == 0:
        raise InsufficientDataError("peak not identifiable: empty histogram")
    ip = int(np.argmax(counts)) if tail_start is None else int(np.searchsorted(t, tail_start))
    if counts.size - ip < 8:
        raise InsufficientDataError("peak not identifiable: too few bins after the peak")
    x = t[ip:] - t[ip]
    y = counts[ip:]
    tail = y[int(0.8 * y.size):]
    bg0 = float(np.median(tail))
    amp0 = max(y[0] - bg0, 1.0)
    # seed from the log-slope over the first e-folds above background
    sig = y - bg0
    sel = sig > 0.05 * amp0
    stop = np.argmin(sel) if not sel.all() else sel.size
    n_fit = max(int(stop), 3)
    xs, ys = x[:n_fit], np.log(np.maximum(sig[:n_fit], 0.5))
    slope = np.polyfit(xs, ys, 1)[0] if n_fit >= 2 else -1.0 / max(x[-1], 1.0)
    tau0 = -1.0 / slope if slope < 0 else x[-1] / 5
    tau0 = float(np.clip(tau0, hist.edges[1] - hist.edges[0], x[-1] if x[-1] > 0 else 1.0))

    def model(xx, p):
        return p[0] * np.exp(-xx / p[1]) + p[2]

    kw = dict(positive=[True, True, False], names=["amplitude", "tau21", "background"],
              units=["counts/bin", "ps", "counts/bin"], scale=[1.0, 1.0, max(bg0, 1.0)])
    res = least_squares(model, x, y, [amp0, tau0, bg0], weights=1.0 / np.maximum(y, 1.0), **kw)
    # refit with variances from the first-pass model; observed-count
    # weights pull sparse tails low
    for _ in range(2):
        var = np.maximum(model(x, res.values), 1.0)
        res = least_squares(model, x, y, res.values, weights=1.0 / var, **kw)
    res.extra["t_peak"] = float(t[ip])
    return res


# ---------------------------------------------------------------- two-exponential g2

def _exclusion_mask(lags, exclude):
    mask = np.zeros(lags.size, bool)
    for lo, hi in exclude or ():
        mask |= (np.abs(lags) >= lo) & (np.abs(lags) <= hi)
    return mask


def _histogram_weights(hist: CorrelationHistogram):
    # variance of counts/expected taken as 1/expected (g2 ~ 1); using the
    # observed counts instead biases sparse bins low
    return np.full(hist.counts.shape, float(hist.expected)) if np.ndim(hist.expected) == 0 \
        else np.asarray(hist.expected, dtype=float)


def _two_exp_guess(x, y):
    ax = np.abs(x)
    order = np.argsort(ax)
    ax, ys = ax[order], y[order]
    ymin = float(np.min(ys[: max(3, ys.size // 10)]))
    peak = float(ys.max())
    b0 = max(peak - 1.0, 0.0)
    a0 = b0 - ymin  # model value at zero lag is B - A
    level = 0.5 * (ymin + 1.0 + b0)
    above = np.flatnonzero(ys >= level)
    t_half = ax[above[0]] if above.size else ax[ys.size // 4]
    tau1 = max(t_half / math.log(2), 1.0)
    tau2 = 50 * tau1
    if b0 > 0:
        ip = int(np.argmax(ys))
        tail = (ys > 1.0) & (np.arange(ys.size) >= ip)
        tx, ty = ax[tail], np.log(ys[tail] - 1.0)
        if tx.size >= 3:
            slope = np.polyfit(tx, ty, 1)[0]
            if slope < 0:
                tau2 = -1.0 / slope
    tau2 = max(tau2, 2 * tau1)
    return [a0, b0, tau1, tau2]


def fit_g2_two_exp(hist, exclude=None, p0=None) -> FitResult:
    """Fit the two-exponential g2 to a normalized coincidence histogram.

    Parameters
    ----------
    hist : CorrelationHistogram or tuple
        A histogram (weights from its expected counts) or plain
        ``(lag, g2)`` / ``(lag, g2, sigma)`` arrays.
    exclude : list of (lo, hi), optional
        Ranges of ``|lag|`` (ps) to drop, e.g. reflection peaks.

    The implied ``g2(0) = B - A`` and its error are in ``result.extra``.
    """
    if isinstance(hist, CorrelationHistogram):
        x = hist.centers
        y = hist.normalized
        w = _histogram_weights(hist)
    else:
        x, y = (np.asarray(a, dtype=float) for a in hist[:2])
        w = 1.0 / np.asarray(hist[2], dtype=float) ** 2 if len(hist) > 2 else None
    mask = _exclusion_mask(x, exclude)
    if int((~mask).sum()) < 8:
        raise InsufficientDataError("fewer than 8 usable bins")
    # time constants far outside the sampled lags are unidentifiable; with
    # B near 0 tau2 would otherwise drift to 0 or infinity
    ax = np.abs(x[~mask])
    t_lo = 0.1 * float(ax[ax > 0].min()) if np.any(ax > 0) else 1e-3
    t_hi = 10.0 * float(ax.max())
    p0 = _two_exp_guess(x[~mask], y[~mask]) if p0 is None else list(p0)
    p0[2:] = [min(max(float(t), t_lo), t_hi) for t in p0[2:]]

    def model(xx, p):
        return g2_two_exp(xx, TwoExpG2Params(p[0], p[1], p[2], p[3]))

    res = least_squares(model, x, y, p0, weights=w, mask=mask,
                        bounds=([-np.inf, -np.inf, t_lo, t_lo], [np.inf, np.inf, t_hi, t_hi]),
                        positive=[False, False, True, True], names=["A", "B", "tau1", "tau2"],
                        units=["", "", "ps", "ps"])
    v = res.values
    res.extra["params"] = TwoExpG2Params(*map(float, v))
    cov = res.covariance
    g0_err = math.sqrt(max(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1], 0.0)) if cov is not None else math.nan
    res.extra["g2_zero"] = float(v[1] - v[0])
    res.extra["g2_zero_stderr"] = g0_err
    return res


# ---------------------------------------------------------------- rate model

def _rate_guess(hist: CorrelationHistogram, k21: float):
    two = fit_g2_two_exp(hist)
    a_raw, b_raw, tau1, tau2 = two.values
    sigma = math.sqrt(min(max(1.0 - (b_raw - a_raw), 0.09), 1.0))
    bunch = max(b_raw / sigma**2, 1e-3)
    k31 = 1.0 / (tau2 * (1.0 + bunch))
    if not (math.isfinite(k31) and k31 > 0):
        k31 = 0.01 * k21
    k23 = 1.0 / tau1 - k21
    if k23 <= 0:
        k23 = 0.1 * k21
    frac = k23 / (k21 + k23)
    k12 = bunch * k31 / frac
    return k12, k23, k31, sigma


def fit_rate_model(hists: Sequence[CorrelationHistogram], powers: Sequence[float], tau21: float,
                   initial: Optional[Sequence[EmitterRates]] = None, sigma0=None, exclude=None) -> FitResult:
    """Joint three-level fit of g2 histograms measured at several powers.

    The excitation rate is tied to power, ``k12 = alpha * P``, with one
    shared ``alpha``; ``tau21`` is held fixed. Each power has its own
    ``k23``, ``tau31`` and background factor ``sigma``, and its model is the
    rate-equation g2 with background added back (``sigma^2 g + 1 - sigma^2``).
    ``k23`` is fitted linearly with a lower bound of 0 so a vanishing
    shelving rate stays testable.

    ``result.extra`` holds per-power ``EmitterRates`` (``"rates"``), the
    ``sigma`` values and ``alpha`` (1/(ps uW)).
    """
    hists = list(hists)
    powers = np.asarray(powers, dtype=float)
    if len(hists) != powers.size or not hists:
        raise PhotonqError("need one histogram per power")
    if np.any(powers <= 0):
        raise PhotonqError("powers must be positive")
    k21 = 1.0 / tau21
    m = len(hists)
    guesses = []
    for i, h in enumerate(hists):
        if initial is not None:
            r = initial[i]
            s0 = sigma0[i] if sigma0 is not None else 0.9
            guesses.append((r.k12, r.k23, r.k31, s0))
        else:
            guesses.append(_rate_guess(h, k21))
    alpha0 = float(np.median([g[0] / p for g, p in zip(guesses, powers)]))
    # internal layout: alpha, then (k23 [1/ns], tau31, sigma) per power
    p0 = [alpha0]
    # tau31 far beyond the histogram span is unidentifiable, and a return
    # faster than tau21 is indistinguishable from extra non-radiative decay
    t31_max = 1e4 * max(float(np.max(h.edges)) for h in hists)
    t31_min = float(tau21)
    for k12, k23, k31, s in guesses:
        p0 += [k23 * 1e3, min(max(1.0 / k31, t31_min), t31_max), min(max(s, 1e-6), 1.0)]
    positive = [True] + [False, True, False] * m
    lower = [alpha0 * 1e-3] + [0.0, t31_min, 1e-6] * m
    upper = [alpha0 * 1e3] + [np.inf, t31_max, 1.0] * m

    xs = [h.centers for h in hists]
    ys = [h.normalized for h in hists]
    ws = [_histogram_weights(h) for h in hists]
    masks = [_exclusion_mask(xx, exclude) for xx in xs]
    sizes = [xx.size for xx in xs]
    x_all = np.concatenate(xs)
    splits = np.cumsum(sizes)[:-1]

    def model(_, p):
        out = []
        for i, xx in enumerate(np.split(x_all, splits)):
            k23 = p[1 + 3 * i] * 1e-3
            k31 = 1.0 / p[2 + 3 * i]
            sol = solve_rates(p[0] * powers[i], k21, k23, k31)
            out.append(background_uncorrect(sol.g2(xx), p[3 + 3 * i]))
        return np.concatenate(out)

    names = ["alpha"]
    units = ["1/(ps*uW)"]
    for P in powers:
        lab = f"{P:g}"
        names += [f"k23[{lab}]", f"tau31[{lab}]", f"sigma[{lab}]"]
        units += ["1/ns", "ps", ""]
    res = least_squares(model, x_all, np.concatenate(ys), p0, weights=np.concatenate(ws),
                        mask=np.concatenate(masks), bounds=(lower, upper), positive=positive,
                        names=names, units=units)
    if m == 1:
        res.stderr[0] = np.nan
        res.message += "; single power: alpha error unavailable"
    v = res.values
    rates, sigmas = [], []
    for i, P in enumerate(powers):
        k23 = v[1 + 3 * i] * 1e-3
        tau23 = 1.0 / k23 if k23 > 0 else None
        tau31 = float(v[2 + 3 * i])
        if tau23 is None:
            rates.append(EmitterRates(float(1.0 / (v[0] * P)), tau21))
        else:
            rates.append(EmitterRates(float(1.0 / (v[0] * P)), tau21, float(tau23), tau31))
        sigmas.append(float(v[3 + 3 * i]))
    res.extra.update(rates=rates, sigma=sigmas, alpha=float(v[0]))
    return res


# ---------------------------------------------------------------- pulsed Q

def _pulsed_grid_guess(k, y, tau_rep):
    grid = np.geomspace(0.1 * tau_rep, 1000 * tau_rep, 41)
    best = None
    for t23 in grid:
        for t31 in grid:
            beta = tau_rep * (1 / t23 + 1 / t31)
            if beta >= 2:
                continue
            f = np.array([_pulsed_q(int(kk), 1.0, t23, t31, beta) for kk in k])
            ff = f @ f
            if ff == 0:
                continue
            eta = (f @ y) / ff
            if not 0 < eta <= 1:
                continue
            r = eta * f - y
            rss = r @ r
            if best is None or rss < best[0]:
                best = (rss, eta, t23, t31)
    if best is None:
        return [1e-3, tau_rep, 10 * tau_rep]
    return list(best[1:])


def fit_pulsed_q(series, tau_rep: float, p0=None) -> FitResult:
    """Fit the pulsed shelving model to Q at ``T = k tau_rep``.

    ``series`` is a :class:`QSeries` or a ``(T, Q)`` pair. Uniform weights.
    Data without any negative Q carry no antibunching to anchor the model
    and the result is flagged as not converged.
    """
    if isinstance(series, QSeries):
        t, q = series.t.astype(float), series.mean
    else:
        t, q = (np.asarray(a, dtype=float) for a in series)
    k = t / tau_rep
    if np.any(np.abs(k - np.round(k)) > 1e-9) or np.any(k < 1):
        raise PhotonqError("T values must be positive multiples of tau_rep")
    k = np.round(k).astype(np.int64)
    if p0 is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p0 = _pulsed_grid_guess(k, q, tau_rep)

    def model(kk, p):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return pulsed_q_model(kk, PulsedQModelParams(min(p[0], 1.0), p[1], p[2], tau_rep))

    res = least_squares(model, k, q, p0, positive=[True, True, True],
                        bounds=([0, 0, 0], [1.0, np.inf, np.inf]),
                        names=["eta", "tau23", "tau31"], units=["", "ps", "ps"])
    if not np.any(q < 0):
        res.converged = False
        res.message = "no negative Q values: shelving model not identifiable; " + res.message
    res.extra["params"] = PulsedQModelParams(float(min(res.values[0], 1.0)), float(res.values[1]),
                                             float(res.values[2]), float(tau_rep))
    return res


# ---------------------------------------------------------------- saturation

def fit_saturation(power, rate, sigma=None) -> FitResult:
    """Fit ``I_inf P / (P + P_sat) + b P + c`` to count rate versus power."""
    P = np.asarray(power, dtype=float)
    y = np.asarray(rate, dtype=float)
    if P.size < 4:
        raise InsufficientDataError("need at least 4 points")
    if np.ptp(y) == 0:
        raise PhotonqError("degenerate data: all rates equal")
    best = None
    for ps in np.geomspace(P[P > 0].min() / 10 if np.any(P > 0) else 1.0, P.max() * 10, 200):
        X = np.column_stack((P / (P + ps), P, np.ones_like(P)))
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        if coef[0] <= 0:
            continue
        r = X @ coef - y
        rss = r @ r
        if best is None or rss < best[0]:
            best = (rss, coef, ps)
    if best is None:
        p0 = [max(y.max(), 1.0), float(np.median(P[P > 0])), 0.0, float(y.min())]
    else:
        p0 = [best[1][0], best[2], best[1][1], best[1][2]]
    w = None if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2

    def model(pp, p):
        return saturation_rate(pp, SaturationParams(p[0], p[1], p[2], p[3]))

    res = least_squares(model, P, y, p0, weights=w, positive=[True, True, False, False],
                        names=["i_inf", "p_sat", "b", "c"], units=["Hz", "uW", "Hz/uW", "Hz"],
                        scale=[1.0, 1.0, max(abs(p0[2]), 1e-3 * abs(p0[0]) / max(P.max(), 1e-300)), max(abs(p0[3]), 1e-3 * abs(p0[0]))])
    res.extra["params"] = SaturationParams(*map(float, res.values))
    return res
