"""
Command-line entry point: ``photonq <subcommand> ...``.

Every output table carries ``# key=value`` header lines with the toolkit
version and the fully resolved options of the run, so a file documents how
it was made. Outputs are written atomically and contain nothing that varies
between identical invocations.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit did not converge.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .core import Acquisition, EmitterRates, PhotonqError, Pulsed, merge_channels, parse_duration
from .io import FormatError, read_acquisition, read_table, write_acquisition, write_json, write_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOCONV = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- parsing helpers

def duration_arg(text: str) -> int:
    try:
        return parse_duration(text)
    except PhotonqError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _split_unit(text: str):
    s = text.strip()
    i = len(s)
    while i and not (s[i - 1].isdigit() or s[i - 1] == "."):
        i -= 1
    return s[:i], s[i:]


def parse_window(text: str):
    """``"7:12ns"`` or ``"7ns:12ns"`` -> (start_ps, width_ps); a trailing unit applies to both ends."""
    if text.count(":") != 1:
        raise argparse.ArgumentTypeError(f"window must look like START:END[unit], got {text!r}")
    lo, hi = text.split(":")
    _, unit_hi = _split_unit(hi)
    _, unit_lo = _split_unit(lo)
    if not unit_lo and unit_hi:
        lo = lo + unit_hi
    start, end = duration_arg(lo), duration_arg(hi)
    if end < start:
        raise argparse.ArgumentTypeError(f"window end before start in {text!r}")
    return start, end - start


def duration_list(text: str) -> List[int]:
    """Comma list of durations, or ``lo:hi:n`` for n log-spaced values (``lo:hi:nlin`` for linear)."""
    if text.count(":") == 2:
        lo, hi, n = text.split(":")
        lo_ps, hi_ps = duration_arg(lo), duration_arg(hi)
        linear = n.endswith("lin")
        count = int(n[:-3] if linear else n)
        if count < 1 or lo_ps <= 0 or hi_ps < lo_ps:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        vals = np.linspace(lo_ps, hi_ps, count) if linear else np.geomspace(lo_ps, hi_ps, count)
        return sorted(set(int(round(v)) for v in vals))
    out = [duration_arg(p) for p in text.split(",") if p.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def int_list(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def float_list(text: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def read_flat_config(path) -> Dict[str, str]:
    """``key=value`` lines; ``#`` lines may carry ``# key=value`` too (as written in output headers).

    Reading stops at the first line that is neither, so the header of a
    simulated timestamp file works as a config file.
    """
    out: Dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                s = s[1:].strip()
                if "=" not in s:
                    continue
            elif "=" not in s:
                break
            s = s.split("#", 1)[0]  # trailing comment, e.g. a unit note
            k, v = s.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _key_values(items: Optional[Sequence[str]]) -> Dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_header(command: str, options: Dict[str, object]) -> Dict[str, str]:
    h = {"photonq_version": __version__, "command": command}
    for k, v in options.items():
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        h[k] = str(v)
    return h


def _load(path) -> Acquisition:
    return read_acquisition(path)


def _check_output(args):
    for p in [getattr(args, "input", None)] + list(getattr(args, "inputs", None) or []):
        if p is not None and args.output is not None and Path(p).resolve() == Path(args.output).resolve():
            raise UsageError("output would overwrite an input file")


# ---------------------------------------------------------------- simulate

_SIM_FLAGS = {
    "tau12": "sim.tau12_ps", "tau21": "sim.tau21_ps", "tau23": "sim.tau23_ps", "tau31": "sim.tau31_ps",
    "duration": "sim.duration_ps", "seed": "sim.seed", "mode": "sim.mode", "tau_rep": "sim.tau_rep_ps",
    "power": "sim.power_uw", "efficiency": "chain.efficiency", "split_ratio": "chain.split_ratio",
    "deadtime": "chain.deadtime_ps", "background": "chain.background_hz",
}


def cmd_simulate(args) -> int:
    from .simulate import SimulationConfig, simulate

    flat: Dict[str, str] = {}
    if args.config:
        flat.update({k: v for k, v in read_flat_config(args.config).items()
                     if k.startswith(("sim.", "chain."))})
    for attr, key in _SIM_FLAGS.items():
        v = getattr(args, attr)
        if v is not None:
            flat[key] = str(v)
    if args.no_triggers:
        flat["sim.record_triggers"] = "0"
    flat.update(_key_values(args.set))
    cfg = SimulationConfig.from_flat(flat)
    meta = cfg.as_flat()
    meta["photonq_version"] = __version__
    acq = simulate(cfg, metadata=meta)
    write_acquisition(acq, args.output, fmt=args.format)
    print(f"{args.output}: {len(acq.times)} records", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- analysis

def cmd_q(args) -> int:
    from .stats import mandel_q_series

    paths = sorted(args.inputs)
    acqs = [_load(p) for p in paths]
    pulsed = {"auto": None, "yes": True, "no": False}[args.pulsed]
    t_values = args.T
    if args.snap:
        taus = {a.mode.tau_rep for a in acqs if isinstance(a.mode, Pulsed)}
        if len(taus) != 1:
            raise PhotonqError("--snap needs pulsed acquisitions sharing one tau_rep")
        tau = taus.pop()
        t_values = sorted({max(1, int(round(t / tau))) * tau for t in t_values})
    qs = mandel_q_series(acqs, t_values, pulsed=pulsed, k_max=args.k_max, channels=args.channels)
    header = _run_header("q", {"inputs": paths, "q.t_values_ps": list(qs.t), "q.k_max": args.k_max,
                               "q.pulsed": args.pulsed, "q.channels": args.channels})
    write_table(args.output, qs.columns, qs.rows(), header)
    return EXIT_OK


def cmd_pnd(args) -> int:
    from .stats import _window_origin, photon_number_distribution

    acq = _load(args.input)
    pulsed = isinstance(acq.mode, Pulsed)
    if pulsed and args.T % acq.mode.tau_rep:
        raise PhotonqError(f"T = {args.T} ps is not a multiple of tau_rep = {acq.mode.tau_rep} ps")
    d = photon_number_distribution(merge_channels(acq, args.channels), args.T, acq.duration,
                                   args.k_max, _window_origin(acq, pulsed))
    header = _run_header("pnd", {"input": args.input, "pnd.T_ps": args.T, "pnd.k_max": args.k_max,
                                 "pnd.channels": args.channels, "mean": repr(d.mean), "std": repr(d.std),
                                 "poisson_std": repr(d.poisson_std), "n_windows": d.n_windows})
    write_table(args.output, ("n", "probability"), enumerate(d.probabilities), header)
    return EXIT_OK


def _two_channels(acq: Acquisition, spec):
    a, b = spec if spec else (1, 2)
    return acq.channel(a), acq.channel(b)


def cmd_g2(args) -> int:
    from .stats import g2_histogram_cw

    acq = _load(args.input)
    if args.channels and len(args.channels) != 2:
        raise UsageError("--channels needs exactly two channels")
    cha, chb = _two_channels(acq, args.channels)
    if args.log_bins and args.width:
        raise UsageError("--log-bins and --width are mutually exclusive")
    if not (args.log_bins or args.width):
        raise UsageError("give --width (linear bins) or --log-bins")
    h = g2_histogram_cw(cha, chb, acq.duration, max_lag=args.max_lag, width=args.width,
                        log_bins=args.log_bins, min_lag=args.min_lag)
    header = _run_header("g2", {"input": args.input, "g2.channels": args.channels or (1, 2),
                                "g2.max_lag_ps": args.max_lag, "g2.width_ps": args.width,
                                "g2.log_bins": args.log_bins,
                                "g2.min_lag_ps": args.min_lag if args.log_bins else None})
    header.update(h.header())
    write_table(args.output, h.columns, h.rows(), header)
    return EXIT_OK


def cmd_g2zero(args) -> int:
    from .stats import g2_zero_pulsed

    acq = _load(args.input)
    if not isinstance(acq.mode, Pulsed):
        raise PhotonqError("g2zero needs a pulsed acquisition")
    cha, chb = _two_channels(acq, args.channels)
    g0, err = g2_zero_pulsed(cha, chb, acq.mode.tau_rep, args.half_width, args.side_peaks,
                             duration=acq.duration)
    header = _run_header("g2zero", {"input": args.input, "g2zero.half_width_ps": args.half_width,
                                    "g2zero.side_peaks": args.side_peaks})
    write_table(args.output, ("g2_zero", "uncertainty"), [(g0, err)], header)
    return EXIT_OK


def cmd_lifetime(args) -> int:
    from .stats import lifetime_histogram

    acq = _load(args.input)
    h = lifetime_histogram(acq, args.bin_width, args.channels)
    header = _run_header("lifetime", {"input": args.input, "lifetime.bin_width_ps": args.bin_width,
                                      "lifetime.channels": args.channels})
    write_table(args.output, h.columns, h.rows(), header)
    return EXIT_OK


def cmd_filter(args) -> int:
    from .stats import trigger_filter

    _check_output(args)
    acq = _load(args.input)
    start, width = args.window
    out = trigger_filter(acq, start, width)
    write_acquisition(out, args.output, fmt=args.format)
    return EXIT_OK


def cmd_deadtime(args) -> int:
    from .stats import estimate_deadtime

    acq = _load(args.input)
    td, err = estimate_deadtime(acq.channel(args.channel), args.bin_width, args.max_gap)
    header = _run_header("deadtime", {"input": args.input, "deadtime.channel": args.channel,
                                      "deadtime.bin_width_ps": args.bin_width,
                                      "deadtime.max_gap_ps": args.max_gap})
    write_table(args.output, ("deadtime_ps", "uncertainty_ps"), [(td, err)], header)
    return EXIT_OK


def cmd_sweep_filter(args) -> int:
    from .stats import mandel_q_series, trigger_filter

    paths = sorted(args.inputs)
    acqs = [_load(p) for p in paths]
    taus = {a.mode.tau_rep for a in acqs if isinstance(a.mode, Pulsed)}
    if len(taus) != 1 or len(acqs) != sum(isinstance(a.mode, Pulsed) for a in acqs):
        raise PhotonqError("sweep-filter needs pulsed acquisitions sharing one tau_rep")
    tau = taus.pop()
    T = args.T if args.T is not None else tau
    widths = sorted(set(args.widths))
    raw = mandel_q_series(acqs, [T], pulsed=True, k_max=args.k_max)
    rows = [(-1, raw.mean[0], raw.std[0], raw.sem[0], raw.n_acquisitions)]
    for w in widths:
        if args.start + w > tau:
            raise PhotonqError(f"filter width {w} ps does not fit in the pulse period")
        qs = mandel_q_series([trigger_filter(a, args.start, w) for a in acqs], [T], pulsed=True,
                             k_max=args.k_max)
        rows.append((w, qs.mean[0], qs.std[0], qs.sem[0], qs.n_acquisitions))
    header = _run_header("sweep-filter", {"inputs": paths, "filter.start_ps": args.start,
                                          "filter.widths_ps": widths, "q.T_ps": T,
                                          "q.k_max": args.k_max, "unfiltered_row": "width_ps=-1"})
    write_table(args.output, ("width_ps", "Q_mean", "Q_std", "Q_sem", "n_acquisitions"), rows, header)
    return EXIT_OK


def cmd_convert(args) -> int:
    _check_output(args)
    acq = read_acquisition(args.input, None if args.input_format == "auto" else args.input_format)
    write_acquisition(acq, args.output, fmt=args.to)
    return EXIT_OK


# ---------------------------------------------------------------- fits

def _write_fit(args, res, header, curve_cols, curve_rows) -> int:
    payload = res.to_dict()
    payload["photonq_version"] = __version__
    payload["config"] = header
    write_json(args.output, payload)
    if args.curve:
        write_table(args.curve, curve_cols, curve_rows, header)
    if not res.converged:
        print(f"fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def _ranges(windows):
    return [(lo, lo + w) for lo, w in windows] if windows else None


def _read_hist(path):
    from .stats import CorrelationHistogram

    header, cols = read_table(path)
    try:
        return CorrelationHistogram.from_table(header, cols)
    except KeyError as exc:
        raise FormatError(f"{path}: missing histogram field {exc}") from None


def _require(cols, path, *names):
    for n in names:
        if n not in cols:
            raise FormatError(f"{path}: missing column {n!r}")


def cmd_fit_lifetime(args) -> int:
    from .fit import fit_lifetime
    from .stats import LifetimeHistogram

    _, cols = read_table(args.input)
    _require(cols, args.input, "bin_left_ps", "bin_right_ps", "counts")
    edges = np.concatenate((cols["bin_left_ps"], cols["bin_right_ps"][-1:]))
    hist = LifetimeHistogram(edges, cols["counts"])
    res = fit_lifetime(hist, args.tail_start)
    header = _run_header("fit lifetime", {"input": args.input, "fit.tail_start_ps": args.tail_start})
    t0 = res.extra["t_peak"]
    c = hist.centers
    sel = c >= t0
    a, tau, bg = res.values
    curve = a * np.exp(-(c[sel] - t0) / tau) + bg
    return _write_fit(args, res, header, ("t_ps", "counts_fit"), zip(c[sel], curve))


def cmd_fit_g2(args) -> int:
    from .fit import fit_g2_two_exp
    from .models import g2_two_exp

    hist = _read_hist(args.input)
    res = fit_g2_two_exp(hist, exclude=_ranges(args.exclude))
    header = _run_header("fit g2", {"input": args.input,
                                    "fit.exclude_ps": [f"{lo}:{lo + w}" for lo, w in args.exclude or ()]})
    x = hist.centers
    header["g2_zero"] = repr(res.extra["g2_zero"])
    header["g2_zero_stderr"] = repr(res.extra["g2_zero_stderr"])
    return _write_fit(args, res, header, ("lag_ps", "g2_fit"), zip(x, g2_two_exp(x, res.extra["params"])))


def cmd_fit_rate(args) -> int:
    from .fit import fit_rate_model
    from .models import background_uncorrect, rate_model_g2

    paths = list(args.inputs)
    if len(paths) != len(args.powers):
        raise UsageError("give one --powers entry per histogram")
    hists = [_read_hist(p) for p in paths]
    res = fit_rate_model(hists, args.powers, float(args.tau21), exclude=_ranges(args.exclude))
    header = _run_header("fit rate", {"inputs": paths, "fit.powers_uw": args.powers,
                                      "fit.tau21_ps": args.tau21})
    rows = []
    for P, h, r, s in zip(args.powers, hists, res.extra["rates"], res.extra["sigma"]):
        for x, g in zip(h.centers, background_uncorrect(rate_model_g2(h.centers, r), s)):
            rows.append((P, x, g))
    return _write_fit(args, res, header, ("power_uw", "lag_ps", "g2_fit"), rows)


def cmd_fit_pulsed_q(args) -> int:
    from .fit import fit_pulsed_q
    from .models import pulsed_q_model

    _, cols = read_table(args.input)
    _require(cols, args.input, "T_ps", "Q_mean")
    T = cols["T_ps"]
    res = fit_pulsed_q((T, cols["Q_mean"]), float(args.tau_rep))
    header = _run_header("fit pulsed-q", {"input": args.input, "fit.tau_rep_ps": args.tau_rep})
    k = np.round(T / args.tau_rep).astype(int)
    return _write_fit(args, res, header, ("T_ps", "Q_fit"), zip(T, pulsed_q_model(k, res.extra["params"])))


def cmd_fit_saturation(args) -> int:
    from .fit import fit_saturation
    from .models import saturation_rate

    _, cols = read_table(args.input)
    _require(cols, args.input, "power_uw", "rate_hz")
    res = fit_saturation(cols["power_uw"], cols["rate_hz"], cols.get("sigma_hz"))
    header = _run_header("fit saturation", {"input": args.input})
    grid = np.linspace(0.0, float(cols["power_uw"].max()) * 1.2, 121)
    return _write_fit(args, res, header, ("power_uw", "rate_fit_hz"),
                      zip(grid, saturation_rate(grid, res.extra["params"])))


# ---------------------------------------------------------------- model eval

def _model_fn(name: str, p: Dict[str, str]):
    from . import models as m

    def need(key, conv=float):
        if key not in p:
            raise UsageError(f"model {name!r} needs parameter {key!r}")
        return conv(p[key])

    dur = lambda key: float(need(key, parse_duration))  # noqa: E731
    if name == "g2-two-exp":
        prm = m.TwoExpG2Params(need("a"), need("b"), dur("tau1"), dur("tau2"))
        return "tau_ps", lambda x: m.g2_two_exp(x, prm)
    if name == "rate-g2":
        rates = EmitterRates(dur("tau12"), dur("tau21"),
                             dur("tau23") if "tau23" in p else None, dur("tau31") if "tau31" in p else None)
        sigma = float(p.get("sigma", 1.0))
        return "tau_ps", lambda x: m.background_uncorrect(m.rate_model_g2(x, rates), sigma)
    if name == "analytic-cw-q":
        prm = m.AnalyticCwQParams(need("a"), dur("t1"), dur("t2"), need("rate_hz"))
        return "T_ps", lambda x: m.analytic_cw_q(x, prm)
    if name == "pulsed-q":
        prm = m.PulsedQModelParams(need("eta"), dur("tau23"), dur("tau31"), dur("tau_rep"))
        return "k", lambda x: m.pulsed_q_model(np.round(x).astype(int), prm)
    if name == "saturation":
        prm = m.SaturationParams(need("i_inf"), need("p_sat"), float(p.get("b", 0)), float(p.get("c", 0)))
        return "power_uw", lambda x: m.saturation_rate(x, prm)
    raise UsageError(f"unknown model {name!r}")


MODELS = ("g2-two-exp", "rate-g2", "analytic-cw-q", "pulsed-q", "saturation")


def cmd_model(args) -> int:
    params: Dict[str, str] = {}
    if args.params:
        params.update(read_flat_config(args.params))
    params.update(_key_values(args.param))
    xname, fn = _model_fn(args.model, params)
    lo, hi, n = args.grid
    if args.model == "pulsed-q":
        x = np.unique(np.round(np.geomspace(lo, hi, n) if args.log else np.linspace(lo, hi, n))).astype(int)
    else:
        x = np.geomspace(lo, hi, n) if args.log else np.linspace(lo, hi, n)
    y = fn(x)
    header = _run_header("model eval", {"model": args.model, "grid": f"{lo!r}:{hi!r}:{n}",
                                        "grid.log": int(args.log)})
    header.update({f"param.{k}": v for k, v in sorted(params.items())})
    write_table(args.output, (xname, "value"), zip(x, np.atleast_1d(y)), header)
    return EXIT_OK


def grid_arg(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must be LO:HI:N")
    try:
        lo, hi = (float(parse_duration(p)) if p.strip()[-1:].isalpha() else float(p) for p in parts[:2])
        n = int(parts[2])
    except (ValueError, PhotonqError):
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if n < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    return lo, hi, n


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photonq", description="Photon-statistics toolkit for single-emitter timestamp data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out(p, what="CSV table"):
        p.add_argument("-o", "--output", required=True, help=f"output {what}")

    # simulate
    p = sub.add_parser("simulate", help="simulate a two-detector acquisition")
    p.add_argument("--config", help="flat key=value file (sim.* and chain.* keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    for flag in ("tau12", "tau21", "tau23", "tau31", "duration", "tau-rep", "deadtime"):
        p.add_argument(f"--{flag}", help="duration with unit suffix (ps, ns, us, ms, s)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["cw", "pulsed"])
    p.add_argument("--power", type=float, help="excitation power label (uW)")
    p.add_argument("--efficiency", type=float)
    p.add_argument("--split-ratio", type=float)
    p.add_argument("--background", help="Poisson background per detector (Hz); 'a,b' for two values")
    p.add_argument("--no-triggers", action="store_true", help="pulsed: do not store trigger records")
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    out(p, "timestamp file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("q", help="Mandel Q(T) over one or more acquisitions")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-T", "--T", type=duration_list, required=True,
                   help="window lengths: comma list or LO:HI:N (log-spaced)")
    p.add_argument("--pulsed", choices=["auto", "yes", "no"], default="auto")
    p.add_argument("--snap", action="store_true", help="round T to whole pulse periods")
    p.add_argument("--k-max", type=int, default=10**8)
    p.add_argument("--channels", type=int_list)
    out(p)
    p.set_defaults(func=cmd_q)

    p = sub.add_parser("pnd", help="photon-number distribution at one window length")
    p.add_argument("input")
    p.add_argument("-T", "--T", type=duration_arg, required=True)
    p.add_argument("--k-max", type=int, default=10**8)
    p.add_argument("--channels", type=int_list)
    out(p)
    p.set_defaults(func=cmd_pnd)

    p = sub.add_parser("g2", help="CW coincidence histogram")
    p.add_argument("input")
    p.add_argument("--channels", type=int_list, help="two channels, default 1,2")
    p.add_argument("--max-lag", type=duration_arg, required=True)
    p.add_argument("--width", type=duration_arg, help="linear bin width")
    p.add_argument("--log-bins", type=int, help="number of log-spaced bins on |lag|")
    p.add_argument("--min-lag", type=duration_arg, default=100)
    out(p)
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("g2zero", help="pulsed g2(0) from peak areas")
    p.add_argument("input")
    p.add_argument("--channels", type=int_list)
    p.add_argument("--half-width", type=duration_arg, default=10_000)
    p.add_argument("--side-peaks", type=int, default=18)
    out(p)
    p.set_defaults(func=cmd_g2zero)

    p = sub.add_parser("lifetime", help="delay-after-trigger histogram")
    p.add_argument("input")
    p.add_argument("--bin-width", type=duration_arg, default=100)
    p.add_argument("--channels", type=int_list)
    out(p)
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("filter", help="keep detections inside a window after each trigger")
    p.add_argument("input")
    p.add_argument("--window", type=parse_window, required=True, help="START:END, e.g. 7:12ns")
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    out(p, "timestamp file")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("deadtime", help="estimate detector deadtime from gap statistics")
    p.add_argument("input")
    p.add_argument("--channel", type=int, default=1)
    p.add_argument("--bin-width", type=duration_arg, default=500)
    p.add_argument("--max-gap", type=duration_arg)
    out(p)
    p.set_defaults(func=cmd_deadtime)

    p = sub.add_parser("sweep-filter", help="Q at one T versus trigger-filter width")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--start", type=duration_arg, default=0)
    p.add_argument("--widths", type=duration_list, required=True)
    p.add_argument("-T", "--T", type=duration_arg, help="window length (default: one pulse period)")
    p.add_argument("--k-max", type=int, default=10**8)
    out(p)
    p.set_defaults(func=cmd_sweep_filter)

    p = sub.add_parser("convert", help="convert between text and binary timestamp files")
    p.add_argument("input")
    p.add_argument("--from", dest="input_format", choices=["auto", "text", "binary"], default="auto")
    p.add_argument("--to", choices=["text", "binary"], required=True)
    out(p, "timestamp file")
    p.set_defaults(func=cmd_convert)

    # fit
    fp = sub.add_parser("fit", help="fit a model; writes JSON (+ optional curve CSV)")
    fsub = fp.add_subparsers(dest="fit_kind", required=True, parser_class=_Parser)

    def fit_out(p):
        out(p, "JSON result")
        p.add_argument("--curve", help="CSV of the fitted curve")

    p = fsub.add_parser("lifetime")
    p.add_argument("input", help="table from 'photonq lifetime'")
    p.add_argument("--tail-start", type=duration_arg)
    fit_out(p)
    p.set_defaults(func=cmd_fit_lifetime)

    p = fsub.add_parser("g2")
    p.add_argument("input", help="table from 'photonq g2'")
    p.add_argument("--exclude", type=parse_window, action="append", help="|lag| range LO:HI to drop")
    fit_out(p)
    p.set_defaults(func=cmd_fit_g2)

    p = fsub.add_parser("rate")
    p.add_argument("inputs", nargs="+", help="log-binned tables from 'photonq g2', one per power")
    p.add_argument("--powers", type=float_list, required=True, help="powers (uW), same order as inputs")
    p.add_argument("--tau21", type=duration_arg, required=True)
    p.add_argument("--exclude", type=parse_window, action="append")
    fit_out(p)
    p.set_defaults(func=cmd_fit_rate)

    p = fsub.add_parser("pulsed-q")
    p.add_argument("input", help="table from 'photonq q' on pulsed data")
    p.add_argument("--tau-rep", type=duration_arg, required=True)
    fit_out(p)
    p.set_defaults(func=cmd_fit_pulsed_q)

    p = fsub.add_parser("saturation")
    p.add_argument("input", help="CSV with columns power_uw, rate_hz[, sigma_hz]")
    fit_out(p)
    p.set_defaults(func=cmd_fit_saturation)

    # model
    mp = sub.add_parser("model", help="evaluate a model on a grid")
    msub = mp.add_subparsers(dest="model_action", required=True, parser_class=_Parser)
    p = msub.add_parser("eval")
    p.add_argument("model", choices=MODELS)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--params", help="flat key=value parameter file")
    p.add_argument("--grid", type=grid_arg, required=True, help="LO:HI:N")
    p.add_argument("--log", action="store_true", help="log-spaced grid")
    out(p)
    p.set_defaults(func=cmd_model)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"photonq: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PhotonqError, OSError, UnicodeDecodeError) as exc:
        print(f"photonq: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
