"""
Readers and writers for timestamp files, histograms and Q series.

Timestamp text format::

    # channels=0,1,2
    # duration_ps=100000000000000
    # mode=pulsed
    # tau_rep_ps=100000
    channel,time_ps
    0,0
    1,7312
    ...

Header keys are written in sorted order. The binary format is a 16-byte
preamble (8-byte magic, little-endian u64 length L of the header block),
the same ``key=value`` lines as UTF-8 (L bytes), then packed records of a
u8 channel and a little-endian u64 time.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import __version__
from .core import CW, Acquisition, PhotonqError, Pulsed, TRIGGER_CHANNEL

MAGIC = b"PHQTAGS1"
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])
COLUMNS_LINE = "channel,time_ps"


class FormatError(PhotonqError):
    """Malformed input file; message names the line or byte offset."""


def atomic_write(path, data, mode="w"):
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode + ("b" if isinstance(data, bytes) else ""), **({} if isinstance(data, bytes) else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_real(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------- headers

_RESERVED = ("channels", "duration_ps", "mode", "tau_rep_ps", "trigger_channel",
             "trigger_offset_ps", "power_uw", "seed")


def acquisition_header(acq: Acquisition) -> Dict[str, str]:
    h = dict(acq.metadata)
    h["channels"] = ",".join(str(c) for c in acq.channel_set)
    h["duration_ps"] = str(acq.duration)
    h["mode"] = acq.mode.name
    if acq.mode.power_label is not None:
        h["power_uw"] = repr(float(acq.mode.power_label))
    if isinstance(acq.mode, Pulsed):
        h["tau_rep_ps"] = str(acq.mode.tau_rep)
        h["trigger_channel"] = str(acq.mode.trigger_channel)
        h["trigger_offset_ps"] = str(acq.trigger_offset)
    if acq.seed is not None:
        h["seed"] = str(acq.seed)
    return h


def render_header(header: Mapping[str, str], prefix: str = "# ") -> str:
    lines = []
    for k in sorted(header):
        v = str(header[k])
        if "\n" in v or "=" in k:
            raise PhotonqError(f"header entry {k!r} cannot be serialized")
        lines.append(f"{prefix}{k}={v}\n")
    return "".join(lines)


def _parse_int(h, key, where):
    try:
        return int(h[key])
    except (KeyError, ValueError):
        raise FormatError(f"{where}: missing or invalid header key {key!r}") from None


def acquisition_from_header(h: Dict[str, str], channels, times, where="header") -> Acquisition:
    duration = _parse_int(h, "duration_ps", where)
    mode_name = h.get("mode", "cw")
    power = float(h["power_uw"]) if "power_uw" in h else None
    if mode_name == "pulsed":
        mode = Pulsed(_parse_int(h, "tau_rep_ps", where),
                      int(h.get("trigger_channel", TRIGGER_CHANNEL)), power)
    elif mode_name == "cw":
        mode = CW(power)
    else:
        raise FormatError(f"{where}: unknown mode {mode_name!r}")
    if "channels" in h:
        cset = tuple(int(c) for c in h["channels"].split(",") if c.strip())
    else:
        cset = tuple(sorted(set(np.unique(channels).tolist()) | {1, 2}))
    seed = int(h["seed"]) if "seed" in h else None
    offset = int(h.get("trigger_offset_ps", 0))
    meta = {k: v for k, v in h.items() if k not in _RESERVED}
    try:
        return Acquisition(duration, channels, times, channel_set=cset, mode=mode,
                           seed=seed, trigger_offset=offset, metadata=meta)
    except PhotonqError as exc:
        raise FormatError(f"{where}: {exc}") from None


# ---------------------------------------------------------------- text

def dumps_text(acq: Acquisition) -> str:
    buf = _io.StringIO()
    buf.write(render_header(acquisition_header(acq)))
    buf.write(COLUMNS_LINE + "\n")
    if len(acq):
        body = "\n".join(f"{c},{t}" for c, t in zip(acq.channels.tolist(), acq.times.tolist()))
        buf.write(body + "\n")
    return buf.getvalue()


def _scan_bad_line(lines, first_lineno):
    for i, line in enumerate(lines):
        parts = line.strip().split(",")
        ok = len(parts) == 2
        if ok:
            try:
                c, t = int(parts[0]), int(parts[1])
                ok = 0 <= c <= 255 and 0 <= t < 2**64
                if not ok:
                    return first_lineno + i, f"channel/time out of range in {line.strip()!r}"
            except ValueError:
                ok = False
        if not ok:
            return first_lineno + i, f"expected 'channel,time_ps', got {line.strip()!r}"
    return None


def loads_text(text: str, source: str = "<text>") -> Acquisition:
    lines = text.splitlines()
    header: Dict[str, str] = {}
    body_start = len(lines)
    for i, line in enumerate(lines):
        s = line.strip()
        if s.startswith("#"):
            kv = s[1:].strip()
            if "=" in kv:
                k, v = kv.split("=", 1)
                header[k.strip()] = v.strip()
            continue
        if s == COLUMNS_LINE or s == "":
            continue
        body_start = i
        break
    body = [ln for ln in lines[body_start:]]
    # drop trailing blank lines only
    while body and not body[-1].strip():
        body.pop()
    if body:
        try:
            arr = np.loadtxt(body, delimiter=",", dtype=np.uint64, ndmin=2)
            if arr.shape[1] != 2:
                raise ValueError
        except ValueError:
            arr = None
        if arr is None or arr[:, 0].max() > 255:
            bad = _scan_bad_line(body, body_start + 1)
            lineno, msg = bad if bad else (body_start + 1, "malformed record")
            raise FormatError(f"{source}:{lineno}: {msg}")
        if arr[:, 1].max() > np.iinfo(np.int64).max:
            raise FormatError(f"{source}: time exceeds supported range")
        ch = arr[:, 0].astype(np.int64)
        t = arr[:, 1].astype(np.int64)
    else:
        ch = np.empty(0, np.int64)
        t = np.empty(0, np.int64)
    return acquisition_from_header(header, ch, t, where=source)


# ---------------------------------------------------------------- binary

def dumps_binary(acq: Acquisition) -> bytes:
    head = render_header(acquisition_header(acq), prefix="").encode("utf-8")
    rec = np.empty(len(acq), dtype=RECORD_DTYPE)
    rec["channel"] = acq.channels
    rec["time"] = acq.times.astype(np.uint64)
    return MAGIC + struct.pack("<Q", len(head)) + head + rec.tobytes()


def loads_binary(data: bytes, source: str = "<binary>") -> Acquisition:
    if len(data) < 16:
        raise FormatError(f"{source}: truncated preamble at byte offset {len(data)}")
    if data[:8] != MAGIC:
        raise FormatError(f"{source}: bad magic at byte offset 0")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise FormatError(f"{source}: truncated header at byte offset {len(data)}")
    header: Dict[str, str] = {}
    for line in data[16:16 + hlen].decode("utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            header[k] = v
    payload = data[16 + hlen:]
    n, rem = divmod(len(payload), RECORD_DTYPE.itemsize)
    if rem:
        offset = 16 + hlen + n * RECORD_DTYPE.itemsize
        raise FormatError(f"{source}: truncated record at byte offset {offset}")
    rec = np.frombuffer(payload, dtype=RECORD_DTYPE, count=n)
    if n and rec["time"].max() > np.iinfo(np.int64).max:
        raise FormatError(f"{source}: time exceeds supported range")
    return acquisition_from_header(header, rec["channel"].astype(np.int64),
                                   rec["time"].astype(np.int64), where=source)


# ---------------------------------------------------------------- files

def detect_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    return "binary" if head == MAGIC else "text"


def read_acquisition(path, fmt: Optional[str] = None) -> Acquisition:
    fmt = fmt or detect_format(path)
    if fmt == "binary":
        return loads_binary(Path(path).read_bytes(), source=str(path))
    if fmt == "text":
        return loads_text(Path(path).read_text(), source=str(path))
    raise PhotonqError(f"unknown format {fmt!r}")


def write_acquisition(acq: Acquisition, path, fmt: str = "text") -> None:
    if fmt == "binary":
        atomic_write(path, dumps_binary(acq))
    elif fmt == "text":
        atomic_write(path, dumps_text(acq))
    else:
        raise PhotonqError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------- tables

def write_table(path, columns, rows, header: Optional[Mapping[str, str]] = None) -> None:
    """CSV with ``# key=value`` header lines; floats written with 17 significant digits."""
    buf = _io.StringIO()
    h = {"photonq_version": __version__, "table_version": "1"}
    h.update(header or {})
    buf.write(render_header(h))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    atomic_write(path, buf.getvalue())


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return format_real(v)


def read_table(path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Inverse of :func:`write_table`: ``(header, {column: float array})``."""
    header: Dict[str, str] = {}
    rows = []
    columns = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                kv = s[1:].strip()
                if "=" in kv:
                    k, v = kv.split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            cells = next(csv.reader([s]))
            if columns is None:
                columns = cells
                continue
            if len(cells) != len(columns):
                raise FormatError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(cells)}")
            try:
                rows.append([float(c) if c != "" else np.nan for c in cells])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field in {s!r}") from None
    if columns is None:
        raise FormatError(f"{path}: no column header line")
    data = np.array(rows, dtype=float).reshape(-1, len(columns))
    return header, {c: data[:, i] for i, c in enumerate(columns)}


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
