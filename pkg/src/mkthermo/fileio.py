"""File formats: raw binary series, commented CSV tables, key-value text.

Floats are written with ``repr`` so every file re-parses to identical
values.  Nothing time-dependent is written, so equal inputs give equal
bytes.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from pathlib import Path

import numpy as np

from .dsp import ComplexSweep, Spectrum, TimeSeries

MAGIC = b"MKTS1\n"
SERIES_KEYS = ("sample_rate", "start_epoch_ns", "channel", "unit", "sample_count")
MISSING = "NA"


class FormatError(ValueError):
    """Malformed or inconsistent data file."""


def fmt(x) -> str:
    """Lossless text form of a scalar; NaN is written as NA."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return MISSING if math.isnan(x) else repr(x)
    return str(x)


def parse_float(text: str) -> float:
    text = text.strip()
    if text in (MISSING, ""):
        return math.nan
    return float(text)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def write_text(path, text: str) -> Path:
    return _write_bytes(path, text.encode("utf-8"))


# -- raw series ----------------------------------------------------------------

def write_series(path, ts: TimeSeries, start_epoch_ns: int = 0) -> Path:
    samples = np.ascontiguousarray(ts.samples, dtype="<f8")
    header = {
        "sample_rate": fmt(float(ts.sample_rate)),
        "start_epoch_ns": str(int(start_epoch_ns)),
        "channel": ts.channel,
        "unit": ts.unit,
        "sample_count": str(len(samples)),
    }
    for key, value in header.items():
        if "\n" in value or ":" in key:
            raise FormatError(f"header value for {key} contains a newline")
    text = "".join(f"{k}: {v}\n" for k, v in header.items()) + "\n"
    return _write_bytes(path, MAGIC + text.encode("utf-8") + samples.tobytes())


def read_series_header(data: bytes) -> tuple[dict, int]:
    if len(data) == 0:
        raise FormatError("empty file")
    if not data.startswith(MAGIC):
        raise FormatError("missing MKTS1 magic")
    end = data.find(b"\n\n", len(MAGIC) - 1)
    if end < 0:
        raise FormatError("header is not terminated by a blank line")
    header = {}
    lines = data[len(MAGIC):end].decode("utf-8").split("\n")
    for lineno, line in enumerate(lines, start=2):
        if not line:
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key: value'")
        header[key.strip()] = value.strip()
    missing = [k for k in SERIES_KEYS if k not in header]
    if missing:
        raise FormatError(f"header lacks {', '.join(missing)}")
    return header, end + 2


def read_series(path) -> tuple[TimeSeries, int]:
    """Returns the series and its start_epoch_ns."""
    data = Path(path).read_bytes()
    header, offset = read_series_header(data)
    try:
        rate = float(header["sample_rate"])
        count = int(header["sample_count"])
        epoch = int(header["start_epoch_ns"])
    except ValueError as exc:
        raise FormatError(f"bad header value: {exc}") from exc
    if not rate > 0:
        raise FormatError("sample_rate must be positive")
    payload = data[offset:]
    if len(payload) != 8 * count:
        raise FormatError(f"payload holds {len(payload)} bytes, header promises {count} samples")
    samples = np.frombuffer(payload, dtype="<f8").astype(float)
    return TimeSeries(samples, rate, 0.0, header["unit"], header["channel"]), epoch


# -- CSV with # metadata ------------------------------------------------------

def write_csv(path, columns: dict, meta: dict | None = None) -> Path:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0]) if arrays else 0
    if any(len(a) != n for a in arrays):
        raise FormatError("columns differ in length")
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {fmt(value)}\n")
    buf.write(",".join(names) + "\n")
    for i in range(n):
        buf.write(",".join(fmt(a[i]) for a in arrays) + "\n")
    return write_text(path, buf.getvalue())


def read_csv(path) -> tuple[dict, dict]:
    """Returns (meta, columns); numeric columns become float arrays."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise FormatError(f"{path}: empty file")
    meta, rows, names = {}, [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise FormatError(f"{path}:{lineno}: metadata line needs 'key: value'")
            meta[key.strip()] = value.strip()
        elif not line.strip():
            continue
        elif names is None:
            names = [c.strip() for c in line.split(",")]
        else:
            cells = line.split(",")
            if len(cells) != len(names):
                raise FormatError(f"{path}:{lineno}: expected {len(names)} fields, got {len(cells)}")
            rows.append(cells)
    if names is None:
        raise FormatError(f"{path}: no header row")
    columns = {}
    for j, name in enumerate(names):
        cells = [r[j] for r in rows]
        try:
            columns[name] = np.array([parse_float(c) for c in cells], dtype=float)
        except ValueError:
            columns[name] = np.array([c.strip() for c in cells], dtype=object)
    return meta, columns


def _require(columns: dict, names, path) -> None:
    missing = [n for n in names if n not in columns]
    if missing:
        raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")


def write_spectrum(path, s: Spectrum, extra_meta: dict | None = None) -> Path:
    meta = {"unit": s.unit, "window": s.window, "n_averages": s.n_averages,
            "overlap_fraction": s.overlap_fraction}
    if s.segment_length is not None:
        meta["segment_length"] = s.segment_length
    meta.update(extra_meta or {})
    return write_csv(path, {"freq_hz": s.freqs, "psd": s.values}, meta)


def read_spectrum(path) -> Spectrum:
    meta, cols = read_csv(path)
    _require(cols, ("freq_hz", "psd"), path)
    seg = meta.get("segment_length")
    return Spectrum(cols["freq_hz"], cols["psd"], int(meta.get("n_averages", 1)),
                    meta.get("window", "hann"), float(meta.get("overlap_fraction", 0.5)),
                    meta.get("unit", "V^2/Hz"), int(seg) if seg else None)


def write_spectra_bundle(path, spectra, temperatures=None, times=None) -> Path:
    """Several spectra on one grid: a frequency column plus one column per spectrum.

    Reference temperatures (K) and timestamps (s), when given, go into the
    metadata as comma-separated lists.
    """
    spectra = list(spectra)
    if not spectra:
        raise FormatError("no spectra to write")
    freqs = spectra[0].freqs
    cols = {"freq_hz": freqs}
    for i, s in enumerate(spectra):
        if len(s.freqs) != len(freqs) or not np.array_equal(s.freqs, freqs):
            raise FormatError("spectra in a bundle must share one grid")
        cols[f"s{i}"] = s.values
    meta = {"unit": spectra[0].unit, "window": spectra[0].window,
            "n_averages": spectra[0].n_averages, "overlap_fraction": spectra[0].overlap_fraction,
            "n_spectra": len(spectra)}
    if temperatures is not None:
        meta["reference_temperatures"] = " ".join(fmt(float(t)) for t in temperatures)
    if times is not None:
        meta["times"] = " ".join(fmt(float(t)) for t in times)
    return write_csv(path, cols, meta)


def read_spectra_bundle(path) -> tuple[list[Spectrum], np.ndarray | None, np.ndarray | None]:
    meta, cols = read_csv(path)
    _require(cols, ("freq_hz",), path)
    names = [k for k in cols if k != "freq_hz"]
    if not names:
        raise FormatError(f"{path}: bundle holds no spectra")
    spectra = [Spectrum(cols["freq_hz"], cols[k], int(meta.get("n_averages", 1)),
                        meta.get("window", "hann"), float(meta.get("overlap_fraction", 0.5)),
                        meta.get("unit", "V^2/Hz")) for k in names]

    def floats(key):
        if key not in meta:
            return None
        out = np.array([parse_float(v) for v in meta[key].split()])
        if len(out) != len(spectra):
            raise FormatError(f"{path}: {key} lists {len(out)} values for {len(spectra)} spectra")
        return out

    return spectra, floats("reference_temperatures"), floats("times")


def write_sweep(path, sweep: ComplexSweep, extra_meta: dict | None = None) -> Path:
    meta = {"direction": sweep.direction, "dwell": sweep.dwell}
    for i, w in enumerate(sweep.warnings):
        meta[f"warning{i}"] = w
    meta.update(extra_meta or {})
    return write_csv(path, {"freq_hz": sweep.freqs, "re_v": sweep.values.real,
                            "im_v": sweep.values.imag}, meta)


def read_sweep(path) -> ComplexSweep:
    meta, cols = read_csv(path)
    _require(cols, ("freq_hz", "re_v", "im_v"), path)
    warnings = tuple(v for k, v in meta.items() if k.startswith("warning"))
    return ComplexSweep(cols["freq_hz"], cols["re_v"] + 1j * cols["im_v"],
                        meta.get("direction", "up"), float(meta.get("dwell", 1.0)), warnings)


# -- key-value text -----------------------------------------------------------

def write_kv(path, values: dict, header: str | None = None) -> Path:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    for key, value in values.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ", ".join(fmt(v) for v in value)
        else:
            value = fmt(value)
        buf.write(f"{key} = {value}\n")
    return write_text(path, buf.getvalue())


def read_kv(path) -> dict[str, tuple[str, int]]:
    """``key = value`` lines with ``#`` comments; returns key -> (raw value, line number)."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        if key in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {out[key][1]})")
        out[key] = (value.strip(), lineno)
    return out
