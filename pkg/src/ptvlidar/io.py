"""File formats: time-tag codecs (CSV and PTTG binary), rate-image and
table exports, and the hashed output manifest.

Every writer is deterministic: identical inputs produce byte-identical
files, which is what makes end-to-end runs reproducible and hashable.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .core import AcquisitionSpec, CountImage, RateImage, TimeTagStream
from .errors import ParseError

_PTTG_MAGIC = b"PTTG"
_PTTG_VERSION = 1
_PTTG_HEADER = struct.Struct("<ddIIQ")  # clock_ns, shot_ns, tof_bins, shots, n_records
_PTTG_RECORD_DTYPE = np.dtype([("shot", "<u4"), ("tick", "<u4")])

_CSV_HEADER_KEYS = ("clock_period", "shot_period", "tof_bins_total",
                    "shots_total")


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# time-tag codecs

def write_time_tags_csv(path, tags: TimeTagStream) -> None:
    spec = tags.spec
    with open(path, "w", newline="") as fh:
        fh.write(f"# clock_period={_fmt(spec.clock_period)}\n")
        fh.write(f"# shot_period={_fmt(spec.shot_period)}\n")
        fh.write(f"# tof_bins_total={spec.tof_bins_total}\n")
        fh.write(f"# shots_total={spec.shots_total}\n")
        fh.write("shot,tof_tick\n")
        for shot, tick in zip(tags.shots, tags.ticks):
            fh.write(f"{shot},{tick}\n")


def read_time_tags_csv(path) -> TimeTagStream:
    header: dict[str, str] = {}
    shots: list[int] = []
    ticks: list[int] = []
    saw_columns = False
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, _, value = line[1:].partition("=")
                    header[key.strip()] = value.strip()
                continue
            if not saw_columns:
                cols = [c.strip() for c in line.split(",")]
                if cols != ["shot", "tof_tick"]:
                    raise ParseError(
                        f"expected column header 'shot,tof_tick', got {line!r}",
                        line=lineno)
                saw_columns = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"expected two fields, got {line!r}",
                                 line=lineno)
            try:
                shots.append(int(parts[0]))
                ticks.append(int(parts[1]))
            except ValueError as err:
                raise ParseError(str(err), line=lineno) from err
    missing = [k for k in _CSV_HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(f"missing header fields: {', '.join(missing)}", line=1)
    try:
        spec = AcquisitionSpec(float(header["clock_period"]),
                               float(header["shot_period"]),
                               int(header["tof_bins_total"]),
                               int(header["shots_total"]))
    except ValueError as err:
        raise ParseError(f"bad header value: {err}", line=1) from err
    try:
        return TimeTagStream(np.asarray(shots, dtype=np.int64),
                             np.asarray(ticks, dtype=np.int64), spec)
    except ValueError as err:
        raise ParseError(str(err)) from err


def write_time_tags_pttg(path, tags: TimeTagStream) -> None:
    spec = tags.spec
    header = _PTTG_HEADER.pack(spec.clock_period * 1e9, spec.shot_period * 1e9,
                               spec.tof_bins_total, spec.shots_total,
                               tags.n_records)
    records = np.empty(tags.n_records, dtype=_PTTG_RECORD_DTYPE)
    records["shot"] = tags.shots
    records["tick"] = tags.ticks
    with open(path, "wb") as fh:
        fh.write(_PTTG_MAGIC)
        fh.write(struct.pack("<H", _PTTG_VERSION))
        fh.write(header)
        fh.write(records.tobytes())


def read_time_tags_pttg(path) -> TimeTagStream:
    blob = Path(path).read_bytes()
    if blob[:4] != _PTTG_MAGIC:
        raise ParseError("bad magic, not a PTTG file", offset=0)
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _PTTG_VERSION:
        raise ParseError(f"unsupported PTTG version {version}", offset=4)
    header_at = 6
    try:
        clock_ns, shot_ns, tof_bins, shots_total, n_records = \
            _PTTG_HEADER.unpack_from(blob, header_at)
    except struct.error as err:
        raise ParseError(f"truncated header: {err}", offset=header_at) from err
    records_at = header_at + _PTTG_HEADER.size
    expected = records_at + n_records * _PTTG_RECORD_DTYPE.itemsize
    if len(blob) < expected:
        raise ParseError(
            f"expected {expected} bytes for {n_records} records, file has "
            f"{len(blob)}", offset=len(blob))
    records = np.frombuffer(blob, dtype=_PTTG_RECORD_DTYPE, count=n_records,
                            offset=records_at)
    try:
        spec = AcquisitionSpec(clock_ns / 1e9, shot_ns / 1e9, int(tof_bins),
                               int(shots_total))
        return TimeTagStream(records["shot"].astype(np.int64),
                             records["tick"].astype(np.int64), spec)
    except ValueError as err:
        raise ParseError(str(err), offset=records_at) from err


def read_time_tags(path) -> TimeTagStream:
    """Read a tag stream, dispatching on extension (.csv or .pttg)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_time_tags_csv(path)
    if suffix == ".pttg":
        return read_time_tags_pttg(path)
    raise ParseError(f"unknown time-tag format {suffix!r} (want .csv or .pttg)")


def write_time_tags(path, tags: TimeTagStream) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        write_time_tags_csv(path, tags)
    elif suffix == ".pttg":
        write_time_tags_pttg(path, tags)
    else:
        raise ParseError(f"unknown time-tag format {suffix!r} (want .csv or .pttg)")


# ---------------------------------------------------------------------------
# image and table exports

def rate_image_csv(img: RateImage) -> str:
    res = img.resolution
    buf = _io.StringIO()
    buf.write("# rows=tof_bins cols=shot_columns units=Hz\n")
    buf.write(f"# tof_width={_fmt(res.tof_width)}\n")
    buf.write(f"# shots_per_col={res.shots_per_col}\n")
    for row in img.rates:
        buf.write(",".join(_fmt(v) for v in row))
        buf.write("\n")
    return buf.getvalue()


def count_image_csv(img: CountImage) -> str:
    res = img.resolution
    buf = _io.StringIO()
    buf.write("# rows=tof_bins cols=shot_columns units=counts\n")
    buf.write(f"# tof_width={_fmt(res.tof_width)}\n")
    buf.write("# shots_per_column=" +
              ",".join(str(int(n)) for n in img.shots_per_column) + "\n")
    for row in img.counts:
        buf.write(",".join(str(int(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def pgm16_bytes(img: RateImage) -> tuple[bytes, dict]:
    """16-bit binary PGM with linear scaling: 0 -> 0, max rate -> 65535.

    Returns the file bytes and the sidecar dict describing the scaling.
    """
    rates = img.rates
    max_rate = float(rates.max()) if rates.size else 0.0
    if max_rate > 0:
        levels = np.round(rates / max_rate * 65535.0).astype(np.uint16)
        rate_per_level = max_rate / 65535.0
    else:
        levels = np.zeros_like(rates, dtype=np.uint16)
        rate_per_level = 0.0
    h, w = rates.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    sidecar = {
        "format": "pgm16",
        "rows": "tof_bins",
        "cols": "shot_columns",
        "max_rate_hz": max_rate,
        "rate_per_level_hz": rate_per_level,
        "tof_width_s": img.resolution.tof_width,
        "shots_per_col": img.resolution.shots_per_col,
    }
    return header + levels.astype(">u2").tobytes(), sidecar


def table_csv(columns: list[str], rows: list[tuple]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class OutputDir:
    """Collects artifact files in a directory and writes a hash manifest."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._entries: dict[str, dict] = {}

    def _record(self, name: str, data: bytes):
        self._entries[name] = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        }

    def write_bytes(self, name: str, data: bytes) -> None:
        (self.path / name).write_bytes(data)
        self._record(name, data)

    def register(self, name: str) -> None:
        """Add an already-written file in this directory to the manifest."""
        self._record(name, (self.path / name).read_bytes())

    def write_text(self, name: str, text: str) -> None:
        self.write_bytes(name, text.encode("utf-8"))

    def write_rate_image(self, stem: str, img: RateImage) -> None:
        self.write_text(f"{stem}.csv", rate_image_csv(img))
        pgm, sidecar = pgm16_bytes(img)
        self.write_bytes(f"{stem}.pgm", pgm)
        self.write_text(f"{stem}.pgm.json", json_dumps(sidecar))

    def write_manifest(self) -> Path:
        manifest = json_dumps({"files": self._entries})
        target = self.path / "manifest.json"
        target.write_text(manifest)
        return target


def write_cf_outputs(out, result, config_echo: dict,
                     extra_summary: dict | None = None) -> Path:
    """Write the artifacts of a coarse-to-fine run and return the manifest
    path: final image, per-step table, eta candidates, winner traces, and
    a JSON summary."""
    out = OutputDir(out)
    if result.final is not None:
        out.write_rate_image("final_rates", result.final)
    step_rows = [(i, s.tof_scale, s.shot_scale, float(s.eta), float(s.val_nll))
                 for i, s in enumerate(result.steps)]
    out.write_text("steps.csv", table_csv(
        ["step", "tof_scale", "shot_scale", "eta", "val_nll"], step_rows))
    cand_rows = [(i, float(eta), float(nll))
                 for i, s in enumerate(result.steps)
                 for eta, nll in s.candidates]
    out.write_text("eta_candidates.csv",
                   table_csv(["step", "eta", "val_nll"], cand_rows))
    for i, s in enumerate(result.steps):
        out.write_text(f"trace_step{i}.csv", s.trace.to_csv())
    if result.background is not None:
        out.write_text("background.csv", table_csv(
            ["column", "rate_hz"],
            [(q, float(r)) for q, r in enumerate(result.background.rates)]))
    summary = {
        "config": config_echo,
        "shots_fit": result.shots_fit,
        "shots_val": result.shots_val,
        "steps": [
            {"tof_scale": s.tof_scale, "shot_scale": s.shot_scale,
             "eta": float(s.eta), "val_nll": float(s.val_nll)}
            for s in result.steps
        ],
        "final_val_nll": (float(result.final_val_nll)
                          if result.steps else None),
        "aborted": result.aborted,
    }
    if extra_summary:
        summary.update(extra_summary)
    out.write_text("summary.json", json_dumps(summary))
    return out.write_manifest()
