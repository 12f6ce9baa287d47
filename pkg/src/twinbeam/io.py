"""Experiment configs (JSON) and pulse datasets (checksummed CSV) on disk.

A dataset file looks like::

    # twinbeam-dataset v1; kind=twin_beam; seed=7; n=300000
    {"kind": "twin_beam", ...}
    pulse_id,s1,s2
    0,630104,622815
    ...
    # sha256=<hex of every byte above this line>

Readings are printed with 17 significant digits so doubles survive exactly.
All writes go to a temporary file in the target directory and are renamed
into place.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .conditioning import ConditioningSpec
from .errors import (ChecksumError, ConfigParseError, DatasetFormatError, ParameterError,
                     TruncatedFileError, VersionError)
from .model import Dataset, DetectorParams, Kind, SourceParams

FORMAT_VERSION = 1
DEFAULT_N_PULSES = 300_000

_HEADER_RE = re.compile(r"^# twinbeam-dataset v(\d+); kind=(\w+); seed=(-?\d+); n=(\d+)$")
_SUM_PREFIX = b"# sha256="
_COLUMNS = "pulse_id,s1,s2"


def atomic_write(path, data: bytes):
    """Write ``data`` to ``path`` through a temp file and ``os.replace``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- datasets ---------------------------------------------------------------

def dataset_to_bytes(ds: Dataset) -> bytes:
    meta = ds.metadata()
    head = (f"# twinbeam-dataset v{FORMAT_VERSION}; kind={ds.kind.value}; "
            f"seed={ds.seed}; n={ds.n_pulses}\n"
            f"{json.dumps(meta, sort_keys=True)}\n{_COLUMNS}\n")
    buf = io.StringIO()
    if ds.n_pulses:
        table = np.column_stack([ds.pulse_id.astype(float), ds.s1, ds.s2])
        np.savetxt(buf, table, fmt=("%d", "%.17g", "%.17g"), delimiter=",")
    body = (head + buf.getvalue()).encode("utf-8")
    return body + _SUM_PREFIX + hashlib.sha256(body).hexdigest().encode() + b"\n"


def save_dataset(path, ds: Dataset):
    atomic_write(path, dataset_to_bytes(ds))


def _split_checksum(raw: bytes) -> Tuple[bytes, str]:
    if not raw.endswith(b"\n"):
        raise TruncatedFileError("file does not end with a newline; it was cut short")
    cut = raw.rfind(b"\n", 0, len(raw) - 1) + 1
    last = raw[cut:-1]
    if not last.startswith(_SUM_PREFIX):
        raise TruncatedFileError("trailing checksum line is missing; the file was cut short")
    return raw[:cut], last[len(_SUM_PREFIX):].decode("ascii", "replace")


def _dataset_from_meta(meta: dict, s1, s2) -> Dataset:
    try:
        src = meta.get("source")
        cm = meta.get("coherent_means")
        return Dataset(
            kind=Kind(meta["kind"]),
            detectors=tuple(DetectorParams(**d) for d in meta["detectors"]),
            seed=int(meta["seed"]), s1=s1, s2=s2,
            source=None if src is None else SourceParams(**src),
            coherent_means=None if cm is None else tuple(cm),
            clamp_events=int(meta.get("clamp_events", 0)),
            block_size=int(meta.get("block_size", 0)) or 8192)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"metadata line is not a valid dataset description: {exc}") from exc


def dataset_from_bytes(raw: bytes) -> Dataset:
    first = raw.split(b"\n", 1)[0].decode("utf-8", "replace")
    m = _HEADER_RE.match(first)
    if m is None:
        if first.startswith("# twinbeam-dataset"):
            raise VersionError(f"unreadable dataset header {first!r}")
        raise DatasetFormatError("not a twinbeam dataset (header line missing)")
    if int(m.group(1)) != FORMAT_VERSION:
        raise VersionError(f"dataset format v{m.group(1)} is not supported (expected v{FORMAT_VERSION})")
    n = int(m.group(4))

    body, digest = _split_checksum(raw)
    if hashlib.sha256(body).hexdigest() != digest:
        raise ChecksumError("sha256 of the file body does not match its checksum line")

    lines = body.split(b"\n", 3)
    if len(lines) < 4 or lines[2].decode() != _COLUMNS:
        raise DatasetFormatError(f"expected a metadata line and the column header {_COLUMNS!r}")
    meta = json.loads(lines[1])
    rows = lines[3]
    if n:
        table = np.loadtxt(io.BytesIO(rows), delimiter=",", dtype=float, ndmin=2)
    else:
        table = np.empty((0, 3))
    if table.shape != (n, 3):
        raise TruncatedFileError(f"header promises {n} pulses, found {table.shape[0]}")
    if not np.array_equal(table[:, 0], np.arange(n)):
        raise DatasetFormatError("pulse_id column is not 0..n-1 in order")
    if meta.get("n_pulses") != n or meta.get("kind") != m.group(2) or meta.get("seed") != int(m.group(3)):
        raise DatasetFormatError("header and metadata line disagree")
    return _dataset_from_meta(meta, table[:, 1].copy(), table[:, 2].copy())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def dataset_digest(ds: Dataset) -> str:
    """Content hash of a dataset, independent of where it is stored."""
    return hashlib.sha256(dataset_to_bytes(ds)).hexdigest()


# -- experiment configs -----------------------------------------------------

@dataclass(frozen=True)
class PumpSweep:
    powers_mW: Tuple[float, ...]
    gain_coeff: float

    def __post_init__(self):
        object.__setattr__(self, "powers_mW", tuple(float(p) for p in self.powers_mW))
        if not self.powers_mW:
            raise ParameterError("powers_mW", "must list at least one pump power")
        for p in self.powers_mW:
            if not (math.isfinite(p) and p >= 0):
                raise ParameterError("powers_mW", f"pump powers must be finite and >= 0, got {p!r}")
        if not (math.isfinite(self.gain_coeff) and self.gain_coeff > 0):
            raise ParameterError("gain_coeff", f"must be > 0, got {self.gain_coeff!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to regenerate a set of runs.

    ``kind`` (default twin_beam) picks what ``simulate`` produces; calibration
    runs reuse the same detectors and seed under their own stream tag.
    """

    source: SourceParams
    detectors: Tuple[DetectorParams, DetectorParams]
    n_pulses: int = DEFAULT_N_PULSES
    seed: int = 0
    kind: Kind = Kind.TWIN_BEAM
    pump_sweep: Optional[PumpSweep] = None
    conditioning: Tuple[ConditioningSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.detectors) != 2:
            raise ParameterError("detectors", "exactly two detectors are required")
        if isinstance(self.n_pulses, bool) or not isinstance(self.n_pulses, int) or self.n_pulses < 1:
            raise ParameterError("n_pulses", f"must be a positive integer, got {self.n_pulses!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ParameterError("seed", f"must be a non-negative integer, got {self.seed!r}")

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "source": dataclasses.asdict(self.source),
            "detectors": [dataclasses.asdict(d) for d in self.detectors],
            "n_pulses": self.n_pulses,
            "seed": self.seed,
            "kind": Kind(self.kind).value,
            "pump_sweep": None if self.pump_sweep is None else
            {"powers_mW": list(self.pump_sweep.powers_mW), "gain_coeff": self.pump_sweep.gain_coeff},
            "conditioning": [c.to_dict() for c in self.conditioning],
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


_SOURCE_KEYS = {f.name for f in dataclasses.fields(SourceParams)}
_DETECTOR_KEYS = {f.name for f in dataclasses.fields(DetectorParams)}
_TOP_KEYS = {"source", "detectors", "n_pulses", "seed", "kind", "pump_sweep", "conditioning"}
_REQUIRED_TOP = ("source", "detectors")


def _check_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise ParameterError(where or "config", "must be a JSON object")
    for key in obj:
        if key not in allowed:
            raise ParameterError(f"{where}.{key}" if where else key, "unknown key")
    for key in required:
        if key not in obj:
            raise ParameterError(f"{where}.{key}" if where else key, "is required")


def _build(where, factory, kwargs):
    # re-raise nested invariant failures with the full dotted path
    try:
        return factory(**kwargs)
    except ParameterError as exc:
        raise ParameterError(f"{where}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except (TypeError, ValueError) as exc:
        raise ParameterError(where, f"invalid value ({exc})") from None


def config_from_dict(d: dict) -> ExperimentConfig:
    _check_keys(d, _TOP_KEYS, "", _REQUIRED_TOP)
    _check_keys(d["source"], _SOURCE_KEYS, "source", ("n_mean_per_mode", "matched_modes"))
    source = _build("source", SourceParams, d["source"])

    dets = d["detectors"]
    if not isinstance(dets, list) or len(dets) != 2:
        raise ParameterError("detectors", "must be a list of exactly two detector objects")
    detectors = []
    for i, det in enumerate(dets):
        _check_keys(det, _DETECTOR_KEYS, f"detectors[{i}]", ("efficiency",))
        detectors.append(_build(f"detectors[{i}]", DetectorParams, det))

    try:
        kind = Kind(d.get("kind", Kind.TWIN_BEAM.value))
    except ValueError:
        raise ParameterError("kind", f"must be one of {[k.value for k in Kind]}, got {d['kind']!r}") from None

    pump = d.get("pump_sweep")
    if pump is not None:
        _check_keys(pump, {"powers_mW", "gain_coeff"}, "pump_sweep", ("powers_mW", "gain_coeff"))
        if not isinstance(pump["powers_mW"], list):
            raise ParameterError("pump_sweep.powers_mW", "must be a list of numbers")
        pump = _build("pump_sweep", PumpSweep, pump)

    specs = d.get("conditioning") or []
    if not isinstance(specs, list):
        raise ParameterError("conditioning", "must be a list of conditioning specs")
    cond = []
    for i, s in enumerate(specs):
        _check_keys(s, {"q", "center", "level"}, f"conditioning[{i}]", ("q",))
        cond.append(_build(f"conditioning[{i}]", ConditioningSpec, s))

    kwargs = {k: d[k] for k in ("n_pulses", "seed") if k in d}
    return ExperimentConfig(source=source, detectors=tuple(detectors), kind=kind,
                            pump_sweep=pump, conditioning=tuple(cond), **kwargs)


def load_config(path) -> ExperimentConfig:
    """Read and fully validate a JSON experiment config.

    A missing file raises ``FileNotFoundError``, malformed JSON raises
    :class:`ConfigParseError`, and any invariant failure raises
    :class:`ParameterError` naming the first offending field.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        d = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"{path}: not valid UTF-8 JSON: {exc}") from exc
    return config_from_dict(d)


def config_to_bytes(cfg: ExperimentConfig) -> bytes:
    return (json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def save_config(path, cfg: ExperimentConfig):
    atomic_write(path, config_to_bytes(cfg))


# -- small CSV tables -------------------------------------------------------

def write_table(path, columns: List[str], rows: List[list]):
    """Plot-ready CSV with a header row; floats keep 17 significant digits."""
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return "%.17g" % v
        return str(v)
    lines = [",".join(columns)] + [",".join(fmt(v) for v in row) for row in rows]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_table(path) -> dict:
    """Columns of a CSV written by :func:`write_table`, numeric where possible."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigParseError(f"{path}: empty table")
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ConfigParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
        for h, c in zip(header, cells):
            cols[h].append(c)
    out = {}
    for h, vals in cols.items():
        try:
            out[h] = np.array([float(v) if v != "" else math.nan for v in vals])
        except ValueError:
            out[h] = vals
    return out
