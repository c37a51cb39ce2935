"""Dataset storage (CSV + JSON sidecar) and the synthetic data generator."""

from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .model import PRESETS, EncodeRecord
from .profile import ALL_EVENTS, PARENT_EVENT, EventVector

SCHEMA_VERSION = 1
BASE_COLUMNS = ("sequence_id", "preset", "crf", "pixels", "energy_j", "time_s")
EVENT_COLUMNS = tuple(e.value for e in ALL_EVENTS)
UF_COLUMNS = tuple("uf_" + e for e in EVENT_COLUMNS)
COLUMNS = BASE_COLUMNS + EVENT_COLUMNS + UF_COLUMNS
PROVENANCE_KEYS = ("host", "cpu_model", "encoder_version", "profiler_version", "created_at")


@dataclass
class Dataset:
    records: list[EncodeRecord]
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    #: cells that could not be collected, as {"sequence_id", "preset", "crf", "reason"}
    gaps: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.records = list(self.records)
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise DatasetError(f"duplicate record {r.key}")
            seen.add(r.key)

    def __len__(self) -> int:
        return len(self.records)

    def presets(self) -> list[str]:
        return [p for p in PRESETS if any(r.preset == p for r in self.records)]

    def filter(self, *, preset: str | None = None, crf: int | None = None) -> list[EncodeRecord]:
        return [r for r in self.records
                if (preset is None or r.preset == preset) and (crf is None or r.crf == crf)]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_dataset(dataset: Dataset, path, *, overwrite: bool = True) -> None:
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; refusing to overwrite")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in dataset.records:
            row = [r.sequence_id, r.preset, r.crf, r.pixels, _fmt(r.energy_j), _fmt(r.time_s)]
            for vec in (r.events, r.events_uf):
                row += [_fmt(vec.get(e)) if vec is not None else "" for e in ALL_EVENTS]
            writer.writerow(row)
    meta = {
        "schema_version": dataset.schema_version,
        "provenance": dataset.provenance,
        "gaps": dataset.gaps,
        "columns": list(COLUMNS),
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def _vector(row: Mapping[str, str], prefix: str) -> EventVector | None:
    counts = {e: row[prefix + e.value] for e in ALL_EVENTS if row.get(prefix + e.value, "") != ""}
    if not counts:
        return None
    return EventVector({e: int(v) for e, v in counts.items()})


def _opt_float(text: str) -> float | None:
    return float(text) if text != "" else None


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = {}
    if sidecar_path(path).exists():
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
    version = meta.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise DatasetError(f"unsupported dataset schema_version {version}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in BASE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(EncodeRecord(
                    sequence_id=row["sequence_id"],
                    preset=row["preset"],
                    crf=int(row["crf"]),
                    pixels=int(row["pixels"]),
                    energy_j=_opt_float(row["energy_j"]),
                    time_s=_opt_float(row["time_s"]),
                    events=_vector(row, ""),
                    events_uf=_vector(row, "uf_"),
                ))
            except (ValueError, KeyError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return Dataset(records, meta.get("provenance", {}), version, meta.get("gaps", []))


# --------------------------------------------------------------------------
# synthetic data

#: counts per instruction read, a typical x265 mix
EVENT_RATIOS = {
    "Ir": 1.0, "Dr": 0.42, "Dw": 0.18, "I1mr": 0.002, "D1mr": 0.017, "D1mw": 0.009,
    "ILmr": 1e-4, "DLmr": 4e-4, "DLmw": 3e-4, "Bc": 0.11, "Bcm": 0.007, "Bi": 0.004,
    "Bim": 6e-4,
}
#: joules per event, before the per-preset perturbation
BASE_COEFFICIENTS = {
    "Ir": 1.2e-9, "Dr": 0.8e-9, "Dw": 1.0e-9, "I1mr": 2e-8, "D1mr": 1.5e-8, "D1mw": 1.5e-8,
    "ILmr": 1e-7, "DLmr": 1.2e-7, "DLmw": 1e-7, "Bc": 5e-10, "Bcm": 1e-8, "Bi": 1e-9,
    "Bim": 1e-8,
}
#: relative work per preset, ultrafast = 1
PRESET_WORK = dict(zip(PRESETS, (1.0, 1.75, 2.22, 2.23, 2.39, 2.74, 5.54, 17.3, 26.3)))
RESOLUTIONS = ((416, 240), (832, 480), (1280, 720), (1920, 1080), (2560, 1600), (3840, 2160))
INSTRUCTIONS_PER_PIXEL_UF = 150.0


@dataclass
class SynthSpec:
    presets: Sequence[str] = PRESETS
    n_sequences: int = 10
    crfs: Sequence[int] = (18, 23, 28, 33)
    #: preset -> event -> joules per event; drawn around BASE_COEFFICIENTS when None
    true_coefficients: Mapping[str, Mapping[str, float]] | None = None
    noise_rel: float = 0.0
    seed: int = 0
    frames: int = 8
    event_jitter: float = 0.15


@dataclass
class SynthTruth:
    coefficients: dict[str, dict[str, float]]
    #: record key -> multiplicative noise draw
    eta: dict[tuple[str, str, int], float]
    clean_energy: dict[tuple[str, str, int], float]


def _clamp_parents(counts: dict[str, int]) -> dict[str, int]:
    for child in ALL_EVENTS:
        parent = PARENT_EVENT.get(child)
        if parent is not None:
            counts[child.value] = min(counts[child.value], counts[parent.value])
    return counts


def linear_energy(counts: Mapping[str, int], coefficients: Mapping[str, float]) -> float:
    return math.fsum(counts[e] * coefficients[e] for e in coefficients)


def synth_dataset(spec: SynthSpec | None = None, **overrides) -> tuple[Dataset, SynthTruth]:
    """Synthetic encodes whose energy is exactly linear in the events, times ``1 + eta``.

    Every record shares a latent workload size (content complexity x CRF x
    preset work), so event counts are strongly correlated with each other and
    with energy; an independent per-event log-normal jitter keeps the design
    matrix well conditioned.  ``eta`` is normal with standard deviation
    ``noise_rel`` (clipped at -0.9).
    """
    spec = replace(spec or SynthSpec(), **overrides)
    presets = [p for p in PRESETS if p in set(spec.presets)]
    rng = np.random.default_rng(spec.seed)

    if spec.true_coefficients is None:
        coefficients = {
            p: {e: BASE_COEFFICIENTS[e] * float(rng.lognormal(0.0, 0.2)) for e in EVENT_COLUMNS}
            for p in presets
        }
    else:
        coefficients = {p: dict(spec.true_coefficients[p]) for p in presets}
    for p, coefs in coefficients.items():
        if any(v < 0 for v in coefs.values()):
            raise ValueError(f"true coefficients for {p} must be non-negative")

    mix = {p: {e: float(rng.lognormal(0.0, 0.1)) for e in EVENT_COLUMNS} for p in PRESETS}
    records = []
    eta_map, clean_map = {}, {}
    for s in range(spec.n_sequences):
        w, h = RESOLUTIONS[int(rng.integers(len(RESOLUTIONS)))]
        pixels = w * h * spec.frames
        complexity = float(rng.lognormal(0.0, 0.35))
        seq_id = f"seq{s:03d}_{w}x{h}"
        power = 40.0 * float(rng.lognormal(0.0, 0.1))
        for crf in spec.crfs:
            work = INSTRUCTIONS_PER_PIXEL_UF * pixels * complexity * math.exp(-0.03 * (crf - 23))
            uf_events = None
            for preset in PRESETS:
                jitter = rng.lognormal(0.0, spec.event_jitter, size=len(EVENT_COLUMNS))
                counts = {
                    e: int(round(work * PRESET_WORK[preset] * EVENT_RATIOS[e] * mix[preset][e] * j))
                    for e, j in zip(EVENT_COLUMNS, jitter)
                }
                events = EventVector(_clamp_parents(counts))
                if preset == "ultrafast":
                    uf_events = events
                eta = float(rng.normal(0.0, spec.noise_rel)) if spec.noise_rel > 0 else 0.0
                time_jitter = float(rng.lognormal(0.0, 0.03))
                if preset not in coefficients:
                    continue
                clean = linear_energy(events.as_dict(), coefficients[preset])
                eta = max(eta, -0.9)
                energy = clean * (1.0 + eta) if eta else clean
                key = (seq_id, preset, crf)
                eta_map[key] = eta
                clean_map[key] = clean
                records.append(EncodeRecord(
                    sequence_id=seq_id, preset=preset, crf=crf, events=events,
                    events_uf=uf_events, energy_j=energy,
                    time_s=clean / power * time_jitter, pixels=pixels,
                ))
    provenance = {
        "host": "synthetic",
        "cpu_model": "synthetic",
        "encoder_version": "synthetic",
        "profiler_version": "synthetic",
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "synth": {"seed": spec.seed, "noise_rel": spec.noise_rel,
                  "n_sequences": spec.n_sequences, "crfs": list(spec.crfs)},
    }
    return Dataset(records, provenance), SynthTruth(coefficients, eta_map, clean_map)


def save_truth(truth: SynthTruth, path) -> None:
    with open(path, "w") as fh:
        json.dump({"coefficients": truth.coefficients}, fh, indent=2)
        fh.write("\n")


def host_provenance(**extra) -> dict:
    info = {
        "host": os.uname().nodename,
        "cpu_model": _cpu_model(),
        "encoder_version": "",
        "profiler_version": "",
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    info.update(extra)
    return info


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return ""


def records_by_key(records: Iterable[EncodeRecord]) -> dict[tuple[str, str, int], EncodeRecord]:
    return {r.key: r for r in records}
