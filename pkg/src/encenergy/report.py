"""Per-preset energy normalised to a pixel count, measured against estimated."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

from .dataset import Dataset
from .errors import EmptyFilter, EncEnergyError
from .evaluation import format_table
from .model import MODES, PRESETS, EnergyModel, estimate_record

DEFAULT_NORMALIZER = 100_000


@dataclass(frozen=True)
class PixelReportRow:
    preset: str
    n: int
    measured: float
    #: model mode -> mean normalised estimate (absent when no model applies)
    estimates: dict[str, float] = field(default_factory=dict)
    #: measured increase over the previous preset in the table, percent
    increase_pct: float | None = None


def report_energy_per_pixels(dataset: Dataset, models: Iterable[EnergyModel],
                             normalizer: int = DEFAULT_NORMALIZER,
                             crf: int | None = None) -> list[PixelReportRow]:
    """Mean joules per ``normalizer`` pixels for each preset.

    Each record's energy is scaled by ``normalizer / pixels`` before
    averaging over the records of a preset; estimates use the same records.
    """
    by_key = {(m.preset, m.mode): m for m in models}
    rows: list[PixelReportRow] = []
    prev = None
    for preset in PRESETS:
        recs = [r for r in dataset.filter(preset=preset, crf=crf) if r.usable]
        if not recs:
            continue
        scale = [normalizer / r.pixels for r in recs]
        measured = math.fsum(r.energy_j * s for r, s in zip(recs, scale)) / len(recs)
        estimates = {}
        for mode in MODES:
            model = by_key.get((preset, mode))
            if model is None:
                continue
            try:
                vals = [estimate_record(model, r) * s for r, s in zip(recs, scale)]
            except EncEnergyError:
                continue
            estimates[mode] = math.fsum(vals) / len(vals)
        increase = None if prev is None else (measured / prev - 1.0) * 100.0
        rows.append(PixelReportRow(preset, len(recs), measured, estimates, increase))
        prev = measured
    if not rows:
        raise EmptyFilter(f"no records with energy for crf={crf}")
    return rows


def _columns(rows: list[PixelReportRow]) -> list[str]:
    return [m for m in MODES if any(m in r.estimates for r in rows)]


def report_header(rows: list[PixelReportRow]) -> list[str]:
    return ["preset", "n", "measured_j"] + [f"{m}_j" for m in _columns(rows)] + ["increase_pct"]


def report_csv(rows: list[PixelReportRow]) -> str:
    modes = _columns(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report_header(rows))
    for r in rows:
        writer.writerow([r.preset, r.n, repr(r.measured)]
                        + [repr(r.estimates[m]) if m in r.estimates else "" for m in modes]
                        + ["" if r.increase_pct is None else f"{r.increase_pct:.1f}"])
    return buf.getvalue()


def report_body(rows: list[PixelReportRow]) -> list[list[str]]:
    modes = _columns(rows)
    return [[r.preset, str(r.n), f"{r.measured:.4g}"]
            + [f"{r.estimates[m]:.4g}" if m in r.estimates else "-" for m in modes]
            + ["-" if r.increase_pct is None else f"{r.increase_pct:+.1f}"]
            for r in rows]


def report_table(rows: list[PixelReportRow]) -> str:
    return format_table(report_header(rows), report_body(rows))
