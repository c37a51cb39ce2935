"""Percentage errors, MAPE, confidence intervals and grouped k-fold CV."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

from .errors import EmptyInput, InsufficientSamples, TooFewGroups, ZeroMeasured
from .model import PRESETS, EncodeRecord, EnergyModel, estimate_record, fit

log = logging.getLogger(__name__)

#: two-sided z-scores for the supported confidence levels
Z_SCORES = {0.90: 1.645, 0.95: 1.96, 0.99: 2.576}


def z_score(confidence: float) -> float:
    for level, z in Z_SCORES.items():
        if math.isclose(confidence, level, abs_tol=1e-9):
            return z
    raise ValueError(f"unsupported confidence level {confidence}; use one of {sorted(Z_SCORES)}")


@dataclass(frozen=True)
class ErrorSample:
    preset: str
    bitstream_id: str
    r: float

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise ValueError("percentage error must be finite")


@dataclass(frozen=True)
class EvaluationResult:
    preset: str
    mape: float
    ci_low: float
    ci_high: float
    mean_err: float
    std_err: float
    n: int
    z: float


def percentage_error(estimated: float, measured: float) -> float:
    """Signed error of ``estimated`` relative to ``measured``, in percent."""
    if not measured > 0:
        raise ZeroMeasured(f"measured energy must be positive, got {measured}")
    return (estimated - measured) / measured * 100.0


def _values(samples) -> list[float]:
    return [s.r if isinstance(s, ErrorSample) else float(s) for s in samples]


def mape(samples: Iterable) -> float:
    values = _values(samples)
    if not values:
        raise EmptyInput("mape of an empty sample set")
    return math.fsum(abs(v) for v in values) / len(values)


def mean_std(samples: Iterable) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation."""
    values = _values(samples)
    n = len(values)
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def confidence_interval(samples: Iterable, confidence: float = 0.95) -> tuple[float, float]:
    """``mean -/+ z * s / sqrt(n)`` for the signed errors, s the sample std."""
    values = _values(samples)
    mean, std = mean_std(values)
    half = z_score(confidence) * std / math.sqrt(len(values))
    return mean - half, mean + half


def evaluate_samples(preset: str, samples: Sequence, confidence: float = 0.95) -> EvaluationResult:
    values = _values(samples)
    mean, std = mean_std(values)
    low, high = confidence_interval(values, confidence)
    return EvaluationResult(
        preset=preset, mape=mape(values), ci_low=low, ci_high=high,
        mean_err=mean, std_err=std, n=len(values), z=z_score(confidence),
    )


# --------------------------------------------------------------------------
# cross-validation

def kfold_split(records: Sequence, k: int = 10, seed: int = 0,
                group_key: Callable = lambda r: r.sequence_id) -> list[list]:
    """Partition records into ``k`` folds of whole groups.

    Groups are sorted, shuffled with ``seed`` and dealt round-robin, so fold
    sizes (in groups) differ by at most one and the result does not depend on
    input order.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    groups = sorted({group_key(r) for r in records})
    if len(groups) < k:
        raise TooFewGroups(f"{len(groups)} groups cannot fill {k} folds")
    random.Random(seed).shuffle(groups)
    fold_of = {g: i % k for i, g in enumerate(groups)}
    folds: list[list] = [[] for _ in range(k)]
    for r in records:
        folds[fold_of[group_key(r)]].append(r)
    return folds


@dataclass
class CrossValidation:
    mode: str
    k: int
    confidence: float
    rows: list[EvaluationResult]
    errors: list[ErrorSample]
    #: per fold: (training record keys, validation record keys)
    fold_keys: list[tuple[frozenset, frozenset]] = field(default_factory=list)

    @property
    def average(self) -> float:
        """Unweighted mean of the per-preset MAPEs."""
        return math.fsum(r.mape for r in self.rows) / len(self.rows)

    def row(self, preset: str) -> EvaluationResult:
        for r in self.rows:
            if r.preset == preset:
                return r
        raise KeyError(preset)


def cross_validate(records: Sequence[EncodeRecord], k: int = 10, mode: str = "posterior",
                   feature_mask: Iterable | None = None, confidence: float = 0.95,
                   seed: int = 0) -> CrossValidation:
    """Grouped k-fold CV of per-preset models.

    Validation errors are pooled across folds per preset before computing
    MAPE and the interval.  The prior_uf mode has no ultrafast row.
    """
    mask = tuple(feature_mask) if feature_mask is not None else None
    records = list(records)
    folds = kfold_split(records, k, seed)
    presets = [p for p in PRESETS if any(r.preset == p for r in records)]
    if mode == "prior_uf":
        presets = [p for p in presets if p != "ultrafast"]

    errors: dict[str, list[ErrorSample]] = {p: [] for p in presets}
    fold_keys = []
    for i, validation in enumerate(folds):
        held = {r.key for r in validation}
        training = [r for r in records if r.key not in held]
        fold_keys.append((frozenset(r.key for r in training), frozenset(held)))
        for preset in presets:
            targets = [r for r in validation if r.preset == preset and r.usable]
            if not targets:
                continue
            model: EnergyModel = fit(training, mode, preset, mask)
            for r in targets:
                est = estimate_record(model, r)
                errors[preset].append(
                    ErrorSample(preset, r.bitstream_id, percentage_error(est, r.energy_j))
                )
        log.debug("fold %d: %d training, %d validation records", i, len(training), len(validation))

    rows = [evaluate_samples(p, errors[p], confidence) for p in presets if errors[p]]
    if not rows:
        raise InsufficientSamples("no preset produced validation errors")
    pooled = [s for p in presets for s in errors[p]]
    return CrossValidation(mode=mode, k=k, confidence=confidence, rows=rows,
                           errors=pooled, fold_keys=fold_keys)


# --------------------------------------------------------------------------
# output

COLUMNS = ("preset", "mape_pct", "ci_low_pct", "ci_high_pct", "n")


def result_rows(cv: CrossValidation) -> list[list[str]]:
    out = [[r.preset, f"{r.mape:.4f}", f"{r.ci_low:.4f}", f"{r.ci_high:.4f}", str(r.n)]
           for r in cv.rows]
    out.append(["average", f"{cv.average:.4f}", "", "", str(sum(r.n for r in cv.rows))])
    return out


def to_csv(cv: CrossValidation) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    writer.writerows(result_rows(cv))
    return buf.getvalue()


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain-text table: first column left-aligned, the rest right-aligned."""
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]

    def line(cells):
        parts = [str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i])
                 for i, c in enumerate(cells)]
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule] + [line(r) for r in rows]) + "\n"


def to_table(cv: CrossValidation) -> str:
    return format_table(COLUMNS, result_rows(cv))
