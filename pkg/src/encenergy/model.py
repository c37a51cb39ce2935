"""Linear processor-event energy models.

Two models share one linear form, ``E = sum_i n_i * e_i``:

* posterior: ``n_i`` are the events of the very encode being estimated;
* prior_uf: ``n_i`` come from the ultrafast encode of the same content and
  CRF, with one coefficient set trained per target preset.

A third mode, ``time_baseline``, is the same fitter applied to the single
feature ``time_s``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDesign, InsufficientData, MissingEvents, ZeroVariance
from .nnls import nnls
from .profile import ALL_EVENTS, EventVector, as_event_ids

log = logging.getLogger(__name__)

PRESETS: tuple[str, ...] = (
    "ultrafast", "superfast", "veryfast", "faster", "fast",
    "medium", "slow", "slower", "veryslow",
)
MODES: tuple[str, ...] = ("posterior", "prior_uf", "time_baseline")
TIME_FEATURE = "time_s"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EncodeRecord:
    """One (sequence, preset, CRF) encode."""

    sequence_id: str
    preset: str
    crf: int
    events: EventVector | None
    energy_j: float | None = None
    time_s: float | None = None
    pixels: int = 1
    events_uf: EventVector | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.pixels <= 0:
            raise ValueError("pixels must be positive")
        if self.time_s is not None and not self.time_s > 0:
            raise ValueError("time_s must be positive")
        if (self.preset == "ultrafast" and self.events_uf is not None
                and self.events is not None and self.events_uf != self.events):
            raise ValueError("ultrafast record: events_uf must equal events")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.sequence_id, self.preset, self.crf)

    @property
    def bitstream_id(self) -> str:
        return f"{self.sequence_id}@crf{self.crf}"

    @property
    def usable(self) -> bool:
        return self.energy_j is not None and self.energy_j > 0


@dataclass(frozen=True)
class FitMeta:
    training_record_count: int
    objective_value: float
    solver_iterations: int
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class EnergyModel:
    preset: str
    mode: str
    coefficients: Mapping[str, float]
    feature_mask: tuple[str, ...] = field(default=())
    fit_meta: FitMeta | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        coefs = {str(k): float(v) for k, v in dict(self.coefficients).items()}
        mask = tuple(str(m) for m in self.feature_mask) or tuple(coefs)
        if set(mask) != set(coefs):
            raise ValueError("coefficient keys must equal the feature mask")
        if any(not v >= 0 for v in coefs.values()):
            raise ValueError("coefficients must be non-negative")
        if self.mode == "time_baseline":
            if mask != (TIME_FEATURE,):
                raise ValueError("time_baseline models use the single feature time_s")
        else:
            mask = tuple(e.value for e in as_event_ids(mask))
        object.__setattr__(self, "coefficients", {m: coefs[m] for m in mask})
        object.__setattr__(self, "feature_mask", mask)


def _estimate(model: EnergyModel, events: EventVector) -> float:
    restricted = events.restrict(model.feature_mask)
    return math.fsum(restricted[name] * model.coefficients[name] for name in model.feature_mask)


def estimate_posterior(model: EnergyModel, events: EventVector) -> float:
    """Energy of an encode from its own event counts, in joules."""
    if model.mode != "posterior":
        raise ValueError(f"expected a posterior model, got {model.mode}")
    return _estimate(model, events)


def estimate_prior(model: EnergyModel, events_uf: EventVector) -> float:
    """Energy of a ``model.preset`` encode from the ultrafast encode's counts."""
    if model.mode != "prior_uf":
        raise ValueError(f"expected a prior_uf model, got {model.mode}")
    return _estimate(model, events_uf)


def estimate_time(model: EnergyModel, time_s: float) -> float:
    if model.mode != "time_baseline":
        raise ValueError(f"expected a time_baseline model, got {model.mode}")
    return time_s * model.coefficients[TIME_FEATURE]


def estimate_record(model: EnergyModel, record: EncodeRecord) -> float:
    """Apply ``model`` to whichever inputs of ``record`` its mode needs."""
    if model.mode == "posterior":
        if record.events is None:
            raise MissingEvents(model.feature_mask)
        return estimate_posterior(model, record.events)
    if model.mode == "prior_uf":
        if record.events_uf is None:
            raise MissingEvents(model.feature_mask)
        return estimate_prior(model, record.events_uf)
    if record.time_s is None:
        raise InsufficientData(f"record {record.key} has no encoding time")
    return estimate_time(model, record.time_s)


# --------------------------------------------------------------------------
# fitting

def default_mask(mode: str) -> tuple[str, ...]:
    if mode == "time_baseline":
        return (TIME_FEATURE,)
    return tuple(e.value for e in ALL_EVENTS)


def feature_row(record: EncodeRecord, mode: str, mask: Sequence[str]) -> list[float]:
    if mode == "time_baseline":
        if record.time_s is None:
            raise InsufficientData(f"record {record.key} has no encoding time")
        return [float(record.time_s)]
    vec = record.events if mode == "posterior" else record.events_uf
    if vec is None:
        what = "events" if mode == "posterior" else "ultrafast events"
        raise InsufficientData(f"record {record.key} has no {what}")
    vec = vec.restrict(mask)
    return [float(vec[m]) for m in mask]


def relative_objective(X, y, coefficients) -> float:
    """Sum of squared relative residuals ``((X e - y) / y)**2``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    pred = X @ np.asarray(coefficients, dtype=float)
    return math.fsum(((pred - y) / y) ** 2)


def fit(records: Iterable[EncodeRecord], mode: str = "posterior", preset: str | None = None,
        feature_mask: Iterable | None = None, *, tol: float = 1e-10,
        max_iter: int = 500) -> EnergyModel:
    """Fit non-negative per-event energies for one preset.

    Minimises the sum of squared *relative* residuals, i.e. ordinary least
    squares after dividing every row by its measured energy, subject to
    every coefficient being ``>= 0``.  Records are put into a canonical order
    first, so the result does not depend on the caller's ordering.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    records = list(records)
    if preset is None:
        presets = {r.preset for r in records}
        if len(presets) != 1:
            raise ValueError("records span several presets; pass preset=")
        preset = presets.pop()
    mask = tuple(feature_mask) if feature_mask is not None else default_mask(mode)
    if mode != "time_baseline":
        mask = tuple(e.value for e in as_event_ids(mask))
    if not mask:
        raise ValueError("empty feature mask")

    mine = [r for r in records if r.preset == preset]
    usable = [r for r in mine if r.usable]
    if len(usable) < len(mine):
        log.info("fit %s/%s: excluded %d record(s) without positive energy",
                 preset, mode, len(mine) - len(usable))
    if len(usable) < len(mask):
        raise InsufficientData(
            f"{preset}/{mode}: {len(usable)} usable records for {len(mask)} coefficients"
        )

    rows = [(feature_row(r, mode, mask), float(r.energy_j), r.sequence_id, r.crf) for r in usable]
    rows.sort(key=lambda t: (t[2], t[3], t[0], t[1]))
    X = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=float)

    A = X / y[:, None]
    norms = np.linalg.norm(A, axis=0)
    live = norms > 0
    if not live.all():
        dead = [m for m, ok in zip(mask, live) if not ok]
        warnings.warn(f"{preset}/{mode}: all-zero feature column(s) {dead}; coefficients fixed to 0",
                      DegenerateDesign, stacklevel=2)
    if not live.any():
        raise InsufficientData(f"{preset}/{mode}: every feature column is zero")

    z, iterations = nnls(A[:, live] / norms[live], np.ones(len(y)), tol=tol, max_iter=max_iter)
    coef = np.zeros(len(mask))
    coef[live] = z / norms[live]

    return EnergyModel(
        preset=preset,
        mode=mode,
        coefficients=dict(zip(mask, coef.tolist())),
        feature_mask=mask,
        fit_meta=FitMeta(
            training_record_count=len(y),
            objective_value=relative_objective(X, y, coef),
            solver_iterations=iterations,
        ),
    )


def fit_all(records: Iterable[EncodeRecord], mode: str = "posterior",
            feature_mask: Iterable | None = None, presets: Iterable[str] | None = None
            ) -> dict[str, EnergyModel]:
    """One model per preset present in ``records`` (ultrafast skipped for prior_uf)."""
    records = list(records)
    wanted = list(presets) if presets is not None else [p for p in PRESETS if any(r.preset == p for r in records)]
    if mode == "prior_uf":
        wanted = [p for p in wanted if p != "ultrafast"]
    return {p: fit(records, mode, p, feature_mask) for p in wanted}


# --------------------------------------------------------------------------
# correlation

def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation coefficient, clamped to [-1, 1]."""
    if len(xs) != len(ys):
        raise ValueError("xs and ys differ in length")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("one of the inputs has zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def correlation_table(records: Iterable[EncodeRecord], events: Iterable = ALL_EVENTS
                      ) -> dict[str, float]:
    """Pearson correlation of each event count with measured energy.

    Events that are constant across records are left out with a warning.
    """
    records = [r for r in records if r.usable and r.events is not None]
    if len(records) < 2:
        raise InsufficientData("correlation needs at least two records with energy")
    energy = [float(r.energy_j) for r in records]
    table = {}
    for e in as_event_ids(events):
        if not all(e in r.events for r in records):
            log.warning("event %s missing from some records; skipped", e)
            continue
        try:
            table[e.value] = pearson([float(r.events[e]) for r in records], energy)
        except ZeroVariance:
            warnings.warn(f"event {e} has zero variance; no correlation reported", stacklevel=2)
    return table


# --------------------------------------------------------------------------
# model files

def model_to_dict(model: EnergyModel) -> dict:
    meta = model.fit_meta
    return {
        "preset": model.preset,
        "mode": model.mode,
        "feature_mask": list(model.feature_mask),
        # json floats are written with repr(), which round-trips exactly
        "coefficients": dict(model.coefficients),
        "fit_meta": None if meta is None else {
            "training_record_count": meta.training_record_count,
            "objective_value": meta.objective_value,
            "solver_iterations": meta.solver_iterations,
            "schema_version": meta.schema_version,
        },
    }


def model_from_dict(data: Mapping) -> EnergyModel:
    meta = data.get("fit_meta")
    return EnergyModel(
        preset=data["preset"],
        mode=data["mode"],
        coefficients={k: float(v) for k, v in data["coefficients"].items()},
        feature_mask=tuple(data["feature_mask"]),
        fit_meta=None if meta is None else FitMeta(**meta),
    )


def save_models(models: Iterable[EnergyModel], path) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "models": [model_to_dict(m) for m in models]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_models(path) -> list[EnergyModel]:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {version!r}")
    return [model_from_dict(d) for d in payload["models"]]


def select_model(models: Iterable[EnergyModel], preset: str, mode: str) -> EnergyModel:
    for m in models:
        if m.preset == preset and m.mode == mode:
            return m
    raise KeyError(f"no {mode} model for preset {preset}")
