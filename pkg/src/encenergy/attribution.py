"""Split estimated encoding energy across encoder sub-processes.

Each function's self cost is turned into joules with a posterior model's
per-event energies; functions are then bucketed by an ordered list of glob
rules (first match wins).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from importlib import resources

from .errors import EmptyProfile, LowCoverage, ParseError
from .model import EnergyModel, estimate_posterior
from .profile import FunctionProfile

DEFAULT_CATEGORY = "uncategorized"
COVERAGE_WARNING = 0.9
FILE_PREFIX = "file:"

#: Categories of the shipped x265 map, in display order.
X265_CATEGORIES = (
    "entropy", "quant-and-transform", "in-loop", "intra-mode-search",
    "intra-prediction", "frame-level-init", "global-init", "ctu-cu-preproc",
)


@dataclass(frozen=True)
class CategoryMap:
    rules: tuple[tuple[str, str], ...] = ()
    default_category: str = DEFAULT_CATEGORY

    def __post_init__(self):
        rules = tuple((str(p), str(c)) for p, c in self.rules)
        for pattern, category in rules:
            if not pattern or pattern == FILE_PREFIX:
                raise ValueError("empty pattern")
            if not category:
                raise ValueError(f"empty category for pattern {pattern!r}")
        object.__setattr__(self, "rules", rules)

    def match(self, function_name: str, source_file: str = "") -> str | None:
        """Category of the first matching rule, or None."""
        for pattern, category in self.rules:
            if pattern.startswith(FILE_PREFIX):
                if fnmatchcase(source_file, pattern[len(FILE_PREFIX):]):
                    return category
            elif fnmatchcase(function_name, pattern):
                return category
        return None

    def categorize(self, function_name: str, source_file: str = "") -> str:
        return self.match(function_name, source_file) or self.default_category


def load_category_map(source: str) -> CategoryMap:
    """Parse ``glob => category`` lines; ``#`` starts a comment."""
    rules = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        pattern, sep, category = line.partition("=>")
        pattern, category = pattern.strip(), category.strip()
        if not sep or not pattern or not category or pattern == FILE_PREFIX:
            raise ParseError(lineno, f"expected '<glob> => <category>', got {raw.strip()!r}")
        rules.append((pattern, category))
    return CategoryMap(tuple(rules))


def default_x265_map() -> CategoryMap:
    text = resources.files("encenergy").joinpath("data/x265_categories.map").read_text()
    return load_category_map(text)


@dataclass(frozen=True)
class CategoryShare:
    energy_j: float
    fraction: float


@dataclass(frozen=True)
class AttributionReport:
    per_category: dict[str, CategoryShare]
    total_j: float
    coverage: float
    function_energy: dict[tuple[str, str], float] = field(default_factory=dict)

    def ranked(self) -> list[tuple[str, CategoryShare]]:
        return sorted(self.per_category.items(), key=lambda kv: (-kv[1].energy_j, kv[0]))


def attribute(functions: Iterable[FunctionProfile], model: EnergyModel,
              category_map: CategoryMap) -> AttributionReport:
    """Per-category energy from per-function self costs.

    ``coverage`` is the share of event mass (summed counts over the model's
    features) landing in a rule-matched category.
    """
    functions = list(functions)
    if not functions:
        raise EmptyProfile("profile has no function records")

    by_category: dict[str, list[float]] = {}
    per_function: dict[tuple[str, str], float] = {}
    matched_mass = []
    all_mass = []
    for fn in functions:
        energy = estimate_posterior(model, fn.counts)
        category = category_map.match(fn.function_name, fn.source_file)
        mass = sum(fn.counts[e] for e in model.feature_mask)
        all_mass.append(mass)
        if category is None:
            category = category_map.default_category
        else:
            matched_mass.append(mass)
        by_category.setdefault(category, []).append(energy)
        per_function[fn.key] = per_function.get(fn.key, 0.0) + energy

    totals = {c: math.fsum(v) for c, v in by_category.items()}
    total = math.fsum(e for v in by_category.values() for e in v)
    shares = {
        c: CategoryShare(energy_j=e, fraction=(e / total if total > 0 else 0.0))
        for c, e in totals.items()
    }
    mass_total = sum(all_mass)
    coverage = sum(matched_mass) / mass_total if mass_total else 0.0
    if coverage < COVERAGE_WARNING:
        warnings.warn(f"category rules cover only {coverage:.1%} of event mass",
                      LowCoverage, stacklevel=2)
    return AttributionReport(per_category=shares, total_j=total, coverage=coverage,
                             function_energy=per_function)


REPORT_COLUMNS = ("category", "energy_j", "percent")


def report_rows(report: AttributionReport) -> list[list[str]]:
    rows = [[c, f"{s.energy_j:.6g}", f"{100 * s.fraction:.1f}"] for c, s in report.ranked()]
    rows.append(["total", f"{report.total_j:.6g}", "100.0"])
    return rows


def report_csv(report: AttributionReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for c, s in report.ranked():
        writer.writerow([c, repr(s.energy_j), f"{100 * s.fraction:.1f}"])
    writer.writerow(["total", repr(report.total_j), "100.0"])
    return buf.getvalue()
