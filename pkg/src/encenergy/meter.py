"""Workload energy from the Linux powercap (RAPL) counters.

Energy of one run is ``E_total - E_idle`` where ``E_total`` is the counter
delta over the run and ``E_idle = P_idle * T`` uses an idle power measured
once per session with :func:`calibrate_idle`.
"""

from __future__ import annotations

import contextlib
import fcntl
import math
import os
import shlex
import subprocess
import tempfile
import threading
import time
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CommandFailed, DomainUnavailable, NegativeEnergy
from .evaluation import mean_std, z_score

POWERCAP_ROOT_ENV = "ENCENERGY_POWERCAP_ROOT"
LOCK_PATH_ENV = "ENCENERGY_LOCK_FILE"
DEFAULT_POWERCAP_ROOT = "/sys/class/powercap"
DEFAULT_DOMAIN = "package-0"
UJ_PER_J = 1_000_000
MIN_IDLE_WINDOW_S = 1.0
DEFAULT_IDLE_WINDOW_S = 60.0
SAMPLE_PERIOD_S = 1.0


@dataclass(frozen=True)
class CounterReading:
    timestamp: int  # monotonic ns
    raw_energy: int  # cumulative uJ
    domain: str


def powercap_root() -> Path:
    return Path(os.environ.get(POWERCAP_ROOT_ENV, DEFAULT_POWERCAP_ROOT))


def _read_int(path: Path) -> int:
    try:
        return int(path.read_text().strip())
    except (OSError, ValueError) as exc:
        raise DomainUnavailable(f"cannot read {path}: {exc}") from None


class RaplDomain:
    """One powercap energy domain, looked up by zone name or directory name."""

    def __init__(self, domain: str = DEFAULT_DOMAIN, root=None,
                 clock: Callable[[], int] = time.monotonic_ns):
        self.domain = domain
        self.clock = clock
        root = Path(root) if root is not None else powercap_root()
        self.path = self._locate(root, domain)
        self.max_range = _read_int(self.path / "max_energy_range_uj")
        if self.max_range <= 0:
            raise DomainUnavailable(f"{self.path}: non-positive max_energy_range_uj")

    @staticmethod
    def _locate(root: Path, domain: str) -> Path:
        if not root.is_dir():
            raise DomainUnavailable(f"no powercap interface at {root}")
        candidates = sorted(p.parent for p in root.glob("*/energy_uj"))
        candidates += sorted(p.parent for p in root.glob("*/*/energy_uj"))
        for zone in candidates:
            if zone.name == domain:
                return zone
            name = zone / "name"
            with contextlib.suppress(OSError):
                if name.read_text().strip() == domain:
                    return zone
        raise DomainUnavailable(f"energy domain {domain!r} not found under {root}")

    def read(self) -> CounterReading:
        raw = _read_int(self.path / "energy_uj")
        return CounterReading(timestamp=self.clock(), raw_energy=raw, domain=self.domain)


def read_counter(domain: str = DEFAULT_DOMAIN, root=None) -> CounterReading:
    return RaplDomain(domain, root).read()


def delta_energy(before: CounterReading, after: CounterReading, max_range: int) -> float:
    """Joules between two readings, assuming at most one counter wrap."""
    if after.timestamp < before.timestamp:
        raise ValueError("readings out of order")
    if after.domain != before.domain:
        raise ValueError(f"readings from different domains: {before.domain} / {after.domain}")
    return ((after.raw_energy - before.raw_energy) % max_range) / UJ_PER_J


class EnergySampler:
    """Background poller that integrates counter deltas over a run.

    Polling at ``period`` (<= 1 s) keeps each sampled interval shorter than
    one counter wrap.
    """

    def __init__(self, meter, period: float = SAMPLE_PERIOD_S):
        self.meter = meter
        self.period = period
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._first: CounterReading | None = None
        self._last: CounterReading | None = None
        self._total_uj = 0

    def _sample(self) -> None:
        reading = self.meter.read()
        self._total_uj += (reading.raw_energy - self._last.raw_energy) % self.meter.max_range
        self._last = reading

    def _loop(self) -> None:
        while not self._stop.wait(self.period):
            self._sample()

    def start(self) -> None:
        self._first = self._last = self.meter.read()
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> tuple[float, float]:
        """Stop polling; return (joules, seconds) since :meth:`start`."""
        self._stop.set()
        self._thread.join()
        self._sample()
        seconds = (self._last.timestamp - self._first.timestamp) / 1e9
        return self._total_uj / UJ_PER_J, seconds


def calibrate_idle(window: float = DEFAULT_IDLE_WINDOW_S, meter=None, *,
                   min_window: float = MIN_IDLE_WINDOW_S,
                   sleep: Callable[[float], None] = time.sleep,
                   period: float = SAMPLE_PERIOD_S) -> float:
    """Average power in watts over ``window`` seconds of (caller-ensured) idleness."""
    if not window >= min_window:
        raise ValueError(f"idle window {window} s is shorter than the minimum {min_window} s")
    meter = meter if meter is not None else RaplDomain()
    first = last = meter.read()
    total_uj = 0
    while (last.timestamp - first.timestamp) / 1e9 < window:
        remaining = window - (last.timestamp - first.timestamp) / 1e9
        sleep(min(period, remaining))
        reading = meter.read()
        total_uj += (reading.raw_energy - last.raw_energy) % meter.max_range
        last = reading
    seconds = (last.timestamp - first.timestamp) / 1e9
    return total_uj / UJ_PER_J / seconds


@dataclass(frozen=True)
class RunEnergy:
    e_total: float
    e_idle: float
    duration_t: float

    @property
    def e_enc(self) -> float:
        return self.e_total - self.e_idle


@dataclass(frozen=True)
class EnergyMeasurement:
    e_total: float
    e_idle: float
    duration_t: float
    e_enc: float
    repeats: int
    significant: bool
    ci_halfwidth_rel: float
    runs: tuple[RunEnergy, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    @classmethod
    def from_runs(cls, runs: Sequence[RunEnergy], confidence: float, threshold: float,
                  notes: Sequence[str] = ()) -> "EnergyMeasurement":
        n = len(runs)
        e_total = math.fsum(r.e_total for r in runs) / n
        e_idle = math.fsum(r.e_idle for r in runs) / n
        duration = math.fsum(r.duration_t for r in runs) / n
        e_enc = e_total - e_idle
        rel = math.inf
        if n >= 2:
            _, std = mean_std([r.e_enc for r in runs])
            half = z_score(confidence) * std / math.sqrt(n)
            if e_enc != 0:
                rel = half / abs(e_enc)
        return cls(
            e_total=e_total, e_idle=e_idle, duration_t=duration, e_enc=e_enc,
            repeats=n, significant=bool(e_enc > 0 and rel <= threshold),
            ci_halfwidth_rel=rel, runs=tuple(runs), warnings=tuple(notes),
        )


def run_command(command) -> None:
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    proc = subprocess.run(argv, stdout=subprocess.DEVNULL)
    if proc.returncode != 0:
        raise CommandFailed(proc.returncode, argv)


def default_lock_path() -> Path:
    return Path(os.environ.get(LOCK_PATH_ENV, Path(tempfile.gettempdir()) / "encenergy-measure.lock"))


@contextlib.contextmanager
def measurement_lock(path=None):
    """Machine-wide advisory lock so that measured workloads never overlap."""
    path = Path(path) if path is not None else default_lock_path()
    with open(path, "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def measure_workload(command, p_idle: float, repeats: int = 5, confidence: float = 0.95,
                     threshold: float = 0.02, *, meter=None, max_repeats: int | None = None,
                     runner: Callable = run_command, lock_path=None,
                     period: float = SAMPLE_PERIOD_S) -> EnergyMeasurement:
    """Run ``command`` repeatedly and report its mean encoding energy.

    Runs exactly ``repeats`` times unless ``max_repeats`` is larger, in which
    case runs continue until the confidence interval of the per-run energy is
    within ``threshold`` of the mean or ``max_repeats`` is reached.  An
    interval that never tightens leaves ``significant=False``.
    """
    if repeats < 2:
        raise ValueError("repeats must be at least 2")
    if p_idle < 0:
        raise ValueError("idle power must be non-negative")
    z_score(confidence)
    max_repeats = max(repeats, max_repeats or repeats)
    meter = meter if meter is not None else RaplDomain()

    runs: list[RunEnergy] = []
    notes: list[str] = []
    with measurement_lock(lock_path):
        while True:
            sampler = EnergySampler(meter, period)
            sampler.start()
            try:
                runner(command)
            finally:
                e_total, seconds = sampler.stop()
            if not seconds > 0:
                raise ValueError("run duration was not positive")
            run = RunEnergy(e_total=e_total, e_idle=p_idle * seconds, duration_t=seconds)
            if run.e_enc < 0:
                msg = f"run {len(runs) + 1}: total {e_total:.6g} J below idle {run.e_idle:.6g} J"
                warnings.warn(msg, NegativeEnergy, stacklevel=2)
                notes.append(msg)
            runs.append(run)
            if len(runs) < repeats:
                continue
            result = EnergyMeasurement.from_runs(runs, confidence, threshold, notes)
            if result.significant or len(runs) >= max_repeats:
                return result
