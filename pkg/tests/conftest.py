from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
import pytest

from encenergy.meter import CounterReading

FIXTURES = Path(__file__).parent / "fixtures"
PROFILES = FIXTURES / "profiles"


class FakeClock:
    """Monotonic nanosecond clock advanced explicitly by the test."""

    def __init__(self, start_ns: int = 1_000_000_000):
        self.now = start_ns
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            return self.now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self.now += int(round(seconds * 1e9))


class FakeMeter:
    """Counter that integrates a piecewise-constant power over the fake clock.

    ``power`` may be changed between runs; energy accrues in whole microjoules
    and wraps at ``max_range``.
    """

    def __init__(self, clock: FakeClock, power_w: float = 0.0, max_range: int = 2**32,
                 start_uj: int = 0, domain: str = "package-0"):
        self.clock = clock
        self.power_w = power_w
        self.max_range = max_range
        self.domain = domain
        self._energy_uj = start_uj
        self._t = clock()
        self.reads = 0
        # the sampler thread reads while the test thread changes power
        self._lock = threading.Lock()

    def _update(self):
        now = self.clock()
        self._energy_uj += int(round(self.power_w * (now - self._t) / 1e3))
        self._t = now

    def read(self) -> CounterReading:
        with self._lock:
            self._update()
            self.reads += 1
            return CounterReading(self._t, self._energy_uj % self.max_range, self.domain)

    def set_power(self, watts: float):
        with self._lock:
            self._update()
            self.power_w = watts


class FakeRunner:
    """Stands in for a workload: advances the clock by ``seconds`` at ``power``."""

    def __init__(self, clock, meter, seconds=2.0, powers=None, default_power=20.0):
        self.clock = clock
        self.meter = meter
        self.seconds = seconds
        self.powers = list(powers) if powers is not None else None
        self.default_power = default_power
        self.calls = 0

    def __call__(self, command):
        power = self.powers[self.calls] if self.powers is not None else self.default_power
        self.calls += 1
        self.meter.set_power(power)
        self.clock.advance(self.seconds)
        self.meter.set_power(0.0)


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def fake_meter(clock):
    return FakeMeter(clock)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_powercap(root: Path, zones: dict[str, tuple[str, int, int]]):
    """Build a fake powercap tree: dir -> (name, energy_uj, max_energy_range_uj)."""
    for dirname, (name, energy, max_range) in zones.items():
        zone = root / dirname
        zone.mkdir(parents=True)
        (zone / "name").write_text(name + "\n")
        (zone / "energy_uj").write_text(f"{energy}\n")
        (zone / "max_energy_range_uj").write_text(f"{max_range}\n")
    return root
