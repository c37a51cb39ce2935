"""End-to-end data collection: measured encodes plus separate profiled encodes."""

from __future__ import annotations

import json
import logging
import shlex
import shutil
import subprocess
import tempfile
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import Dataset, host_provenance, save_dataset
from .errors import DatasetError, EncEnergyError, MissingEvents, ToolMissing
from .meter import (
    DEFAULT_IDLE_WINDOW_S, EnergyMeasurement, RaplDomain, calibrate_idle, measure_workload,
    run_command,
)
from .model import PRESETS, EncodeRecord
from .profile import ALL_EVENTS, Profile, event_vector, load_profile

log = logging.getLogger(__name__)

DEFAULT_CRFS = (18, 23, 28, 33)
DEFAULT_ENCODER_TEMPLATE = (
    "x265 --input {input} --input-res {width}x{height} --fps {fps} --frames {frames} "
    "--preset {preset} --crf {crf} --output {output}"
)
DEFAULT_PROFILER = "valgrind"


@dataclass(frozen=True)
class SequenceSpec:
    path: str
    sequence_id: str
    pixels: int
    frames: int = 8
    #: extra template fields such as width, height, fps
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.pixels <= 0:
            raise ValueError("pixels must be positive")


@dataclass
class RunPlan:
    sequences: list[SequenceSpec]
    presets: Sequence[str] = PRESETS
    crfs: Sequence[int] = DEFAULT_CRFS
    repeats: int = 5
    max_repeats: int = 20
    confidence: float = 0.95
    threshold: float = 0.02
    encoder_template: str = DEFAULT_ENCODER_TEMPLATE
    profiler: str = DEFAULT_PROFILER
    idle_window: float = DEFAULT_IDLE_WINDOW_S
    domain: str = "package-0"

    def __post_init__(self):
        if not self.sequences or not self.presets or not self.crfs:
            raise ValueError("plan axes (sequences, presets, crfs) must be non-empty")
        unknown = [p for p in self.presets if p not in PRESETS]
        if unknown:
            raise ValueError(f"unknown presets {unknown}")

    def cells(self):
        for seq in self.sequences:
            for preset in [p for p in PRESETS if p in self.presets]:
                for crf in self.crfs:
                    yield seq, preset, crf


def load_plan(path) -> RunPlan:
    """Read a JSON run plan.

    Sequences need ``path`` and ``sequence_id``; ``pixels`` defaults to
    ``width * height * frames`` and every other key becomes a template field.
    """
    with open(path) as fh:
        data = json.load(fh)
    seqs = []
    for s in data.pop("sequences", []):
        s = dict(s)
        frames = int(s.pop("frames", 8))
        pixels = s.pop("pixels", None)
        if pixels is None:
            pixels = int(s["width"]) * int(s["height"]) * frames
        seqs.append(SequenceSpec(path=s.pop("path"), sequence_id=s.pop("sequence_id"),
                                 pixels=int(pixels), frames=frames, params=s))
    return RunPlan(sequences=seqs, **data)


def encoder_argv(plan: RunPlan, seq: SequenceSpec, preset: str, crf: int, output) -> list[str]:
    fields = dict(seq.params, input=seq.path, preset=preset, crf=crf, frames=seq.frames,
                  output=output, sequence_id=seq.sequence_id)
    try:
        return [tok.format(**fields) for tok in shlex.split(plan.encoder_template)]
    except KeyError as exc:
        raise DatasetError(f"encoder template needs field {exc} for {seq.sequence_id}") from None


def cachegrind_argv(profiler: str, out_file, command: Sequence[str]) -> list[str]:
    # branch simulation on so that all thirteen events are produced
    return [profiler, "--tool=cachegrind", "--branch-sim=yes",
            f"--cachegrind-out-file={out_file}", "--", *command]


def _tool_version(tool: str) -> str:
    try:
        out = subprocess.run([tool, "--version"], capture_output=True, text=True, timeout=30)
        return (out.stdout or out.stderr).strip().splitlines()[0]
    except (OSError, IndexError, subprocess.SubprocessError):
        return ""


def run_collect(plan: RunPlan, *, output=None, overwrite: bool = False,
                measure_energy: bool = True, meter=None, p_idle: float | None = None,
                measure_runner: Callable[[list[str]], EnergyMeasurement] | None = None,
                profile_runner: Callable[[list[str], Path], Profile] | None = None,
                which: Callable[[str], str | None] = shutil.which) -> Dataset:
    """Collect one measured and one profiled encode per (sequence, preset, CRF).

    Energy always comes from unprofiled runs; profiling runs are never
    metered.  Failed cells are skipped and listed in ``Dataset.gaps``.
    ``measure_runner`` and ``profile_runner`` replace the default
    meter/valgrind drivers, mainly for testing.
    """
    if output is not None and Path(output).exists() and not overwrite:
        raise DatasetError(f"{output} exists; pass overwrite=True to replace it")

    first = encoder_argv(plan, plan.sequences[0], plan.presets[0], plan.crfs[0], "out.hevc")
    missing = [first[0]] if which(first[0]) is None else []
    if profile_runner is None and which(plan.profiler) is None:
        missing.append(plan.profiler)
    if missing:
        raise ToolMissing(missing)

    if measure_energy and measure_runner is None:
        meter = meter if meter is not None else RaplDomain(plan.domain)
        if p_idle is None:
            log.info("calibrating idle power over %.0f s", plan.idle_window)
            p_idle = calibrate_idle(plan.idle_window, meter)

        def measure_runner(cmd):
            return measure_workload(cmd, p_idle, plan.repeats, plan.confidence, plan.threshold,
                                    meter=meter, max_repeats=plan.max_repeats)

    if profile_runner is None:
        def profile_runner(cmd, out_file):
            run_command(cachegrind_argv(plan.profiler, out_file, cmd))
            return load_profile(out_file)

    records: list[EncodeRecord] = []
    gaps: list[dict] = []
    with tempfile.TemporaryDirectory(prefix="encenergy-") as tmp:
        tmp = Path(tmp)
        for seq, preset, crf in plan.cells():
            tag = f"{seq.sequence_id}_{preset}_crf{crf}"
            cell = {"sequence_id": seq.sequence_id, "preset": preset, "crf": crf}
            cmd = encoder_argv(plan, seq, preset, crf, tmp / f"{tag}.hevc")
            energy = time_s = None
            try:
                if measure_energy:
                    m = measure_runner(cmd)
                    time_s = m.duration_t
                    if m.significant:
                        energy = m.e_enc
                    else:
                        gaps.append(dict(cell, reason=f"insignificant measurement "
                                                      f"(ci/mean={m.ci_halfwidth_rel:.3g})"))
                else:
                    t0 = time.monotonic()
                    run_command(cmd)
                    time_s = time.monotonic() - t0
                profile = profile_runner(cmd, tmp / f"{tag}.cachegrind")
            except EncEnergyError as exc:
                log.warning("cell %s failed: %s", tag, exc)
                gaps.append(dict(cell, reason=str(exc)))
                continue
            try:
                events = event_vector(profile, ALL_EVENTS)
            except MissingEvents as exc:
                gaps.append(dict(cell, reason=str(exc)))
                events = profile.totals
            records.append(EncodeRecord(
                sequence_id=seq.sequence_id, preset=preset, crf=crf, events=events,
                energy_j=energy, time_s=time_s, pixels=seq.pixels,
            ))

    records = propagate_ultrafast(records)
    provenance = host_provenance(
        encoder_version=_tool_version(first[0]),
        profiler_version=_tool_version(plan.profiler) if which(plan.profiler) else "",
    )
    dataset = Dataset(records, provenance, gaps=gaps)
    if output is not None:
        save_dataset(dataset, output, overwrite=overwrite)
    return dataset


def propagate_ultrafast(records: Sequence[EncodeRecord]) -> list[EncodeRecord]:
    """Fill ``events_uf`` from the ultrafast record of the same sequence and CRF."""
    uf = {(r.sequence_id, r.crf): r.events for r in records if r.preset == "ultrafast"}
    out = []
    for r in records:
        vec = uf.get((r.sequence_id, r.crf))
        out.append(replace(r, events_uf=vec) if vec is not None else r)
    return out
