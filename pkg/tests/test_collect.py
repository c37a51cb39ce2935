import json

import pytest

from encenergy.collect import (
    RunPlan, SequenceSpec, cachegrind_argv, encoder_argv, load_plan, propagate_ultrafast,
    run_collect,
)
from encenergy.dataset import load_dataset
from encenergy.errors import DatasetError, ToolMissing
from encenergy.meter import EnergyMeasurement, RunEnergy
from encenergy.profile import load_profile

from conftest import PROFILES

PLAN = RunPlan(
    sequences=[SequenceSpec("/data/foreman.yuv", "foreman", pixels=352 * 288 * 8,
                            params={"width": 352, "height": 288, "fps": 30})],
    presets=("ultrafast", "medium"),
    crfs=(23,),
)


def _found(tool):
    return f"/usr/bin/{tool}"


class FakeMeasure:
    def __init__(self, energies):
        self.energies = dict(energies)
        self.commands = []

    def __call__(self, cmd):
        self.commands.append(cmd)
        preset = cmd[cmd.index("--preset") + 1]
        e = self.energies[preset]
        runs = [RunEnergy(e + 10.0, 10.0, 1.0)] * 3
        return EnergyMeasurement.from_runs(runs, 0.95, 0.02)


class FakeProfiler:
    def __init__(self, fixture="real_cachegrind_branchsim.out"):
        self.profile = load_profile(PROFILES / fixture)
        self.calls = []

    def __call__(self, cmd, out_file):
        self.calls.append((cmd, out_file))
        return self.profile


def test_two_cell_plan(tmp_path):
    measure, profiler = FakeMeasure({"ultrafast": 5.0, "medium": 12.0}), FakeProfiler()
    out = tmp_path / "data.csv"
    ds = run_collect(PLAN, output=out, measure_runner=measure, profile_runner=profiler, which=_found)
    assert [r.key for r in ds.records] == [("foreman", "ultrafast", 23), ("foreman", "medium", 23)]
    assert [r.energy_j for r in ds.records] == [5.0, 12.0]
    assert all(r.events == profiler.profile.totals for r in ds.records)
    assert ds.records[1].events_uf == ds.records[0].events
    assert ds.records[0].pixels == 352 * 288 * 8
    assert not ds.gaps
    # measured and profiled runs are separate invocations of the same encode
    assert len(measure.commands) == len(profiler.calls) == 2
    assert measure.commands[0] == profiler.calls[0][0]
    assert load_dataset(out).records == ds.records


def test_encoder_command_from_template():
    argv = encoder_argv(PLAN, PLAN.sequences[0], "slow", 28, "/tmp/o.hevc")
    assert argv[:3] == ["x265", "--input", "/data/foreman.yuv"]
    assert "352x288" in argv
    assert argv[argv.index("--crf") + 1] == "28"
    wrapped = cachegrind_argv("valgrind", "/tmp/p.out", argv)
    assert wrapped[:4] == ["valgrind", "--tool=cachegrind", "--branch-sim=yes",
                           "--cachegrind-out-file=/tmp/p.out"]
    assert wrapped[5:] == argv


def test_template_field_missing():
    plan = RunPlan(sequences=[SequenceSpec("a.yuv", "a", pixels=1)], presets=("fast",), crfs=(23,))
    with pytest.raises(DatasetError):
        encoder_argv(plan, plan.sequences[0], "fast", 23, "o")


def test_missing_tools_fail_before_any_encode(tmp_path):
    measure, profiler = FakeMeasure({"ultrafast": 1.0, "medium": 1.0}), FakeProfiler()
    with pytest.raises(ToolMissing) as info:
        run_collect(PLAN, measure_runner=measure, which=lambda tool: None)
    assert info.value.tools == ["x265", "valgrind"]
    assert not measure.commands
    with pytest.raises(ToolMissing):
        run_collect(PLAN, measure_runner=measure, profile_runner=profiler,
                    which=lambda t: None if t == "x265" else _found(t))
    assert not measure.commands and not profiler.calls


def test_refuses_to_overwrite(tmp_path):
    out = tmp_path / "data.csv"
    out.write_text("keep me\n")
    with pytest.raises(DatasetError):
        run_collect(PLAN, output=out, measure_runner=FakeMeasure({}), profile_runner=FakeProfiler(),
                    which=_found)
    assert out.read_text() == "keep me\n"


def test_insignificant_cell_becomes_gap():
    def noisy(cmd):
        runs = [RunEnergy(20.0, 10.0, 1.0), RunEnergy(30.0, 10.0, 1.0)]
        return EnergyMeasurement.from_runs(runs, 0.95, 0.02)

    ds = run_collect(PLAN, measure_runner=noisy, profile_runner=FakeProfiler(), which=_found)
    assert all(r.energy_j is None for r in ds.records)
    assert len(ds.gaps) == 2
    assert all("insignificant" in g["reason"] for g in ds.gaps)


def test_profile_without_branch_events_is_recorded_as_gap():
    ds = run_collect(PLAN, measure_runner=FakeMeasure({"ultrafast": 1.0, "medium": 2.0}),
                     profile_runner=FakeProfiler("real_cachegrind_no_branch.out"), which=_found)
    assert len(ds.records) == 2
    assert "Bc" not in ds.records[0].events
    assert len(ds.gaps) == 2


def test_load_plan(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps({
        "sequences": [{"path": "a.yuv", "sequence_id": "a", "width": 64, "height": 32,
                       "fps": 25, "frames": 4}],
        "presets": ["fast", "slow"],
        "crfs": [22, 27],
        "repeats": 3,
    }))
    plan = load_plan(path)
    assert plan.sequences[0].pixels == 64 * 32 * 4
    assert plan.sequences[0].params == {"width": 64, "height": 32, "fps": 25}
    assert len(list(plan.cells())) == 4
    assert plan.repeats == 3


def test_plan_rejects_unknown_preset():
    with pytest.raises(ValueError):
        RunPlan(sequences=PLAN.sequences, presets=("ludicrous",))


def test_propagate_ultrafast_leaves_orphans_alone():
    ds = run_collect(PLAN, measure_runner=FakeMeasure({"ultrafast": 1.0, "medium": 2.0}),
                     profile_runner=FakeProfiler(), which=_found)
    medium_only = [r for r in ds.records if r.preset == "medium"]
    stripped = [r.__class__(r.sequence_id, r.preset, r.crf, r.events, r.energy_j) for r in medium_only]
    assert propagate_ultrafast(stripped)[0].events_uf is None
