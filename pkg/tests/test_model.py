import json
import random
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from encenergy.dataset import synth_dataset
from encenergy.errors import DegenerateDesign, InsufficientData, MissingEvents, ZeroVariance
from encenergy.model import (
    EncodeRecord, EnergyModel, correlation_table, estimate_posterior, estimate_prior,
    estimate_record, estimate_time, fit, fit_all, load_models, pearson, save_models,
    select_model,
)
from encenergy.profile import ALL_EVENTS, EventVector


def _rec(seq, events, energy, preset="medium", crf=23, time_s=None, **kw):
    return EncodeRecord(seq, preset, crf, EventVector(events), energy_j=energy, time_s=time_s, **kw)


def _single_feature_optimum(xs, ys):
    # d/dc sum((c x/y - 1)^2) = 0  ->  c = sum(x/y) / sum((x/y)^2)
    ratios = [Fraction(x) / Fraction(y) for x, y in zip(xs, ys)]
    return float(sum(ratios) / sum(r * r for r in ratios))


@pytest.fixture(scope="module")
def clean():
    return synth_dataset(n_sequences=8, crfs=(18, 28), noise_rel=0.0, seed=7)


# -- estimation ----------------------------------------------------------------

def test_estimate_is_the_dot_product():
    model = EnergyModel("fast", "posterior", {"Ir": 2e-9, "Dr": 1e-9, "Bc": 0.5e-9})
    counts = {"Ir": 1_000_000, "Dr": 400_000, "Bc": 110_000, "Dw": 7}
    assert estimate_posterior(model, EventVector(counts)) == pytest.approx(
        oracles.dot(counts, model.coefficients), rel=1e-15)


def test_estimate_needs_every_masked_event():
    model = EnergyModel("fast", "posterior", {"Ir": 1e-9, "Bc": 1e-9})
    with pytest.raises(MissingEvents) as info:
        estimate_posterior(model, EventVector({"Ir": 10}))
    assert [e.value for e in info.value.events] == ["Bc"]


def test_estimator_mode_checks():
    post = EnergyModel("fast", "posterior", {"Ir": 1e-9})
    with pytest.raises(ValueError):
        estimate_prior(post, EventVector({"Ir": 1}))
    with pytest.raises(ValueError):
        estimate_time(post, 1.0)
    tb = EnergyModel("fast", "time_baseline", {"time_s": 30.0})
    assert estimate_time(tb, 2.0) == 60.0
    rec = _rec("s", {"Ir": 1}, 1.0, preset="fast", time_s=0.5)
    assert estimate_record(tb, rec) == 15.0


def test_model_validation():
    with pytest.raises(ValueError):
        EnergyModel("fast", "posterior", {"Ir": -1e-9})
    with pytest.raises(ValueError):
        EnergyModel("fast", "posterior", {"Ir": 1e-9}, feature_mask=("Ir", "Dr"))
    with pytest.raises(ValueError):
        EnergyModel("fast", "time_baseline", {"Ir": 1.0})
    with pytest.raises(ValueError):
        EnergyModel("placebo", "posterior", {"Ir": 1.0})


_vec = st.fixed_dictionaries({
    "Ir": st.integers(10**3, 10**12), "Dr": st.integers(0, 10**11), "Bc": st.integers(0, 10**11),
})
_coef = st.floats(0, 1e-6, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(_vec, _vec, st.integers(0, 1000), _coef, _coef, _coef)
def test_estimate_is_homogeneous_and_additive(a, b, k, c1, c2, c3):
    model = EnergyModel("slow", "posterior", {"Ir": c1, "Dr": c2, "Bc": c3})
    va, vb = EventVector(a), EventVector(b)
    ea, eb = estimate_posterior(model, va), estimate_posterior(model, vb)
    assert estimate_posterior(model, va.scaled(k)) == pytest.approx(k * ea, rel=1e-12, abs=1e-300)
    assert estimate_posterior(model, va + vb) == pytest.approx(ea + eb, rel=1e-12, abs=1e-300)
    assert ea >= 0


# -- fitting -------------------------------------------------------------------

def test_recovers_noise_free_coefficients(clean):
    ds, truth = clean
    for preset in ("ultrafast", "medium", "veryslow"):
        model = fit(ds.records, "posterior", preset)
        for e, c in truth.coefficients[preset].items():
            assert model.coefficients[e] == pytest.approx(c, rel=1e-6)
        assert model.fit_meta.training_record_count == 16
        assert model.fit_meta.objective_value < 1e-20


def test_single_feature_closed_form():
    xs = [1000, 2500, 4000, 8000, 9100]
    ys = [1.1, 2.4, 4.3, 7.7, 9.5]
    recs = [_rec(f"s{i}", {"Ir": x}, y) for i, (x, y) in enumerate(zip(xs, ys))]
    model = fit(recs, feature_mask=["Ir"])
    assert model.coefficients["Ir"] == pytest.approx(_single_feature_optimum(xs, ys), rel=1e-12)


def test_time_baseline_is_the_same_fitter_on_time():
    ts = [0.5, 1.25, 2.0, 3.3]
    ys = [10.0, 26.0, 39.0, 70.0]
    recs = [_rec(f"s{i}", {"Ir": 1}, y, time_s=t) for i, (t, y) in enumerate(zip(ts, ys))]
    model = fit(recs, mode="time_baseline")
    assert model.feature_mask == ("time_s",)
    assert model.coefficients["time_s"] == pytest.approx(_single_feature_optimum(ts, ys), rel=1e-12)


def test_boundary_solution_against_brute_force():
    # generated with a negative Dr component, so the constrained optimum sits on Dr = 0
    rows = [(1000, 100), (1200, 900), (3000, 500), (2000, 1500), (5000, 300), (4000, 2500)]
    recs = [_rec(f"s{i}", {"Ir": x1, "Dr": x2}, 2e-3 * x1 - 0.5e-3 * x2)
            for i, (x1, x2) in enumerate(rows)]
    ys = [r.energy_j for r in recs]
    model = fit(recs, feature_mask=["Ir", "Dr"])
    assert model.coefficients["Dr"] == 0.0

    def obj(c1, c2=0.0):
        return float(oracles.relative_objective(rows, ys, [c1, c2]))

    best_c1, best = oracles.grid_argmin(obj, 0.0, 4e-3, 4000)
    assert model.coefficients["Ir"] == pytest.approx(best_c1, abs=1e-6)
    fitted = obj(model.coefficients["Ir"], model.coefficients["Dr"])
    assert fitted <= best + 1e-15
    # no feasible point on a coarse 2-D grid does better
    for c1 in np.linspace(0, 4e-3, 41):
        for c2 in np.linspace(0, 2e-3, 21):
            assert fitted <= obj(c1, c2) + 1e-15


def test_permutation_invariance(clean):
    ds, _ = clean
    base = fit(ds.records, "posterior", "slow")
    shuffled = list(ds.records)
    random.Random(99).shuffle(shuffled)
    again = fit(shuffled, "posterior", "slow")
    for e in base.coefficients:
        assert again.coefficients[e] == pytest.approx(base.coefficients[e], rel=1e-12, abs=0)


def test_coefficients_never_negative():
    ds, _ = synth_dataset(n_sequences=8, crfs=(18, 33), noise_rel=0.3, seed=4)
    for model in fit_all(ds.records).values():
        assert all(v >= 0 for v in model.coefficients.values())


def test_zero_column_warns_and_fixes_coefficient():
    recs = [_rec(f"s{i}", {"Ir": 100 * (i + 1), "Bim": 0, "Bi": i}, 0.1 * (i + 1) + 0.01 * i)
            for i in range(5)]
    with pytest.warns(DegenerateDesign):
        model = fit(recs, feature_mask=["Ir", "Bi", "Bim"])
    assert model.coefficients["Bim"] == 0.0


def test_too_few_records():
    recs = [_rec("a", {"Ir": 1, "Dr": 1}, 1.0)]
    with pytest.raises(InsufficientData):
        fit(recs, feature_mask=["Ir", "Dr"])


def test_records_without_energy_are_excluded():
    recs = [_rec("a", {"Ir": 10}, 1.0), _rec("b", {"Ir": 20}, 2.0), _rec("c", {"Ir": 30}, None)]
    model = fit(recs, feature_mask=["Ir"])
    assert model.fit_meta.training_record_count == 2
    assert model.coefficients["Ir"] == pytest.approx(0.1, rel=1e-12)


def test_prior_uf_skips_ultrafast(clean):
    ds, _ = clean
    models = fit_all(ds.records, "prior_uf")
    assert "ultrafast" not in models
    assert len(models) == 8
    rec = next(r for r in ds.records if r.preset == "veryslow")
    assert estimate_record(models["veryslow"], rec) == pytest.approx(
        estimate_prior(models["veryslow"], rec.events_uf))


# -- correlation ---------------------------------------------------------------

def test_pearson_worked_example():
    xs, ys = (1, 2, 3, 5), (2, 1, 4, 6)
    assert pearson(xs, ys) == pytest.approx(0.90224363867810614718789762762528690232888283394989,
                                            rel=1e-14)
    assert pearson(xs, ys) == pytest.approx(oracles.pearson(xs, ys), rel=1e-14)


def test_pearson_perfect_and_zero_variance():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    with pytest.raises(ZeroVariance):
        pearson([1, 1, 1], [1, 2, 3])


_floats = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(_floats, _floats), min_size=3, max_size=20),
       st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_pearson_bounded_symmetric_affine_invariant(pts, a, b):
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    try:
        r = pearson(xs, ys)
    except ZeroVariance:
        return
    if min(np.std(xs), np.std(ys)) < 1e-3:
        return
    assert -1.0 <= r <= 1.0
    assert pearson(ys, xs) == pytest.approx(r, abs=1e-9)
    assert pearson([a * x + b for x in xs], ys) == pytest.approx(r, abs=1e-6)


def test_correlation_table_three_records():
    recs = [
        _rec("a", {"Ir": 100, "Dr": 7, "Dw": 5}, 1.0),
        _rec("b", {"Ir": 200, "Dr": 3, "Dw": 5}, 2.0),
        _rec("c", {"Ir": 400, "Dr": 9, "Dw": 5}, 3.0),
    ]
    with pytest.warns(UserWarning, match="Dw"):
        table = correlation_table(recs, ["Ir", "Dr", "Dw"])
    assert set(table) == {"Ir", "Dr"}
    assert table["Ir"] == pytest.approx(oracles.pearson([100, 200, 400], [1, 2, 3]), rel=1e-14)
    assert table["Dr"] == pytest.approx(oracles.pearson([7, 3, 9], [1, 2, 3]), rel=1e-14)


def test_correlation_on_synthetic_data_is_strong(clean):
    ds, _ = clean
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        table = correlation_table(ds.filter(preset="medium"), ALL_EVENTS)
    assert len(table) == 13
    assert table["Ir"] > 0.9


# -- model files ---------------------------------------------------------------

def test_model_file_round_trip_is_bit_exact(tmp_path, clean):
    ds, _ = clean
    models = list(fit_all(ds.records).values()) + list(fit_all(ds.records, "time_baseline").values())
    path = tmp_path / "models.json"
    save_models(models, path)
    loaded = load_models(path)
    assert loaded == models
    for a, b in zip(models, loaded):
        assert [x.hex() for x in a.coefficients.values()] == [x.hex() for x in b.coefficients.values()]
    assert json.loads(path.read_text())["schema_version"] == 1
    assert select_model(loaded, "slow", "time_baseline").mode == "time_baseline"
    with pytest.raises(KeyError):
        select_model(loaded, "slow", "prior_uf")


def test_unknown_schema_rejected(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"schema_version": 99, "models": []}))
    with pytest.raises(ValueError):
        load_models(path)
