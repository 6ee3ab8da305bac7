import math

import numpy as np
import pytest
from scipy import integrate, stats

from contcp.core import parse_intervention
from contcp.errors import InvalidInputError
from contcp.synthdata import (GeneratorSpec, assign_splits, generate, intervention_test_set, ite_test_set,
                              manifest, read_csv, sample_treatment, stream, true_outcome, true_propensity,
                              write_csv)


@pytest.mark.parametrize("ds,a,x,expected", [
    (1, 10.0, 2.0, 0.0),
    (2, 1.0, 1.0, 0.0),
    (1, 30.0, 1.0, math.sin(2.5 * math.pi / 6)),
    (2, 10.0, 1.0, math.sin(0.45 * math.pi)),
])
def test_outcome_examples(ds, a, x, expected):
    assert true_outcome(ds, a, x) == pytest.approx(expected, abs=1e-12)


def test_outcome_numeric_values():
    assert true_outcome(1, 30.0, 1.0) == pytest.approx(0.9659, abs=1e-4)
    assert true_outcome(2, 10.0, 1.0) == pytest.approx(0.9877, abs=1e-4)


@pytest.mark.parametrize("ds,a,x,expected", [
    (1, 2.0, 1.0, 0.06), (1, 50.0, 1.0, 0.0), (1, 6.0, 1.0, 0.02),
    (2, 10.0, 2.0, 1.0 / (10.0 * math.sqrt(2 * math.pi))),
])
def test_propensity_examples(ds, a, x, expected):
    assert true_propensity(ds, a, x) == pytest.approx(expected)


def test_propensity_matches_histogram():
    rng = np.random.default_rng(0)
    for ds, x, lo, hi in ((1, 1.0, 1.5, 2.5), (2, 2.0, 9.5, 10.5)):
        a = sample_treatment(ds, np.full(1_000_000, x), rng)
        frac = np.mean((a >= lo) & (a < hi)) / (hi - lo)
        assert frac == pytest.approx(true_propensity(ds, 0.5 * (lo + hi), x), rel=0.02)


@pytest.mark.parametrize("x", [1, 2, 3, 4])
def test_propensity_integrates_to_one(x):
    cut = 5.0 * x
    one = sum(integrate.quad(lambda a: true_propensity(1, a, x), lo, hi)[0] for lo, hi in ((0, cut), (cut, 40)))
    assert one == pytest.approx(1.0, abs=1e-6)
    two = integrate.quad(lambda a: true_propensity(2, a, x), -60, 80, points=[5 * x])[0]
    assert two == pytest.approx(1.0, abs=1e-4)


def test_low_component_weight():
    rng = np.random.default_rng(1)
    x = np.full(100_000, 2.0)
    a = sample_treatment(1, x, rng)
    assert np.mean(a < 5 * x) == pytest.approx(0.30, abs=0.01)


def _cdf(ds, x):
    if ds == 2:
        return stats.norm(5 * x, 10).cdf
    cut = 5.0 * x
    return lambda a: np.where(a < cut, 0.3 * np.clip(a, 0, None) / cut,
                              0.3 + 0.7 * np.clip(a - cut, 0, 40 - cut) / (40 - cut))


@pytest.mark.parametrize("ds", [1, 2])
def test_generated_doses_match_propensity(ds):
    spec = GeneratorSpec(ds, n_train=100_000, n_calibration=1, n_test_per_intervention=1, n_validation=0)
    train = generate(spec).subset("train")
    for x in (1.0, 4.0):
        a = train.a[train.x[:, 0] == x]
        assert stats.kstest(a, _cdf(ds, x)).statistic <= 0.02


def test_generate_splits_and_determinism():
    spec = GeneratorSpec(1, n_train=300, n_calibration=100, n_test_per_intervention=50, seed=3, n_validation=30)
    d = generate(spec)
    assert [len(d.subset(s)) for s in ("train", "validation", "calibration", "test")] == [270, 30, 100, 50]
    again = generate(spec)
    assert d.a.tobytes() == again.a.tobytes() and d.y.tobytes() == again.y.tobytes()
    other = generate(GeneratorSpec(1, 300, 100, 50, seed=4, n_validation=30))
    assert d.a.tobytes() != other.a.tobytes()
    # Splits come from separate streams: changing one size leaves the others alone.
    bigger = generate(GeneratorSpec(1, 300, 120, 50, seed=3, n_validation=30))
    assert bigger.subset("train").a.tobytes() == d.subset("train").a.tobytes()


def test_streams_differ_by_label():
    assert stream(0, "a").random() != stream(0, "b").random()
    assert stream(0, "a").random() == stream(0, "a").random()


def test_intervention_test_set():
    spec = GeneratorSpec(2, n_test_per_intervention=200, seed=1)
    ts = intervention_test_set(spec, parse_intervention("hard:7x"))
    np.testing.assert_allclose(ts.a_target, 7 * ts.x[:, 0])
    np.testing.assert_allclose(ts.y_true, true_outcome(2, ts.a_target, ts.x[:, 0]))
    assert np.std(ts.y_potential - ts.y_true) == pytest.approx(0.1, rel=0.2)
    soft = intervention_test_set(spec, parse_intervention("soft:5"))
    np.testing.assert_allclose(soft.a_target, soft.a + 5)


def test_ite_test_set_noise_is_independent():
    x, y1, y0 = ite_test_set(GeneratorSpec(1, n_test_per_intervention=5000), 10.0, 0.0)
    e1 = y1 - true_outcome(1, 10.0, x[:, 0])
    e0 = y0 - true_outcome(1, 0.0, x[:, 0])
    assert abs(np.corrcoef(e1, e0)[0, 1]) < 0.05


def test_csv_round_trip(tmp_path):
    spec = GeneratorSpec(1, n_train=40, n_calibration=10, n_test_per_intervention=10, n_validation=5)
    d = generate(spec)
    path = tmp_path / "d.csv"
    write_csv(d, path, manifest(spec))
    back = read_csv(path)
    assert back.x.tobytes() == d.x.tobytes() and back.a.tobytes() == d.a.tobytes()
    assert back.y.tobytes() == d.y.tobytes() and back.y_true.tobytes() == d.y_true.tobytes()
    assert list(back.split) == list(d.split)
    assert (tmp_path / "d.manifest.json").exists()


def test_csv_without_split_column_gets_fractions(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("x_0,a,y\n" + "".join(f"{i % 3},{i * 0.5},{i * 0.1}\n" for i in range(100)))
    d = read_csv(path, seed=2)
    assert [len(d.subset(s)) for s in ("train", "validation", "calibration", "test")] == [60, 10, 20, 10]


def test_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x_0,y\n1,2\n")
    with pytest.raises(InvalidInputError):
        read_csv(path)
    path.write_text("x_0,a,y\n")
    with pytest.raises(InvalidInputError):
        read_csv(path)
    with pytest.raises(InvalidInputError):
        assign_splits(10, (0.5, 0.5, 0.5, 0.0))


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        GeneratorSpec(3)
    with pytest.raises(InvalidInputError):
        true_propensity(1, 2.0, 7.0)
