import csv

import numpy as np
import pytest

from vscout.exceptions import ConfigError
from vscout.simgen import DISTRIBUTIONS, ScenarioSpec, generate, write_data_csv, write_labels_csv


def test_no_shift_has_no_truth():
    s = generate(ScenarioSpec("normal", 200, 10, delta=0.0, gamma=0.1, shift_type="transient", seed=1))
    assert not s.truth.any()
    assert abs(s.X.mean()) < 0.05


def test_sustained_block_placement():
    s = generate(ScenarioSpec("normal", 500, 5, 1.0, 0.2, "sustained", 2))
    assert not s.truth[:400].any() and s.truth[400:].all()


def test_transient_count_and_shift():
    s = generate(ScenarioSpec("normal", 500, 150, 2.0, 0.1, "transient", 3))
    assert s.truth.sum() == 50
    assert np.abs(s.X[s.truth].mean(axis=1) - 2.0).max() < 0.5
    assert abs(s.X[s.truth].mean() - 2.0) < 0.2


@pytest.mark.parametrize("gamma, n, expected", [(0.1, 500, 50), (0.013, 100, 2), (0.05, 30, 2)])
def test_contamination_count_is_ceiling(gamma, n, expected):
    assert generate(ScenarioSpec("normal", n, 3, 1.0, gamma, "transient", 0)).truth.sum() == expected


def test_tiny_gamma_warns():
    s = generate(ScenarioSpec("normal", 50, 3, 1.0, 0.01, "transient", 0))
    assert not s.truth.any()
    assert s.warnings


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
def test_deterministic_per_seed(dist):
    spec = ScenarioSpec(dist, 60, 7, 1.5, 0.1, "transient", 11)
    a, b = generate(spec), generate(spec)
    assert a.X.tobytes() == b.X.tobytes() and (a.truth == b.truth).all()
    assert generate(ScenarioSpec(dist, 60, 7, 1.5, 0.1, "transient", 12)).X.tobytes() != a.X.tobytes()


def test_family_moments():
    t5 = generate(ScenarioSpec("t5", 4000, 10, seed=1)).X
    assert abs(t5.var() - 5 / 3) < 0.15
    logn = generate(ScenarioSpec("lognormal", 4000, 10, seed=1)).X
    assert logn.min() > 0 and abs(logn.mean() - np.exp(0.5)) < 0.05


def test_multimodal_clusters():
    X = generate(ScenarioSpec("multimodal", 500, 150, seed=4)).X
    row_means = X.mean(axis=1)
    assert np.all(np.abs(np.abs(row_means) - 5.0) < 0.5)
    frac = (row_means > 0).mean()
    assert 0.4 <= frac <= 0.6


def test_mixed_rows_follow_one_family():
    X = generate(ScenarioSpec("mixed", 2000, 50, seed=5)).X
    kurt = ((X - X.mean(axis=1, keepdims=True)) ** 4).mean(axis=1) / X.var(axis=1) ** 2
    assert kurt.std() > 0.3  # heavy-tailed rows raise the spread of per-row kurtosis


def test_validation():
    with pytest.raises(ConfigError):
        generate(ScenarioSpec("cauchy"))
    with pytest.raises(ConfigError):
        generate(ScenarioSpec(gamma=1.0, delta=1.0, shift_type="transient"))
    with pytest.raises(ConfigError):
        generate(ScenarioSpec(gamma=0.1, delta=1.0, shift_type="none"))
    with pytest.raises(ConfigError):
        generate(ScenarioSpec(delta=-1.0))


def test_csv_writers(tmp_path):
    s = generate(ScenarioSpec("lognormal", 12, 3, 1.0, 0.25, "sustained", 6))
    write_data_csv(tmp_path / "x.csv", s.X)
    write_labels_csv(tmp_path / "y.csv", s.truth)
    with open(tmp_path / "x.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "x3"]
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float), s.X)
    with open(tmp_path / "y.csv") as fh:
        labels = list(csv.reader(fh))
    assert labels[0] == ["label"] and [int(r[0]) for r in labels[1:]] == s.truth.astype(int).tolist()
