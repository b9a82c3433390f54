from datetime import datetime

import numpy as np
import pytest

from sectorflow.correlation import bin_labels, disruption_score, disruption_scores, spatial_corr_matrix
from sectorflow.errors import InputError
from sectorflow.volumes import VolumeTensor

T0 = datetime(2011, 8, 1)


def _t(counts, res="day"):
    counts = np.asarray(counts)
    return VolumeTensor("calls", res, T0, [f"s{i}" for i in range(counts.shape[0])], counts)


def _pearson(a, b):
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))


def test_identical_and_anticorrelated_bins():
    c = spatial_corr_matrix(_t([[1, 1, 5], [2, 2, 4], [3, 3, 3]]))
    assert c.m[0, 1] == pytest.approx(1.0)
    assert c.m[0, 2] == pytest.approx(-1.0)
    assert np.all(np.diag(c.m) == 1.0)


def test_small_fixture_against_hand_formula():
    c = spatial_corr_matrix(_t([[1, 2], [2, 4], [3, 9]]))
    # 7 / sqrt(2 * 26)
    assert c.m[0, 1] == pytest.approx(7 / np.sqrt(52), abs=1e-12)
    assert c.m[0, 1] == pytest.approx(0.970725, abs=1e-4)
    c = spatial_corr_matrix(_t([[1, 2], [2, 4], [3, 10]]))
    assert c.m[0, 1] == pytest.approx(0.9608, abs=1e-4)


def test_brute_force_oracle_and_symmetry():
    x = np.random.default_rng(11).poisson(20, (30, 12))
    c = spatial_corr_matrix(_t(x))
    for i in range(12):
        for j in range(12):
            assert c.m[i, j] == pytest.approx(_pearson(x[:, i], x[:, j]), abs=1e-12)
    assert np.array_equal(c.m, c.m.T)


def test_log_transform():
    x = np.random.default_rng(12).poisson(20, (10, 4))
    c = spatial_corr_matrix(_t(x), transform="log10p1")
    assert c.m[0, 1] == pytest.approx(_pearson(np.log10(x[:, 0] + 1), np.log10(x[:, 1] + 1)))


def test_flat_bin_is_masked():
    c = spatial_corr_matrix(_t([[1, 5, 2], [2, 5, 3], [4, 5, 1]]))
    assert np.isnan(c.m[1]).all() and np.isnan(c.m[:, 1]).all()
    assert np.isfinite(c.m[0, 2])
    s = disruption_scores(c)
    assert np.isnan(s[1]) and np.isfinite(s[0])


def test_periodic_tensor_gives_block_circulant_matrix():
    week = np.random.default_rng(13).poisson(30, (40, 7))
    c = spatial_corr_matrix(_t(np.tile(week, 4)))
    for i in range(28):
        for j in range(28):
            assert c.m[i, j] == pytest.approx(c.m[i % 7, j % 7], abs=1e-12)


def test_per_row_affine_invariance():
    x = np.random.default_rng(14).poisson(30, (25, 6)).astype(float)
    a = spatial_corr_matrix(_t(x))
    y = 3.0 * x + 11.0
    b = spatial_corr_matrix(_t(y))
    np.testing.assert_allclose(a.m, b.m, atol=1e-12)


def test_disruption_score():
    c = spatial_corr_matrix(_t(np.tile([[1], [2], [4]], 5)))
    assert np.allclose(disruption_scores(c), 0.0)
    assert disruption_score(c, "213") == pytest.approx(0.0)
    assert disruption_score(c, 0) == pytest.approx(0.0)
    with pytest.raises(InputError):
        disruption_score(c, "1")
    with pytest.raises(InputError):
        disruption_score(c, 99)


def test_threads_identical():
    x = np.random.default_rng(15).poisson(9, (50, 600))
    a = spatial_corr_matrix(_t(x), threads=1)
    b = spatial_corr_matrix(_t(x), threads=4)
    assert a.m.tobytes() == b.m.tobytes()


def test_labels_and_csv(tmp_path):
    t = _t(np.ones((3, 2)), "hour")
    assert bin_labels(t) == ["213-00", "213-01"]
    c = spatial_corr_matrix(_t([[1, 5], [2, 5], [4, 5]]))
    c.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "bin,213,214"
    assert lines[1].endswith(",NA") and lines[2] == "214,NA,NA"


def test_errors():
    with pytest.raises(InputError):
        spatial_corr_matrix(_t(np.ones((2, 4))))
    with pytest.raises(InputError):
        spatial_corr_matrix(_t(np.ones((4, 1))))
    with pytest.raises(InputError):
        spatial_corr_matrix(_t(np.ones((4, 4))), transform="sqrt")
