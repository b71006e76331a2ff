import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal
from oracles import best_rectangle_mcc, lattice_instance

from mnrank.errors import ConfigurationError, InputError
from mnrank.models import SumMlp, SumMlpConfig, predict_classes
from mnrank.regions import RectangleRuleSet, SumPointCloud, candidate_thresholds, classify, fit
from mnrank.regions import fit_axis_thresholds, load_rules, region_grid, rules_mcc, save_rules
from mnrank.regions import write_cloud_csv, write_grid_csv


def blobs(rng, centers, n=80, sd=0.1):
    x = np.concatenate([rng.normal(cx, sd, n) for cx, _ in centers])
    y = np.concatenate([rng.normal(cy, sd, n) for _, cy in centers])
    r = np.repeat(np.arange(len(centers)), n)
    return SumPointCloud(x, y, r)


def test_candidates():
    assert_array_equal(candidate_thresholds([3, 1, 1, 2]), [-np.inf, 1.5, 2.5, np.inf])


def test_priority_and_default():
    rules = RectangleRuleSet((0, 1, 2), 0, {1: (0, 2, 0, 2), 2: (1, 3, 1, 3)})
    assert rules.priority == (2, 1, 0)
    assert classify(rules, (1.5, 1.5)) == 2
    assert classify(rules, (0.5, 0.5)) == 1
    assert classify(rules, (5, 5)) == 0
    assert_array_equal(rules.classify_many([1.5, 0.5, 5], [1.5, 0.5, 5]), [2, 1, 0])
    with pytest.raises(ConfigurationError):
        RectangleRuleSet((0, 1), 0, {0: (0, 1, 0, 1)})
    with pytest.raises(ConfigurationError):
        RectangleRuleSet((0, 1), 0, {1: (1, 0, 0, 1)})


@pytest.mark.parametrize("seed", range(8))
def test_fit_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x, y, r, classes = lattice_instance(rng, n_max=120, max_values=5)
    rules, score = fit(SumPointCloud(x, y, r), classes)
    assert score == pytest.approx(best_rectangle_mcc(x, y, r, classes), abs=1e-9)


def test_ascent_close_to_exhaustive():
    rng = np.random.default_rng(11)
    x, y, r, classes = lattice_instance(rng, n_max=150, max_values=6)
    cloud = SumPointCloud(x, y, r)
    _, exact = fit(cloud, classes, method="exhaustive")
    _, approx = fit(cloud, classes, method="ascent", restarts=6)
    assert approx <= exact + 1e-12
    assert approx >= fit_axis_thresholds(cloud, classes)[1] - 1e-12


def test_separable_blobs(rng):
    cloud = blobs(rng, [(0, 0), (3, 0), (0, 3)])
    rules, score = fit(cloud)
    assert score == 1.0
    assert rules_mcc(rules, cloud) == 1.0


def test_four_classes_uses_ascent(rng):
    cloud = blobs(rng, [(0, 0), (3, 0), (0, 3), (3, 3)], n=40)
    rules, score = fit(cloud)
    assert score == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        fit(cloud, method="exhaustive")


def test_y_bands_both_orientations(rng):
    # rank decreases with y, like S0 at a large bound
    y = np.concatenate([rng.normal(2 - 2 * k, 0.1, 50) for k in range(3)])
    x = rng.normal(size=150)
    r = np.repeat([0, 1, 2], 50)
    cuts, score, rules = fit_axis_thresholds(SumPointCloud(x, y, r))
    assert score == 1.0 and len(cuts) == 2
    assert rules_mcc(rules, SumPointCloud(x, y, r)) == 1.0


def test_rect_never_below_y_only(rng):
    for seed in range(5):
        g = np.random.default_rng(seed)
        n = 300
        r = g.integers(0, 3, n)
        x = r + g.normal(0, 0.8, n)
        y = -r + g.normal(0, 0.8, n)
        cloud = SumPointCloud(x, y, r)
        assert fit(cloud)[1] >= fit_axis_thresholds(cloud)[1] - 1e-12


def test_rules_json_roundtrip(tmp_path, rng):
    cloud = blobs(rng, [(0, 0), (3, 0)])
    rules, score = fit(cloud)
    save_rules(tmp_path / "r.json", rules, {"mcc": score})
    back = load_rules(tmp_path / "r.json")
    assert back == rules
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["mcc"] == score


def test_bad_cloud():
    with pytest.raises(InputError):
        SumPointCloud([0, 1], [0], [0, 1])
    with pytest.raises(InputError):
        SumPointCloud([0, np.nan], [0, 1], [0, 1])


def test_region_grid_and_files(tmp_path, rng):
    rules = RectangleRuleSet((0, 1), 0, {1: (0.0, 1.0, 0.0, 1.0)})
    xs, ys, lab = region_grid(rules, (-1, 2), (-1, 2), resolution=(4, 3))
    assert lab.shape == (3, 4)
    assert lab[1, 1] == 1 and lab[0, 0] == 0
    write_grid_csv(tmp_path / "g.csv", xs, ys, lab)
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 13
    m = SumMlp(SumMlpConfig(columns=("log10N", "s0@1000", "s0@100000"), hidden_width=8, hidden_layers=3,
                            classes=(0, 1)))
    _, _, lab2 = region_grid(m, (-1, 1), (-1, 1), resolution=5, log10N=5.0)
    assert lab2.shape == (5, 5)
    with pytest.raises(InputError):
        region_grid(m, (-1, 1), (-1, 1), resolution=5)
    cloud = blobs(rng, [(0, 0)], n=5)
    write_cloud_csv(tmp_path / "c.csv", cloud)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "label,x,y,rank"


def test_grids_agree_with_classifiers():
    rules = RectangleRuleSet((0, 1, 2), 0, {1: (0.0, 1.0, 0.0, 1.0), 2: (0.5, 2.0, 0.5, 2.0)})
    xs, ys, lab = region_grid(rules, (0.25, 1.5), (0.25, 1.5), resolution=2)
    assert lab.shape == (2, 2)
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            assert lab[i, j] == classify(rules, (x, y))
    cols = ("log10N", "s0@1000", "s0@100000")
    m = SumMlp(SumMlpConfig(columns=cols, hidden_width=8, hidden_layers=3, classes=(0, 1, 2)))
    xs, ys, lab = region_grid(m, (-3, 3), (-3, 3), resolution=7, log10N=5.0)
    gx, gy = np.meshgrid(xs, ys)
    rows = np.column_stack([np.full(gx.size, 5.0), gx.ravel(), gy.ravel()])
    assert_array_equal(lab.ravel(), predict_classes(m, (rows,)))
    assert_array_equal(region_grid(m, (-3, 3), (-3, 3), resolution=7, log10N=5.0)[2], lab)
