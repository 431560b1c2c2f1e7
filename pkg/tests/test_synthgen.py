import filecmp
import math

import numpy as np
import pytest

from rabot.graph import TEST, load_dataset
from rabot.synthgen import CAMOUFLAGE_500, GenSpec, GenSpecError, expected_cross_fraction, generate, write_dataset
from rabot.trainer import TrainConfig, train


def read_truth(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()]
    return [(r, int(i), int(j), kind) for r, i, j, kind in rows]


def test_no_cross_edges(tmp_path):
    root = write_dataset(GenSpec(n=80, cross_edge_prob=0.0, seed=1), tmp_path / "d")
    truth = read_truth(root / "edge_truth.tsv")
    assert truth and all(kind == "intra" for *_, kind in truth)


def test_bot_count():
    g, _ = generate(GenSpec(n=500, bot_fraction=0.1))
    assert int((g.labels == 1).sum()) == 50


def test_truth_matches_labels(tmp_path):
    root = write_dataset(GenSpec(n=60, seed=2), tmp_path / "d")
    g = load_dataset(root)
    for rel, i, j, kind in read_truth(root / "edge_truth.tsv"):
        assert (g.labels[i] != g.labels[j]) == (kind == "cross")
        assert [i, j] in g.relations[g.relation_names.index(rel)].tolist()


def test_camouflage_500_statistics():
    frac, per_relation = expected_cross_fraction(CAMOUFLAGE_500)
    assert frac == pytest.approx(0.25, abs=0.005)
    assert 2 * per_relation / CAMOUFLAGE_500.n == pytest.approx(8.0, abs=0.1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cross_count_within_three_sigma(seed):
    spec = CAMOUFLAGE_500.replace(seed=seed)
    g, cross = generate(spec)
    pairs = spec.num_bots * (spec.n - spec.num_bots)
    q = spec.cross_edge_prob
    for flags in cross:
        mean, sd = pairs * q, math.sqrt(pairs * q * (1 - q))
        assert abs(int(flags.sum()) - mean) <= 3 * sd


def test_byte_identical(tmp_path):
    a = write_dataset(GenSpec(n=50, seed=3), tmp_path / "a")
    b = write_dataset(GenSpec(n=50, seed=3), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == [] and len(match) == len(names)


def test_round_trip(tmp_path):
    g, _ = generate(GenSpec(n=70, seed=4))
    assert g.same_as(load_dataset(write_dataset(GenSpec(n=70, seed=4), tmp_path / "d")))


def test_uninformative_features_give_majority_rate():
    spec = CAMOUFLAGE_500.replace(class_mean_separation=0.0, camouflage_feature_fraction=1.0)
    g, _ = generate(spec)
    rep = train(g, TrainConfig(enable_gnn=False, epochs=100, seed=1))
    test = g.nodes_in(TEST)
    majority = max(np.mean(g.labels[test] == 0), np.mean(g.labels[test] == 1))
    half_width = 1.96 * math.sqrt(majority * (1 - majority) / len(test))
    assert abs(rep.test_accuracy - majority) <= half_width


@pytest.mark.parametrize(
    "bad",
    [dict(n=5), dict(bot_fraction=0.7), dict(intra_edge_prob=1.5), dict(class_mean_separation=-1.0),
     dict(feature_dims={"numerical": 2}), dict(n=10, bot_fraction=0.1)],
)
def test_invalid_specs(bad):
    with pytest.raises(GenSpecError):
        GenSpec(**bad)
