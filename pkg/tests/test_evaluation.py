"""Ranking metrics, SNIPS estimator and the debiasedness check."""

import json

import numpy as np
import pytest

from drorec.evaluation import (MetricsReport, coverage, debiasedness_check,
                               floor_propensities, ideal_reward, metric_c,
                               metric_values, rank_items, snips_evaluate,
                               target_ranks)
from drorec.model import SeqModel


def test_metric_c_values():
    assert metric_c(1, 10, "recall") == 1.0
    assert metric_c(11, 10, "recall") == 0.0
    assert metric_c(1, 10, "ndcg") == 1.0
    assert metric_c(3, 10, "ndcg") == pytest.approx(1.0 / np.log2(4.0))
    assert metric_c(11, 10, "ndcg") == 0.0
    with pytest.raises(ValueError):
        metric_c(1, 10, "mrr")


def test_metric_values_matches_scalar():
    ranks = np.array([1, 5, 20, 3])
    for kind in ("recall", "ndcg"):
        vec = metric_values(ranks, 10, kind)
        np.testing.assert_allclose(vec, [metric_c(r, 10, kind) for r in ranks])


def test_rank_items_deterministic_ties():
    model = SeqModel(5, 4, 3, "recurrent", seed=0)
    model.params["emb"][1:] = 0.0  # all items tie at logit 0
    ranking = rank_items(model, [0, 0, 1])
    assert ranking.tolist() == [1, 2, 3, 4, 5]


def test_target_ranks_agree_with_full_ranking():
    model = SeqModel(12, 6, 4, "attention", seed=3)
    rng = np.random.default_rng(0)
    seqs = rng.integers(1, 13, size=(8, 4))
    targets = rng.integers(1, 13, size=8)
    ranks = target_ranks(model, seqs, targets)
    for i in range(8):
        ranking = rank_items(model, seqs[i])
        assert ranking[ranks[i] - 1] == targets[i]


def test_coverage():
    rankings = [np.array([1, 2, 3]), np.array([3, 4, 5])]
    assert coverage(rankings, 2, 10) == pytest.approx(0.4)  # {1,2,3,4}
    assert coverage(rankings, 3, 5) == pytest.approx(1.0)
    # disjoint top-k lists covering the catalog hit the upper bound
    disjoint = [np.array([1, 2]), np.array([3, 4])]
    assert coverage(disjoint, 2, 4) == 1.0


def test_ideal_reward_requires_relevance():
    with pytest.raises(ValueError):
        ideal_reward([np.array([1, 2])], None, 2, "ndcg")
    rel = np.array([[1.0, 0.0]])
    val = ideal_reward([np.array([1, 2])], rel, 1, "recall")
    assert val == pytest.approx(0.5)  # item 1 relevant, ranked first


def test_snips_k0_is_plain_mean():
    rng = np.random.default_rng(1)
    c = rng.random(50)
    rho = rng.uniform(0.01, 1.0, 50)
    assert snips_evaluate(c, rho, 0.0) == float(np.mean(c))


def test_snips_frozen_value():
    # weights 1/rho: [2, 8]; (2*1 + 8*0) / 10 = 0.2
    assert snips_evaluate(np.array([1.0, 0.0]),
                          np.array([0.5, 0.125]), 1.0) == pytest.approx(0.2)


def test_snips_rescaling_invariance():
    rng = np.random.default_rng(2)
    c = rng.random(30)
    rho = rng.uniform(0.01, 0.5, 30)
    base = snips_evaluate(c, rho, 0.3)
    for scale in (0.5, 2.0, 7.3):
        assert snips_evaluate(c, rho * scale, 0.3) == pytest.approx(base, rel=1e-12)


def test_snips_validates_inputs():
    with pytest.raises(ValueError):
        snips_evaluate(np.ones(2), np.array([0.5, 0.0]), 0.1)
    with pytest.raises(ValueError):
        snips_evaluate(np.ones(2), np.ones(2), 1.5)


def test_floor_propensities():
    rho, n = floor_propensities(np.array([0.5, 1e-9, 1e-6]))
    assert n == 1
    assert rho.min() == pytest.approx(1e-6)


def test_debiasedness_identity():
    rng = np.random.default_rng(3)
    c = rng.random((5, 8))
    rho = rng.uniform(0.2, 0.9, 8)
    rep = debiasedness_check(c, rho, k=1.0, trials=4000, seed=0)
    # k = 1: E[sum c/rho * O] = sum c exactly
    assert rep.exact == pytest.approx(float(c.sum()))
    assert rep.rel_deviation < 0.05


def test_metrics_report_serialization():
    rep = MetricsReport(values={"ndcg@10": {"naive": 0.1, "snips": 0.12}},
                        coverage={10: 0.5}, n_users=7, snips_k=0.1, seed=3)
    payload = json.loads(rep.to_json())
    assert payload["values"]["ndcg@10"]["snips"] == 0.12
    assert payload["coverage"]["10"] == 0.5
    csv_text = rep.to_csv()
    assert "ndcg,10,snips,0.12" in csv_text
