import math

import numpy as np
import pytest
from scipy.special import expit

from pkb.simulation import SimSpec, generate, true_log_odds


def sample(p=50, **genes):
    x = np.zeros(p)
    for k, v in genes.items():
        x[int(k[1:])] = v
    return x


def test_model1_formula():
    # a1=1, c1=c2=1: 2*1 + 3*0 + exp(0) + 4*1*1
    assert true_log_odds(sample(g0=1, g10=1, g11=1), 1) == pytest.approx(7.0)
    # b1=b2=1: exp(1.6)
    assert true_log_odds(sample(g5=1, g6=1), 1) == pytest.approx(math.exp(1.6))


def test_model2_formula():
    x = sample(g0=math.pi / 4, g1=math.pi / 4, g5=2, g6=-1, g10=1, g11=2)
    assert true_log_odds(x, 2) == pytest.approx(4 * 1 + 3 * 3 + 2 * 1 - 2 * 4)


def test_model3_formula():
    x = np.ones(250)
    assert true_log_odds(x, 3) == pytest.approx(2 * 10 * math.sqrt(5))
    x[50:] = 7.0  # genes outside the first ten blocks do not matter
    assert true_log_odds(x, 3) == pytest.approx(2 * 10 * math.sqrt(5))


def test_log_odds_vectorised():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 250))
    for model in (1, 2, 3):
        np.testing.assert_allclose(true_log_odds(X, model),
                                   [true_log_odds(row, model) for row in X])


def test_generate_shapes_and_names():
    sim = generate(SimSpec(model_id=3, M_total=12, pathway_size=4, N=40, seed=1))
    assert sim.dataset.values.shape == (40, 48)
    assert len(sim.pathways) == 12
    assert all(len(pw.gene_indices) == 4 for pw in sim.pathways)
    assert sim.pathways[1].gene_indices == (4, 5, 6, 7)
    assert sim.relevant == list(range(10))
    assert sim.pathways.names[0] == "pw001"


def test_generate_reproduces_independent_draw():
    spec = SimSpec(model_id=1, M_total=5, N=30, seed=11)
    sim = generate(spec)
    rng = np.random.default_rng(11)
    X = rng.standard_normal((30, 25))
    F = true_log_odds(X, 1)
    y = np.where(rng.random(30) < expit(F - np.median(F)), 1.0, -1.0)
    np.testing.assert_array_equal(sim.dataset.values, X)
    np.testing.assert_array_equal(sim.labels.y, y)


def test_sign_rule_splits_at_median():
    sim = generate(SimSpec(model_id=2, N=101, seed=4, outcome_rule="deterministic_sign"))
    centered = sim.log_odds - np.median(sim.log_odds)
    np.testing.assert_array_equal(sim.labels.y, np.where(centered >= 0, 1.0, -1.0))
    assert sim.labels.counts == (51, 50)


def test_bernoulli_labels_roughly_balanced():
    sim = generate(SimSpec(model_id=1, N=900, seed=0))
    assert 350 < sim.labels.counts[0] < 550


def test_seed_determinism():
    a = generate(SimSpec(seed=5, N=50))
    b = generate(SimSpec(seed=5, N=50))
    c = generate(SimSpec(seed=6, N=50))
    np.testing.assert_array_equal(a.dataset.values, b.dataset.values)
    np.testing.assert_array_equal(a.labels.y, b.labels.y)
    assert not np.array_equal(a.dataset.values, c.dataset.values)


@pytest.mark.parametrize("kwargs", [dict(model_id=4), dict(model_id=3, M_total=9),
                                    dict(outcome_rule="coin"), dict(pathway_size=1)])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SimSpec(**kwargs)
