import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkb.boosting import (
    AUTO,
    FitConfig,
    argmin_iteration,
    auto_lambda,
    cv_result_from_curves,
    fit,
    fit_with_cv,
    init_intercept,
    lambda_from_maxima,
    load_model,
    pathway_weights,
    predict,
    resolve_lambda,
    run_boosting,
    save_model,
    select_base_learner,
    stratified_folds,
)
from pkb.data import ExpressionDataset, LabelVector
from pkb.errors import DataFormatError, StratificationError
from pkb.kernels import KernelSpec, build_kernel_set
from pkb.simulation import SimSpec, generate
from pkb.solvers import compute_derivatives, log_loss, recover_intercept, regularized_loss, \
    solve_l1, solve_l2, weighted_centering


@pytest.fixture(scope="module")
def small():
    return generate(SimSpec(model_id=1, M_total=6, N=60, seed=3))


@pytest.fixture(scope="module")
def small_kernels(small):
    return build_kernel_set(small.dataset, small.pathways, KernelSpec())


# --- start value and lambda -------------------------------------------------

def test_init_intercept_log_ratio():
    assert init_intercept([1, 1, -1]) == pytest.approx(math.log(2))
    assert init_intercept([1, -1]) == 0.0


def test_init_intercept_minimizes_constant_loss():
    y = np.array([1, 1, 1, -1, 1, -1, 1.0])
    c = init_intercept(y)
    for d in (-1e-4, 1e-4):
        assert log_loss(y, np.full(7, c)) < log_loss(y, np.full(7, c + d))


def test_lambda_from_maxima():
    assert lambda_from_maxima([1.0, 3.0, 2.0]) == pytest.approx(0.4)
    assert lambda_from_maxima([0.0, 0.0]) == 1e-3


def test_auto_lambda_matches_direct_computation(small, small_kernels):
    y = small.labels.y
    deriv = compute_derivatives(y, np.full(y.size, init_intercept(y)))
    lmax = []
    for K in small_kernels.matrices:
        eta_t, K_t = weighted_centering(deriv.eta, deriv.w, K)
        lmax.append(np.max(np.abs(K_t.T @ eta_t)) * 2 / y.size)
    assert auto_lambda(deriv, small_kernels) == pytest.approx(0.2 * np.median(lmax), rel=1e-12)


def test_resolve_lambda_applies_factor(small, small_kernels):
    auto = resolve_lambda(small_kernels, small.labels, FitConfig())
    assert resolve_lambda(small_kernels, small.labels, FitConfig(lambda_factor=5)) \
        == pytest.approx(5 * auto)
    assert resolve_lambda(small_kernels, small.labels, FitConfig(lam=0.3, lambda_factor=2)) == 0.6


def test_auto_lambda_is_logged(small, small_kernels, caplog):
    with caplog.at_level(logging.INFO, logger="pkb"):
        resolve_lambda(small_kernels, small.labels, FitConfig(lam=AUTO))
    assert "automatic lambda" in caplog.text


@pytest.mark.parametrize("kwargs", [dict(nu=0), dict(nu=1.5), dict(T=0), dict(lam=-1.0),
                                    dict(lam="big"), dict(penalty="L3"), dict(cv_folds_inner=1)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FitConfig(**kwargs)


# --- base learner selection ----------------------------------------------------

@pytest.mark.parametrize("penalty", ["L1", "L2"])
def test_selection_matches_exhaustive_oracle(small, small_kernels, penalty):
    y = small.labels.y
    deriv = compute_derivatives(y, np.full(y.size, init_intercept(y)))
    lam = 0.02
    losses = []
    for K in small_kernels.matrices:
        eta_t, K_t = weighted_centering(deriv.eta, deriv.w, K)
        beta = solve_l1(K_t, eta_t, lam) if penalty == "L1" else solve_l2(K_t, eta_t, lam)
        c = recover_intercept(deriv.eta, deriv.w, K, beta)
        losses.append(regularized_loss(beta, c, deriv, K, lam, penalty))
    best = select_base_learner(deriv, small_kernels, lam, penalty)
    assert best.pathway_index == int(np.argmin(losses))
    assert best.regularized_loss == pytest.approx(min(losses), rel=1e-8)


def test_selection_ties_go_to_lowest_index(small_kernels, small):
    y = small.labels.y
    deriv = compute_derivatives(y, np.zeros(y.size))
    K = small_kernels[2]
    assert select_base_learner(deriv, [K, K, K], 0.01, "L2").pathway_index == 0


# --- training loop ---------------------------------------------------------------

@pytest.mark.parametrize("penalty", ["L1", "L2"])
def test_training_loss_non_increasing(small_kernels, small, penalty):
    lam = resolve_lambda(small_kernels, small.labels, FitConfig(penalty=penalty))
    state, _ = run_boosting(small_kernels, small.labels, lam, penalty, 0.5, 15)
    h = np.array(state.loss_history)
    assert len(h) == 16
    assert np.all(np.diff(h) <= 1e-12)
    assert h[0] == pytest.approx(log_loss(small.labels.y, np.full(60, init_intercept(small.labels))))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["L1", "L2"]), st.floats(0.05, 1.0))
def test_loss_monotone_property(seed, penalty, nu):
    sim = generate(SimSpec(model_id=2, M_total=4, N=30, seed=seed))
    ks = build_kernel_set(sim.dataset, sim.pathways, KernelSpec())
    lam = resolve_lambda(ks, sim.labels, FitConfig(penalty=penalty))
    state, _ = run_boosting(ks, sim.labels, lam, penalty, nu, 8)
    assert np.all(np.diff(state.loss_history) <= 1e-12)


def test_state_bookkeeping_consistent(small, small_kernels):
    state, _ = run_boosting(small_kernels, small.labels, 0.01, "L2", 0.3, 6)
    rebuilt = state.C + sum(K @ b for K, b in zip(small_kernels.matrices, state.beta_acc))
    np.testing.assert_allclose(state.F, rebuilt, atol=1e-10)
    assert len(state.selection_history) == state.t == 6


def test_all_zero_solution_stops_early(small, small_kernels, caplog):
    with caplog.at_level(logging.WARNING):
        state, curve = run_boosting(small_kernels, small.labels, 1e6, "L1", 0.5, 5,
                                    eval_blocks=small_kernels.subset(np.arange(60), np.arange(5)),
                                    y_eval=small.labels.y[:5])
    assert state.stopped_early and state.t == 0
    assert "all-zero" in caplog.text
    assert np.all(curve == curve[0])


def test_label_flip_antisymmetry(small, small_kernels):
    y = small.labels.y
    a, _ = run_boosting(small_kernels, y, 0.01, "L1", 0.5, 5)
    b, _ = run_boosting(small_kernels, -y, 0.01, "L1", 0.5, 5)
    np.testing.assert_allclose(a.F, -b.F, atol=1e-9)
    assert a.selection_history == b.selection_history


def test_sample_permutation_invariance_l2(small):
    rng = np.random.default_rng(0)
    perm = rng.permutation(60)
    ks = build_kernel_set(small.dataset, small.pathways, KernelSpec())
    a, _ = run_boosting(ks, small.labels.y, 0.01, "L2", 0.5, 5)
    b, _ = run_boosting(ks.subset(perm), small.labels.y[perm], 0.01, "L2", 0.5, 5)
    np.testing.assert_allclose(a.F[perm], b.F, atol=1e-10)


def test_fit_is_deterministic(small):
    cfg = FitConfig(penalty="L1", nu=0.5, T=5)
    a = fit(small.dataset, small.pathways, small.labels, cfg)
    b = fit(small.dataset, small.pathways, small.labels, cfg)
    np.testing.assert_array_equal(a.train_scores, b.train_scores)
    assert a.selection_history == b.selection_history


# --- cross-validation ---------------------------------------------------------------

def test_stratified_folds_partition_and_balance():
    y = np.array([1] * 10 + [-1] * 20, dtype=float)
    folds = stratified_folds(y, 3, seed=1)
    held = np.concatenate([te for _, te in folds])
    assert sorted(held.tolist()) == list(range(30))
    for tr, te in folds:
        assert np.sum(y[te] == 1) in (3, 4)
        assert set(tr).isdisjoint(te)
    again = stratified_folds(y, 3, seed=1)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


def test_stratified_folds_too_few_minority():
    with pytest.raises(StratificationError):
        stratified_folds(np.array([1, -1, -1, -1, -1.0]), 3, 0)


def test_argmin_iteration_earliest_tie():
    assert argmin_iteration([0.5, 0.3, 0.3, 0.4]) == 2
    assert argmin_iteration([0.1, 0.2]) == 1


def test_cv_result_averages_folds():
    curves = np.array([[0.6, 0.4, 0.5], [0.6, 0.5, 0.3]])
    res = cv_result_from_curves(curves)
    np.testing.assert_allclose(res.mean_curve, [0.6, 0.45, 0.4])
    assert res.T_star == 3


def test_fit_with_cv_refits_to_t_star(small):
    cfg = FitConfig(penalty="L2", nu=0.5, T=8)
    res = fit_with_cv(small.dataset, small.pathways, small.labels, cfg)
    assert 1 <= res.T_star <= 8
    assert res.model.n_iterations == res.T_star
    assert res.cv.fold_curves.shape == (3, 8)
    assert res.T_star == argmin_iteration(res.cv.mean_curve)


# --- prediction and persistence ----------------------------------------------------

@pytest.fixture(scope="module")
def model(small):
    return fit(small.dataset, small.pathways, small.labels, FitConfig(nu=0.5, T=6))


def test_predict_reproduces_training_scores(small, model):
    scores, labels = predict(model, small.dataset)
    np.testing.assert_allclose(scores, model.train_scores, atol=1e-10)
    np.testing.assert_array_equal(labels, np.where(model.train_scores >= 0, 1, -1))


def test_predict_matches_genes_by_name(small, model):
    d = small.dataset
    order = np.arange(d.n_genes)[::-1]
    shuffled = ExpressionDataset(d.values[:, order], tuple(d.gene_ids[j] for j in order),
                                 d.sample_ids)
    np.testing.assert_allclose(predict(model, shuffled)[0], predict(model, d)[0], atol=1e-12)


def test_predict_missing_gene_named(small, model):
    d = small.dataset
    m = sorted(model.betas)[0]
    gone = model.pathway_genes[m][0]
    keep = [j for j, g in enumerate(d.gene_ids) if g != gone]
    reduced = ExpressionDataset(d.values[:, keep], tuple(d.gene_ids[j] for j in keep), d.sample_ids)
    with pytest.raises(DataFormatError, match=gone):
        predict(model, reduced)


def test_predict_empty_dataset(small, model):
    empty = ExpressionDataset(np.zeros((0, small.dataset.n_genes)), small.dataset.gene_ids, ())
    scores, labels = predict(model, empty)
    assert scores.shape == (0,) and labels.shape == (0,)


def test_predict_zero_score_is_positive():
    from pkb.boosting import PKBModel
    m = PKBModel(("p",), {}, {}, {}, 0.0, KernelSpec(), 0.1, {}, 0, (0.7,), ())
    d = ExpressionDataset(np.zeros((2, 1)), ("g",), ("a", "b"))
    np.testing.assert_array_equal(predict(m, d)[1], [1, 1])


def test_weights_sorted_and_norms(model):
    pairs = pathway_weights(model)
    vals = [w for _, w in pairs]
    assert vals == sorted(vals, reverse=True)
    for m, b in model.betas.items():
        assert dict(pairs)[model.pathway_names[m]] == pytest.approx(np.linalg.norm(b))
    unselected = set(range(len(model.pathway_names))) - set(model.betas)
    assert all(dict(pairs)[model.pathway_names[m]] == 0 for m in unselected)


def test_model_round_trip(tmp_path, small, model):
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    np.testing.assert_array_equal(predict(back, small.dataset)[0], predict(model, small.dataset)[0])
    assert back.loss_history == model.loss_history
    assert back.selection_history == model.selection_history
    np.testing.assert_array_equal(back.weights, model.weights)


def test_load_model_rejects_other_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(DataFormatError):
        load_model(p)


def test_misaligned_labels_rejected(small):
    with pytest.raises(DataFormatError):
        fit(small.dataset, small.pathways, LabelVector(np.array([1.0, -1.0])), FitConfig(T=1))


def test_warm_started_supports_match_cold_solves(small, small_kernels):
    lam = 0.2 * resolve_lambda(small_kernels, small.labels, FitConfig())
    warm, _ = run_boosting(small_kernels, small.labels, lam, "L1", 0.5, 12)
    cold, _ = run_boosting(small_kernels, small.labels, lam, "L1", 0.5, 12, warm_start=False)
    np.testing.assert_allclose(warm.loss_history, cold.loss_history, rtol=0, atol=1e-8)
    assert warm.selection_history == cold.selection_history
