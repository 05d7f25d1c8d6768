import numpy as np
import pytest

from whitebench import (
    Dataset,
    LabelSet,
    TimeGrid,
    apply_whitener,
    build_flow,
    compute_F,
    early_stop,
    fit_whitener,
    flow_at,
    mse_per_sample,
    optimum_predictions,
    pseudoinverse,
    solve_optimum,
)
from whitebench.errors import ValidationError
from whitebench.synth import SyntheticSpec, synthesize

from conftest import one_hot_labels, random_dataset


def rk4_flow(X, Y, W0, t_end, steps=4000, newton=False):
    """Oracle: RK4 integration of dW/dt = -(W F - Y X^T) B."""
    F = X.values @ X.values.T
    C = Y.targets @ X.values.T
    B = pseudoinverse(F) if newton else np.eye(F.shape[0])

    def rhs(W):
        return -(W @ F - C) @ B

    W = W0.copy()
    h = t_end / steps
    for _ in range(steps):
        k1 = rhs(W)
        k2 = rhs(W + 0.5 * h * k1)
        k3 = rhs(W + 0.5 * h * k2)
        k4 = rhs(W + h * k3)
        W = W + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return W


def test_solve_optimum_identity_regression():
    X = Dataset(np.eye(2), split_tag="train")
    Y = LabelSet(np.eye(2))
    assert np.allclose(solve_optimum(X, Y).W, np.eye(2), atol=1e-12)


def test_solve_optimum_normal_equations_residual(rng):
    X = Dataset([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]], split_tag="train")
    Y = LabelSet(rng.standard_normal((1, 3)))
    W = solve_optimum(X, Y).W
    residual = compute_F(X) @ W.T - X.values @ Y.targets.T
    assert np.max(np.abs(residual)) <= 1e-10


def test_solve_optimum_gradient_in_span(rng):
    # d > n: optimum within the span, residual gradient vanishes
    X = random_dataset(rng, 8, 3)
    Y = LabelSet(rng.standard_normal((2, 3)))
    W0 = rng.standard_normal((2, 8))
    model = solve_optimum(X, Y, W0=W0)
    assert model.meta["pseudoinverse_fallback"]
    grad = (model.W @ X.values - Y.targets) @ X.values.T
    assert np.max(np.abs(grad)) <= 1e-8


def test_flow_starting_at_optimum_is_constant(rng):
    X = random_dataset(rng, 3, 12)
    Y = LabelSet(rng.standard_normal((2, 12)))
    W_star = solve_optimum(X, Y).W
    sol = build_flow(X, Y, W0=W_star)
    for t in (0.0, 0.5, 7.0):
        assert np.max(np.abs(flow_at(sol, t).W - W_star)) <= 1e-9


def test_one_dimensional_halflife():
    # lambda = 2, w(0) = 0, w* = 1: w(ln2 / 2) = 0.5
    X = Dataset([[np.sqrt(2.0)]], split_tag="train")
    Y = LabelSet([[np.sqrt(2.0)]])
    sol = build_flow(X, Y)
    assert abs(flow_at(sol, np.log(2.0) / 2.0).W[0, 0] - 0.5) <= 1e-12
    oracle = rk4_flow(X, Y, np.zeros((1, 1)), np.log(2.0) / 2.0)
    assert abs(flow_at(sol, np.log(2.0) / 2.0).W[0, 0] - oracle[0, 0]) <= 1e-9


def test_flow_at_initial_and_saturated(rng):
    X = random_dataset(rng, 3, 5)
    Y = LabelSet(rng.standard_normal((2, 5)))
    W0 = rng.standard_normal((2, 3))
    sol = build_flow(X, Y, W0=W0)
    assert np.array_equal(flow_at(sol, 0.0).W, flow_at(sol, 0.0).W)
    assert np.max(np.abs(flow_at(sol, 0.0).W - W0)) <= 1e-10
    t_sat = 40.0 / sol.min_positive_rate
    W_star = solve_optimum(X, Y, W0=W0).W
    assert np.max(np.abs(flow_at(sol, t_sat).W - W_star)) <= 1e-12


@pytest.mark.parametrize("newton", [False, True])
def test_flow_matches_rk4_oracle(newton):
    rng = np.random.default_rng(7)
    for trial in range(3):
        X = Dataset(rng.standard_normal((3, 5)), split_tag="train")
        Y = LabelSet(rng.standard_normal((2, 5)))
        W0 = rng.standard_normal((2, 3))
        sol = build_flow(X, Y, W0=W0, precondition="newton" if newton else "none")
        for t in np.linspace(0.05, 2.0, 20):
            W_ref = rk4_flow(X, Y, W0, t, steps=2000, newton=newton)
            assert np.max(np.abs(flow_at(sol, t).W - W_ref)) <= 1e-6


def test_flow_rejects_bad_time(rng):
    X = random_dataset(rng, 2, 4)
    Y = LabelSet(rng.standard_normal((1, 4)))
    sol = build_flow(X, Y)
    with pytest.raises(ValidationError):
        flow_at(sol, -1.0)
    with pytest.raises(ValidationError):
        flow_at(sol, np.inf)


def test_monotone_mode_convergence(rng):
    X = random_dataset(rng, 4, 9)
    Y = LabelSet(rng.standard_normal((2, 9)))
    sol = build_flow(X, Y)
    V = sol.spectrum.eigenvectors
    W_star = solve_optimum(X, Y).W
    prev = None
    for t in np.linspace(0.0, 3.0, 12):
        gap = np.abs((flow_at(sol, t).W - W_star) @ V)
        if prev is not None:
            assert np.all(gap <= prev + 1e-12)
        prev = gap


def test_optimum_predictions_consistency(rng):
    X = random_dataset(rng, 3, 10)
    Y = LabelSet(rng.standard_normal((2, 10)))
    X_test = Dataset(X.values[:, [4]], split_tag="test")
    fitted = solve_optimum(X, Y).W @ X.values[:, [4]]
    assert np.allclose(optimum_predictions(X, Y, X_test), fitted, atol=1e-8)


def test_optimum_predictions_match_flow_saturation(rng):
    for _ in range(3):
        X = random_dataset(rng, 4, 7)
        Y = LabelSet(rng.standard_normal((3, 7)))
        W0 = rng.standard_normal((3, 4))
        X_test = random_dataset(rng, 4, 5, split_tag="test")
        sol = build_flow(X, Y, W0=W0)
        t_sat = 60.0 / sol.min_positive_rate
        flow_preds = flow_at(sol, t_sat).W @ X_test.values
        assert np.max(np.abs(optimum_predictions(X, Y, X_test, W0=W0) - flow_preds)) <= 1e-8


def test_k_sufficiency_equals_f_form(rng):
    # K-form predictions equal W* X_test computed from F quantities
    for d, n in ((3, 9), (9, 4)):
        X = random_dataset(rng, d, n)
        Y = LabelSet(rng.standard_normal((2, n)))
        W0 = rng.standard_normal((2, d))
        X_test = random_dataset(rng, d, 6, split_tag="test")
        f_form = solve_optimum(X, Y, W0=W0).W @ X_test.values
        k_form = optimum_predictions(X, Y, X_test, W0=W0)
        assert np.max(np.abs(k_form - f_form)) <= 1e-8


def test_fully_whitened_zero_predictions_and_half_loss(rng):
    d, n_train, n_test = 24, 10, 6
    combined = random_dataset(rng, d, n_train + n_test, split_tag="combined")
    W = fit_whitener(combined, mode="pca", fit_scope="full")
    X_hat = apply_whitener(W, combined).values
    Xtr = Dataset(X_hat[:, :n_train], split_tag="train")
    Xte = Dataset(X_hat[:, n_train:], split_tag="test")
    Ytr = one_hot_labels(rng, 10, n_train)
    Yte = one_hot_labels(rng, 10, n_test)
    preds = optimum_predictions(Xtr, Ytr, Xte)
    assert np.max(np.abs(preds)) <= 1e-8
    assert abs(mse_per_sample(preds, Yte) - 0.5) <= 1e-8


def test_whitening_invariance_of_converged_predictions(rng):
    # d < n, full rank: optimum predictions unchanged by any whitening transform
    X = random_dataset(rng, 5, 40)
    Y = LabelSet(rng.standard_normal((3, 40)))
    X_test = random_dataset(rng, 5, 8, split_tag="test")
    W = fit_whitener(X, mode="pca")
    raw = solve_optimum(X, Y).W @ X_test.values
    white = solve_optimum(apply_whitener(W, X), Y).W @ apply_whitener(W, X_test).values
    assert np.max(np.abs(raw - white)) <= 1e-6


def test_newton_flow_equals_plain_flow_on_whitened(rng):
    X = random_dataset(rng, 4, 30)
    Y = LabelSet(rng.standard_normal((2, 30)))
    X_test = random_dataset(rng, 4, 7, split_tag="test")
    W = fit_whitener(X, mode="pca")
    X_hat, X_test_hat = apply_whitener(W, X), apply_whitener(W, X_test)
    newton = build_flow(X, Y, precondition="newton")
    plain_white = build_flow(X_hat, Y)
    for t in np.linspace(0.0, 8.0, 15):
        a = flow_at(newton, t).W @ X_test.values
        b = flow_at(plain_white, t).W @ X_test_hat.values
        assert np.max(np.abs(a - b)) <= 1e-8
        a_tr = flow_at(newton, t).W @ X.values
        b_tr = flow_at(plain_white, t).W @ X_hat.values
        assert np.max(np.abs(a_tr - b_tr)) <= 1e-8


def test_null_space_conservation(rng):
    X = random_dataset(rng, 8, 3)
    Y = LabelSet(rng.standard_normal((2, 3)))
    W0 = rng.standard_normal((2, 8))
    sol = build_flow(X, Y, W0=W0)
    null = sol.mode_rates == 0.0
    assert np.count_nonzero(null) == 5
    for t in (0.0, 1.0, 50.0):
        # mode coefficients are conserved bit-exactly
        decay = np.exp(-sol.mode_rates * t)
        modes = sol.w_star_modes + decay[None, :] * (sol.w_init_modes - sol.w_star_modes)
        assert np.array_equal(modes[:, null], sol.w_init_modes[:, null])
        # matrix reassembly adds only rounding noise
        drift = (flow_at(sol, t).W - W0) @ sol.spectrum.eigenvectors[:, null]
        assert np.max(np.abs(drift)) <= 1e-12


def test_mode_ordering(rng):
    X = random_dataset(rng, 5, 25)
    Y = LabelSet(rng.standard_normal((1, 25)))
    W0 = rng.standard_normal((1, 5))
    sol = build_flow(X, Y, W0=W0)
    V = sol.spectrum.eigenvectors
    init_gap = np.abs((W0 - solve_optimum(X, Y).W) @ V).ravel()
    t = 0.2 / sol.spectrum.eigenvalues[0]
    gap = np.abs((flow_at(sol, t).W - solve_optimum(X, Y).W) @ V).ravel()
    rel = gap / np.maximum(init_gap, 1e-300)
    lam = sol.spectrum.eigenvalues
    for i in range(len(lam) - 1):
        if lam[i] > lam[i + 1] * (1 + 1e-9):
            assert rel[i] < rel[i + 1]


def _noisy_teacher_problem(seed=0):
    spec = SyntheticSpec(
        d=16, n_train=40, n_val=30, n_test=30, alpha=2.0, label_noise=0.4,
        classes=4, encoding="real_valued", seed=seed,
    )
    return synthesize(spec)


def test_early_stop_monotone_hits_boundary():
    data = _noisy_teacher_problem(3)
    # noiseless realizable targets: validation loss decreases monotonically
    spec = SyntheticSpec(
        d=8, n_train=30, n_val=20, alpha=1.0, label_noise=0.0,
        classes=3, encoding="real_valued", seed=5,
    )
    clean = synthesize(spec)
    sol = build_flow(clean.train, clean.y_train)
    grid = TimeGrid(1e-4 / sol.max_rate, 5.0 / sol.min_positive_rate, 60)
    t_star, record = early_stop(sol, clean.val, clean.y_val, grid)
    assert record.metadata["boundary_hit"]
    assert t_star == pytest.approx(grid.t_max)


def test_early_stop_interior_and_oracle():
    data = _noisy_teacher_problem(1)
    sol = build_flow(data.train, data.y_train)
    grid = TimeGrid.default_for(sol, points=120)
    t_star, record = early_stop(sol, data.val, data.y_val, grid)
    assert not record.metadata["boundary_hit"]
    # grid-search oracle at 10x resolution cannot beat the refined optimum by much
    fine = TimeGrid(grid.t_min, grid.t_max, 1200).times()
    fine_best = min(
        mse_per_sample(flow_at(sol, t).W @ data.val.values, data.y_val) for t in fine
    )
    assert record.metadata["val_loss_at_t_star"] <= fine_best + 1e-8


def test_early_stop_self_consistency():
    data = _noisy_teacher_problem(2)
    sol = build_flow(data.train, data.y_train)
    t_star, record = early_stop(sol, data.val, data.y_val)
    reported = record.metadata["val_loss_at_t_star"]
    recomputed = mse_per_sample(flow_at(sol, t_star).W @ data.val.values, data.y_val)
    assert abs(reported - recomputed) <= 1e-10


def test_early_stop_whitened_does_not_beat_unwhitened():
    # decaying spectrum + label noise: whitening cannot help early stopping
    white_losses, raw_losses = [], []
    for seed in range(6):
        data = _noisy_teacher_problem(seed)
        W = fit_whitener(data.train, mode="pca")
        sol_raw = build_flow(data.train, data.y_train)
        sol_white = build_flow(apply_whitener(W, data.train), data.y_train)
        _, rec_raw = early_stop(
            sol_raw, data.val, data.y_val,
            extra_eval={"test_loss": (data.test, data.y_test)},
        )
        _, rec_white = early_stop(
            sol_white, apply_whitener(W, data.val), data.y_val,
            extra_eval={"test_loss": (apply_whitener(W, data.test), data.y_test)},
        )
        raw_losses.append(rec_raw.test_loss[rec_raw.steps.index(rec_raw.terminal_step)])
        white_losses.append(rec_white.test_loss[rec_white.steps.index(rec_white.terminal_step)])
    assert np.mean(white_losses) >= np.mean(raw_losses)
