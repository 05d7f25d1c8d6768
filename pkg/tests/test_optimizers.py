import numpy as np
import pytest

from whitebench import (
    Dataset,
    LabelSet,
    LineSearchConfig,
    LinearModel,
    OptimizerConfig,
    apply_whitener,
    backtracking_line_search,
    conjugate_gradient_solve,
    fit_whitener,
    init_isotropic,
    kernel_newton_step,
    newton_step,
    pseudoinverse,
    regularized_gn_step,
    regularized_preconditioner_eigenform,
    sgd_step,
    solve_optimum,
)
from whitebench.errors import ConvergenceError, DivergenceError, LineSearchError, ValidationError
from whitebench.optimizers import _flatten

from conftest import one_hot_labels, random_dataset


def finite_difference_grads(model, X, Y, coords=80, seed=0):
    """Oracle: central differences of the summed loss per parameter coordinate."""
    rng = np.random.default_rng(seed)
    params = model.trainable()
    checks = []
    for idx, p in enumerate(params):
        flat = p.ravel()
        count = min(coords, flat.size)
        for j in rng.choice(flat.size, size=count, replace=False):
            h = 1e-5 * (1.0 + abs(flat[j]))
            orig = flat[j]
            flat[j] = orig + h
            up = model.loss_on(X, Y)
            flat[j] = orig - h
            down = model.loss_on(X, Y)
            flat[j] = orig
            checks.append((idx, j, (up - down) / (2 * h)))
    return checks


def assert_grads_match_fd(model, X, Y, rel=1e-4):
    _, grads, _ = model.loss_and_grads(X, Y)
    for idx, j, fd in finite_difference_grads(model, X, Y):
        a = grads[idx].ravel()[j]
        assert abs(a - fd) <= rel * max(1.0, abs(a), abs(fd)), (idx, j, a, fd)


# -- sgd ----------------------------------------------------------------------

def test_sgd_zero_gradient_is_stationary(rng):
    model = init_isotropic([3, 2], variance=0.0)
    X = rng.standard_normal((3, 5))
    Y = np.zeros((2, 5))
    before = [w.copy() for w in model.weights]
    sgd_step(model, X, Y, OptimizerConfig(eta=0.5))
    for b, w in zip(before, model.weights):
        assert np.array_equal(b, w)


def test_sgd_one_parameter_hand_value():
    # w = 0, x = 1, y = 1, L = (wx - y)^2 / 2, eta = 0.1 -> w' = 0.1
    model = init_isotropic([1, 1], variance=0.0)
    sgd_step(model, np.array([[1.0]]), np.array([[1.0]]), OptimizerConfig(eta=0.1))
    assert model.weights[0][0, 0] == pytest.approx(0.1, abs=1e-15)


def test_sgd_activation_recursion_full_batch(rng):
    # Z' = Z - eta (dL/dZ) K for the first layer, any depth
    X = random_dataset(rng, 4, 9)
    Y = one_hot_labels(rng, 3, 9)
    model = init_isotropic([4, 6, 3], variance=0.05, seed=1)
    cfg = OptimizerConfig(eta=0.07)
    K = X.values.T @ X.values
    Z_before = model.weights[0] @ X.values
    _, _, aux = model.loss_and_grads(X.values, Y.targets)
    sgd_step(model, X.values, Y.targets, cfg)
    Z_after = model.weights[0] @ X.values
    predicted = Z_before - cfg.eta * aux["dZ_first"] @ K
    assert np.max(np.abs(Z_after - predicted)) <= 1e-9


def test_sgd_divergence_error():
    model = init_isotropic([1, 1], variance=0.0)
    model.weights[0][0, 0] = 1e300
    with np.errstate(over="ignore"), pytest.raises(DivergenceError):
        sgd_step(model, np.array([[1e300]]), np.array([[0.0]]), OptimizerConfig(eta=10.0))


# -- newton -------------------------------------------------------------------

def test_newton_one_step_convergence(rng):
    X = random_dataset(rng, 4, 20)
    Y = LabelSet(rng.standard_normal((3, 20)))
    model = LinearModel(rng.standard_normal((3, 4)))
    result = newton_step(model, X.values, Y.targets, OptimizerConfig(eta=1.0))
    assert not result.diagnostics["pseudoinverse_fallback"]
    assert np.max(np.abs(model.W - solve_optimum(X, Y).W)) <= 1e-10


def test_newton_equals_sgd_on_exactly_white_data(rng):
    # F = I by construction: Newton direction is the raw gradient
    X = np.eye(3)
    Y = rng.standard_normal((2, 3))
    W0 = rng.standard_normal((2, 3))
    newton_model = LinearModel(W0.copy())
    sgd_model = init_isotropic([3, 2], variance=0.0)
    sgd_model.weights[0][...] = W0
    cfg = OptimizerConfig(eta=0.4)
    newton_step(newton_model, X, Y, cfg)
    sgd_step(sgd_model, X, Y, cfg)
    assert np.max(np.abs(newton_model.W - sgd_model.weights[0])) <= 1e-14


def test_newton_prediction_sequence_matches_whitened_gd(rng):
    d, n, n_test, steps = 16, 80, 12, 60
    X = random_dataset(rng, d, n)
    X_test = random_dataset(rng, d, n_test, split_tag="test")
    Y = one_hot_labels(rng, 10, n)
    Wt = fit_whitener(X, mode="pca")
    X_hat = apply_whitener(Wt, X)
    X_test_hat = apply_whitener(Wt, X_test)
    newton = LinearModel(np.zeros((10, d)))
    gd = init_isotropic([d, 10], variance=0.0)
    cfg = OptimizerConfig(eta=0.35)
    for _ in range(steps):
        newton_step(newton, X.values, Y.targets, cfg)
        sgd_step(gd, X_hat.values, Y.targets, cfg)
        assert np.max(np.abs(newton.W @ X.values - gd.weights[0] @ X_hat.values)) <= 1e-10
        assert np.max(np.abs(newton.W @ X_test.values - gd.weights[0] @ X_test_hat.values)) <= 1e-10


def test_newton_pseudoinverse_fallback_flagged(rng):
    X = random_dataset(rng, 6, 3)
    Y = LabelSet(rng.standard_normal((2, 3)))
    model = LinearModel(np.zeros((2, 6)))
    result = newton_step(model, X.values, Y.targets, OptimizerConfig(eta=1.0))
    assert result.diagnostics["pseudoinverse_fallback"]


# -- regularized gauss-newton ---------------------------------------------------

def test_gn_lambda_one_is_gradient_step(rng):
    X = random_dataset(rng, 5, 12)
    Y = one_hot_labels(rng, 3, 12)
    model = init_isotropic([5, 7, 3], variance=0.1, seed=2)
    _, grads, _ = model.loss_and_grads(X.values, Y.targets)
    before = [w.copy() for w in model.weights]
    cfg = OptimizerConfig(eta=0.2, reg_lambda=1.0)
    result = regularized_gn_step(model, X.values, Y.targets, cfg)
    for b, g, w in zip(before, grads, model.weights):
        assert np.max(np.abs(w - (b - cfg.eta * g))) <= 1e-10
    assert result.diagnostics["cg_iterations"] == 1


def test_gn_lambda_zero_matches_dense_newton_direction(rng):
    # linear model + MSE: the GGN is F, so lambda = 0 must reproduce grad @ F^{-1}
    d, n = 6, 30
    X = random_dataset(rng, d, n)
    Y = LabelSet(rng.standard_normal((2, n)))
    model = init_isotropic([d, 2], variance=0.1, seed=3)
    W_before = model.weights[0].copy()
    _, grads, _ = model.loss_and_grads(X.values, Y.targets)
    F = X.values @ X.values.T
    dense_direction = grads[0] @ np.linalg.inv(F)
    cfg = OptimizerConfig(eta=1.0, reg_lambda=0.0, cg_tol=1e-13, cg_max_iter=2000)
    regularized_gn_step(model, X.values, Y.targets, cfg)
    taken = W_before - model.weights[0]
    assert np.max(np.abs(taken - dense_direction)) <= 1e-10


def test_regularized_preconditioner_diag_oracle():
    B = np.diag([4.0, 1.0])
    P = regularized_preconditioner_eigenform(B, 0.5)
    assert np.allclose(np.sort(np.linalg.eigvalsh(P)), [0.4, 1.0], atol=1e-12)


def test_regularized_preconditioner_matches_dense_inverse(rng):
    for trial in range(4):
        n = int(rng.integers(4, 65))
        A = rng.standard_normal((n, n))
        B = A @ A.T + 0.5 * np.eye(n)
        lam = float(rng.uniform(0.05, 0.95))
        dense = np.linalg.inv((1 - lam) * B + lam * np.eye(n))
        assert np.max(np.abs(regularized_preconditioner_eigenform(B, lam) - dense)) <= 1e-8


def test_regularized_preconditioner_mode_scaling(rng):
    lam = 0.5
    B = np.diag([1e4, 1e-4])  # large mode >> lam/(1-lam), small mode << it
    P = regularized_preconditioner_eigenform(B, lam)
    scales = np.sort(np.linalg.eigvalsh(P))
    assert scales[0] == pytest.approx(1.0 / ((1 - lam) * 1e4), rel=1e-3)
    assert scales[1] == pytest.approx(1.0 / lam, rel=1e-3)


def test_gn_direction_continuous_in_lambda(rng):
    X = random_dataset(rng, 4, 14)
    Y = one_hot_labels(rng, 3, 14)
    directions = []
    for lam in (0.3, 0.3 + 1e-9):
        model = init_isotropic([4, 5, 3], variance=0.1, seed=4)
        before = _flatten([w.copy() for w in model.weights])
        cfg = OptimizerConfig(eta=1.0, reg_lambda=lam, cg_tol=1e-12, cg_max_iter=5000)
        regularized_gn_step(model, X.values, Y.targets, cfg)
        directions.append(before - _flatten(model.weights))
    assert np.max(np.abs(directions[0] - directions[1])) <= 1e-6


# -- conjugate gradients --------------------------------------------------------

def test_cg_identity_single_iteration():
    b = np.array([3.0, -1.0, 2.0])
    res = conjugate_gradient_solve(lambda v: v, b, tol=1e-12)
    assert res.iterations == 1
    assert np.max(np.abs(res.x - b)) <= 1e-12


def test_cg_diagonal_hand_case():
    res = conjugate_gradient_solve(lambda v: 2.0 * v, np.array([2.0, 4.0]), tol=1e-12)
    assert np.allclose(res.x, [1.0, 2.0], atol=1e-12)


def test_cg_exact_in_distinct_eigenvalue_count(rng):
    # m distinct eigenvalues -> exact convergence within m iterations
    eigs = np.array([1.0, 1.0, 3.0, 3.0, 7.0, 7.0])
    Q = np.linalg.qr(rng.standard_normal((6, 6)))[0]
    A = Q @ np.diag(eigs) @ Q.T
    b = rng.standard_normal(6)
    res = conjugate_gradient_solve(lambda v: A @ v, b, tol=1e-8)
    assert res.iterations <= 3
    assert np.max(np.abs(A @ res.x - b)) <= 1e-7


def test_cg_nonconvergence_error(rng):
    A = np.diag([1.0, 1e8])
    with pytest.raises(ConvergenceError) as err:
        conjugate_gradient_solve(lambda v: A @ v, np.array([1.0, 1.0]), tol=1e-300, max_iter=3)
    assert err.value.residual is not None


# -- line search ----------------------------------------------------------------

def quadratic_loss(params):
    (w,) = params
    return float(w @ w)


def test_line_search_accepts_small_step():
    params = [np.array([1.0])]
    direction = [np.array([-2.0])]  # -grad
    slope = -4.0
    cfg = LineSearchConfig(initial_step=0.1)
    assert backtracking_line_search(quadratic_loss, params, direction, slope, cfg) == 0.1


def test_line_search_backs_off_and_satisfies_armijo():
    params = [np.array([1.0])]
    direction = [np.array([-2.0])]
    slope = -4.0
    cfg = LineSearchConfig(initial_step=2.0)
    s = backtracking_line_search(quadratic_loss, params, direction, slope, cfg)
    assert s < 2.0
    assert quadratic_loss([params[0] + s * direction[0]]) <= quadratic_loss(params) + 1e-4 * s * slope


def test_line_search_rejects_ascent_direction():
    with pytest.raises(LineSearchError):
        backtracking_line_search(quadratic_loss, [np.array([1.0])], [np.array([2.0])], 4.0)


def test_line_search_stall_error():
    # loss that never decreases: every trial fails the sufficient-decrease test
    def bad_loss(params):
        (w,) = params
        return 1.0 + abs(float(w[0]) - 1.0)

    with pytest.raises(LineSearchError):
        backtracking_line_search(bad_loss, [np.array([1.0])], [np.array([-1.0])], -1.0)


# -- kernel newton ----------------------------------------------------------------

def test_kernel_newton_interpolates_in_one_step(rng):
    n, k = 8, 3
    A = rng.standard_normal((n, n))
    theta = A @ A.T + np.eye(n)
    f = rng.standard_normal((k, n))
    Y = rng.standard_normal((k, n))
    cfg = OptimizerConfig(eta=1.0, kernel_epsilon=0.0)
    f_new, _ = kernel_newton_step(f, theta, Y, cfg)
    assert np.max(np.abs(f_new - Y)) <= 1e-8


def test_kernel_newton_large_epsilon_is_scaled_kernel_gd(rng):
    n, k = 6, 2
    A = rng.standard_normal((n, n))
    theta = A @ A.T + np.eye(n)
    f = rng.standard_normal((k, n))
    Y = rng.standard_normal((k, n))
    eps = 1e6 * np.linalg.norm(theta, 2)
    cfg = OptimizerConfig(eta=1.0, kernel_epsilon=float(eps))
    f_new, _ = kernel_newton_step(f, theta, Y, cfg)
    taken = f - f_new
    expected = (1.0 / eps) * (f - Y) @ theta
    assert np.max(np.abs(taken - expected)) <= 1e-3 * np.max(np.abs(expected))


def test_kernel_newton_linear_features_match_parameter_newton(rng):
    d, n, n_test, k = 9, 5, 4, 2
    X = random_dataset(rng, d, n)
    X_test = random_dataset(rng, d, n_test, split_tag="test")
    Y = LabelSet(rng.standard_normal((k, n)))
    W0 = rng.standard_normal((k, d))

    model = LinearModel(W0.copy())
    cfg = OptimizerConfig(eta=0.7, kernel_epsilon=0.0)
    newton_step(model, X.values, Y.targets, cfg)
    param_train = model.W @ X.values
    param_test = model.W @ X_test.values

    theta = X.values.T @ X.values
    theta_mixed = X.values.T @ X_test.values
    f_train, f_test = kernel_newton_step(
        W0 @ X.values, theta, Y.targets, cfg,
        f_test=W0 @ X_test.values, kernel_train_test=theta_mixed,
    )
    assert np.max(np.abs(f_train - param_train)) <= 1e-8
    assert np.max(np.abs(f_test - param_test)) <= 1e-8


def test_kernel_newton_singular_requires_epsilon(rng):
    theta = np.zeros((4, 4))
    f = rng.standard_normal((2, 4))
    with pytest.raises(ValidationError, match="kernel_epsilon"):
        kernel_newton_step(f, theta, f, OptimizerConfig(eta=1.0, kernel_epsilon=0.0))


# -- gradient correctness ----------------------------------------------------------

@pytest.mark.parametrize("activation", ["relu", "tanh"])
@pytest.mark.parametrize("head", ["linear_mse", "softmax_xent"])
def test_gradients_match_finite_differences(rng, activation, head):
    for seed in range(3):
        X = rng.standard_normal((4, 7))
        Y = one_hot_labels(rng, 3, 7).targets
        model = init_isotropic(
            [4, 6, 3], variance=0.2, seed=seed, activation=activation, output_head=head,
            deeper_biases=True,
        )
        assert_grads_match_fd(model, X, Y)


def test_linear_model_gradients_match_fd(rng):
    model = init_isotropic([5, 2], variance=0.3, seed=9)
    X = rng.standard_normal((5, 11))
    Y = rng.standard_normal((2, 11))
    assert_grads_match_fd(model, X, Y)


def test_descent_under_line_search(rng):
    X = random_dataset(rng, 5, 20)
    Y = one_hot_labels(rng, 3, 20)
    model = init_isotropic([5, 8, 3], variance=0.1, seed=11)
    cfg = OptimizerConfig(
        eta=1.0, reg_lambda=0.4, line_search=LineSearchConfig(initial_step=1.0)
    )
    losses = [model.loss_on(X.values, Y.targets)]
    for _ in range(12):
        result = regularized_gn_step(model, X.values, Y.targets, cfg)
        losses.append(result.loss_after)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_lambda_sweep_steps_to_best_validation_direction():
    # steps to the best validation loss grow (weakly) as lambda -> 1
    from whitebench import Dataset
    from whitebench.synth import SyntheticSpec, synthesize

    def steps_to_best(lam, data, X, scale, seed, steps=80):
        model = init_isotropic([24, 4], variance=0.0, seed=seed)
        cfg = OptimizerConfig(
            eta=1.0, reg_lambda=lam, cg_tol=1e-6, cg_max_iter=2000,
            line_search=LineSearchConfig(initial_step=1.0),
        )
        X_val = data.val.values / scale
        best, best_step = np.inf, 0
        for step in range(1, steps + 1):
            regularized_gn_step(model, X.values, data.y_train.targets, cfg)
            v = model.loss_on(X_val, data.y_val.targets)
            if v < best:
                best, best_step = v, step
        return best_step

    lams = (0.2, 0.6, 1.0)
    means = []
    for lam in lams:
        steps = []
        for seed in range(6):
            spec = SyntheticSpec(
                d=24, n_train=96, n_val=32, alpha=2.0, label_noise=0.1, classes=4,
                encoding="one_hot", seed=seed, teacher_seed=7,
            )
            data = synthesize(spec)
            scale = np.sqrt(float(np.linalg.eigvalsh(data.train.values @ data.train.values.T)[-1]))
            X = Dataset(data.train.values / scale, split_tag="train")
            steps.append(steps_to_best(lam, data, X, scale, seed))
        means.append(np.mean(steps))
    assert means[0] <= means[1] <= means[2]
