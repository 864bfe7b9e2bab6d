import io
import math

import numpy as np
import pytest
import scipy.linalg as sla

from stochbt import NoisePlan, SimulationError, StochasticLinearSystem, simulate_errors, simulate_pair
from stochbt.mcsim import LinearStepper, simulate_matrix_paths, simulate_matrix_state, wiener_increments
from stochbt.sysmodel import ControlSignal

from conftest import random_system, scalar_system


def test_increment_variance():
    dw = NoisePlan([[1.0]], 0.01, 100_000, seed=3).path_increments(0)[:, 0]
    assert 0.0094 <= dw.var(ddof=1) <= 0.0106


def test_fully_correlated_increments_coincide():
    plan = NoisePlan([[1.0, 1.0], [1.0, 1.0]], 0.01, 500, seed=1)
    dw = plan.path_increments(4)
    np.testing.assert_array_equal(dw[:, 0], dw[:, 1])


def test_uncorrelated_cross_covariance():
    count = 100_000
    dw = NoisePlan(np.eye(2), 0.01, count, seed=2).path_increments(0)
    prod = dw[:, 0] * dw[:, 1]
    assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / math.sqrt(count)


def test_factor_reproduces_covariance():
    for K in (np.array([[1.0, 0.5], [0.5, 1.0]]), np.array([[1.0, -1.0], [-1.0, 1.0]]), np.eye(1)):
        plan = NoisePlan(K, 0.1, 1, seed=0)
        np.testing.assert_allclose(plan.factor @ plan.factor.T, K, atol=1e-12)
    with pytest.raises(SimulationError):
        NoisePlan(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.1, 1, seed=0)


def test_increments_are_pure_functions_of_seed_path_step():
    plan = NoisePlan(np.eye(2), 0.05, 20, seed=11)
    batch = plan.batch_increments(range(3, 8))
    np.testing.assert_array_equal(wiener_increments(plan, 5, 7), batch[2, 7])
    np.testing.assert_array_equal(NoisePlan(np.eye(2), 0.05, 20, seed=11).path_increments(5), batch[2])
    assert not np.array_equal(NoisePlan(np.eye(2), 0.05, 20, seed=12).path_increments(5), batch[2])


def test_full_model_in_other_basis_has_zero_error(rng):
    sys = random_system(rng, 5, m=2, p=2, q=2, shift=0.3, noise=0.8)
    S = np.linalg.qr(rng.standard_normal((5, 5)))[0]
    other = sys.transformed(S, S.T)
    u = ControlSignal(c_u=1.0, decay=0.1, m=2)
    est = simulate_pair(sys, other, u, 1.0, 200, 300, seed=5)
    y_scale = simulate_pair(sys, StochasticLinearSystem(
        -np.eye(1), np.zeros((1, 2)), np.zeros((2, 1)), (np.zeros((1, 1)),) * 2, sys.K), u, 1.0, 200, 300, seed=5)
    assert est.sup_error <= 1e-10 * y_scale.sup_error


def test_scalar_second_moment():
    X = simulate_matrix_paths([[0.0]], ([[1.0]],), [[1.0]], [[1.0]], 1.0, 1000, seed=9, paths=range(100_000))
    x2 = X[:, 0, 0] ** 2
    assert abs(x2.mean() - math.e) <= 3 * x2.std(ddof=1) / math.sqrt(len(x2))


def test_scalar_stable_second_moment():
    X = simulate_matrix_paths([[-0.5]], ([[1.0]],), [[1.0]], [[1.0]], 1.0, 1000, seed=4, paths=range(100_000))
    x2 = X[:, 0, 0] ** 2
    assert abs(x2.mean() - 1.0) <= 3 * x2.std(ddof=1) / math.sqrt(len(x2))


def test_noise_free_matrix_state(rng):
    sys = random_system(rng, 4, noise=0.0)
    X0 = rng.standard_normal((4, 2))
    errs = []
    for steps in (100, 1000):
        X = simulate_matrix_state(sys, X0, 1.0, steps, seed=0, path=0)
        G = np.linalg.matrix_power(np.linalg.inv(np.eye(4) - sys.A / steps), steps)
        np.testing.assert_allclose(X, G @ X0, rtol=1e-10, atol=1e-12)
        errs.append(np.linalg.norm(X - sla.expm(sys.A) @ X0))
    assert 8 < errs[0] / errs[1] < 12  # first order in h
    np.testing.assert_array_equal(simulate_matrix_state(sys, np.zeros((4, 2)), 1.0, 50, 0, 0), 0.0)


def test_mean_follows_deterministic_recursion(rng):
    sys = random_system(rng, 3, q=2, shift=0.0, noise=1.0)
    steps, count = 40, 4000
    x0 = np.ones((3, 1))
    means, sq = np.zeros((steps, 3)), np.zeros((steps, 3))

    def observer(k, X, dw):
        means[k] += X[:, :, 0].sum(axis=0)
        sq[k] += (X[:, :, 0] ** 2).sum(axis=0)

    simulate_matrix_paths(sys.A, sys.N, sys.K, x0, 1.0, steps, seed=1, paths=range(count), observer=observer)
    means /= count
    se = np.sqrt((sq / count - means**2) / (count - 1))
    G = np.linalg.inv(np.eye(3) - sys.A / steps)
    ref = np.array([np.linalg.matrix_power(G, k) @ x0[:, 0] for k in range(steps)])
    assert np.all(np.abs(means - ref) <= 3 * se + 1e-14)


def test_second_moment_matches_flow():
    from stochbt import terminal_F

    sys = random_system(np.random.default_rng(5), 3, q=1, shift=-0.5, noise=1.0)
    F = terminal_F(sys, 1.0).X
    X = simulate_matrix_paths(sys.A, sys.N, sys.K, sys.B, 1.0, 1000, seed=2, paths=range(50_000))[:, :, 0]
    s = X[:, :, None] * X[:, None, :]
    se = s.std(axis=0, ddof=1) / math.sqrt(len(s))
    assert np.all(np.abs(s.mean(axis=0) - F) <= 3 * se)


def test_reproducible_and_batch_independent(rng):
    sys = random_system(rng, 4, q=1, noise=0.5)
    rom = StochasticLinearSystem(sys.A[:2, :2], sys.B[:2], sys.C[:, :2], (sys.N[0][:2, :2],), sys.K)
    u = ControlSignal(c_u=1.0)
    a = simulate_pair(sys, rom, u, 1.0, 50, 250, seed=3, batch_size=100)
    b = simulate_pair(sys, rom, u, 1.0, 50, 250, seed=3, batch_size=100)
    c = simulate_pair(sys, rom, u, 1.0, 50, 250, seed=3, batch_size=250)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.stderr, b.stderr)
    np.testing.assert_allclose(a.mean, c.mean, rtol=1e-12)
    assert a.sup_error >= 0 and np.all(np.isfinite(a.stderr))
    multi = simulate_errors(sys, [rom, sys], u, 1.0, 50, 250, seed=3, batch_size=100)
    np.testing.assert_array_equal(multi[0].mean, a.mean)
    assert multi[1].sup_error == 0.0


def test_singular_step_and_blow_up():
    u = ControlSignal(c_u=1.0)
    with pytest.raises(SimulationError, match="smaller step"):
        simulate_pair(scalar_system(10.0), scalar_system(10.0), u, 1.0, 10, 5, seed=0)
    sys = scalar_system(0.9 * 400, nu=0.0)
    with pytest.raises(SimulationError, match="blow-up"):
        simulate_pair(sys, scalar_system(-1.0), u, 1.0, 400, 5, seed=0)


def test_exponential_stepper_noise_free(rng):
    A = rng.standard_normal((3, 3))
    st = LinearStepper(A, (), 0.1, "exponential")
    np.testing.assert_allclose(st.G, sla.expm(0.1 * A), atol=1e-14)


def test_profile_csv(rng):
    sys = random_system(rng, 2)
    est = simulate_pair(sys, scalar_system(-1.0), ControlSignal(c_u=1.0), 1.0, 4, 10, seed=0)
    buf = io.StringIO()
    est.write_profile(buf)
    lines = buf.getvalue().split("\n")
    assert lines[0] == "t,mean_err,stderr"
    assert len(lines) == 7  # header, five rows, trailing newline
    assert lines[1].startswith("0.0000000000000000e+00,")
