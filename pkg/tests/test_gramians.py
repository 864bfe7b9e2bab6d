import math

import numpy as np
import pytest
import scipy.linalg as sla

from stochbt import ApproxConfig, EstimatorConfig, approx_gramians, exact_gramians, expm_action, sampled_gramians
from stochbt import BenchmarkConfig, build_heat_spde_benchmark, terminal_F
from stochbt.gramians import _simpson_integral, clamp_psd, integral_term, sample_terminal_covariance
from stochbt.gramians import surrogate_terminal
from stochbt.mcsim import simulate_matrix_paths

from conftest import random_system, scalar_system


def test_exact_scalar_stable():
    g = exact_gramians(scalar_system(-1.0, nu=1.0), 1.0)
    assert g.P[0, 0] == pytest.approx(1 - math.exp(-1), rel=1e-12)
    assert g.P[0, 0] == pytest.approx(0.63212, abs=5e-6)
    assert g.provenance == "exact"


def test_exact_scalar_unstable():
    g = exact_gramians(scalar_system(0.5, nu=1.0), 1.0)
    assert g.P[0, 0] == pytest.approx((math.exp(2) - 1) / 2, rel=1e-12)
    assert g.P[0, 0] == pytest.approx(3.19453, abs=5e-6)
    assert g.Q[0, 0] == pytest.approx(g.P[0, 0], rel=1e-12)


def test_exact_residuals_and_symmetry(rng):
    sys = random_system(rng, 6, m=2, p=2, q=2, shift=0.3, noise=0.8)
    g = exact_gramians(sys, 1.0)
    assert g.diagnostics["residual_P"] <= 1e-8 and g.diagnostics["residual_Q"] <= 1e-8
    for X in (g.P, g.Q):
        np.testing.assert_array_equal(X, X.T)
        assert np.linalg.eigvalsh(X).min() >= -1e-9 * np.abs(X).max()


def test_exact_equals_quadrature_of_flow(rng):
    sys = random_system(rng, 4, q=1, shift=0.2, noise=0.7)
    op, W = sys.operator, sys.B @ sys.B.T
    m = 64
    ts = np.linspace(0, 1.0, m + 1)
    vals = [expm_action(op, W, t) for t in ts]
    w = np.ones(m + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    P_quad = sum(wi * V for wi, V in zip(w, vals)) / (3 * m)
    P = exact_gramians(sys, 1.0).P
    assert np.linalg.norm(P - P_quad) <= 1e-6 * np.linalg.norm(P)


def test_exact_against_monte_carlo(rng):
    sys = random_system(rng, 6, q=1, shift=-0.3, noise=0.8)
    # 1000 steps keep the O(h) bias of the scheme (about 4e-4 here) below one standard error
    steps, count = 1000, 20_000
    h = 1.0 / steps
    acc = np.zeros((count, 6, 6))

    def observer(k, X, dw):
        x = X[:, :, 0]
        wgt = 0.5 * h if k == 0 else h
        acc[:] += wgt * x[:, :, None] * x[:, None, :]

    XT = simulate_matrix_paths(sys.A, sys.N, sys.K, sys.B, 1.0, steps, seed=3, paths=range(count),
                               scheme="exponential", observer=observer)[:, :, 0]
    acc += 0.5 * h * XT[:, :, None] * XT[:, None, :]
    se = acc.std(axis=0, ddof=1) / math.sqrt(count)
    P = exact_gramians(sys, 1.0).P
    assert np.all(np.abs(acc.mean(axis=0) - P) <= 3 * se)


def test_estimator_noise_free_exact(rng):
    sys = random_system(rng, 4, m=2, noise=0.0)
    for correction in (False, True):
        cfg = EstimatorConfig(M=3, n_g=50, include_ito_correction=correction, seed=1)
        F, info = sample_terminal_covariance(sys, 1.0, cfg, full_output=True)
        E = sla.expm(sys.A)
        np.testing.assert_allclose(F, E @ sys.B @ sys.B.T @ E.T, rtol=0, atol=1e-12 * np.linalg.norm(F))
        assert np.abs(info["stderr"]).max() <= 1e-12 * np.linalg.norm(F)
    g = sampled_gramians(sys, 1.0, EstimatorConfig(M=1, n_g=20))
    ex = exact_gramians(sys, 1.0)
    np.testing.assert_allclose(g.P, ex.P, atol=1e-10 * np.linalg.norm(ex.P))
    np.testing.assert_allclose(g.Q, ex.Q, atol=1e-10 * np.linalg.norm(ex.Q))


@pytest.mark.parametrize("correction", [False, True])
def test_estimator_scalar_unbiased(correction):
    sys = scalar_system(0.0, nu=1.0)
    cfg = EstimatorConfig(M=10_000, n_g=1000, include_ito_correction=correction, seed=4)
    F, info = sample_terminal_covariance(sys, 1.0, cfg, full_output=True)
    assert abs(F[0, 0] - math.e) <= 3 * info["stderr"][0, 0]


def test_estimator_scalar_stable_unbiased():
    sys = scalar_system(-0.3, nu=0.8)
    exact = math.exp(2 * -0.3 + 0.64)
    for correction, c in ((False, 0.0), (True, 0.0), (True, 0.7)):
        cfg = EstimatorConfig(M=10_000, n_g=500, include_ito_correction=correction, c=c, seed=8)
        F, info = sample_terminal_covariance(sys, 1.0, cfg, full_output=True)
        assert abs(F[0, 0] - exact) <= 4 * info["stderr"][0, 0]


def test_control_variate_reduces_variance_scalar():
    sys = scalar_system(-0.3, nu=0.8)
    off = sample_terminal_covariance(sys, 1.0, EstimatorConfig(M=2000, n_g=500, include_ito_correction=False, seed=2),
                                     full_output=True)[1]["stderr"][0, 0]
    on = sample_terminal_covariance(sys, 1.0, EstimatorConfig(M=2000, n_g=500, include_ito_correction=True, seed=2),
                                    full_output=True)[1]["stderr"][0, 0]
    # with the exact flow (c = 2a + nu^2 times F) the variance would vanish; c = 0 already helps
    assert on < off


def test_estimator_benchmark_small():
    sys = build_heat_spde_benchmark(BenchmarkConfig(n=10))
    F = terminal_F(sys, 1.0).X
    res = {}
    for correction in (False, True):
        cfg = EstimatorConfig(M=1000, n_g=1000, include_ito_correction=correction, seed=6)
        res[correction] = sample_terminal_covariance(sys, 1.0, cfg, full_output=True)
    mean, info = res[False]
    assert np.all(np.abs(mean - F) <= 3 * info["stderr"])
    var_off = (res[False][1]["stderr"] ** 2).sum()
    var_on = (res[True][1]["stderr"] ** 2).sum()
    assert var_on <= 1.05 * var_off


def test_estimator_error_scaling():
    sys = random_system(np.random.default_rng(9), 4, q=1, shift=-0.5, noise=0.8)
    F = terminal_F(sys, 1.0).X
    rms = []
    for M, seeds in ((100, range(16)), (10_000, range(8))):
        errs = [np.linalg.norm(sample_terminal_covariance(
            sys, 1.0, EstimatorConfig(M=M, n_g=1000, include_ito_correction=False, seed=sd)) - F) for sd in seeds]
        rms.append(math.sqrt(np.mean(np.square(errs))))
    assert 5.0 <= rms[0] / rms[1] <= 20.0  # 1/sqrt(M) within a factor 2


def test_sampled_gramians_diagnostics(rng):
    sys = random_system(rng, 4, q=1, shift=-0.5, noise=0.5)
    g = sampled_gramians(sys, 1.0, EstimatorConfig(M=50, n_g=100, seed=1))
    assert g.provenance == "sampled" and g.diagnostics["M"] == 50 and g.diagnostics["psd_mode"] == "abs"
    assert g.diagnostics["residual_P"] <= 1e-8
    assert np.linalg.eigvalsh(g.P).min() >= 0 and np.linalg.eigvalsh(g.Q).min() >= 0


def test_sandwich_scalar():
    a, nu, T = -0.4, 0.9, 2.0
    sys = scalar_system(a, nu=nu)
    ts = np.linspace(0.05, T, 40)
    F = np.array([terminal_F(sys, t).X[0, 0] for t in ts])
    lo, hi = min(1.0, F.min()), max(1.0, F.max())
    for t, f in zip(ts, F):
        lower = surrogate_terminal(sys.A, sys.N, sys.K, np.eye(1), t, lo)[0, 0]
        upper = surrogate_terminal(sys.A, sys.N, sys.K, np.eye(1), t, hi)[0, 0]
        assert lower <= f <= upper


def test_integral_term_against_simpson(rng):
    A = rng.standard_normal((4, 4)) - 0.5 * np.eye(4)
    W = rng.standard_normal((4, 4))
    W = W @ W.T
    Y = integral_term(A, W, 1.3)
    Ys = _simpson_integral(A, W, 1.3, rtol=1e-12)
    assert np.linalg.norm(Y - Ys) <= 1e-9 * np.linalg.norm(Ys)
    # diagonal A with a_i + a_j = 0 collisions stays finite and exact
    D = np.diag([1.0, -1.0, 0.5])
    Yd = integral_term(D, W[:3, :3], 0.8)
    Ysd = _simpson_integral(D, W[:3, :3], 0.8, rtol=1e-12)
    assert np.linalg.norm(Yd - Ysd) <= 1e-9 * np.linalg.norm(Ysd)


def test_integral_term_singular_fallback():
    # non-diagonal A whose standard Lyapunov operator is singular
    R = np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    A = R @ np.diag([0.7, -0.7]) @ R.T
    W = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(integral_term(A, W, 1.0), _simpson_integral(A, W, 1.0, rtol=1e-12), rtol=1e-8)


def test_approx_scalar():
    sys = scalar_system(-1.0, nu=1.0)
    F = surrogate_terminal(sys.A, sys.N, sys.K, np.eye(1), 1.0, 1.0)[0, 0]
    assert F == pytest.approx(math.exp(-2) + (1 - math.exp(-2)) / 2, rel=1e-13)
    g = approx_gramians(sys, 1.0, ApproxConfig(c_F=1.0, c_G=1.0))
    assert g.P[0, 0] == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-12)
    assert g.P[0, 0] == pytest.approx(0.43233, abs=5e-6)
    assert g.provenance == "approx"


def test_approx_noise_free_is_exact(rng):
    sys = random_system(rng, 5, noise=0.0)
    ex = exact_gramians(sys, 1.0)
    for c in (0.0, 2.5):
        g = approx_gramians(sys, 1.0, ApproxConfig(c_F=c, c_G=-c))
        np.testing.assert_allclose(g.P, ex.P, atol=1e-10 * np.linalg.norm(ex.P))
        np.testing.assert_allclose(g.Q, ex.Q, atol=1e-10 * np.linalg.norm(ex.Q))


def test_clamp_modes():
    X = np.diag([3.0, -1.0, 1e-12])
    clipped, wmin = clamp_psd(X, mode="clip")
    assert wmin == -1.0
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(clipped)), [0.0, 1e-12, 3.0], atol=1e-15)
    fixed, _ = clamp_psd(X, mode="abs")
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(fixed)), [1e-12, 1.0, 3.0], atol=1e-15)
    with pytest.raises(ValueError):
        clamp_psd(X, mode="bogus")


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(M=0)
    with pytest.raises(ValueError):
        EstimatorConfig(n_g=0)
    with pytest.raises(ValueError):
        ApproxConfig(c_F=float("nan"))
    assert EstimatorConfig().correction_enabled(100) and not EstimatorConfig().correction_enabled(1000)
