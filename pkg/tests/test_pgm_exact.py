import csv
import json

import numpy as np
import pytest

from iohpg.errors import Diverged, NotInSublevel, NotSchur
from iohpg.ioh import build_ioh, reachable_projection
from iohpg.pgm_exact import (CostModel, PGMReport, beta_rate, cost_or_inf, diagnostics, gradient, lq_cost,
                             q_hat, resolve_sublevel, run_model_based, save_report, smoothness_constant,
                             smoothness_gap, state_covariance, value_matrix)
from iohpg.plant import PlantModel

from conftest import random_gain_in_sublevel

J0_GOLDEN = 6624.374744760267


def _scalar_setup(a=0.5):
    pl = PlantModel(A=[[a]], B=[[1.0]], C=[[1.0]])
    ioh = build_ioh(pl, 1)
    proj = reachable_projection(ioh)
    return pl, ioh, proj, CostModel([[1.0]], [[1.0]])


def _truncated_cost(st, K, T):
    """Sum of expected stage costs from t = L to T via covariance propagation."""
    ioh = st.ioh
    Tcl = ioh.Theta + ioh.Pi @ K
    W = ioh.Gamma.T @ ioh.C.T @ st.Q @ ioh.C @ ioh.Gamma + K.T @ st.R @ K
    S = st.proj.Phi.copy()
    total = 0.0
    for _ in range(T - ioh.L + 1):
        total += float(np.sum(W * S))
        S = Tcl @ S @ Tcl.T
    return total


def _monte_carlo_cost(st, K, episodes, T, rng):
    pl, L = st.plant, st.ioh.L
    m = pl.m
    x = rng.standard_normal((pl.n, episodes))
    us = [rng.standard_normal((m, episodes)) for _ in range(L)]
    ys = []
    cost = np.zeros(episodes)
    for t in range(T):
        y = pl.C @ x
        if t >= L:
            v = np.vstack(us[t - L:t] + ys[t - L:t])
            u = K @ v
            us.append(u)
            cost += np.einsum("ie,ij,je->e", y, st.Q, y) + np.einsum("ie,ij,je->e", u, st.R, u)
        ys.append(y)
        x = pl.A @ x + pl.B @ us[t]
    return cost


def test_scalar_value_matches_series():
    pl, ioh, proj, cost = _scalar_setup(0.5)
    # closed loop under K = 0 for v = [u(t-1); y(t-1)]
    K = np.zeros((1, 2))
    Psi = value_matrix(ioh, proj, cost, K)
    Th = proj.P.T @ ioh.Theta @ proj.P
    Qh = q_hat(ioh, proj, cost)
    series = sum(np.linalg.matrix_power(Th.T, k) @ Qh @ np.linalg.matrix_power(Th, k) for k in range(200))
    np.testing.assert_allclose(Psi, series, atol=1e-12)
    assert np.linalg.eigvalsh(Psi).min() >= -1e-12


def test_zero_moment_gives_zero_cost():
    pl, ioh, proj, cost = _scalar_setup()
    proj0 = type(proj)(P=proj.P, Phi=np.zeros_like(proj.Phi), PhiHat=np.zeros_like(proj.PhiHat),
                       Phi_factor=np.zeros_like(proj.Phi_factor))
    assert lq_cost(ioh, proj0, cost, np.zeros((1, 2))) == 0.0


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel([[1.0, 2.0], [0.0, 1.0]], [[1.0]])
    with pytest.raises(ValueError):
        CostModel([[1.0]], [[0.0]])


def test_golden_zero_gain_cost(sec5):
    J0 = lq_cost(sec5.ioh, sec5.proj, sec5.cost, sec5.K0)
    assert abs(J0 - _truncated_cost(sec5, sec5.K0, 10_000)) <= 1e-9 * J0
    assert abs(J0 - J0_GOLDEN) <= 1e-9 * J0_GOLDEN
    assert sec5.cost.c == pytest.approx(2 * J0_GOLDEN)


@pytest.mark.parametrize("which", ["zero", "optimal"])
def test_cost_matches_monte_carlo(sec5, which):
    K = sec5.K0 if which == "zero" else sec5.ref.K_star
    J = lq_cost(sec5.ioh, sec5.proj, sec5.cost, K)
    samples = _monte_carlo_cost(sec5, K, 10_000, 400, np.random.default_rng(7))
    assert abs(samples.mean() - J) <= 0.02 * J


def test_cost_two_forms_agree(sec5, rng):
    P = sec5.proj.P
    for _ in range(10):
        K = random_gain_in_sublevel(sec5, rng)
        parts = gradient(sec5.ioh, sec5.proj, sec5.cost, K)
        Psi = P @ parts.PsiHat @ P.T
        alt = float(np.trace(Psi @ sec5.proj.Phi))
        assert abs(parts.J - alt) <= 1e-9 * parts.J
        assert np.linalg.eigvalsh(parts.VHat - sec5.proj.PhiHat).min() >= -1e-9 * parts.J
        np.testing.assert_allclose(parts.VHat, state_covariance(sec5.ioh, sec5.proj, K))


def test_unstable_gain_rejected(sec5):
    K = 1e3 * np.ones_like(sec5.K0)
    with pytest.raises(NotSchur):
        lq_cost(sec5.ioh, sec5.proj, sec5.cost, K)
    assert cost_or_inf(sec5.ioh, sec5.proj, sec5.cost, K) == np.inf


def _fd_gradient(st, K, h=1e-6):
    G = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = h
        G[idx] = (lq_cost(st.ioh, st.proj, st.cost, K + E) - lq_cost(st.ioh, st.proj, st.cost, K - E)) / (2 * h)
    return G


def test_gradient_matches_finite_differences(sec5):
    g = gradient(sec5.ioh, sec5.proj, sec5.cost, sec5.K0).grad
    fd = _fd_gradient(sec5, sec5.K0)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gradient_lies_in_projected_rows(sec5, rng):
    P = sec5.proj.P
    K = random_gain_in_sublevel(sec5, rng)
    g = gradient(sec5.ioh, sec5.proj, sec5.cost, K).grad
    np.testing.assert_allclose(g - g @ P @ P.T, 0.0, atol=1e-9 * np.linalg.norm(g))


def test_stationary_at_optimum(sec5):
    g = gradient(sec5.ioh, sec5.proj, sec5.cost, sec5.ref.K_star).grad
    g0 = gradient(sec5.ioh, sec5.proj, sec5.cost, sec5.K0).grad
    assert np.linalg.norm(g) <= 1e-6 * np.linalg.norm(g0)


def test_zero_step_keeps_gain(sec5):
    rep = run_model_based(sec5.ioh, sec5.proj, sec5.cost, 0.0, 50, log_stride=10)
    np.testing.assert_array_equal(rep.K, sec5.K0)
    assert np.all(rep.J == rep.J[0])
    assert rep.iterations == 50


def test_short_descent_is_monotone(sec5):
    rep = run_model_based(sec5.ioh, sec5.proj, sec5.cost, 2.5e-6, 20_000, log_stride=100, checkpoint_every=5_000)
    assert np.all(np.diff(rep.J) <= 0)
    assert rep.n_increase == 0
    assert list(rep.iters[:3]) == [0, 100, 200] and rep.iters[-1] == 20_000
    assert len(set(rep.iters)) == len(rep.iters)
    assert rep.J_final == pytest.approx(lq_cost(sec5.ioh, sec5.proj, sec5.cost, rep.K), rel=1e-10)


def test_descent_matches_python_loop(sec5):
    alpha, n = 2.5e-6, 200
    K = sec5.K0.copy()
    for _ in range(n):
        K = K - alpha * gradient(sec5.ioh, sec5.proj, sec5.cost, K).grad
    rep = run_model_based(sec5.ioh, sec5.proj, sec5.cost, alpha, n, log_stride=50)
    np.testing.assert_allclose(rep.K, K, rtol=1e-9, atol=1e-12)


def test_checkpoint_called(sec5):
    seen = []
    run_model_based(sec5.ioh, sec5.proj, sec5.cost, 2.5e-6, 3_000, log_stride=100, checkpoint_every=1_000,
                    checkpoint=lambda i, K: seen.append(i))
    assert seen == [1_000, 2_000]


def test_large_step_diverges(sec5):
    with pytest.raises(Diverged):
        run_model_based(sec5.ioh, sec5.proj, sec5.cost, 1.0, 100)


def test_initial_gain_outside_sublevel(sec5):
    cost = CostModel(sec5.Q, sec5.R, c=1.01 * sec5.ref.J_star)
    with pytest.raises(NotInSublevel):
        run_model_based(sec5.ioh, sec5.proj, cost, 1e-6, 10)


def test_step_size_warning(sec5):
    import warnings
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        run_model_based(sec5.ioh, sec5.proj, sec5.cost, 1e-7, 5)
    assert any("step size" in str(x.message) for x in w)


def test_pl_ratio_below_one(sec5, rng):
    for _ in range(20):
        K = random_gain_in_sublevel(sec5, rng)
        d = diagnostics(sec5.ioh, sec5.proj, sec5.cost, K, sec5.ref.K_star, J_star=sec5.ref.J_star)
        assert d.pl_ratio <= 1.0
        assert d.in_sublevel


def test_smoothness_bound(sec5, rng):
    q = smoothness_constant(sec5.ioh, sec5.proj, sec5.cost)
    assert q == pytest.approx(1.0459e14, rel=1e-3)
    for _ in range(20):
        K = random_gain_in_sublevel(sec5, rng)
        K2 = K + rng.uniform(0.01, 0.5) * rng.standard_normal(K.shape)
        if cost_or_inf(sec5.ioh, sec5.proj, sec5.cost, K2) > sec5.cost.c:
            continue
        assert smoothness_gap(sec5.ioh, sec5.proj, sec5.cost, K, K2) <= 0.5 * q * np.sum((K2 - K) ** 2)


def test_beta_below_one_for_admissible_steps():
    from iohpg.baseline import optimal_reference
    pl, ioh, proj, cost = _scalar_setup(0.5)
    ref = optimal_reference(pl, ioh, proj, cost.Q, cost.R)
    q = smoothness_constant(ioh, proj, cost)
    for frac in (1e-3, 0.5, 1.0, 1.999):
        d = diagnostics(ioh, proj, cost, np.zeros((1, 2)), ref.K_star, alpha=frac / q)
        assert 0.0 <= d.beta < 1.0
    assert beta_rate(0.0, q, 1.0, 1.0, 1.0) == 1.0


def test_beta_decrement_positive_on_preset(sec5, rng):
    # 1 - beta is below machine epsilon here, so check the decrement itself
    q = smoothness_constant(sec5.ioh, sec5.proj, sec5.cost)
    K = random_gain_in_sublevel(sec5, rng)
    for frac in (1e-3, 0.5, 1.0, 1.999):
        alpha = frac / q
        d = diagnostics(sec5.ioh, sec5.proj, sec5.cost, K, sec5.ref.K_star, alpha=alpha)
        dec = 4.0 * d.sigma_min_VHat ** 2 / d.norm_VHat_star * (alpha - 0.5 * q * alpha ** 2)
        assert 0.0 < dec < 1.0 and d.beta <= 1.0


def test_diagnostics_reject_outside_sublevel(sec5):
    cost = CostModel(sec5.Q, sec5.R, c=sec5.ref.J_star)
    with pytest.raises(NotInSublevel):
        diagnostics(sec5.ioh, sec5.proj, cost, sec5.K0, sec5.ref.K_star)


def test_resolve_sublevel_keeps_user_value(sec5):
    cost = CostModel(sec5.Q, sec5.R, c=1e5)
    assert resolve_sublevel(sec5.ioh, sec5.proj, cost) == 1e5


def test_report_files(sec5, tmp_path):
    rep = run_model_based(sec5.ioh, sec5.proj, sec5.cost, 2.5e-6, 2_000, log_stride=500)
    save_report(rep, tmp_path, {"J_star": sec5.ref.J_star})
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0] == ["iter", "J", "grad_norm"]
    assert [int(r[0]) for r in rows[1:]] == [0, 500, 1000, 1500, 2000]
    assert float(rows[-1][1]) == rep.J_final
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["J_star"] == sec5.ref.J_star and doc["iterations"] == 2_000
    assert isinstance(rep, PGMReport)
