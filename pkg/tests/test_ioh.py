import numpy as np
import pytest

from iohpg.errors import Inconclusive, PhiMismatch, RankDeficient, Underfilled
from iohpg.ioh import (IOHBuffer, build_ioh, buffer_push, estimate_L, gap_rank, ioh_windows, project_closed_loop,
                       reachable_projection)
from iohpg.numerics import orthonormal_range, principal_angles, spectral_radius
from iohpg.plant import random_plant, rollout


def _trace(plant, rng, T=60):
    return rollout(plant, rng.standard_normal(plant.n), rng.standard_normal((T, plant.m)))


def test_pi_structure(rng):
    for L, m, r in [(1, 1, 1), (2, 1, 2), (3, 2, 1)]:
        pl = random_plant(rng, 2, m, r)
        if not pl.n <= L * r:
            continue
        ioh = build_ioh(pl, max(L, 2))
        Pi = ioh.Pi
        L = ioh.L
        expected = np.zeros_like(Pi)
        expected[(L - 1) * m:L * m] = np.eye(m)
        np.testing.assert_array_equal(Pi, expected)


def test_shift_entries_are_exact(sec5):
    ioh = sec5.ioh
    L, m, r, d = ioh.L, ioh.m, ioh.r, ioh.d
    Th = ioh.Theta
    assert set(np.unique(Th[:d - r])) <= {0.0, 1.0}
    assert Th[0, 1] == 1.0 and Th[L * m, L * m + r] == 1.0


def test_build_ioh_rejects_short_history(sec5):
    with pytest.raises(RankDeficient):
        build_ioh(sec5.plant, 1)


def test_state_recovery_and_one_step(sec5, rng):
    for L in (2, 3, 4):
        ioh = build_ioh(sec5.plant, L)
        tr = _trace(sec5.plant, rng)
        V = ioh_windows(tr.u_seq, tr.y_seq[:-1], L)
        for k, v in enumerate(V[:-1]):
            t = L + k
            np.testing.assert_allclose(ioh.Gamma @ v, tr.x_seq[t], atol=1e-9)
            np.testing.assert_allclose(V[k + 1], ioh.Theta @ v + ioh.Pi @ tr.u_seq[t], atol=1e-9)
            np.testing.assert_allclose(ioh.C @ ioh.Gamma @ v, tr.y_seq[t], atol=1e-9)


def test_projection_dimension_and_default_moment(sec5):
    proj = sec5.proj
    assert proj.p == 5
    np.testing.assert_allclose(proj.Phi, sec5.ioh.script_p @ sec5.ioh.script_p.T)
    assert np.linalg.eigvalsh(proj.PhiHat).min() > 0
    np.testing.assert_allclose(proj.P.T @ proj.P, np.eye(5), atol=1e-12)


def test_controllability_and_script_p_agree(sec5, rng):
    for ioh in (sec5.ioh, build_ioh(sec5.plant, 4)):
        Pc, _ = orthonormal_range(ioh.controllability())
        Ps, _ = orthonormal_range(ioh.script_p)
        assert np.max(principal_angles(Pc, Ps)) <= 1e-6
    pl = random_plant(rng, 4, 2, 3)
    ioh = build_ioh(pl, 2)
    assert reachable_projection(ioh).p == 2 * 2 + 4


def test_custom_phi_validated(sec5):
    with pytest.raises(PhiMismatch):
        reachable_projection(sec5.ioh, np.eye(sec5.ioh.d))
    F = sec5.ioh.script_p @ np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    proj = reachable_projection(sec5.ioh, F @ F.T)
    assert proj.p == 5


def test_subspace_membership_and_lossless_projection(sec5, rng):
    P = sec5.proj.P
    tr = _trace(sec5.plant, rng, 100)
    V = ioh_windows(tr.u_seq, tr.y_seq[:-1], 2)
    for v in V:
        assert np.linalg.norm(v - P @ (P.T @ v)) <= 1e-8 * np.linalg.norm(v)
    # projected recursion reproduces v
    ioh = sec5.ioh
    Th_hat = P.T @ ioh.Theta @ P
    vh = P.T @ V[0]
    for k in range(1, len(V)):
        vh = Th_hat @ vh + P.T @ ioh.Pi @ tr.u_seq[1 + k]
        np.testing.assert_allclose(P @ vh, V[k], atol=1e-9)


def test_project_closed_loop(sec5, rng):
    Th, Kh, Gh = project_closed_loop(sec5.ioh, sec5.proj, sec5.K0)
    P = sec5.proj.P
    np.testing.assert_allclose(Th, P.T @ sec5.ioh.Theta @ P)
    assert spectral_radius(Th) < 1
    # Schur iff the closed loop decays from v(L) in the subspace
    for scale in (0.5, 100.0):
        K = scale * sec5.ref.K_star
        Th, _, _ = project_closed_loop(sec5.ioh, sec5.proj, K)
        v = sec5.proj.Phi_factor @ rng.standard_normal(5)
        Tcl = sec5.ioh.Theta + sec5.ioh.Pi @ K
        for _ in range(3000):
            v = Tcl @ v
            if not np.all(np.isfinite(v)) or np.linalg.norm(v) > 1e100:
                break
        assert (spectral_radius(Th) < 1) == (np.linalg.norm(v) < 1e-6)


def test_buffer_order_and_errors(sec5, rng):
    buf = IOHBuffer(2, 1, 1)
    with pytest.raises(Underfilled):
        buf.current_v()
    buffer_push(buf, [1.0], [10.0])
    buffer_push(buf, [2.0], [20.0])
    np.testing.assert_array_equal(buf.current_v(), [1.0, 2.0, 10.0, 20.0])
    b1 = IOHBuffer(1, 1, 2).push([3.0], [4.0, 5.0])
    np.testing.assert_array_equal(b1.current_v(), [3.0, 4.0, 5.0])
    # buffer agrees with the lifted recursion
    ioh = sec5.ioh
    tr = _trace(sec5.plant, rng, 40)
    buf = IOHBuffer(2, 1, 2)
    v = None
    for t in range(40):
        if buf.filled:
            v = buf.current_v() if v is None else ioh.Theta @ v + ioh.Pi @ tr.u_seq[t - 1]
            np.testing.assert_allclose(v, buf.current_v(), atol=1e-12)
        buf.push(tr.u_seq[t], tr.y_seq[t])


def _moments(plant, Ls, rng, samples=10_000):
    out = {}
    for L in Ls:
        X0 = rng.standard_normal((samples, plant.n))
        U = rng.standard_normal((samples, L, plant.m))
        V = np.empty((samples, L * (plant.m + plant.r)))
        for i in range(samples):
            tr = rollout(plant, X0[i], U[i])
            V[i] = np.concatenate([tr.u_seq.ravel(), tr.y_seq[:L].ravel()])
        out[L] = V.T @ V / samples
    return out


def test_estimate_L_recovers_two(sec5, rng):
    mom = _moments(sec5.plant, (1, 2, 3, 4), rng)
    assert estimate_L(mom, m=1) == 2
    assert gap_rank(mom[2]) == 2 * 1 + 3
    # below the observability index the rank grows with L
    assert gap_rank(mom[1]) < gap_rank(mom[2])


def test_estimate_L_inconclusive():
    with pytest.raises(Inconclusive):
        estimate_L({}, m=1)
    with pytest.raises(Inconclusive):
        estimate_L({1: np.eye(2), 2: np.eye(4)}, m=1)
