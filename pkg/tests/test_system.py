import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risgnn.channel import build_realization
from risgnn.config import InvalidArgument
from risgnn.system import (Solution, check_feasible, effective_channel, harden, sinr, sinrs_from_channels,
                           weighted_sum_rate, wsr_from_sinrs)

from conftest import small_config


def random_solution(cfg, rng):
    F = rng.standard_normal((cfg.n_t, cfg.n_users)) + 1j * rng.standard_normal((cfg.n_t, cfg.n_users))
    F *= np.sqrt(cfg.p_max) / np.linalg.norm(F)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, (cfg.n_ris, cfg.n_elements)))
    U = np.eye(cfg.n_ris)[rng.integers(0, cfg.n_ris, cfg.n_users)]
    return Solution(F, theta, U)


def loop_effective_channel(real, sol, k):
    R, K, M, N = real.H_cas.shape
    out = np.zeros(N, complex)
    for i in range(R):
        for n in range(N):
            acc = 0j
            for m in range(M):
                acc += sol.theta[i, m] * real.h[i, k, m] * real.G[i, m, n]
            out[n] += sol.U[k, i] * acc
    return out


def loop_sinr(real, sol, k, noise):
    hk = loop_effective_channel(real, sol, k)
    K = sol.F.shape[1]
    gain = lambda j: abs(sum(hk[n] * sol.F[n, j] for n in range(len(hk)))) ** 2
    return gain(k) / (sum(gain(j) for j in range(K) if j != k) + noise)


def test_sinr_and_wsr_match_loop_oracle(rng):
    cfg = small_config(n_t=4, k=3, r=3)
    real = build_realization(cfg, rng)
    sol = random_solution(cfg, rng)
    for k in range(3):
        np.testing.assert_allclose(effective_channel(real, sol, k), loop_effective_channel(real, sol, k), rtol=1e-12)
        assert sinr(real, sol, k, cfg.noise_power) == pytest.approx(loop_sinr(real, sol, k, cfg.noise_power), rel=1e-12)
    oracle = sum(w * np.log1p(loop_sinr(real, sol, k, cfg.noise_power)) / np.log(2) for k, w in enumerate(cfg.weights))
    assert weighted_sum_rate(real, sol, cfg) == pytest.approx(oracle, rel=1e-12)


def test_sinr_examples():
    H = np.array([[1.0, 0.0], [0.0, 1.0]], complex)
    F = np.array([[2.0, 0.0], [0.0, 1.0]], complex)
    np.testing.assert_allclose(sinrs_from_channels(H, F, 1.0), [4.0, 1.0])
    # f_k orthogonal to h_k
    F2 = np.array([[0.0, 1.0], [1.0, 0.0]], complex)
    assert sinrs_from_channels(H, F2, 1.0)[0] == 0.0


def test_wsr_examples():
    assert wsr_from_sinrs([1.0], [1.0]) == pytest.approx(1.0)
    assert wsr_from_sinrs([0.0, 0.0], [0.5, 0.5]) == 0.0
    assert wsr_from_sinrs([3.0, 1.0], [0.5, 0.5]) == pytest.approx(1.5)


def test_harden_tie_and_oracle(rng):
    np.testing.assert_array_equal(harden(np.array([[0.5, 0.5]])), [[1.0, 0.0]])
    np.testing.assert_array_equal(harden(np.array([[0.3, 0.7]])), [[0.0, 1.0]])
    C = rng.random((3, 4))
    H = harden(C)
    for k in range(3):
        assert H[k].sum() == 1.0 and H[k, int(np.argmax(C[k]))] == 1.0


def test_check_feasible(rng):
    cfg = small_config()
    sol = random_solution(cfg, rng)
    assert check_feasible(sol, cfg).feasible
    bad = Solution(sol.F * 2, sol.theta, sol.U)
    rep = check_feasible(bad, cfg)
    assert not rep.power_ok and rep.power_violation == pytest.approx(3 * cfg.p_max)
    soft = Solution(sol.F, sol.theta, np.full((cfg.n_users, cfg.n_ris), 0.5))
    rep = check_feasible(soft, cfg)
    assert rep.relaxed_feasible and not rep.binary_ok
    off = Solution(sol.F, sol.theta * 1.01, sol.U)
    assert not check_feasible(off, cfg).unit_modulus_ok


def test_shape_mismatch_raises(rng):
    cfg = small_config()
    real = build_realization(cfg, rng)
    sol = random_solution(cfg, rng)
    with pytest.raises(InvalidArgument):
        weighted_sum_rate(real, Solution(sol.F[:, :1], sol.theta, sol.U), cfg)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 2))
def test_user_permutation_permutes_sinrs(seed, shift):
    rng = np.random.default_rng(seed)
    cfg = small_config(k=3)
    real = build_realization(cfg, rng)
    sol = random_solution(cfg, rng)
    perm = np.roll(np.arange(3), shift)
    from risgnn.system import sinrs
    base = sinrs(real, sol, cfg.noise_power)
    p = sinrs(real.permuted(users=perm), Solution(sol.F[:, perm], sol.theta, sol.U[perm]), cfg.noise_power)
    np.testing.assert_allclose(p, base[perm], rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_common_phase_rotation_leaves_wsr(seed):
    rng = np.random.default_rng(seed)
    cfg = small_config()
    real = build_realization(cfg, rng)
    sol = random_solution(cfg, rng)
    rot = Solution(sol.F * np.exp(0.7j), sol.theta * np.exp(-1.3j), sol.U)
    assert weighted_sum_rate(real, rot, cfg) == pytest.approx(weighted_sum_rate(real, sol, cfg), rel=1e-10)
