"""Downlink signal model: effective channels, SINR, weighted sum rate, constraint checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization
from .config import InvalidArgument, SystemConfig


@dataclass
class Solution:
    F: np.ndarray  # (N_t, K) complex
    theta: np.ndarray  # (R, M) complex
    U: np.ndarray  # (K, R) real

    def hardened(self) -> "Solution":
        return Solution(self.F, self.theta, harden(self.U))


def harden(U: np.ndarray) -> np.ndarray:
    """One-hot rows at the argmax; ties go to the lowest index."""
    U = np.asarray(U)
    out = np.zeros_like(U, dtype=float)
    out[np.arange(U.shape[0]), np.argmax(U, axis=1)] = 1.0
    return out


def _check_shapes(real: ChannelRealization, sol: Solution) -> None:
    R, K, M, N = real.H_cas.shape
    if sol.F.shape != (N, K) or sol.theta.shape != (R, M) or sol.U.shape != (K, R):
        raise InvalidArgument(
            f"solution shapes F{sol.F.shape} theta{sol.theta.shape} U{sol.U.shape} "
            f"do not match N_t={N}, K={K}, R={R}, M={M}")


def effective_channels(real: ChannelRealization, sol: Solution) -> np.ndarray:
    """All users' equivalent channels as a (K, N_t) matrix."""
    _check_shapes(real, sol)
    # sum_i U[k,i] * theta_i @ H_cas[i,k]
    per_ris = np.einsum("im,ikmn->kin", sol.theta, real.H_cas)
    return np.einsum("ki,kin->kn", sol.U, per_ris)


def effective_channel(real: ChannelRealization, sol: Solution, k: int) -> np.ndarray:
    return effective_channels(real, sol)[k]


def sinrs_from_channels(H: np.ndarray, F: np.ndarray, noise_power: float) -> np.ndarray:
    gains = np.abs(H @ F) ** 2  # gains[k, j] = |h_k f_j|^2
    signal = np.diag(gains).copy()
    np.fill_diagonal(gains, 0.0)
    return signal / (gains.sum(axis=1) + noise_power)


def sinrs(real: ChannelRealization, sol: Solution, noise_power: float) -> np.ndarray:
    return sinrs_from_channels(effective_channels(real, sol), sol.F, noise_power)


def sinr(real: ChannelRealization, sol: Solution, k: int, noise_power: float) -> float:
    return float(sinrs(real, sol, noise_power)[k])


def wsr_from_sinrs(sinr_values, weights) -> float:
    return float(np.sum(np.asarray(weights) * np.log1p(np.asarray(sinr_values)) / np.log(2.0)))


def weighted_sum_rate(real: ChannelRealization, sol: Solution, cfg: SystemConfig) -> float:
    return wsr_from_sinrs(sinrs(real, sol, cfg.noise_power), cfg.weights)


@dataclass
class ConstraintReport:
    power_ok: bool
    power_violation: float
    unit_modulus_ok: bool
    unit_modulus_violation: float
    row_sum_ok: bool
    row_sum_violation: float
    binary_ok: bool
    binary_violation: float
    details: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.power_ok and self.unit_modulus_ok and self.row_sum_ok and self.binary_ok

    @property
    def relaxed_feasible(self) -> bool:
        """Everything except binariness (the soft-association case)."""
        return self.power_ok and self.unit_modulus_ok and self.row_sum_ok


def check_feasible(sol: Solution, cfg: SystemConfig, power_slack: float = 1e-9,
                   modulus_tol: float = 1e-9, row_tol: float = 1e-9) -> ConstraintReport:
    power = float(np.sum(np.abs(sol.F) ** 2))
    power_violation = max(0.0, power - cfg.p_max)
    modulus_violation = float(np.max(np.abs(np.abs(sol.theta) - 1.0))) if sol.theta.size else 0.0
    U = np.asarray(sol.U, dtype=float)
    row_violation = float(np.max(np.abs(U.sum(axis=1) - 1.0)))
    binary_violation = float(np.max(np.minimum(np.abs(U), np.abs(U - 1.0))))
    return ConstraintReport(
        power_ok=power <= cfg.p_max * (1.0 + power_slack),
        power_violation=power_violation,
        unit_modulus_ok=modulus_violation <= modulus_tol,
        unit_modulus_violation=modulus_violation,
        row_sum_ok=row_violation <= row_tol,
        row_sum_violation=row_violation,
        binary_ok=binary_violation == 0.0,
        binary_violation=binary_violation,
        details={"power": power},
    )
