"""Reference solvers: WMMSE under fixed phases, random phases, fixed RIS, exhaustive association, flat networks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import hetgnn as hg
from . import kernels
from .channel import ChannelRealization
from .config import InvalidArgument, SystemConfig
from .system import Solution, effective_channels, weighted_sum_rate
from .training import TrainConfig, evaluate, labels_from_distances, train

PHASE_MODES = ("random", "all-ones")
EXHAUSTIVE_LIMIT = 4096
FLAT_SIZES = {"small": (64,), "large": (256, 256)}


@dataclass(frozen=True)
class WmmseConfig:
    max_iters: int = 100
    tol: float = 1e-6
    phase_mode: str = "random"

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0:
            raise InvalidArgument("need max_iters >= 1 and tol > 0")
        if self.phase_mode not in PHASE_MODES:
            raise InvalidArgument(f"phase_mode must be one of {PHASE_MODES}")


def phases(cfg: SystemConfig, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "all-ones":
        return np.ones((cfg.n_ris, cfg.n_elements), dtype=complex)
    if mode == "random":
        rng = rng or np.random.default_rng()
        return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(cfg.n_ris, cfg.n_elements)))
    raise InvalidArgument(f"unknown phase mode {mode!r}")


def wmmse_beamforming(real: ChannelRealization, theta: np.ndarray, U: np.ndarray, cfg: SystemConfig,
                      wcfg: WmmseConfig = WmmseConfig()) -> Solution:
    """Solve for F by WMMSE with theta and U held fixed."""
    probe = Solution(np.zeros((cfg.n_t, cfg.n_users), complex), theta, U)
    H = effective_channels(real, probe)
    F, _ = kernels.wmmse(H, np.asarray(cfg.weights), cfg.noise_power, cfg.p_max, wcfg.max_iters, wcfg.tol)
    return Solution(F, theta, U)


def nearest_ris(real: ChannelRealization) -> np.ndarray:
    return labels_from_distances(real.distances)


def random_phase_solution(real: ChannelRealization, cfg: SystemConfig, rng: np.random.Generator,
                          wcfg: WmmseConfig = WmmseConfig()) -> Solution:
    return wmmse_beamforming(real, phases(cfg, "random", rng), nearest_ris(real), cfg, wcfg)


def batch_effective_channels(H_cas: np.ndarray, theta: np.ndarray, U: np.ndarray) -> np.ndarray:
    """(S,R,K,M,N), (S,R,M), (S,K,R) -> (S,K,N)."""
    per_ris = np.einsum("srm,srkmn->skrn", theta, H_cas)
    return np.einsum("skr,skrn->skn", U, per_ris)


def random_phase_wsr(H_cas: np.ndarray, distances: np.ndarray, cfg: SystemConfig, seed: int = 0,
                     wcfg: WmmseConfig = WmmseConfig()) -> np.ndarray:
    """Per-sample WSR of the random-phase WMMSE baseline; sample s uses rng([seed, s])."""
    S = len(H_cas)
    theta = np.stack([phases(cfg, "random", np.random.default_rng([seed, s])) for s in range(S)])
    U = labels_from_distances(distances)
    H = batch_effective_channels(H_cas, theta, U)
    _, wsr, _ = kernels.wmmse_batch(H, np.asarray(cfg.weights), cfg.noise_power, cfg.p_max,
                                    wcfg.max_iters, wcfg.tol)
    return wsr


def all_associations(n_users: int, n_ris: int):
    """Every hard association as a (K, R) one-hot matrix, in lexicographic order of RIS indices."""
    if n_ris ** n_users > EXHAUSTIVE_LIMIT:
        raise InvalidArgument(f"R^K = {n_ris ** n_users} exceeds the enumeration limit {EXHAUSTIVE_LIMIT}")
    eye = np.eye(n_ris)
    for choice in itertools.product(range(n_ris), repeat=n_users):
        yield eye[list(choice)]


def exhaustive_association(real: ChannelRealization, cfg: SystemConfig, wcfg: WmmseConfig = WmmseConfig(),
                           theta=None, rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Best hard U by enumeration, F re-solved by WMMSE for each candidate.

    `theta` is a phase matrix or None for `wcfg.phase_mode`. Ties keep the
    lexicographically first association.
    """
    if theta is None:
        theta = phases(cfg, wcfg.phase_mode, rng)
    best_U, best = None, -np.inf
    for U in all_associations(cfg.n_users, cfg.n_ris):
        value = weighted_sum_rate(real, wmmse_beamforming(real, theta, U, cfg, wcfg), cfg)
        if value > best:
            best_U, best = U, value
    return best_U, float(best)


def association_gap(real: ChannelRealization, theta: np.ndarray, U: np.ndarray, cfg: SystemConfig,
                    wcfg: WmmseConfig = WmmseConfig()) -> tuple[float, float]:
    """(WSR of U, oracle WSR) with F re-solved by WMMSE under the same theta."""
    own = weighted_sum_rate(real, wmmse_beamforming(real, theta, U, cfg, wcfg), cfg)
    _, oracle = exhaustive_association(real, cfg, wcfg, theta=theta)
    return own, oracle


def fixed_ris_variant(dataset, tcfg: TrainConfig, mcfg: hg.ModelConfig | None = None, ris: int = 0,
                      log_path=None):
    """Train the graph network with every user pinned to one RIS; returns (model, history, metrics)."""
    if dataset.cfg.n_ris < 1:
        raise InvalidArgument("need at least one RIS")
    model = hg.build_model(dataset.cfg, "hetgnn", tcfg.seed, mcfg, fixed_ris=ris)
    model, history = train(dataset, model, tcfg, log_path)
    return model, history, evaluate(dataset.validation, model)


def flat_network_baseline(dataset, size: str, tcfg: TrainConfig, n_train: int | None = None,
                          log_path=None):
    """Train a fully connected network of the given size; returns (model, history, metrics)."""
    if size not in FLAT_SIZES:
        raise InvalidArgument(f"size must be one of {sorted(FLAT_SIZES)}")
    model = hg.build_model(dataset.cfg, "flat", tcfg.seed, widths=FLAT_SIZES[size])
    model, history = train(dataset, model, tcfg, log_path, n_train=n_train)
    return model, history, evaluate(dataset.validation, model)
