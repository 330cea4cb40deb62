"""Sparse-path mmWave links, array responses and cascaded BS-RIS-user channels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    UPA,
    ArrayGeometry,
    InvalidArgument,
    PathLossModel,
    PathSpec,
    SystemConfig,
)


def _indices(n: int) -> np.ndarray:
    return np.arange(n) - (n - 1) / 2.0


def steering_ula(phi: float, n: int, spacing_over_wavelength: float = 0.5) -> np.ndarray:
    """Unit-norm ULA response with symmetric element indexing."""
    if n < 1:
        raise InvalidArgument(f"element count must be positive, got {n}")
    phase = -2j * np.pi * spacing_over_wavelength * phi * _indices(n)
    return np.exp(phase) / np.sqrt(n)


def steering_upa(phi1: float, phi2: float, geometry: ArrayGeometry) -> np.ndarray:
    if geometry.kind != UPA:
        raise InvalidArgument("steering_upa needs a UPA geometry")
    d = geometry.spacing_over_wavelength
    return np.kron(steering_ula(phi1, geometry.n_x, d), steering_ula(phi2, geometry.n_y, d))


def path_loss_db(r: float, model: PathLossModel, xi: float = 0.0) -> float:
    if r <= 0:
        raise InvalidArgument(f"distance must be positive, got {r}")
    return model.rho_a + 10.0 * model.rho_b * np.log10(r) + xi


def _response(geom: ArrayGeometry, rng: np.random.Generator) -> np.ndarray:
    # angles live in normalized sine space, uniform on [-1, 1]
    if geom.kind == UPA:
        phi1, phi2 = rng.uniform(-1.0, 1.0, size=2)
        return steering_upa(phi1, phi2, geom)
    return steering_ula(rng.uniform(-1.0, 1.0), geom.n_x, geom.spacing_over_wavelength)


def sample_link(tx_geom: ArrayGeometry, rx_geom: ArrayGeometry, r: float, paths: PathSpec,
                pl: PathLossModel, rng: np.random.Generator, xi: float | None = None) -> np.ndarray:
    """Draw one rx x tx link matrix.

    The shadowing term is drawn once for the whole link unless ``xi`` is given.
    A single-antenna receiver yields a 1 x tx row.
    """
    if xi is None:
        xi = rng.normal(0.0, pl.sigma_xi) if pl.sigma_xi > 0 else 0.0
    variance = 10.0 ** (-0.1 * path_loss_db(r, pl, xi))
    out = np.zeros((rx_geom.size, tx_geom.size), dtype=complex)
    for scale in paths.scales():
        beta = np.sqrt(variance * scale / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        a_rx = _response(rx_geom, rng)
        a_tx = _response(tx_geom, rng)
        out += beta * np.outer(a_rx, a_tx.conj())
    return out


@dataclass
class ChannelRealization:
    G: np.ndarray  # (R, M, N_t)
    h: np.ndarray  # (R, K, M)
    H_cas: np.ndarray  # (R, K, M, N_t)
    user_positions: np.ndarray  # (K, 2)
    ris_positions: np.ndarray  # (R, 2)
    distances: np.ndarray  # (R, K) RIS-user

    @property
    def shape(self):
        R, K, M, N = self.H_cas.shape
        return R, K, M, N

    def check(self, cfg: SystemConfig) -> None:
        R, K, M, N = cfg.n_ris, cfg.n_users, cfg.n_elements, cfg.n_t
        if (self.G.shape != (R, M, N) or self.h.shape != (R, K, M)
                or self.H_cas.shape != (R, K, M, N) or self.distances.shape != (R, K)):
            raise InvalidArgument("realization shapes do not match the configuration")

    def permuted(self, users=None, ris=None) -> "ChannelRealization":
        users = np.arange(self.h.shape[1]) if users is None else np.asarray(users)
        ris = np.arange(self.G.shape[0]) if ris is None else np.asarray(ris)
        return ChannelRealization(
            G=self.G[ris],
            h=self.h[ris][:, users],
            H_cas=self.H_cas[ris][:, users],
            user_positions=self.user_positions[users],
            ris_positions=self.ris_positions[ris],
            distances=self.distances[ris][:, users],
        )


def cascade(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """diag(h_ik) G_i for every (i, k); shapes (R,M,N), (R,K,M) -> (R,K,M,N)."""
    return h[:, :, :, None] * G[:, None, :, :]


def build_realization(cfg: SystemConfig, rng: np.random.Generator,
                      user_positions: np.ndarray | None = None) -> ChannelRealization:
    R, K = cfg.n_ris, cfg.n_users
    ris_pos = np.asarray(cfg.ris_positions, dtype=float)
    bs_pos = np.asarray(cfg.bs_position, dtype=float)
    if user_positions is None:
        x0, x1, y0, y1 = cfg.user_region
        user_positions = np.column_stack([rng.uniform(x0, x1, K), rng.uniform(y0, y1, K)])
    user_positions = np.asarray(user_positions, dtype=float)
    if user_positions.shape != (K, 2):
        raise InvalidArgument("user_positions must be (K, 2)")

    bs_geom, ris_geom, user_geom = cfg.bs_geometry, cfg.ris_geometry, ArrayGeometry.ula(1)
    d_bs = np.linalg.norm(ris_pos - bs_pos, axis=1)
    distances = np.linalg.norm(ris_pos[:, None, :] - user_positions[None, :, :], axis=2)

    G = np.stack([sample_link(bs_geom, ris_geom, d_bs[i], cfg.paths_bs_ris, cfg.pathloss, rng)
                  for i in range(R)])
    h = np.stack([
        np.stack([sample_link(ris_geom, user_geom, distances[i, k], cfg.paths_ris_user, cfg.pathloss, rng)[0]
                  for k in range(K)])
        for i in range(R)
    ])
    return ChannelRealization(G=G, h=h, H_cas=cascade(G, h), user_positions=user_positions,
                              ris_positions=ris_pos, distances=distances)


def reference_path_loss_db(cfg: SystemConfig) -> float:
    """Mean cascaded path loss (no shadowing) to the centre of the user region."""
    x0, x1, y0, y1 = cfg.user_region
    centre = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
    bs = np.asarray(cfg.bs_position, dtype=float)
    total = []
    for p in np.asarray(cfg.ris_positions, dtype=float):
        d1 = max(np.linalg.norm(p - bs), 1e-3)
        d2 = max(np.linalg.norm(p - centre), 1e-3)
        total.append(path_loss_db(d1, cfg.pathloss) + path_loss_db(d2, cfg.pathloss))
    return float(np.mean(total))
