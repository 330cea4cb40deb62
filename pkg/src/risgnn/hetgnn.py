"""Heterogeneous GNN over BS / RIS / user nodes with power, phase and association heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from torch import nn
from torch.nn import functional as tf

from .channel import reference_path_loss_db
from .config import InvalidArgument, SystemConfig

DTYPE = torch.float64
NORM_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    blocks: int = 3  # T: encoder HGN_0, core HGN_1..HGN_{T-1}, decoder HGN_T
    fixed_ris: int | None = None  # freeze every user's association to this RIS

    def __post_init__(self):
        if self.blocks < 2:
            raise InvalidArgument("need T >= 2 (encoder and decoder)")
        if self.hidden < 1:
            raise InvalidArgument("hidden width must be positive")


# -- input features ------------------------------------------------------


def feature_scale(cfg: SystemConfig) -> float:
    """Constant that brings cascaded-channel entries to O(1).

    Undoes the reference path loss and the 1/sqrt normalisation of the two
    array responses in each cascaded entry.
    """
    return 10.0 ** (reference_path_loss_db(cfg) / 20.0) * cfg.n_elements * math.sqrt(cfg.n_t)


def node_attributes(cfg: SystemConfig) -> torch.Tensor:
    """Per-user attributes (weight, reference SNR) as a (K, 2) tensor."""
    snr_ref_db = 10.0 * math.log10(cfg.p_max / cfg.noise_power) - reference_path_loss_db(cfg)
    w = torch.tensor(cfg.weights, dtype=DTYPE) * cfg.n_users
    return torch.stack([w, torch.full_like(w, snr_ref_db / 10.0)], dim=1)


def link_feature_dim(m: int, n: int) -> int:
    return 2 * m * n + 1 + 2 * m + 2 * n


def dominant_pair(A: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Leading singular pair of each (M, N) link as (A v, s v), s = ||A v||.

    v is the leading right singular vector, with its common phase fixed so
    that the first entry is real and nonnegative; both outputs are then
    continuous in A away from ties and scale linearly with A.
    """
    # LAPACK refuses non-finite input; such links get NaN features instead
    finite = torch.isfinite(torch.view_as_real(A)).flatten(-3).all(dim=-1)
    A = torch.where(finite[..., None, None], A, torch.zeros((), dtype=A.dtype))
    _, _, Vh = torch.linalg.svd(A, full_matrices=False)
    v = Vh[..., 0, :].conj()
    v0 = v[..., :1]
    v = v * (v0.conj() / v0.abs().clamp_min(NORM_EPS))
    Av = (A @ v.unsqueeze(-1)).squeeze(-1)
    sv = v * torch.linalg.vector_norm(Av, dim=-1, keepdim=True)
    nan = torch.full((), float("nan"), dtype=A.dtype)
    return torch.where(finite[..., None], Av, nan), torch.where(finite[..., None], sv, nan)


def link_features(H_cas: torch.Tensor, scale: float) -> torch.Tensor:
    """(B, R, K, M, N) complex -> (B, R, K, link_feature_dim(M, N)) real.

    Scaled (Re, Im) parts of each cascaded link, the log of their norm, then
    the link's leading singular pair (A v per element, s v per antenna).
    Magnitudes are kept so that sums over links favour the strong ones.
    """
    B, R, K, M, N = H_cas.shape
    flat = H_cas.reshape(B, R, K, -1) * scale
    x = torch.cat([flat.real, flat.imag], dim=-1)
    norm = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    Av, sv = dominant_pair(H_cas * scale)
    return torch.cat([x, torch.log(norm + NORM_EPS), Av.real, Av.imag, sv.real, sv.imag], dim=-1)


def as_tensor(H_cas) -> torch.Tensor:
    if isinstance(H_cas, torch.Tensor):
        return H_cas
    return torch.from_numpy(np.ascontiguousarray(H_cas)).to(torch.complex128)


# -- normalisation heads ---------------------------------------------------


def normalize_power(F_re: torch.Tensor, F_im: torch.Tensor, p_max: float) -> torch.Tensor:
    """Scale (Re, Im) parts so that ||F||_F^2 = p_max; reduces over the last two axes."""
    norm = torch.sqrt((F_re ** 2 + F_im ** 2).sum(dim=(-2, -1), keepdim=True))
    return math.sqrt(p_max) * torch.complex(F_re, F_im) / norm.clamp_min(NORM_EPS)


def normalize_phases(th_re: torch.Tensor, th_im: torch.Tensor) -> torch.Tensor:
    # a floor rather than an additive epsilon keeps |theta| = 1 exact for small raw pairs
    mag = torch.sqrt(th_re ** 2 + th_im ** 2)
    return torch.complex(th_re, th_im) / mag.clamp_min(NORM_EPS)


def softmax_association(U_raw: torch.Tensor) -> torch.Tensor:
    # torch.softmax subtracts the row max internally
    return torch.softmax(U_raw, dim=-1)


def harden_association(C: torch.Tensor) -> torch.Tensor:
    """One-hot at each row's argmax; torch.argmax returns the first maximum."""
    idx = torch.argmax(C, dim=-1)
    return tf.one_hot(idx, C.shape[-1]).to(C.dtype)


@dataclass
class Outputs:
    F: torch.Tensor  # (B, N_t, K) complex
    theta: torch.Tensor  # (B, R, M) complex
    C: torch.Tensor  # (B, K, R) soft association
    U_raw: torch.Tensor  # (B, K, R) pre-softmax scores

    @property
    def U_hard(self) -> torch.Tensor:
        return harden_association(self.C)


def apply_heads(F_raw, theta_raw, U_raw, cfg: SystemConfig, fixed_ris: int | None = None) -> Outputs:
    """Raw heads -> feasible solution.

    F_raw is (B, K, 2 N_t): one column per user stream, real part first.
    theta_raw is (B, R, 2 M); U_raw is (B, K, R).
    """
    N, M = cfg.n_t, cfg.n_elements
    F_cols = normalize_power(F_raw[..., :N], F_raw[..., N:], cfg.p_max)  # (B, K, N)
    theta = normalize_phases(theta_raw[..., :M], theta_raw[..., M:])
    if fixed_ris is not None:
        C = torch.zeros_like(U_raw)
        C[..., fixed_ris] = 1.0
    else:
        C = softmax_association(U_raw)
    return Outputs(F=F_cols.transpose(-2, -1), theta=theta, C=C, U_raw=U_raw)


# -- building blocks -------------------------------------------------------


class MLP(nn.Module):
    """Two-layer perceptron, softplus after the first layer only."""

    def __init__(self, d_in: int, d_out: int, d_hidden: int | None = None):
        super().__init__()
        d_hidden = d_hidden or d_out
        self.l1 = nn.Linear(d_in, d_hidden, dtype=DTYPE)
        self.l2 = nn.Linear(d_hidden, d_out, dtype=DTYPE)

    def forward(self, x):
        return self.l2(tf.softplus(self.l1(x)))


@dataclass
class GraphState:
    bs: torch.Tensor  # (B, d)
    ris: torch.Tensor  # (B, R, d)
    user: torch.Tensor  # (B, K, d)
    link: torch.Tensor  # (B, R, K, d) per-(RIS, user) cascaded-channel embedding
    step: int = 0


class Encoder(nn.Module):
    """HGN_0: embeds the channels into the initial graph state."""

    def __init__(self, cfg: SystemConfig, d: int):
        super().__init__()
        raw = link_feature_dim(cfg.n_elements, cfg.n_t)
        self.link = nn.Linear(raw, d, dtype=DTYPE)
        self.user = nn.Linear(2 * d + 2, d, dtype=DTYPE)
        self.bs0 = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.ris0 = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        nn.init.normal_(self.bs0, std=0.1)
        nn.init.normal_(self.ris0, std=0.1)

    def forward(self, x: torch.Tensor, attrs: torch.Tensor) -> GraphState:
        B, R, K, _ = x.shape
        link = self.link(x)
        pooled = torch.cat([link.mean(dim=1), link.amax(dim=1), attrs.expand(B, K, -1)], dim=-1)
        user = self.user(pooled)
        d = link.shape[-1]
        return GraphState(bs=self.bs0.expand(B, d), ris=self.ris0.expand(B, R, d),
                          user=user, link=link, step=0)


class MessagePassing(nn.Module):
    """One core block HGN_t: RIS update then user update, both from step t-1 features."""

    def __init__(self, d: int):
        super().__init__()
        self.msg_rr, self.up_rr = MLP(d, d), MLP(2 * d, d)
        self.msg_ur, self.up_ur = MLP(2 * d, d), MLP(2 * d, d)
        self.msg_ru, self.up_ru = MLP(2 * d, d), MLP(2 * d, d)
        self.msg_uu, self.up_uu, self.up_self = MLP(d, d), MLP(d, d), MLP(2 * d, d)

    def update_ris(self, s: GraphState) -> torch.Tensor:
        xi_rr = self.up_rr(torch.cat([self.msg_rr(s.ris), s.ris], dim=-1))
        users = s.user.unsqueeze(1).expand(-1, s.ris.shape[1], -1, -1)
        from_users = self.msg_ur(torch.cat([users, s.link], dim=-1)).mean(dim=2)
        xi_ur = self.up_ur(torch.cat([from_users, s.ris], dim=-1))
        return 0.5 * (xi_rr + xi_ur) + s.ris

    def update_users(self, s: GraphState) -> torch.Tensor:
        K = s.user.shape[1]
        ris = s.ris.unsqueeze(2).expand(-1, -1, K, -1)
        from_ris = self.msg_ru(torch.cat([ris, s.link], dim=-1)).mean(dim=1)
        xi_ru = self.up_ru(torch.cat([from_ris, s.user], dim=-1))
        msgs = self.msg_uu(s.user)
        pooled = msgs.amax(dim=1, keepdim=True).expand(-1, K, -1)
        xi_uu = torch.maximum(self.up_uu(pooled), self.up_self(torch.cat([msgs, s.user], dim=-1)))
        return torch.maximum(xi_ru, xi_uu) + s.user

    def forward(self, s: GraphState) -> GraphState:
        return GraphState(bs=s.bs, ris=self.update_ris(s), user=self.update_users(s),
                          link=s.link, step=s.step + 1)


def _pinned_scores(U_raw: torch.Tensor, ris: int) -> torch.Tensor:
    # softmax of these is exactly one-hot in float64
    pinned = torch.full_like(U_raw, -1e4)
    pinned[..., ris] = 0.0
    return pinned


class Decoder(nn.Module):
    """HGN_T: typed extraction maps, mean aggregation, then the three raw heads."""

    def __init__(self, cfg: SystemConfig, d: int):
        super().__init__()
        self.out_ub, self.out_rb = MLP(d, d), MLP(d, d)
        self.out_ur, self.out_rr = MLP(2 * d, d), MLP(d, d)
        self.out_ru, self.out_uu = MLP(2 * d, d), MLP(d, d)
        self.head_F = nn.Linear(2 * d, 2 * cfg.n_t, dtype=DTYPE)
        self.head_theta = nn.Linear(d, 2 * cfg.n_elements, dtype=DTYPE)
        self.head_U = MLP(3 * d, 1, d)

    def forward(self, s: GraphState, fixed_ris: int | None = None):
        B, R, K, d = s.link.shape
        users = s.user.unsqueeze(1).expand(-1, R, -1, -1)
        ris_b = s.ris.unsqueeze(2).expand(-1, -1, K, -1)
        pair = torch.cat([users, ris_b, s.link], dim=-1)
        U_raw = self.head_U(pair).squeeze(-1).transpose(1, 2)  # (B, K, R)
        scores = U_raw if fixed_ris is None else _pinned_scores(U_raw, fixed_ris)
        C = softmax_association(scores)
        # association-weighted means: a RIS listens to its associated users,
        # a user listens to the RIS it is associated with
        # C normalised over users, computed in log space so an empty RIS is not 0/0
        to_ris = torch.softmax(torch.log_softmax(scores, dim=-1), dim=1).transpose(1, 2).unsqueeze(-1)
        to_user = C.transpose(1, 2).unsqueeze(-1)  # (B, R, K, 1)

        # extracted edge messages keep a residual copy of the link embedding
        bs = 0.5 * (self.out_ub(s.user).mean(dim=1) + self.out_rb(s.ris).mean(dim=1)) + s.bs
        to_ris_msg = self.out_ur(torch.cat([users, s.link], dim=-1)) + s.link
        to_user_msg = self.out_ru(torch.cat([ris_b, s.link], dim=-1)) + s.link
        ris = 0.5 * ((to_ris * to_ris_msg).sum(dim=2) + self.out_rr(s.ris)) + s.ris
        user = 0.5 * ((to_user * to_user_msg).sum(dim=1) + self.out_uu(s.user)) + s.user

        F_raw = self.head_F(torch.cat([bs.unsqueeze(1).expand(-1, K, -1), user], dim=-1))
        theta_raw = self.head_theta(ris)
        return F_raw, theta_raw, U_raw


class HetGNN(nn.Module):
    kind = "hetgnn"

    def __init__(self, cfg: SystemConfig, mcfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg, self.mcfg = cfg, mcfg
        d = mcfg.hidden
        self.scale = feature_scale(cfg)
        self.register_buffer("attrs", node_attributes(cfg), persistent=False)
        self.encoder = Encoder(cfg, d)
        self.core = nn.ModuleList([MessagePassing(d) for _ in range(mcfg.blocks - 1)])
        self.decoder = Decoder(cfg, d)

    def build_graph(self, H_cas) -> GraphState:
        H_cas = as_tensor(H_cas)
        if H_cas.shape[1:] != (self.cfg.n_ris, self.cfg.n_users, self.cfg.n_elements, self.cfg.n_t):
            raise InvalidArgument(f"channel batch shape {tuple(H_cas.shape)} does not match config")
        return self.encoder(link_features(H_cas, self.scale), self.attrs)

    def propagate(self, state: GraphState) -> GraphState:
        for block in self.core:
            state = block(state)
        return state

    def raw(self, H_cas):
        return self.decoder(self.propagate(self.build_graph(H_cas)), self.mcfg.fixed_ris)

    def forward(self, H_cas) -> Outputs:
        return apply_heads(*self.raw(H_cas), self.cfg, self.mcfg.fixed_ris)


class FlatNet(nn.Module):
    """Fully connected baseline: flattened channels of all users -> the same three raw heads."""

    kind = "flat"

    def __init__(self, cfg: SystemConfig, widths: tuple[int, ...] = (64, 64), fixed_ris: int | None = None):
        super().__init__()
        self.cfg, self.widths = cfg, tuple(widths)
        self.mcfg = ModelConfig(hidden=widths[0] if widths else 1, fixed_ris=fixed_ris)
        self.scale = feature_scale(cfg)
        R, K, M, N = cfg.n_ris, cfg.n_users, cfg.n_elements, cfg.n_t
        self._sizes = (K * 2 * N, R * 2 * M, K * R)
        d_in = R * K * link_feature_dim(M, N) + 2 * K
        layers: list[nn.Module] = []
        for w in widths:
            layers += [nn.Linear(d_in, w, dtype=DTYPE), nn.Softplus()]
            d_in = w
        layers.append(nn.Linear(d_in, sum(self._sizes), dtype=DTYPE))
        self.net = nn.Sequential(*layers)
        self.register_buffer("attrs", node_attributes(cfg), persistent=False)

    def raw(self, H_cas):
        H_cas = as_tensor(H_cas)
        B = H_cas.shape[0]
        x = torch.cat([link_features(H_cas, self.scale).reshape(B, -1),
                       self.attrs.reshape(1, -1).expand(B, -1)], dim=1)
        out = self.net(x)
        f, t, u = torch.split(out, self._sizes, dim=1)
        cfg = self.cfg
        return (f.reshape(B, cfg.n_users, 2 * cfg.n_t), t.reshape(B, cfg.n_ris, 2 * cfg.n_elements),
                u.reshape(B, cfg.n_users, cfg.n_ris))

    def forward(self, H_cas) -> Outputs:
        return apply_heads(*self.raw(H_cas), self.cfg, self.mcfg.fixed_ris)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- differentiable objective -----------------------------------------------


def effective_channels(H_cas: torch.Tensor, theta: torch.Tensor, U: torch.Tensor) -> torch.Tensor:
    """(B,R,K,M,N), (B,R,M), (B,K,R) -> (B,K,N)."""
    per_ris = torch.einsum("brm,brkmn->bkrn", theta, H_cas)
    return torch.einsum("bkr,bkrn->bkn", U.to(per_ris.dtype), per_ris)


def sinrs(H_eff: torch.Tensor, F: torch.Tensor, noise: float) -> torch.Tensor:
    S = H_eff @ F  # (B, K, K)
    gains = S.real ** 2 + S.imag ** 2
    signal = torch.diagonal(gains, dim1=-2, dim2=-1)
    off = 1.0 - torch.eye(gains.shape[-1], dtype=gains.dtype)
    return signal / ((gains * off).sum(dim=-1) + noise)


def user_rates(H_cas, out: Outputs, cfg: SystemConfig, hard: bool = False) -> torch.Tensor:
    """Per-user weighted rates w_k log2(1 + SINR_k), shape (B, K)."""
    U = out.U_hard if hard else out.C
    gamma = sinrs(effective_channels(as_tensor(H_cas), out.theta, U), out.F, cfg.noise_power)
    w = torch.tensor(cfg.weights, dtype=DTYPE)
    return w * torch.log1p(gamma) / math.log(2.0)


def weighted_sum_rate(H_cas, out: Outputs, cfg: SystemConfig, hard: bool = False) -> torch.Tensor:
    return user_rates(H_cas, out, cfg, hard).sum(dim=-1)


def to_solutions(out: Outputs, hard: bool = True):
    """Detach a batch of outputs into numpy Solution objects."""
    from .system import Solution

    U = (out.U_hard if hard else out.C).detach().numpy()
    F = out.F.detach().numpy()
    theta = out.theta.detach().numpy()
    return [Solution(F=F[b], theta=theta[b], U=U[b]) for b in range(F.shape[0])]


# -- construction and checkpoints -------------------------------------------

CHECKPOINT_VERSION = 1


def build_model(cfg: SystemConfig, kind: str = "hetgnn", seed: int = 0, mcfg: ModelConfig | None = None,
                widths: tuple[int, ...] = (64, 64), fixed_ris: int | None = None) -> nn.Module:
    """Seeded constructor for either network family."""
    torch.manual_seed(seed)
    if kind == "hetgnn":
        mcfg = mcfg or ModelConfig()
        if fixed_ris is not None:
            mcfg = replace(mcfg, fixed_ris=fixed_ris)
        return HetGNN(cfg, mcfg)
    if kind == "flat":
        return FlatNet(cfg, tuple(widths), fixed_ris)
    raise InvalidArgument(f"unknown model kind {kind!r}")


def model_spec(model: nn.Module) -> dict:
    spec = {"kind": model.kind, "config": model.cfg.to_dict()}
    if model.kind == "hetgnn":
        spec["model"] = asdict(model.mcfg)
    else:
        spec["widths"] = list(model.widths)
        spec["fixed_ris"] = model.mcfg.fixed_ris
    return spec


def model_from_spec(spec: dict, cfg: SystemConfig | None = None) -> nn.Module:
    cfg = cfg or SystemConfig.from_dict(spec["config"])
    if spec["kind"] == "hetgnn":
        return HetGNN(cfg, ModelConfig(**spec["model"]))
    if spec["kind"] == "flat":
        return FlatNet(cfg, tuple(spec["widths"]), spec.get("fixed_ris"))
    raise InvalidArgument(f"unknown model kind {spec['kind']!r}")


def rebuild(model: nn.Module, cfg: SystemConfig) -> nn.Module:
    """Same architecture and parameters, different system configuration."""
    twin = model_from_spec(model_spec(model), cfg)
    twin.load_state_dict(model.state_dict())
    return twin


def save_checkpoint(model: nn.Module, path, extra: dict | None = None) -> None:
    """Write a deterministic checkpoint: ASCII first line, JSON header, float64 payload.

    The header lists every parameter's name, shape and byte offset, so the
    file can be read without this package.
    """
    import json

    params, table, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        params.append(arr)
        offset += arr.nbytes
    header = {"format": "risgnn-checkpoint", "version": CHECKPOINT_VERSION,
              "spec": model_spec(model), "params": table, "extra": extra or {}}
    body = json.dumps(header, sort_keys=True).encode()
    first = f"RGCK {CHECKPOINT_VERSION} {len(body)}\n".encode()
    pad = (-(len(first) + len(body))) % 8
    with open(path, "wb") as fh:
        fh.write(first + body + b"\0" * pad)
        for arr in params:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    """Inverse of save_checkpoint; returns (model, header)."""
    import json

    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    parts = data[:nl].split()
    if len(parts) != 3 or parts[0] != b"RGCK" or int(parts[1]) != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    size = int(parts[2])
    header = json.loads(data[nl + 1:nl + 1 + size])
    start = nl + 1 + size
    start += (-start) % 8
    model = model_from_spec(header["spec"])
    state = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        lo = start + entry["offset"]
        if lo + 8 * count > len(data):
            raise InvalidArgument(f"{path}: truncated parameter block {entry['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=lo).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, header
