"""Composite loss, eta schedule and the two-stage optimisation loop."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import hetgnn as hg
from .channel import ChannelRealization
from .config import InvalidArgument, SystemConfig
from .system import Solution, sinrs, wsr_from_sinrs

CE_CLAMP = 1e-12
OBJECTIVES = ("log", "wsr")


class NumericalAbort(RuntimeError):
    """Training diverged; `snapshot` holds the diagnostic state."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    eta: float | str = "auto"
    seed: int = 0
    p0_dbm: float = 30.0
    pretrain_epochs: int | None = None  # default: a third of the epochs
    objective: str = "log"  # "log": -mean log WSR; "wsr": -mean WSR
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidArgument("learning_rate and weight_decay must be non-negative")
        if self.eta != "auto" and (isinstance(self.eta, str) or self.eta < 0):
            raise InvalidArgument(f"eta must be 'auto' or >= 0, got {self.eta!r}")
        if self.objective not in OBJECTIVES:
            raise InvalidArgument(f"objective must be one of {OBJECTIVES}")
        if self.pretrain_epochs is not None and not 0 < self.pretrain_epochs <= self.epochs:
            raise InvalidArgument("pretrain_epochs must lie in [1, epochs]")

    @property
    def stage1_epochs(self) -> int:
        if self.pretrain_epochs is not None:
            return self.pretrain_epochs
        return max(1, self.epochs // 3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


# -- labels and losses ---------------------------------------------------------


def labels_from_distances(distances: np.ndarray) -> np.ndarray:
    """(..., R, K) distances -> (..., K, R) one-hot rows at the nearest RIS (lowest index on ties)."""
    distances = np.asarray(distances)
    R = distances.shape[-2]
    idx = np.argmin(distances, axis=-2)
    return np.eye(R)[idx]


def distance_labels(real: ChannelRealization) -> np.ndarray:
    return labels_from_distances(real.distances)


def cross_entropy(C: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.sum(labels * np.log(np.maximum(C, CE_CLAMP))))


def loss(real: ChannelRealization, sol: Solution, labels: np.ndarray, eta: float, cfg: SystemConfig) -> float:
    """Negative WSR plus eta times the association cross-entropy for one realization."""
    if eta < 0:
        raise InvalidArgument("eta must be non-negative")
    rate = wsr_from_sinrs(sinrs(real, sol, cfg.noise_power), cfg.weights)
    return -(rate - eta * cross_entropy(np.asarray(sol.U, dtype=float), labels))


def batch_cross_entropy(C: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-sample sum over users of -sum_i u_ki log c_ki; shape (B,)."""
    return -(labels * torch.log(C.clamp_min(CE_CLAMP))).sum(dim=(-2, -1))


def batch_loss(H_cas: torch.Tensor, out: hg.Outputs, labels: torch.Tensor, eta: float,
               cfg: SystemConfig) -> torch.Tensor:
    """Per-sample composite loss on soft outputs; shape (B,)."""
    return -hg.weighted_sum_rate(H_cas, out, cfg) + eta * batch_cross_entropy(out.C, labels)


def objective(H_cas: torch.Tensor, out: hg.Outputs, labels: torch.Tensor, eta: float,
              cfg: SystemConfig, kind: str = "log") -> torch.Tensor:
    """Scalar minimised by the optimiser.

    "wsr" is the batch mean of `batch_loss`. "log" replaces the rate term by
    -log WSR: at low SNR the rate of a sample scales with its channel gain,
    which spans decades across realizations, and the log makes every sample
    count by its relative improvement.
    """
    if kind == "wsr":
        return batch_loss(H_cas, out, labels, eta, cfg).mean()
    if kind == "log":
        rate = hg.weighted_sum_rate(H_cas, out, cfg)
        return (-torch.log(rate.clamp_min(torch.finfo(rate.dtype).tiny))
                + eta * batch_cross_entropy(out.C, labels)).mean()
    raise InvalidArgument(f"unknown objective {kind!r}")


def compute_eta(pretrain_wsr: float, baseline_wsr_p0: float) -> float:
    if not baseline_wsr_p0 > 0:
        raise InvalidArgument(f"baseline WSR must be positive, got {baseline_wsr_p0}")
    return float(pretrain_wsr) / float(baseline_wsr_p0)


# -- evaluation -----------------------------------------------------------------


@dataclass
class Metrics:
    wsr_hard: float
    wsr_soft: float
    wsr_hard_std: float
    association_accuracy: float
    violations: int
    count: int
    per_sample: np.ndarray | None = None

    @property
    def stderr(self) -> float:
        return self.wsr_hard_std / math.sqrt(max(self.count, 1))

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_sample")
        d["stderr"] = self.stderr
        return d


def _violations(out: hg.Outputs, cfg: SystemConfig) -> int:
    power = (out.F.real ** 2 + out.F.imag ** 2).sum(dim=(-2, -1))
    bad_power = (power - cfg.p_max).abs() > 1e-6 * cfg.p_max
    bad_mod = ((out.theta.abs() - 1.0).abs() > 1e-9).any(dim=-1).any(dim=-1) if out.theta.numel() else torch.zeros_like(bad_power)
    U = out.U_hard
    bad_rows = ((U.sum(dim=-1) - 1.0).abs() > 1e-9).any(dim=-1)
    bad_bin = ((U != 0) & (U != 1)).any(dim=-1).any(dim=-1)
    return int((bad_power | bad_mod | bad_rows | bad_bin).sum())


@torch.no_grad()
def evaluate_arrays(model: nn.Module, H_cas: np.ndarray, distances: np.ndarray,
                    batch_size: int = 1024) -> Metrics:
    cfg = model.cfg
    model.eval()
    hard, soft, correct, violations = [], [], 0, 0
    labels = labels_from_distances(distances)
    for s in range(0, len(H_cas), batch_size):
        Hb = hg.as_tensor(H_cas[s:s + batch_size])
        out = model(Hb)
        hard.append(hg.weighted_sum_rate(Hb, out, cfg, hard=True).numpy())
        soft.append(hg.weighted_sum_rate(Hb, out, cfg).numpy())
        chosen = out.U_hard.argmax(dim=-1).numpy()
        correct += int((chosen == labels[s:s + batch_size].argmax(axis=-1)).sum())
        violations += _violations(out, cfg)
    hard_all = np.concatenate(hard)
    n = len(hard_all)
    return Metrics(
        wsr_hard=float(hard_all.mean()),
        wsr_soft=float(np.concatenate(soft).mean()),
        wsr_hard_std=float(hard_all.std(ddof=1)) if n > 1 else 0.0,
        association_accuracy=correct / (n * cfg.n_users),
        violations=violations,
        count=n,
        per_sample=hard_all,
    )


def evaluate(split, model: nn.Module, cfg: SystemConfig | None = None) -> Metrics:
    """Metrics of `model` over a dataset split (or a whole dataset)."""
    if cfg is not None and cfg.to_dict() != model.cfg.to_dict():
        model = hg.rebuild(model, cfg)
    return evaluate_arrays(model, split.H_cas(), split.distances())


# -- training loop ----------------------------------------------------------------


def _diverged(losses: list[float]) -> bool:
    if not math.isfinite(losses[-1]):
        return True
    if len(losses) > 5:
        then, now = losses[-6], losses[-1]
        return now - then > 9.0 * abs(then)
    return False


class _Runner:
    def __init__(self, model: nn.Module, tcfg: TrainConfig, H_tr, D_tr, H_val, D_val, log_path):
        self.model, self.tcfg = model, tcfg
        self.cfg = model.cfg
        self.H_tr = hg.as_tensor(H_tr)
        self.labels = torch.from_numpy(labels_from_distances(D_tr))
        self.H_val, self.D_val = H_val, D_val
        self.log_path = Path(log_path) if log_path else None
        self.history: list[dict] = []
        self.opt = torch.optim.AdamW(model.parameters(), lr=tcfg.learning_rate,
                                     weight_decay=tcfg.weight_decay, eps=tcfg.adam_eps)
        self.gen = torch.Generator().manual_seed(tcfg.seed)

    def epoch(self, eta: float) -> float:
        self.model.train()
        n = len(self.H_tr)
        perm = torch.randperm(n, generator=self.gen)
        total = 0.0
        for s in range(0, n, self.tcfg.batch_size):
            idx = perm[s:s + self.tcfg.batch_size]
            out = self.model(self.H_tr[idx])
            value = objective(self.H_tr[idx], out, self.labels[idx], eta, self.cfg, self.tcfg.objective)
            if not torch.isfinite(value):
                raise NumericalAbort("non-finite loss", self._snapshot(value.item(), eta, batch_start=s))
            self.opt.zero_grad()
            value.backward()
            self.opt.step()
            total += value.item() * len(idx)
        return total / n

    def _snapshot(self, value, eta, **extra) -> dict:
        norms = {k: float(v.norm()) for k, v in self.model.state_dict().items()}
        return {"loss": value, "eta": eta, "epoch": self.epochs_done, "param_norms": norms, **extra}

    @property
    def epochs_done(self) -> int:
        return sum(1 for r in self.history if r["stage"] != "eta")

    def log(self, record: dict) -> None:
        self.history.append(record)
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def run_stage(self, stage: str, epochs: int, eta: float) -> Metrics | None:
        losses: list[float] = [r["loss"] for r in self.history if r["stage"] == stage]
        metrics = None
        for _ in range(epochs):
            value = self.epoch(eta)
            losses.append(value)
            metrics = evaluate_arrays(self.model, self.H_val, self.D_val) if self.H_val is not None else None
            self.log({"epoch": self.epochs_done + 1, "stage": stage, "eta": eta, "loss": value,
                      "val_wsr": metrics.wsr_hard if metrics else None,
                      "val_wsr_soft": metrics.wsr_soft if metrics else None})
            if _diverged(losses):
                raise NumericalAbort(f"loss diverged in {stage}", self._snapshot(value, eta))
        return metrics


def pretrain_wsr(model: nn.Module, tcfg: TrainConfig, H_tr, D_tr, H_val, D_val) -> float:
    """Run only the eta = 0 stage on a copy of `model`; returns its validation WSR."""
    runner = _Runner(copy.deepcopy(model), tcfg, H_tr, D_tr, H_val, D_val, None)
    metrics = runner.run_stage("pretrain", tcfg.stage1_epochs, 0.0)
    return metrics.wsr_hard


def train_arrays(model: nn.Module, tcfg: TrainConfig, H_tr, D_tr, H_val=None, D_val=None,
                 log_path=None, p0_wsr: float | None = None) -> tuple[nn.Module, list[dict]]:
    """Two-stage schedule on in-memory arrays; returns (model, history).

    Stage 1 minimises the rate term alone (eta = 0) and measures the
    validation WSR reached, WSR_p. With eta = "auto", stage 2 uses
    eta = WSR_p / WSR_p0 where WSR_p0 is the same measurement at p0_dbm
    (given, or obtained by re-running stage 1 at that power from the same
    initial parameters).
    """
    if len(H_tr) == 0:
        raise InvalidArgument("empty training set")
    if H_val is None:
        H_val, D_val = H_tr, D_tr
    initial = copy.deepcopy(model)
    runner = _Runner(model, tcfg, H_tr, D_tr, H_val, D_val, log_path)
    metrics = runner.run_stage("pretrain", tcfg.stage1_epochs, 0.0)
    wsr_p = metrics.wsr_hard

    if tcfg.eta == "auto":
        if p0_wsr is None:
            if abs(model.cfg.p_max_dbm - tcfg.p0_dbm) < 1e-9:
                p0_wsr = wsr_p
            else:
                ref = hg.rebuild(initial, model.cfg.with_power_dbm(tcfg.p0_dbm))
                p0_wsr = pretrain_wsr(ref, tcfg, H_tr, D_tr, H_val, D_val)
        eta = compute_eta(wsr_p, p0_wsr)
    else:
        eta = float(tcfg.eta)
    runner.log({"epoch": runner.epochs_done, "stage": "eta", "eta": eta, "loss": None,
                "val_wsr": wsr_p, "val_wsr_soft": None, "wsr_p0": p0_wsr})
    runner.run_stage("train", tcfg.epochs - tcfg.stage1_epochs, eta)
    return runner.model, runner.history


def train(dataset, model: nn.Module, tcfg: TrainConfig, log_path=None,
          n_train: int | None = None, p0_wsr: float | None = None) -> tuple[nn.Module, list[dict]]:
    """Train on `dataset.train` (optionally its first n_train samples), validate on `dataset.validation`."""
    if len(dataset.train) == 0:
        raise InvalidArgument("dataset has no training samples")
    idx = dataset.train.indices if n_train is None else dataset.train.indices[:n_train]
    val = dataset.validation if len(dataset.validation) else dataset.train
    return train_arrays(model, tcfg, dataset.H_cas(idx), dataset.distances(idx),
                        val.H_cas(), val.distances(), log_path, p0_wsr)
