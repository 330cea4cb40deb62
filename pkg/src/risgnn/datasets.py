"""Channel datasets on disk: `.mrds` binary records plus a `.json` sidecar header.

The binary file starts with one ASCII line ``MRDS <version> <header bytes>``,
followed by the UTF-8 JSON header and zero padding up to an 8-byte boundary.
Records follow back to back. Every complex entry is stored as a little-endian
float64 (real, imaginary) pair, row-major. Sample ``i`` is drawn from
``default_rng([seed, i])`` so it does not depend on generation order.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, build_realization, cascade
from .config import InvalidArgument, SystemConfig

FORMAT_VERSION = 1
MAGIC = b"MRDS"


class DatasetError(Exception):
    """Unreadable, truncated or mismatched dataset file."""


def record_dtype(cfg: SystemConfig) -> np.dtype:
    R, K, M, N = cfg.n_ris, cfg.n_users, cfg.n_elements, cfg.n_t
    return np.dtype([
        ("G", "<c16", (R, M, N)),
        ("h", "<c16", (R, K, M)),
        ("user_positions", "<f8", (K, 2)),
        ("distances", "<f8", (R, K)),
    ])


def sample(cfg: SystemConfig, seed: int, index: int) -> ChannelRealization:
    return build_realization(cfg, np.random.default_rng([seed, index]))


def default_validation_count(n: int) -> int:
    # one validation sample per ten training samples
    return n // 11


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _encode_header(header: dict) -> bytes:
    body = json.dumps(header, sort_keys=True).encode()
    first = f"MRDS {FORMAT_VERSION} {len(body)}\n".encode()
    pad = (-(len(first) + len(body))) % 8
    return first + body + b"\0" * pad


def generate(cfg: SystemConfig, n: int, seed: int, path, n_val: int | None = None) -> Path:
    """Write n realizations to `path` (.mrds) and its sidecar header; returns the path."""
    if n < 1:
        raise InvalidArgument(f"sample count must be >= 1, got {n}")
    n_val = default_validation_count(n) if n_val is None else int(n_val)
    if not 0 <= n_val <= n:
        raise InvalidArgument(f"validation count {n_val} outside [0, {n}]")
    path = Path(path)
    dtype = record_dtype(cfg)
    records = np.zeros(n, dtype=dtype)
    for i in range(n):
        real = sample(cfg, seed, i)
        records[i] = (real.G, real.h, real.user_positions, real.distances)
    header = {
        "format": "mrds",
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "count": n,
        "seed": int(seed),
        "split": {"train": n - n_val, "validation": n_val},
        "record_bytes": dtype.itemsize,
        "fields": [[name, dtype[name].subdtype[0].str, list(dtype[name].shape)] for name in dtype.names],
    }
    try:
        with open(path, "wb") as fh:
            fh.write(_encode_header(header))
            fh.write(records.tobytes())
        with open(sidecar_path(path), "w") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc.strerror}") from exc
    return path


def _read_header(path: Path) -> tuple[dict, int]:
    try:
        with open(path, "rb") as fh:
            first = fh.readline(64)
            parts = first.split()
            if len(parts) != 3 or parts[0] != MAGIC:
                raise DatasetError(f"{path}: not an .mrds file")
            version, size = int(parts[1]), int(parts[2])
            if version != FORMAT_VERSION:
                raise DatasetError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
            body = fh.read(size)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable header ({exc})") from exc
    if len(body) != size:
        raise DatasetError(f"{path}: truncated header")
    try:
        header = json.loads(body)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: corrupt header ({exc})") from exc
    offset = len(first) + size
    return header, offset + (-offset) % 8


@dataclass(frozen=True)
class Split:
    dataset: "Dataset"
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, j: int) -> ChannelRealization:
        return self.dataset[int(self.indices[j])]

    def H_cas(self) -> np.ndarray:
        return self.dataset.H_cas(self.indices)

    def distances(self) -> np.ndarray:
        return self.dataset.distances(self.indices)


class Dataset:
    """Lazy, read-only view of an .mrds file."""

    def __init__(self, path, header: dict, offset: int):
        self.path = Path(path)
        self.header = header
        self.cfg = SystemConfig.from_dict(header["config"])
        self.count = int(header["count"])
        self.seed = int(header["seed"])
        dtype = record_dtype(self.cfg)
        if header.get("record_bytes") != dtype.itemsize:
            raise DatasetError(f"{path}: record size {header.get('record_bytes')} does not match the config")
        expected = offset + self.count * dtype.itemsize
        actual = os.path.getsize(self.path)
        if actual != expected:
            raise DatasetError(f"{path}: truncated or padded file ({actual} bytes, header implies {expected})")
        self._records = np.memmap(self.path, dtype=dtype, mode="r", offset=offset, shape=(self.count,))
        n_train = int(header["split"]["train"])
        n_val = int(header["split"]["validation"])
        if n_train + n_val != self.count or n_train < 0 or n_val < 0:
            raise DatasetError(f"{path}: split counts do not add up to {self.count}")
        self.train = Split(self, np.arange(n_train))
        self.validation = Split(self, np.arange(n_train, self.count))

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> ChannelRealization:
        if not -self.count <= i < self.count:
            raise IndexError(i)
        rec = self._records[i]
        G, h = np.array(rec["G"]), np.array(rec["h"])
        return ChannelRealization(G=G, h=h, H_cas=cascade(G, h),
                                  user_positions=np.array(rec["user_positions"]),
                                  ris_positions=np.asarray(self.cfg.ris_positions, dtype=float),
                                  distances=np.array(rec["distances"]))

    def H_cas(self, indices=None) -> np.ndarray:
        """Cascaded channels of the selected samples, shape (S, R, K, M, N_t)."""
        rec = self._records if indices is None else self._records[np.asarray(indices)]
        G, h = np.asarray(rec["G"]), np.asarray(rec["h"])
        return h[:, :, :, :, None] * G[:, :, None, :, :]

    def distances(self, indices=None) -> np.ndarray:
        rec = self._records if indices is None else self._records[np.asarray(indices)]
        return np.array(rec["distances"])


def load(path, cfg: SystemConfig | None = None) -> Dataset:
    """Open a dataset; with `cfg`, the stored configuration must match it exactly."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such dataset")
    header, offset = _read_header(path)
    if header.get("format") != "mrds":
        raise DatasetError(f"{path}: unexpected format {header.get('format')!r}")
    ds = Dataset(path, header, offset)
    if cfg is not None and ds.cfg.to_dict() != cfg.to_dict():
        diff = sorted(k for k, v in cfg.to_dict().items() if ds.header["config"].get(k) != v)
        raise DatasetError(f"{path}: config mismatch in {diff}")
    return ds
