"""Synthetic dataset generators and optional real-data file loaders.

All generators are deterministic per seed. Batches are column-major:
one sample per column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .linalg import Matrix
from .network import Batch

KINDS = ("gauss_regression", "blob_classification", "lowrank_matrix")


@dataclass(frozen=True)
class DataConfig:
    """Parameters for the synthetic generators.

    gauss_regression: x entries i.i.d. N(mean, std^2), y = -x except on
    ``flip_dims`` where y_d = +x_d. blob_classification: class means on
    coordinate axes scaled by ``scale`` plus N(0, noise^2) input noise,
    one-hot targets. lowrank_matrix: ``dims`` x ``dims`` target of rank
    ``rank`` with ``mask_fraction`` of the entries hidden.
    """

    kind: str = "gauss_regression"
    dims: int = 3
    n_samples: int = 64
    seed: int = 0
    mean: float = 1.0
    std: float = 0.1
    flip_dims: tuple[int, ...] = ()
    n_classes: int = 10
    d_y: int | None = None
    scale: float = 1.0
    noise: float = 0.1
    rank: int = 3
    mask_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"data.kind: unknown kind {self.kind!r}")
        if self.dims < 1:
            raise ConfigError("data.dims: must be >= 1")
        if self.n_samples < 1:
            raise ConfigError("data.n_samples: must be >= 1")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ConfigError("data.mask_fraction: must lie in [0, 1)")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def gen_gauss_regression(cfg: DataConfig) -> Batch:
    """x ~ N(mean, std^2) entrywise; y = -x, with optional per-dimension
    sign flips (flipped dimensions satisfy y_d = +x_d)."""
    if cfg.kind != "gauss_regression":
        raise ConfigError("gen_gauss_regression needs kind == 'gauss_regression'")
    rng = _rng(cfg.seed)
    x = cfg.mean + cfg.std * rng.standard_normal((cfg.dims, cfg.n_samples))
    signs = -np.ones(cfg.dims)
    for d in cfg.flip_dims:
        if not 0 <= d < cfg.dims:
            raise ConfigError(f"data.flip_dims: index {d} out of range")
        signs[d] = 1.0
    y = signs[:, None] * x
    return Batch(x=x, y=y)


def gen_blob_classification(cfg: DataConfig) -> Batch:
    """Gaussian blobs with class means on scaled coordinate axes;
    one-hot targets of dimension d_y (defaults to n_classes)."""
    if cfg.kind != "blob_classification":
        raise ConfigError("gen_blob_classification needs kind == 'blob_classification'")
    d_y = cfg.d_y if cfg.d_y is not None else cfg.n_classes
    if cfg.n_classes > d_y:
        raise ConfigError("data.n_classes: must be <= d_y")
    if cfg.n_classes > cfg.dims:
        raise ConfigError("data.n_classes: must be <= dims (one axis per class)")
    rng = _rng(cfg.seed)
    labels = np.arange(cfg.n_samples) % cfg.n_classes
    labels = rng.permutation(labels)
    x = cfg.noise * rng.standard_normal((cfg.dims, cfg.n_samples))
    for i, c in enumerate(labels):
        x[c, i] += cfg.scale
    y = np.zeros((d_y, cfg.n_samples))
    y[labels, np.arange(cfg.n_samples)] = 1.0
    return Batch(x=x, y=y)


@dataclass(frozen=True)
class LowRankTask:
    """Matrix-completion target and hidden-entry mask (True = hidden)."""

    target: Matrix
    mask: np.ndarray


def gen_lowrank_matrix(cfg: DataConfig) -> LowRankTask:
    """target = U V^T with U, V standard normal dims x rank; exactly
    floor(mask_fraction * dims^2) entries hidden, chosen uniformly
    without replacement."""
    if cfg.kind != "lowrank_matrix":
        raise ConfigError("gen_lowrank_matrix needs kind == 'lowrank_matrix'")
    rng = _rng(cfg.seed)
    u = rng.standard_normal((cfg.dims, cfg.rank))
    v = rng.standard_normal((cfg.dims, cfg.rank))
    target = u @ v.T
    n_entries = cfg.dims * cfg.dims
    n_hidden = int(cfg.mask_fraction * n_entries)
    flat = rng.choice(n_entries, size=n_hidden, replace=False)
    mask = np.zeros(n_entries, dtype=bool)
    mask[flat] = True
    return LowRankTask(target=target, mask=mask.reshape(cfg.dims, cfg.dims))


def completion_batch(task: LowRankTask) -> tuple[Batch, np.ndarray]:
    """Phrase matrix completion as a regression batch: identity inputs,
    target columns as outputs, and an observation mask (True = observed)
    for the masked MSE."""
    d = task.target.shape[0]
    return Batch(x=np.eye(d), y=task.target.copy()), ~task.mask


def generate(cfg: DataConfig) -> Batch:
    """Dispatch to the batch-producing generators."""
    if cfg.kind == "gauss_regression":
        return gen_gauss_regression(cfg)
    if cfg.kind == "blob_classification":
        return gen_blob_classification(cfg)
    raise ConfigError(f"data.kind: {cfg.kind!r} does not generate a plain batch")


# ---------------------------------------------------------------------------
# file loaders

_IDX_DTYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}


def _read_idx_array(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    zero0, zero1, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero0 != 0 or zero1 != 0:
        raise FormatError(f"{path}: bad magic number at byte 0")
    if dtype_code not in _IDX_DTYPES:
        raise FormatError(f"{path}: unknown dtype code 0x{dtype_code:02x} at byte 2")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension list at byte {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = np.dtype(_IDX_DTYPES[dtype_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise FormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {header_end + expected}"
        )
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path,
             n_classes: int | None = None) -> Batch:
    """Load an IDX image/label file pair (the MNIST binary format).

    Images are flattened column-wise and scaled to [0, 1]; labels become
    one-hot columns (n_classes defaults to max label + 1).
    """
    images = _read_idx_array(images_path)
    labels = _read_idx_array(labels_path)
    if images.ndim < 2:
        raise FormatError(f"{images_path}: image array must have >= 2 dims")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: label array must be 1-D")
    n = images.shape[0]
    if labels.shape[0] != n:
        raise FormatError(
            f"{labels_path}: {labels.shape[0]} labels for {n} images"
        )
    x = images.reshape(n, -1).T.astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    y = np.zeros((k, n))
    y[labels, np.arange(n)] = 1.0
    return Batch(x=x, y=y)


def load_csv(path: str | Path, dims: int, n_classes: int | None = None) -> Batch:
    """Header-less numeric CSV, label in the first column, ``dims``
    feature columns after it. Features are scaled to [0, 1] by the
    global max when it exceeds 1 (raw pixel convention)."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dims + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {dims + 1} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from exc
    if not rows:
        raise FormatError(f"{path}: no data rows")
    arr = np.asarray(rows)
    labels = arr[:, 0].astype(np.int64)
    x = arr[:, 1:].T.copy()
    peak = float(x.max()) if x.size else 0.0
    if peak > 1.0:
        x /= peak
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    y = np.zeros((k, len(rows)))
    y[labels, np.arange(len(rows))] = 1.0
    return Batch(x=x, y=y)
