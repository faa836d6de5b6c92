"""Dataset ingestion (CIFAR-10 binary, tensor containers) and synthetic generators."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import load_tensor_container, save_tensor
from .train import Dataset

CIFAR_RECORD = 3073
CIFAR_RECORDS_PER_BATCH = 10000
CIFAR_BATCH_BYTES = CIFAR_RECORD * CIFAR_RECORDS_PER_BATCH
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

DATA_KINDS = ("cifar10_binary", "tensor_container", "synthetic_gratings", "synthetic_twoclass")
ORIENTATIONS = ("vertical", "horizontal", "diagonal", "antidiagonal", "mixed")


class DataError(ValueError):
    pass


@dataclass
class DataConfig:
    kind: str = "synthetic_twoclass"
    path: str | None = None
    image_size: int = 16
    channels: int = 1
    n_train: int = 512
    n_test: int = 256
    seed: int = 0
    noise: float = 0.0
    period: float = 4.0
    orientations: list[str] = field(default_factory=lambda: ["vertical", "horizontal"])
    normalize_mean: list[float] | None = None
    normalize_std: list[float] | None = None

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError(f"data kind must be one of {DATA_KINDS}")
        if self.kind in ("cifar10_binary", "tensor_container") and not self.path:
            raise ValueError(f"data kind {self.kind!r} needs a path")
        if self.image_size < 1 or self.channels < 1:
            raise ValueError("image_size and channels must be >= 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be non-negative")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not self.period > 0:
            raise ValueError("period must be positive")
        for o in self.orientations:
            if o not in ORIENTATIONS:
                raise ValueError(f"orientation {o!r} not in {ORIENTATIONS}")
        if (self.normalize_mean is None) != (self.normalize_std is None):
            raise ValueError("normalize_mean and normalize_std must be given together")
        if self.normalize_std is not None and min(self.normalize_std) <= 0:
            raise ValueError("normalize_std entries must be positive")


# ------------------------------------------------------------------ CIFAR-10
def parse_cifar_records(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Split raw 3073-byte records into uint8 images [N,3,32,32] and labels."""
    if len(buf) % CIFAR_RECORD:
        raise DataError(f"{source}: {len(buf)} bytes is not a multiple of the {CIFAR_RECORD}-byte record")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise DataError(f"{source}: record {bad} has label {labels[bad]} (must be < 10)")
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def _read_cifar_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise DataError(f"missing CIFAR-10 batch file {path}")
    size = path.stat().st_size
    if size != CIFAR_BATCH_BYTES:
        raise DataError(f"{path}: {size} bytes, expected {CIFAR_BATCH_BYTES}")
    return parse_cifar_records(path.read_bytes(), str(path))


def cifar_norm_stats(images: np.ndarray) -> tuple[list[float], list[float]]:
    """Per-channel mean and std of uint8 images after scaling to [0, 1]."""
    x = images.astype(np.float64) / 255.0
    return x.mean(axis=(0, 2, 3)).tolist(), x.std(axis=(0, 2, 3)).tolist()


def read_cifar_split(root, split: str) -> tuple[np.ndarray, np.ndarray]:
    root = Path(root)
    if split == "train":
        parts = [_read_cifar_batch(root / f) for f in CIFAR_TRAIN_FILES]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    if split == "test":
        return _read_cifar_batch(root / CIFAR_TEST_FILE)
    raise ValueError(f"split must be 'train' or 'test', got {split!r}")


def load_cifar10_binary(root, split: str = "train", mean=None, std=None) -> Dataset:
    """Decode one split, scale pixels to [0, 1] and normalise per channel.

    Without explicit ``mean``/``std`` the statistics of the training split are
    computed on the fly (the same numbers ``scripts/cifar_norm_stats.py`` prints).
    """
    x, y = read_cifar_split(root, split)
    if mean is None:
        mean, std = cifar_norm_stats(x if split == "train" else read_cifar_split(root, "train")[0])
    return Dataset(normalize(x / 255.0, mean, std), y, f"cifar10-{split}", 10)


def normalize(x: np.ndarray, mean, std) -> np.ndarray:
    if mean is None:
        return np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (x.shape[1],) or std.shape != (x.shape[1],):
        raise DataError(f"normalisation needs {x.shape[1]} per-channel values, got {mean.shape[0]}")
    return (x - mean[:, None, None]) / std[:, None, None]


# --------------------------------------------------------------- containers
CONTAINER_FILES = ("train_x.fsta", "train_y.fsta", "test_x.fsta", "test_y.fsta")


def save_dataset_containers(root, train: Dataset, test: Dataset) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = [root / f for f in CONTAINER_FILES]
    for path, arr in zip(paths, (train.x, train.y, test.x, test.y)):
        if arr.dtype.kind in "iu":
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise DataError("labels must fit in uint8")
            arr = arr.astype(np.uint8)
        elif arr.dtype != np.float32:
            arr = arr.astype(np.float64)
        save_tensor(path, arr)
    return paths


def load_container_dataset(root, mean=None, std=None) -> tuple[Dataset, Dataset]:
    root = Path(root)
    arrays = []
    for f in CONTAINER_FILES:
        if not (root / f).exists():
            raise DataError(f"missing container file {root / f}")
        arrays.append(load_tensor_container(root / f))
    xtr, ytr, xte, yte = arrays
    for name, x in (("train_x", xtr), ("test_x", xte)):
        if x.ndim != 4:
            raise DataError(f"{name} must be rank 4 [N, C, H, W], got rank {x.ndim}")
    k = int(max(ytr.max(initial=0), yte.max(initial=0))) + 1
    return (Dataset(normalize(xtr, mean, std), ytr, f"{root.name}-train", k),
            Dataset(normalize(xte, mean, std), yte, f"{root.name}-test", k))


# ---------------------------------------------------------------- synthetic
def grating(size: int, orientation: str, period: float, phase: float = 0.0) -> np.ndarray:
    """Sinusoidal grating in [0, 1].

    A vertical grating has vertical stripes, so intensity varies along x only.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    w = 2 * np.pi / period
    if orientation == "vertical":
        arg = w * xx
    elif orientation == "horizontal":
        arg = w * yy
    elif orientation == "diagonal":
        arg = w * (xx + yy) / np.sqrt(2)
    elif orientation == "antidiagonal":
        arg = w * (xx - yy) / np.sqrt(2)
    elif orientation == "mixed":
        return 0.5 * (grating(size, "vertical", period, phase) + grating(size, "horizontal", period, phase))
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    return 0.5 + 0.5 * np.cos(arg + phase)


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k) if n else np.zeros(0, dtype=np.int64)


def gen_gratings(cfg: DataConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    labels = _balanced_labels(n, len(cfg.orientations), rng)
    x = np.empty((n, cfg.channels, cfg.image_size, cfg.image_size))
    for i, lab in enumerate(labels):
        phase = rng.uniform(0, 2 * np.pi)
        x[i] = grating(cfg.image_size, cfg.orientations[lab], cfg.period, phase)
    if cfg.noise:
        x = np.clip(x + rng.normal(0, cfg.noise, x.shape), 0, 1)
    return x, labels


# Blob widths per class; wide blobs carry most energy at low frequencies.
TWOCLASS_SIGMAS = (0.8, 2.5)
TWOCLASS_BLOBS = 4


def gen_twoclass(cfg: DataConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs at random positions: narrow (class 0) vs wide (class 1)."""
    labels = _balanced_labels(n, 2, rng)
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    x = np.zeros((n, cfg.channels, s, s))
    for i, lab in enumerate(labels):
        sigma = TWOCLASS_SIGMAS[lab]
        img = np.zeros((s, s))
        for _ in range(TWOCLASS_BLOBS):
            cy, cx = rng.uniform(0, s, 2)
            img += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        x[i] = img / img.max()
    if cfg.noise:
        x = np.clip(x + rng.normal(0, cfg.noise, x.shape), 0, 1)
    return x, labels


GENERATORS = {"synthetic_gratings": gen_gratings, "synthetic_twoclass": gen_twoclass}


def gen_synthetic(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    """Seeded synthetic train/test split; identical seeds give identical data."""
    if cfg.kind not in GENERATORS:
        raise ValueError(f"{cfg.kind!r} is not a synthetic dataset kind")
    rng = np.random.default_rng(cfg.seed)
    gen = GENERATORS[cfg.kind]
    k = len(cfg.orientations) if cfg.kind == "synthetic_gratings" else 2
    xtr, ytr = gen(cfg, cfg.n_train, rng)
    xte, yte = gen(cfg, cfg.n_test, rng)
    return (Dataset(normalize(xtr, cfg.normalize_mean, cfg.normalize_std), ytr, f"{cfg.kind}-train", k),
            Dataset(normalize(xte, cfg.normalize_mean, cfg.normalize_std), yte, f"{cfg.kind}-test", k))


def load_dataset(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    if cfg.kind == "cifar10_binary":
        if cfg.normalize_mean is None:
            mean, std = cifar_norm_stats(read_cifar_split(cfg.path, "train")[0])
        else:
            mean, std = cfg.normalize_mean, cfg.normalize_std
        return (load_cifar10_binary(cfg.path, "train", mean, std),
                load_cifar10_binary(cfg.path, "test", mean, std))
    if cfg.kind == "tensor_container":
        return load_container_dataset(cfg.path, cfg.normalize_mean, cfg.normalize_std)
    return gen_synthetic(cfg)
