"""Dataset ingestion: CIFAR-10 binary batches and a synthetic low-rank teacher."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import ConvGeometry, activation, conv2d_fast

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def image_dims(self):
        return tuple(self.x_train.shape[1:])


def parse_cifar10(raw: bytes):
    """Decode CIFAR-10 binary records into NHWC floats in [0, 1] and labels."""
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"CIFAR-10 data size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label byte {labels[bad[0]]} > 9 in record {bad[0]}", int(bad[0]) * CIFAR_RECORD)
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(pixels, dtype=np.float32) / np.float32(255.0), labels


def load_cifar10(path, split="train"):
    """Load one split from a directory of ``*.bin`` batches, or a single file."""
    path = Path(path)
    if path.is_dir():
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        files = [path / n for n in names if (path / n).exists()]
        if not files:
            raise FileNotFoundError(f"no CIFAR-10 {split} batches in {path}")
    else:
        files = [path]
    xs, ys = zip(*(parse_cifar10(f.read_bytes()) for f in files))
    return np.concatenate(xs), np.concatenate(ys)


def cifar10_dataset(path) -> Dataset:
    x_train, y_train = load_cifar10(path, "train")
    x_test, y_test = load_cifar10(path, "test")
    return Dataset(x_train, y_train, x_test, y_test, 10)


def low_rank_bank(rng, k, ci, co, rank):
    """Filter bank whose (K*K*Ci) x Co unfolding has rank exactly ``rank``."""
    if not 1 <= rank <= min(k * k * ci, co):
        raise ValueError(f"rank {rank} impossible for a {k}x{k}x{ci}x{co} bank")
    while True:
        a = rng.normal(size=(k * k * ci, rank))
        b = rng.normal(size=(rank, co))
        m = a @ b
        if np.linalg.matrix_rank(m) == rank:
            break
    m *= np.sqrt(2.0 / (k * k * ci)) / np.sqrt(rank)
    return m.reshape(k, k, ci, co)


@dataclass
class Teacher:
    W1: np.ndarray
    W2: np.ndarray
    head: np.ndarray
    center: np.ndarray = None
    scale: np.ndarray = None
    geom: ConvGeometry = ConvGeometry(3, 1, 1)

    def features(self, x, batch_size=1024):
        out = []
        for s in range(0, len(x), batch_size):
            h = activation(conv2d_fast(x[s:s + batch_size], self.W1, self.geom), "relu")
            h = activation(conv2d_fast(h, self.W2, self.geom), "relu")
            out.append(h.astype(np.float64).mean(axis=(1, 2)))
        return np.concatenate(out) if out else np.zeros((0, self.W2.shape[3]))

    def logits(self, x):
        f = self.features(x)
        if self.center is not None:
            f = (f - self.center) / self.scale
        return f @ self.head


def make_teacher(seed, rank, width=16, classes=4, channels=1):
    rng = np.random.default_rng([seed, 7])
    W1 = low_rank_bank(rng, 3, channels, width, rank)
    W2 = low_rank_bank(rng, 3, width, width, rank)
    # orthonormal head columns keep the classes roughly balanced
    head = np.linalg.qr(rng.normal(size=(width, classes)))[0]
    teacher = Teacher(W1.astype(np.float32), W2.astype(np.float32), head)
    # whiten pooled features on a calibration batch so classes are balanced
    calib = teacher.features(rng.normal(size=(2048, 8, 8, channels)).astype(np.float32))
    teacher.center = calib.mean(axis=0)
    teacher.scale = calib.std(axis=0) + 1e-8
    return teacher


def synth_teacher(seed, n, rank, width=16, classes=4, test_fraction=0.2,
                  margin_quantile=0.0, hw=8):
    """Inputs ``hw x hw x 1`` labelled by a frozen rank-``rank`` conv teacher.

    ``margin_quantile`` drops that fraction of candidate samples with the
    smallest top-2 logit gap (oversampling first so ``n`` samples remain).
    Returns ``(dataset, teacher)``.
    """
    teacher = make_teacher(seed, rank, width, classes)
    rng = np.random.default_rng([seed, 11])
    pool = int(np.ceil(n / (1.0 - margin_quantile))) if margin_quantile else n
    x = rng.normal(size=(pool, hw, hw, 1)).astype(np.float32)
    logits = teacher.logits(x)
    labels = np.argmax(logits, axis=1)
    if margin_quantile:
        top2 = np.sort(logits, axis=1)[:, -2:]
        gap = top2[:, 1] - top2[:, 0]
        keep = np.sort(np.argsort(gap, kind="stable")[pool - n:])
        x, labels = x[keep], labels[keep]
    n_test = int(round(n * test_fraction))
    n_train = n - n_test
    data = Dataset(x[:n_train], labels[:n_train], x[n_train:], labels[n_train:], classes)
    return data, teacher


def load_dataset(cfg, seed=0) -> Dataset:
    """Dataset for a :class:`~alf.config.DatasetConfig`."""
    if cfg.kind == "cifar10":
        return cifar10_dataset(cfg.path)
    ds_seed = seed if cfg.seed is None else cfg.seed
    data, _ = synth_teacher(ds_seed, cfg.n, cfg.rank, cfg.width, cfg.classes,
                            cfg.test_fraction, cfg.margin_quantile)
    return data
