"""Synthetic datasets, IDX loading and the ``ARD1`` dataset cache."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, InfeasibleConfigError, InvalidConfigError, InvalidInputError
from .numerics import SeededRng

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
DATA_MAGIC = b"ARD1"


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d) in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidInputError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise InvalidInputError("inputs must lie in [0, 1]")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, name or self.name)


def gen_blobs(classes: int, dim: int, per_class: int, separation: float, std: float,
              rng: SeededRng, signal_dims: int | None = None, max_tries: int = 10_000) -> Dataset:
    """Isotropic Gaussian blobs squashed into [0, 1]^dim.

    Class means lie on the sphere of radius ``separation / sqrt(2)`` (where
    two orthogonal means are exactly ``separation`` apart) inside the first
    ``signal_dims`` coordinates, and are kept at least ``0.8 * separation``
    apart by rejection. Noise is N(0, std^2) in every coordinate. The squash
    is the fixed affine map sending ``[-(r + std), r + std]`` onto [0, 1],
    followed by a clamp.
    """
    if classes < 2 or dim < 2:
        raise InvalidConfigError("need classes >= 2 and dim >= 2")
    if per_class < 1 or separation <= 0 or std < 0:
        raise InvalidConfigError("need per_class >= 1, separation > 0, std >= 0")
    k = dim if signal_dims is None else int(signal_dims)
    if not 1 <= k <= dim:
        raise InvalidConfigError(f"signal_dims must be in 1..{dim}")
    radius = separation / np.sqrt(2.0)
    mrng = rng.child(0)
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < classes:
        tries += 1
        if tries > max_tries:
            raise InfeasibleConfigError(
                f"could not place {classes} means {0.8 * separation:.3g} apart in {k} dims"
            )
        v = np.zeros(dim)
        v[:k] = mrng.normal(k)
        v *= radius / np.linalg.norm(v)
        if all(np.linalg.norm(v - m) >= 0.8 * separation for m in means):
            means.append(v)
    noise = rng.child(1).normal((classes * per_class, dim)) * std
    labels = np.repeat(np.arange(classes), per_class)
    raw = np.stack(means)[labels] + noise
    x = np.clip(0.5 + raw / (2.0 * (radius + std)), 0.0, 1.0)
    return Dataset(x, labels, classes, f"blobs{classes}x{dim}")


def gen_two_moons(per_class: int, noise_std: float, rng: SeededRng) -> Dataset:
    """Two interleaved half circles mapped by ``p -> (p + 1.5) / 4`` into [0, 1]^2."""
    if per_class < 1 or noise_std < 0:
        raise InvalidConfigError("need per_class >= 1 and noise_std >= 0")
    theta = np.linspace(0.0, np.pi, per_class)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = np.concatenate([upper, lower])
    if noise_std > 0:
        pts = pts + rng.normal(pts.shape) * noise_std
    labels = np.repeat([0, 1], per_class)
    return Dataset(np.clip((pts + 1.5) / 4.0, 0.0, 1.0), labels, 2, "moons")


def split_dataset(d: Dataset, train_fraction: float, rng: SeededRng) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfigError("train_fraction must be in (0, 1)")
    perm = rng.permutation(len(d))
    cut = int(round(train_fraction * len(d)))
    return d.subset(perm[:cut], d.name + ":train"), d.subset(perm[cut:], d.name + ":test")


def stratified_split(d: Dataset, per_class_train: int, rng: SeededRng) -> tuple[Dataset, Dataset]:
    """Per class, a seeded shuffle puts the first ``per_class_train`` samples in train."""
    tr, te = [], []
    for c in range(d.num_classes):
        idx = np.flatnonzero(d.labels == c)
        if idx.size <= per_class_train:
            raise InvalidConfigError(f"class {c} has only {idx.size} samples")
        idx = idx[rng.child(c).permutation(idx.size)]
        tr.append(idx[:per_class_train])
        te.append(idx[per_class_train:])
    return (d.subset(np.sort(np.concatenate(tr)), d.name + ":train"),
            d.subset(np.sort(np.concatenate(te)), d.name + ":test"))


def default_blobs(seed: int = 0) -> tuple[Dataset, Dataset]:
    """10 classes, 64 dims (6 carrying signal), 500 train / 100 test per class, separation/std = 4."""
    full = gen_blobs(10, 64, 600, separation=4.0, std=1.0, rng=SeededRng(seed), signal_dims=6)
    return stratified_split(full, 500, SeededRng(seed).child(2))


# -- IDX ------------------------------------------------------------------

def _read_idx(path, magic: int) -> tuple[tuple[int, ...], bytes]:
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise FormatError(f"{path}: expected magic 0x{magic:08x}, found 0x{found:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(buf) < hdr:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, buf[4:hdr])
    need = int(np.prod(dims))
    if len(buf) - hdr != need:
        raise FormatError(f"{path}: expected {need} data bytes, found {len(buf) - hdr}")
    return dims, buf[hdr:]


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    dims, pix = _read_idx(images_path, IDX_IMAGES)
    (nlab,), lab = _read_idx(labels_path, IDX_LABELS)
    if dims[0] != nlab:
        raise ConsistencyError(f"{dims[0]} images but {nlab} labels")
    x = np.frombuffer(pix, dtype=np.uint8).reshape(dims[0], dims[1] * dims[2]) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    k = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 1)
    return Dataset(x, y, k, Path(images_path).stem)


# -- ARD1 cache -----------------------------------------------------------

def save_dataset(d: Dataset, path) -> None:
    hdr = DATA_MAGIC + struct.pack("<III", len(d), d.dim, d.num_classes)
    body = np.ascontiguousarray(d.inputs, dtype="<f8").tobytes()
    lab = np.ascontiguousarray(d.labels, dtype="<u4").tobytes()
    Path(path).write_bytes(hdr + body + lab)


def load_dataset(path, name: str | None = None) -> Dataset:
    buf = Path(path).read_bytes()
    if buf[:4] != DATA_MAGIC:
        raise FormatError(f"{path}: expected magic {DATA_MAGIC!r}, found {buf[:4]!r}")
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated header")
    n, d, k = struct.unpack_from("<III", buf, 4)
    if len(buf) != 16 + n * d * 8 + n * 4:
        raise FormatError(f"{path}: size does not match header ({n} x {d})")
    x = np.frombuffer(buf, dtype="<f8", count=n * d, offset=16).reshape(n, d)
    y = np.frombuffer(buf, dtype="<u4", count=n, offset=16 + n * d * 8)
    return Dataset(x.astype(np.float64), y.astype(np.int64), k, name or Path(path).stem)
