"""Datasets: synthetic covariate shift, UCI bike sharing, MNIST IDX with rotations."""
from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import logging
import struct
import urllib.request
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import stream

log = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


class ChecksumError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape[0] != n or any(len(v) != n for v in self.meta.values()):
            raise ValueError("row counts of X, y and meta disagree")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], {k: v[idx] for k, v in self.meta.items()})


def split_holdout(data: Dataset, fraction: float, rng: np.random.Generator):
    """Random (train, holdout) split with round(fraction * n) holdout rows."""
    n = data.n
    n_hold = max(1, int(round(fraction * n)))
    if n_hold >= n:
        raise ValueError(f"cannot hold out {n_hold} of {n} rows")
    perm = rng.permutation(n)
    return data.take(np.sort(perm[n_hold:])), data.take(np.sort(perm[:n_hold]))


# ---------------------------------------------------------------- synthetic

class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"
    SHIFTED_EXPONENTIAL = "shifted_exponential"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.GAUSSIAN
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.normal(0.0, self.scale, size=n)
        if self.kind is NoiseKind.LAPLACIAN:
            return rng.laplace(0.0, self.scale, size=n)
        # 1 - Exp(1) has mean zero
        return self.scale * (1.0 - rng.exponential(1.0, size=n))


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 100
    beta_sigma: float = 0.1
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")


_SPLITS = {"source": 0, "target": 1}


def synthetic_beta(spec: SyntheticSpec, seed: int) -> np.ndarray:
    return stream(seed, "beta").normal(0.0, spec.beta_sigma, size=spec.d)


def gen_synthetic(spec: SyntheticSpec, n: int, split: str, seed: int, draw: int = 0):
    """Sample (Dataset, beta) from y = beta.x + eps.

    Source inputs are uniform on [-1, 1]^d, target inputs standard normal.
    beta depends on `seed` only; `draw` selects independent samples of the
    same split (e.g. training set vs. held-out source test set).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if split not in _SPLITS:
        raise ValueError(f"split must be 'source' or 'target', got {split!r}")
    beta = synthetic_beta(spec, seed)
    s = _SPLITS[split]
    xr = stream(seed, "x", s, draw)
    if split == "source":
        X = xr.uniform(-1.0, 1.0, size=(n, spec.d))
    else:
        X = xr.standard_normal(size=(n, spec.d))
    eps = spec.noise.sample(stream(seed, "noise", s, draw), n)
    return Dataset(X, X @ beta + eps), beta


# ---------------------------------------------------------------- bike sharing

BIKE_FEATURES = ("temp", "atemp", "windspeed", "hum")
BIKE_META = ("yr", "season")
BIKE_TARGET = "cnt"
BIKE_ROWS = 17379

TARGET_TRANSFORMS = {
    "identity": lambda c: c,
    "sqrt": np.sqrt,
    "div100": lambda c: c / 100.0,
}
# sqrt keeps residual variances in the tens for hourly counts up to ~1000
DEFAULT_BIKE_TRANSFORM = "sqrt"


def load_bike_csv(path, target_transform: str = DEFAULT_BIKE_TRANSFORM) -> Dataset:
    """Read the UCI hourly bike file; columns are located by header name."""
    path = Path(path)
    if target_transform not in TARGET_TRANSFORMS:
        raise ValueError(f"unknown target transform {target_transform!r}")
    if not path.exists():
        raise FileNotFoundError(f"{path} not found (run `hsic-learn fetch` first)")
    wanted = BIKE_FEATURES + BIKE_META + (BIKE_TARGET,)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing columns {missing}")
        cols = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in cols])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed row ({exc})") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    A = np.asarray(rows)
    nf = len(BIKE_FEATURES)
    return Dataset(
        A[:, :nf],
        TARGET_TRANSFORMS[target_transform](A[:, -1]),
        {"yr": A[:, nf].astype(int), "season": A[:, nf + 1].astype(int)},
    )


def partition_bike(data: Dataset, year: int, heldout_season: int):
    """(source, target): the year's other three seasons vs. the held-out one."""
    if "yr" not in data.meta or "season" not in data.meta:
        raise ValueError("dataset lacks yr/season metadata")
    in_year = data.meta["yr"] == year
    is_held = data.meta["season"] == heldout_season
    src, tgt = np.flatnonzero(in_year & ~is_held), np.flatnonzero(in_year & is_held)
    if src.size == 0 or tgt.size == 0:
        raise ValueError(f"empty partition for year={year}, season={heldout_season}")
    return data.take(src), data.take(tgt)


def subsample(data: Dataset, fraction: float, seed) -> Dataset:
    """floor(fraction * n) rows without replacement, original order kept."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    k = int(np.floor(fraction * data.n))
    if k == 0:
        raise ValueError("subsample would be empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return data.take(np.sort(rng.choice(data.n, size=k, replace=False)))


# ---------------------------------------------------------------- MNIST

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise ParseError(f"{path}: short IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ParseError(f"{path}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
    if len(raw) != 16 + n * rows * cols:
        raise ParseError(f"{path}: expected {n * rows * cols} pixel bytes, got {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise ParseError(f"{path}: short IDX header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ParseError(f"{path}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
    if len(raw) != 8 + n:
        raise ParseError(f"{path}: expected {n} labels, got {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= 10:
        raise ParseError("label outside [0, 10)")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels)


def rotate_batch(images: np.ndarray, angles_deg: np.ndarray) -> np.ndarray:
    """Rotate square images counter-clockwise about their centre.

    Inverse mapping: each output pixel samples the source at R(-theta) applied
    to its offset from the centre, with bilinear interpolation and zeros
    outside the frame.
    """
    N, h, w = images.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w]
    x = (cols - cx).ravel()[None, :]
    y = (cy - rows).ravel()[None, :]  # y axis points up
    t = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))[:, None]
    c, s = np.cos(t), np.sin(t)
    src_col = c * x + s * y + cx
    src_row = cy - (-s * x + c * y)

    padded = np.zeros((N, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = images
    # shift by one for the zero border; clip keeps far-away samples on the border
    r = np.clip(src_row + 1.0, 0.0, h + 1.0)
    q = np.clip(src_col + 1.0, 0.0, w + 1.0)
    r0 = np.clip(np.floor(r).astype(int), 0, h)
    q0 = np.clip(np.floor(q).astype(int), 0, w)
    fr, fq = r - r0, q - q0
    idx = np.arange(N)[:, None]
    out = (
        padded[idx, r0, q0] * (1 - fr) * (1 - fq)
        + padded[idx, r0, q0 + 1] * (1 - fr) * fq
        + padded[idx, r0 + 1, q0] * fr * (1 - fq)
        + padded[idx, r0 + 1, q0 + 1] * fr * fq
    )
    return out.reshape(N, h, w)


def rotate_images(data: Dataset, angle_range=(-45.0, 45.0), seed=0, side: int = 28) -> Dataset:
    """Rotate each image by its own angle drawn uniformly from `angle_range` (degrees)."""
    if data.d != side * side:
        raise ValueError(f"expected {side * side} pixels per image, got {data.d}")
    lo, hi = angle_range
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    angles = rng.uniform(lo, hi, size=data.n) if hi > lo else np.full(data.n, float(lo))
    if np.all(angles == 0.0):
        return Dataset(data.X.copy(), data.y.copy(), dict(data.meta))
    out = np.empty_like(data.X, dtype=np.float64)
    for start in range(0, data.n, 2048):
        sl = slice(start, start + 2048)
        imgs = data.X[sl].reshape(-1, side, side)
        out[sl] = rotate_batch(imgs, angles[sl]).reshape(imgs.shape[0], -1)
    np.clip(out, 0.0, 1.0, out=out)
    return Dataset(out, data.y.copy(), {**data.meta, "angle": angles})


# ---------------------------------------------------------------- fetching

BIKE_URL = "https://archive.ics.uci.edu/static/public/275/bike+sharing+dataset.zip"
MNIST_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist/"
# md5 of the canonical gzipped IDX files
MNIST_FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


def md5sum(path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url: str, dest: Path, timeout: float = 60.0):
    log.info("downloading %s", url)
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(url, timeout=timeout) as resp, tmp.open("wb") as fh:
        while chunk := resp.read(1 << 20):
            fh.write(chunk)
    tmp.replace(dest)


def ensure_file(dest: Path, url: str, md5: str | None, downloader=_download) -> bool:
    """Make sure `dest` exists with the given md5. Returns True if it downloaded."""
    if dest.exists() and (md5 is None or md5sum(dest) == md5):
        return False
    if dest.exists():
        raise ChecksumError(f"{dest} exists but its md5 is {md5sum(dest)}, expected {md5}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    downloader(url, dest)
    if md5 is not None and md5sum(dest) != md5:
        got = md5sum(dest)
        dest.unlink()
        raise ChecksumError(f"{url}: md5 {got} != {md5}")
    return True


def bike_path(cache_dir) -> Path:
    return Path(cache_dir) / "bike" / "hour.csv"


def mnist_paths(cache_dir, split: str = "train"):
    prefix = "train" if split == "train" else "t10k"
    base = Path(cache_dir) / "mnist"
    return base / f"{prefix}-images-idx3-ubyte.gz", base / f"{prefix}-labels-idx1-ubyte.gz"


def fetch_bike(cache_dir, url: str = BIKE_URL, downloader=_download) -> bool:
    """Download and unpack hour.csv. The UCI archive has no published checksum,
    so the md5 of the first download is pinned in bike/checksums.json."""
    target = bike_path(cache_dir)
    pin = target.parent / "checksums.json"
    if target.exists():
        if pin.exists():
            want = json.loads(pin.read_text()).get("hour.csv")
            if want and md5sum(target) != want:
                raise ChecksumError(f"{target} does not match pinned md5 {want}")
        return False
    target.parent.mkdir(parents=True, exist_ok=True)
    archive = target.parent / "bike.zip"
    if not archive.exists():
        downloader(url, archive)
    with zipfile.ZipFile(archive) as zf:
        target.write_bytes(zf.read("hour.csv"))
    n_rows = sum(1 for _ in io.StringIO(target.read_text())) - 1
    if n_rows != BIKE_ROWS:
        target.unlink()
        raise ChecksumError(f"hour.csv has {n_rows} rows, expected {BIKE_ROWS}")
    pin.write_text(json.dumps({"hour.csv": md5sum(target)}, indent=1))
    return True


def fetch_mnist(cache_dir, base_url: str = MNIST_BASE, downloader=_download) -> int:
    got = 0
    for name, md5 in MNIST_FILES.items():
        got += ensure_file(Path(cache_dir) / "mnist" / name, base_url + name, md5, downloader)
    return got
