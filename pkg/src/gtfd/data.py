"""Clean-signal generators, noise models and measurement composition."""

from __future__ import annotations

import math
import os
import queue
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from .rng import Rng

STL10_SIDE = 96
STL10_RECORD = STL10_SIDE * STL10_SIDE * 3  # 27648 bytes


class DataError(ValueError):
    pass


# -------------------------------------------------------------- clean data

def sample_sine_batch(rng: Rng, k: int, length: int = 128, nu_max: float = 5.0,
                      nu: float | np.ndarray | None = None) -> np.ndarray:
    """sin(2*pi*nu*t) on t_j = j/(length-1), nu ~ U[0, nu_max] per sample -> [k, 1, length]."""
    if k < 1:
        raise DataError(f"batch size must be >= 1, got {k}")
    if nu is None:
        nu = rng.uniform((k,), 0.0, nu_max)
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (k,))
    t = np.arange(length) / (length - 1)
    return np.sin(2.0 * math.pi * nu[:, None] * t[None, :])[:, None, :]


def sample_gaussian_batch(rng: Rng, k: int, mean: float = 0.0, std: float = 1.0, features: int = 1) -> np.ndarray:
    return rng.normal((k, features), mean, std)


def sample_piecewise_constant(rng: Rng, k: int, size: int = 16, channels: int = 1,
                              n_rects: int = 3) -> np.ndarray:
    """Random background plus axis-aligned constant rectangles, values in [0, 1]."""
    out = np.empty((k, channels, size, size))
    for i in range(k):
        img = np.broadcast_to(rng.uniform((channels, 1, 1)), (channels, size, size)).copy()
        for _ in range(n_rects):
            r0, c0 = rng.integers(0, size - 2, (2,))
            h, w = rng.integers(2, size // 2 + 1, (2,))
            img[:, r0:r0 + h, c0:c0 + w] = rng.uniform((channels, 1, 1))
        out[i] = img
    return out


# ------------------------------------------------------------------- STL-10

def iter_stl10(path: str, crop: int | None = None) -> Iterator[np.ndarray]:
    """Yield [3, S, S] float images in [0, 1] from an STL-10 binary file.

    Records are 96*96*3 bytes, channel-major and column-major within a channel.
    """
    size = os.path.getsize(path)
    if size % STL10_RECORD:
        raise DataError(f"{path}: truncated STL-10 file, {size} bytes is not a multiple of "
                        f"{STL10_RECORD} (last record starts at byte {size - size % STL10_RECORD})")
    with open(path, "rb") as f:
        offset = 0
        while True:
            buf = f.read(STL10_RECORD)
            if not buf:
                return
            if len(buf) != STL10_RECORD:
                raise DataError(f"{path}: truncated record at byte offset {offset}")
            img = np.frombuffer(buf, dtype=np.uint8).reshape(3, STL10_SIDE, STL10_SIDE)
            img = img.transpose(0, 2, 1).astype(np.float64) / 255.0
            if crop is not None:
                o = (STL10_SIDE - crop) // 2
                img = img[:, o:o + crop, o:o + crop]
            yield np.ascontiguousarray(img)
            offset += STL10_RECORD


def load_stl10(path: str, crop: int | None = None) -> np.ndarray:
    imgs = list(iter_stl10(path, crop))
    side = crop or STL10_SIDE
    return np.stack(imgs) if imgs else np.zeros((0, 3, side, side))


# ------------------------------------------------------------- noise models

@dataclass
class NoiseModel:
    """Declarative noise description.

    variant: "gaussian" (sigma, mean), "localized" (n_points, pos_std, amp_std),
    "mixed" (sigma_max plus localized fields) or "empirical" (samples).
    """

    variant: str = "gaussian"
    sigma: float = 1.0
    mean: float = 0.0
    n_points: int = 500
    pos_std: float = 5.0
    amp_std: float = 0.5
    sigma_max: float = 0.2
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in ("gaussian", "localized", "mixed", "empirical"):
            raise DataError(f"unknown noise variant {self.variant!r}")
        for name in ("sigma", "pos_std", "amp_std", "sigma_max", "n_points"):
            if getattr(self, name) < 0:
                raise DataError(f"noise model: {name} must be >= 0")
        if self.variant == "empirical" and self.samples is None:
            raise DataError("empirical noise model needs samples")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d


def _localized(model: NoiseModel, shape: tuple, rng: Rng) -> np.ndarray:
    if len(shape) != 4:
        raise DataError(f"localized noise needs [batch, channels, H, W], got shape {shape}")
    b, c, h, w = shape
    out = np.zeros(shape)
    n = model.n_points
    if n == 0:
        return out
    centers = np.stack([rng.integers(0, h, (b, c)), rng.integers(0, w, (b, c))], axis=-1)
    pos = centers[:, :, None, :] + rng.normal((b, c, n, 2), 0.0, model.pos_std)
    rows = np.clip(np.rint(pos[..., 0]), 0, h - 1).astype(np.int64)
    cols = np.clip(np.rint(pos[..., 1]), 0, w - 1).astype(np.int64)
    amps = rng.normal((b, c, n), 0.0, model.amp_std)
    bi = np.broadcast_to(np.arange(b)[:, None, None], rows.shape)
    ci = np.broadcast_to(np.arange(c)[None, :, None], rows.shape)
    np.add.at(out, (bi, ci, rows, cols), amps)
    return out


def sample_noise(model: NoiseModel, shape, rng: Rng) -> np.ndarray:
    """Draw a noise batch of ``shape`` (batch axis first)."""
    shape = tuple(shape)
    if model.variant == "gaussian":
        return rng.normal(shape, model.mean, model.sigma)
    if model.variant == "localized":
        return _localized(model, shape, rng)
    if model.variant == "mixed":
        sig = rng.uniform((shape[0],) + (1,) * (len(shape) - 1), 0.0, model.sigma_max)
        return sig * rng.normal(shape) + _localized(model, shape, rng)
    src = np.asarray(model.samples)
    if tuple(src.shape[1:]) != shape[1:]:
        raise DataError(f"empirical noise samples have shape {src.shape[1:]}, need {shape[1:]}")
    return src[rng.integers(0, len(src), (shape[0],))].copy()


def make_noisy(y: np.ndarray, eta: np.ndarray, residual_mode: str = "additive") -> np.ndarray:
    if np.shape(y) != np.shape(eta):
        raise DataError(f"make_noisy: shapes {np.shape(y)} and {np.shape(eta)} differ")
    if residual_mode == "additive":
        return y + eta
    if residual_mode == "multiplicative":
        return y * eta
    raise DataError(f"unknown residual mode {residual_mode!r}")


# ------------------------------------------------------------- data sources

@dataclass
class DataSpec:
    """Where clean signals and noise come from for one experiment.

    task: "sine" | "gaussian" | "piecewise" | "stl10".  ``measurement`` is
    "identity" or "blur" (uniform 3x3, applied to clean images before noise).
    """

    task: str = "sine"
    length: int = 128
    nu_max: float = 5.0
    mean: float = 0.0
    std: float = 1.0
    features: int = 1
    size: int = 16
    channels: int = 1
    n_rects: int = 3
    path: str = ""
    crop: int = 32
    measurement: str = "identity"
    residual_mode: str = "additive"
    noise: dict = field(default_factory=lambda: {"variant": "gaussian", "sigma": 1.0})
    peak: float | None = None

    def noise_model(self) -> NoiseModel:
        return NoiseModel(**self.noise)

    def default_peak(self) -> float:
        if self.peak is not None:
            return self.peak
        return 2.0 if self.task in ("sine", "gaussian") else 1.0


class DataSources:
    """Samplers for clean y, measurements y^delta and noise eta, driven by a caller Rng."""

    def __init__(self, spec: DataSpec):
        self.spec = spec
        self.noise_model = spec.noise_model()
        self._stl = None
        if spec.task == "stl10":
            self._stl = load_stl10(spec.path, spec.crop)
            if len(self._stl) == 0:
                raise DataError(f"{spec.path}: no STL-10 records")
        elif spec.task not in ("sine", "gaussian", "piecewise"):
            raise DataError(f"unknown task {spec.task!r}")

    @property
    def sample_shape(self) -> tuple:
        s = self.spec
        if s.task == "sine":
            return (1, s.length)
        if s.task == "gaussian":
            return (s.features,)
        if s.task == "piecewise":
            return (s.channels, s.size, s.size)
        return tuple(self._stl.shape[1:])

    def clean(self, rng: Rng, k: int) -> np.ndarray:
        s = self.spec
        if s.task == "sine":
            y = sample_sine_batch(rng, k, s.length, s.nu_max)
        elif s.task == "gaussian":
            y = sample_gaussian_batch(rng, k, s.mean, s.std, s.features)
        elif s.task == "piecewise":
            y = sample_piecewise_constant(rng, k, s.size, s.channels, s.n_rects)
        else:
            y = self._stl[rng.integers(0, len(self._stl), (k,))]
        if s.measurement == "blur":
            from .recon import blur_apply
            y = blur_apply(y)
        elif s.measurement != "identity":
            raise DataError(f"unknown measurement {s.measurement!r}")
        return y

    def noise(self, rng: Rng, k: int) -> np.ndarray:
        return sample_noise(self.noise_model, (k,) + self.sample_shape, rng)

    def noisy_pair(self, rng: Rng, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(clean y, measurement y + eta) with eta drawn independently."""
        y = self.clean(rng, k)
        return y, make_noisy(y, self.noise(rng, k), self.spec.residual_mode)

    def noisy(self, rng: Rng, k: int) -> np.ndarray:
        return self.noisy_pair(rng, k)[1]


class Prefetcher:
    """Producer threads filling a bounded queue with batches.

    Each producer owns its own substream, so batches are reproducible per
    producer but their interleaving is not; deterministic runs use
    ``threads=0`` and draw synchronously instead.
    """

    def __init__(self, make_batch: Callable[[Rng], object], seed: int, threads: int, depth: int = 8):
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._workers = []
        for i in range(threads):
            rng = Rng(seed, stream=1000 + i)
            th = threading.Thread(target=self._run, args=(make_batch, rng), daemon=True)
            th.start()
            self._workers.append(th)

    def _run(self, make_batch, rng):
        while not self._stop.is_set():
            item = make_batch(rng)
            while not self._stop.is_set():
                try:
                    self._q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def get(self):
        return self._q.get()

    def close(self):
        self._stop.set()
        for th in self._workers:
            th.join(timeout=1.0)


def producer_threads() -> int:
    """Producer thread bound from GTFD_THREADS (0 = synchronous sampling)."""
    try:
        return max(0, int(os.environ.get("GTFD_THREADS", "0")))
    except ValueError:
        return 0
