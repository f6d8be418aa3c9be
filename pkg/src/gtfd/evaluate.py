"""PSNR and held-out evaluation of denoisers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

PSNR_CAP = 100.0


def psnr(reference, estimate, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 100 dB for a perfect match."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError(f"psnr: shapes {reference.shape} and {estimate.shape} differ")
    if peak <= 0:
        raise ValueError("psnr: peak must be positive")
    mse = float(np.mean((reference - estimate) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def psnr_per_sample(reference, estimate, peak: float = 1.0) -> list[float]:
    return [psnr(r, e, peak) for r, e in zip(np.asarray(reference), np.asarray(estimate))]


@dataclass
class EvalReport:
    psnr_denoised: list[float]
    psnr_noisy: list[float]
    peak: float
    mean_denoised: float = field(init=False)
    std_denoised: float = field(init=False)
    mean_noisy: float = field(init=False)
    std_noisy: float = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        self.n = len(self.psnr_denoised)
        self.mean_denoised = float(np.mean(self.psnr_denoised))
        self.std_denoised = float(np.std(self.psnr_denoised))
        self.mean_noisy = float(np.mean(self.psnr_noisy))
        self.std_noisy = float(np.std(self.psnr_noisy))

    def to_dict(self) -> dict:
        return asdict(self)


def denoise(spec, params, batch, chunk: int = 64) -> np.ndarray:
    """Run a generator without recording, in chunks."""
    from . import tensor as T
    from .nn import forward

    batch = np.asarray(batch, dtype=np.float64)
    outs = []
    with T.no_grad():
        for i in range(0, len(batch), chunk):
            outs.append(forward(spec, params, batch[i:i + chunk]).data)
    return np.concatenate(outs) if outs else batch.copy()


def evaluate(spec, params, sources, rng, n: int, peak: float | None = None,
             denoiser=None, return_samples: bool = False):
    """Draw ``n`` clean samples, corrupt them, denoise, and report PSNR.

    ``sources`` is a :class:`gtfd.data.DataSources`; ``denoiser`` overrides
    the network with any callable on numpy batches (e.g. identity).
    """
    if n < 1:
        raise ValueError("evaluate: n must be >= 1")
    peak = sources.spec.default_peak() if peak is None else peak
    y, yd = sources.noisy_pair(rng, n)
    out = denoiser(yd) if denoiser is not None else denoise(spec, params, yd)
    report = EvalReport(psnr_per_sample(y, out, peak), psnr_per_sample(y, yd, peak), peak)
    if return_samples:
        return report, (y, yd, out)
    return report
