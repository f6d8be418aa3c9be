"""Independent ground truth: exact 1D Wasserstein-1, the linear-Gaussian
denoiser factors, brute-force argmins and a histogram convolution check.

Nothing here touches the autodiff engine; these functions are the yardstick
the training code is measured against.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import ndtri


def w1_empirical(a, b) -> float:
    """Exact W1 between two equal-size empirical measures on the line."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValueError(f"w1_empirical needs equal sample counts, got {a.size} and {b.size}")
    if a.size == 0:
        raise ValueError("w1_empirical: empty samples")
    return float(np.mean(np.abs(a - b)))


def w1_gaussian(m1: float, s1: float, m2: float, s2: float, tol: float = 1e-8) -> float:
    """W1(N(m1, s1^2), N(m2, s2^2)) as the integral of |F1^-1 - F2^-1| over (0, 1)."""
    if s1 < 0 or s2 < 0:
        raise ValueError("standard deviations must be non-negative")
    dm, ds = m1 - m2, s1 - s2
    if ds == 0:
        return abs(dm)

    def integrand(t):
        return abs(dm + ds * ndtri(t))

    # the integrand has a kink where the quantile difference changes sign
    z0 = -dm / ds
    t0 = 0.5 * math.erfc(-z0 / math.sqrt(2.0))
    pieces = [0.0] + ([t0] if 0.0 < t0 < 1.0 else []) + [1.0]
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=0.0, limit=200)
        total += val
    return total


def linear_factors(sigma: float) -> tuple[float, float, float]:
    """Scalar factors of the two single-observation linear denoisers and the MAP one.

    Returns (g1, g2, map): g1 = 1/sqrt(1+s^2) from the renoising constraint,
    g2 = 1 - s/sqrt(1+s^2) from the residual constraint, map = 1/(1+s^2).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    r = math.sqrt(1.0 + sigma * sigma)
    return 1.0 / r, 1.0 - sigma / r, 1.0 / (1.0 + sigma * sigma)


def _objective_w1(objective: str, a: float, sigma: float) -> float:
    v = 1.0 + sigma * sigma
    if objective == "obs1":
        return w1_gaussian(0.0, math.sqrt(a * a * v + sigma * sigma), 0.0, math.sqrt(v))
    if objective == "obs2":
        return w1_gaussian(0.0, abs(1.0 - a) * math.sqrt(v), 0.0, sigma)
    raise ValueError(f"unknown objective {objective!r}")


def linear_argmin(objective: str, sigma: float, grid=(1e-3, 1.5, 1e-3)) -> float:
    """Grid-search the factor a of G(y) = a*y minimising the pushforward W1.

    obs1 compares N(0, a^2(1+s^2) + s^2) with N(0, 1+s^2);
    obs2 compares N(0, (1-a)^2 (1+s^2)) with N(0, s^2).

    The obs2 loss depends on |1 - a| only, so it has a mirror root above 1.
    The search for obs2 is restricted to shrinking factors a <= 1.
    """
    lo, hi, step = grid
    if step > 1e-3:
        raise ValueError("grid step must be <= 1e-3")
    n = int(round((hi - lo) / step)) + 1
    values = lo + step * np.arange(n)
    if objective == "obs2":
        values = values[values <= 1.0 + 1e-12]
    losses = [_objective_w1(objective, float(a), sigma) for a in values]
    return float(values[int(np.argmin(losses))])


def _grid(lo: float, h: float, n: int) -> np.ndarray:
    return lo + h * np.arange(n + 1)


def convolution_identity_check(y_samples, eta_samples, yd_samples, bins: int = 64) -> float:
    """Half-L1 distance between hist(y) * hist(eta) and hist(y^delta).

    y and eta share one uniform grid of ``bins`` bins over the pooled range
    (padded by a small epsilon).  The measurement histogram uses the same
    bin width on the lattice of pairwise sums, so a sum of two bin centres
    lands exactly on a measurement bin centre.  Measurement mass outside
    that lattice counts fully as mismatch.
    """
    y = np.asarray(y_samples, dtype=np.float64).ravel()
    eta = np.asarray(eta_samples, dtype=np.float64).ravel()
    yd = np.asarray(yd_samples, dtype=np.float64).ravel()
    if min(y.size, eta.size, yd.size) == 0:
        raise ValueError("convolution_identity_check: empty samples")
    pooled = np.concatenate([y, eta, yd])
    lo, hi = float(pooled.min()), float(pooled.max())
    eps = 1e-9 * max(1.0, hi - lo)
    lo, hi = lo - eps, hi + eps
    h = (hi - lo) / bins
    edges = _grid(lo, h, bins)
    py = np.histogram(y, edges)[0] / y.size
    pe = np.histogram(eta, edges)[0] / eta.size
    conv = np.convolve(py, pe)  # 2*bins - 1 entries, centres 2*lo + (m+1)*h
    sum_edges = _grid(2 * lo + 0.5 * h, h, 2 * bins - 1)
    counts = np.histogram(yd, sum_edges)[0]
    pyd = counts / yd.size
    outside = 1.0 - counts.sum() / yd.size
    return 0.5 * (float(np.abs(conv - pyd).sum()) + outside)
