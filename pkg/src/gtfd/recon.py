"""Uniform 3x3 blur and Huber-smoothed TV reconstruction with a lambda line search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .evaluate import psnr

TV_EPS = 1e-3


class DivergenceError(RuntimeError):
    pass


def blur_apply(x) -> np.ndarray:
    """Circular convolution of every 2D channel (last two axes) with the 1/9 box kernel."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            acc += np.roll(x, (dr, dc), axis=(-2, -1))
    return acc / 9.0


def identity(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class BlurOp:
    """The measurement operator: self-adjoint under circular boundaries."""

    def __call__(self, x):
        return blur_apply(x)

    adjoint = __call__

    norm_sq_bound = 1.0


def _grad(x):
    return np.roll(x, -1, axis=-2) - x, np.roll(x, -1, axis=-1) - x


def _grad_adjoint(gr, gc):
    return (np.roll(gr, 1, axis=-2) - gr) + (np.roll(gc, 1, axis=-1) - gc)


def huber(t, eps: float = TV_EPS):
    a = np.abs(t)
    return np.where(a <= eps, t * t / (2 * eps), a - eps / 2)


def huber_grad(t, eps: float = TV_EPS):
    return np.clip(t / eps, -1.0, 1.0)


def tv_smooth(x, eps: float = TV_EPS) -> float:
    """Anisotropic Huber TV with circular differences."""
    gr, gc = _grad(x)
    return float(huber(gr, eps).sum() + huber(gc, eps).sum())


def tv_objective(x, b, A, lam: float, eps: float = TV_EPS) -> float:
    r = A(x) - b
    return 0.5 * float((r * r).sum()) + lam * tv_smooth(x, eps)


def tv_reconstruct(b, A=None, lam: float = 0.1, iters: int = 5000, tol: float = 1e-9,
                   eps: float = TV_EPS, history: list | None = None) -> np.ndarray:
    """argmin_x 1/2 |Ax - b|^2 + lam * TV_eps(x) by gradient descent with step 1/L.

    L = 1 + 8 lam / eps bounds the gradient's Lipschitz constant for |A| <= 1.
    Starts at x = b and stops once the relative objective decrease falls
    below ``tol``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    A = A or identity
    b = np.asarray(b, dtype=np.float64)
    step = 1.0 / (1.0 + 8.0 * lam / eps)
    x = b.copy()
    f = tv_objective(x, b, A, lam, eps)
    if history is not None:
        history.append(f)
    rises = 0
    for _ in range(iters):
        g = A(A(x) - b)  # A is self-adjoint
        if lam > 0:
            gr, gc = _grad(x)
            g = g + lam * _grad_adjoint(huber_grad(gr, eps), huber_grad(gc, eps))
        x_new = x - step * g
        f_new = tv_objective(x_new, b, A, lam, eps)
        if not np.isfinite(f_new):
            raise DivergenceError("tv_reconstruct: objective became non-finite")
        if f_new > f:
            rises += 1
            if rises >= 10:
                raise DivergenceError("tv_reconstruct: objective increased 10 consecutive iterations")
        else:
            rises = 0
        decrease = f - f_new
        x, f = x_new, f_new
        if history is not None:
            history.append(f)
        if 0 <= decrease <= tol * max(abs(f), 1e-300):
            break
    return x


def lambda_grid(lam0: float, factor: float, steps: int) -> np.ndarray:
    return lam0 * float(factor) ** np.arange(-steps, steps + 1, dtype=np.float64)


def lambda_line_search(pipeline: Callable[[float], np.ndarray], lam0: float, factor: float,
                       steps: int, reference, peak: float = 1.0):
    """Exponential grid search over lambda maximising PSNR against a clean reference.

    Returns (best lambda, best PSNR, list of (lambda, PSNR) pairs).
    """
    if lam0 <= 0 or factor <= 1 or steps < 3:
        raise ValueError("need lam0 > 0, factor > 1 and steps >= 3")
    table = [(float(lam), psnr(reference, pipeline(float(lam)), peak))
             for lam in lambda_grid(lam0, factor, steps)]
    best = max(range(len(table)), key=lambda i: table[i][1])
    return table[best][0], table[best][1], table
