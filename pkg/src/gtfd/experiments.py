"""Reproducible experiment recipes shared by the scripts and the acceptance suite.

Each recipe takes a small dataclass of knobs, runs to completion and returns
a plain dict of results so callers can print, log or assert on it.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ExperimentConfig, build_nets
from .data import DataSources, NoiseModel, sample_noise, sample_piecewise_constant
from .evaluate import denoise, evaluate, psnr
from .oracle import linear_factors, w1_empirical
from .recon import BlurOp, blur_apply, lambda_line_search, tv_reconstruct
from .rng import Rng
from .train import train


# ------------------------------------------------------------- linear case

@dataclass
class LinearCaseSetup:
    """Scalar denoiser G(y) = a*y on y ~ N(0,1), eta ~ N(0, sigma^2) with one critic term."""

    term: str = "yd"
    sigma: float = 1.0
    init: float = 0.5
    batch_size: int = 256
    n_critic: int = 5
    steps: int = 3000
    lr_critic: float = 1e-3
    lr_generator: float = 5e-4
    critic_hidden: tuple = (32, 32)
    seed: int = 0


def linear_case(setup: LinearCaseSetup, on_record=None) -> dict:
    s = setup
    hyper_c = [s.lr_critic, 0.5, 0.9]
    cfg = ExperimentConfig.from_dict({
        "train": {"terms": [s.term], "batch_size": s.batch_size, "n_critic": s.n_critic,
                  "total_batches": s.steps, "eval_every": max(1, s.steps // 10), "eval_n": 0, "seed": s.seed,
                  "adam_g": [s.lr_generator, 0.5, 0.9], "adam_c_yd": hyper_c, "adam_c_eta": hyper_c},
        "data": {"task": "gaussian", "features": 1, "noise": {"variant": "gaussian", "sigma": s.sigma}},
        "arch": {"generator": {"kind": "linear", "init": s.init},
                 "critic": {"kind": "mlp", "hidden": list(s.critic_hidden)}},
    })
    sources = DataSources(cfg.data)
    nets = build_nets(cfg, sources.sample_shape)
    trace = []

    def record(rec):
        trace.append((rec.step, float(nets.g["lin.w"].data.item())))
        if on_record:
            on_record(rec, trace[-1][1])

    t0 = time.perf_counter()
    train(cfg.train, sources, nets, on_record=record)
    g1, g2, m = linear_factors(s.sigma)
    return {"setup": asdict(s), "factor": trace[-1][1], "trace": trace,
            "target": g1 if s.term == "yd" else g2, "g1": g1, "g2": g2, "map": m,
            "seconds": time.perf_counter() - t0}


# --------------------------------------------------------------- plain WGAN

@dataclass
class PlainWganSetup:
    """Push N(0,1) latents onto N(target_mean, 1) with a two-layer generator."""

    target_mean: float = 3.0
    batch_size: int = 128
    n_critic: int = 5
    steps: int = 5000
    lr: float = 1e-3
    generator_hidden: tuple = (16,)
    critic_hidden: tuple = (32, 32)
    eval_samples: int = 10000
    seed: int = 0


def plain_wgan(setup: PlainWganSetup, on_record=None) -> dict:
    s = setup
    hyper = [s.lr, 0.5, 0.9]
    cfg = ExperimentConfig.from_dict({
        "train": {"mode": "plain_wgan", "batch_size": s.batch_size, "n_critic": s.n_critic,
                  "total_batches": s.steps, "eval_every": max(1, s.steps // 10), "seed": s.seed,
                  "adam_g": hyper, "adam_c_yd": hyper},
        "data": {"task": "gaussian", "mean": s.target_mean, "features": 1},
        "arch": {"generator": {"kind": "mlp", "hidden": list(s.generator_hidden)},
                 "critic": {"kind": "mlp", "hidden": list(s.critic_hidden)}},
    })
    sources = DataSources(cfg.data)
    nets = build_nets(cfg, sources.sample_shape)
    latent = sources.noise(Rng(s.seed, stream=7), s.eval_samples)
    target = sources.clean(Rng(s.seed, stream=8), s.eval_samples)

    def w1_now():
        return w1_empirical(denoise(nets.g_spec, nets.g, latent), target)

    trace = [(0, w1_now())]

    def record(rec):
        trace.append((rec.step, w1_now()))
        if on_record:
            on_record(rec, trace[-1][1])

    t0 = time.perf_counter()
    train(cfg.train, sources, nets, on_record=record)
    return {"setup": asdict(s), "w1": trace[-1][1], "trace": trace, "seconds": time.perf_counter() - t0}


# ----------------------------------------------------------------- sine task

def sine_config(steps: int = 20000, base_channels: int = 8, seed: int = 0, eval_every: int = 100,
                eval_n: int = 512) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "train": {"total_batches": steps, "eval_every": eval_every, "eval_n": eval_n, "seed": seed},
        "data": {"task": "sine"},
        "arch": {"generator": {"kind": "ae1d"}, "critic": {"kind": "resnet", "base_channels": base_channels}},
    })


def sine_denoising(cfg: ExperimentConfig, n_test: int = 1024, metrics_path=None, checkpoint_path=None,
                   on_record=None) -> dict:
    """Train on the sine task and evaluate on a fresh test draw."""
    sources = DataSources(cfg.data)
    nets = build_nets(cfg, sources.sample_shape)
    t0 = time.perf_counter()
    state = train(cfg.train, sources, nets, metrics_path=metrics_path, checkpoint_path=checkpoint_path,
                  on_record=on_record)
    report = evaluate(nets.g_spec, nets.g, sources, Rng(cfg.train.seed, stream=2), n_test)
    return {"report": report, "records": state.records, "seconds": time.perf_counter() - t0}


def w1_reduction(records, key: str, at: int = 500) -> tuple[float, float]:
    """(estimate at step ``at``, final estimate) for one critic's logged W1."""
    by_step = {r.step: getattr(r, key) for r in records}
    return by_step[at], getattr(records[-1], key)


# -------------------------------------------------------------- TV pipeline

LOCALIZED_16 = {"variant": "localized", "n_points": 20, "pos_std": 2.0, "amp_std": 0.5}


@dataclass
class PipelineSetup:
    """Blurred 16x16 piecewise-constant images with localized noise."""

    steps: int = 3000
    lr: float = 1e-3
    unet_widths: tuple = (8, 16, 16)
    critic_base: int = 8
    critic_blocks: int = 3
    noise: dict = field(default_factory=lambda: dict(LOCALIZED_16))
    n_test: int = 16
    lam0: float = 1e-2
    factor: float = 2.0
    search_steps: int = 5
    tv_iters: int = 400
    seed: int = 0


def pipeline_config(s: PipelineSetup) -> ExperimentConfig:
    hyper = [s.lr, 0.5, 0.9]
    return ExperimentConfig.from_dict({
        "train": {"batch_size": 8, "total_batches": s.steps, "eval_every": max(1, s.steps // 10),
                  "eval_n": 64, "seed": s.seed, "adam_g": hyper, "adam_c_yd": hyper, "adam_c_eta": hyper},
        "data": {"task": "piecewise", "size": 16, "measurement": "blur", "noise": dict(s.noise)},
        "arch": {"generator": {"kind": "unet", "widths": list(s.unet_widths)},
                 "critic": {"kind": "resnet", "base_channels": s.critic_base, "n_blocks": s.critic_blocks}},
    })


def tv_pipeline(s: PipelineSetup, nets=None, on_record=None) -> dict:
    """Train G on measurements, then compare TV(G(y)) and TV(y) at their own best lambda."""
    cfg = pipeline_config(s)
    t0 = time.perf_counter()
    if nets is None:
        sources = DataSources(cfg.data)
        nets = build_nets(cfg, sources.sample_shape)
        train(cfg.train, sources, nets, on_record=on_record)
    rng = Rng(s.seed, stream=5)
    x = sample_piecewise_constant(rng, s.n_test, 16)
    yd = blur_apply(x) + sample_noise(NoiseModel(**s.noise), x.shape, rng)
    den = denoise(nets.g_spec, nets.g, yd)
    A = BlurOp()
    out = {"setup": asdict(s), "psnr_measurement": psnr(x, yd), "psnr_denoised_measurement": psnr(x, den)}
    for name, b in (("tv", yd), ("denoise_tv", den)):
        lam, best, table = lambda_line_search(lambda lam: tv_reconstruct(b, A, lam, iters=s.tv_iters),
                                              s.lam0, s.factor, s.search_steps, x)
        out[name] = {"lambda": lam, "psnr": best, "table": table}
    out["seconds"] = time.perf_counter() - t0
    out["nets"] = nets
    return out
