"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long-running criteria (linear-case training, the 20k-step sine run and
the TV pipeline) train real models on one CPU core; the whole module takes
roughly an hour and a half.
"""

import json
import time

import numpy as np
import pytest

from gtfd.checkpoint import load_state
from gtfd.cli import run
from gtfd.config import ExperimentConfig, build_nets
from gtfd.data import DataSources, make_noisy, sample_sine_batch
from gtfd.evaluate import psnr_per_sample
from gtfd.experiments import (LinearCaseSetup, PipelineSetup, PlainWganSetup, linear_case, plain_wgan,
                              sine_config, sine_denoising, tv_pipeline, w1_reduction)
from gtfd.oracle import convolution_identity_check, linear_argmin, linear_factors
from gtfd.recon import BlurOp, tv_reconstruct
from gtfd.rng import Rng
from gtfd.train import metrics_csv, train

from op_cases import OP_KINDS, fd_check, penalty_check

pytestmark = pytest.mark.acceptance


def test_autodiff_correctness(criterion):
    t0 = time.perf_counter()
    worst_op = 0.0
    for kind in OP_KINDS:
        for seed in range(8):
            rng = np.random.default_rng(seed)
            picker = np.random.default_rng(1000 + seed)
            errs = fd_check(kind, rng, lambda lo, hi: int(picker.integers(lo, hi + 1)))
            worst_op = max(worst_op, *errs)
    pen = [penalty_check(seed) for seed in range(20)]
    active = [e for e in pen if e is not None]
    worst_pen = max(active)
    secs = time.perf_counter() - t0
    ok = worst_op < 1e-4 and worst_pen < 1e-3 and len(active) >= 10 and secs < 60
    criterion(1, "autodiff correctness", ok,
              f"max op rel err {worst_op:.2e} over {len(OP_KINDS)} ops, penalty second-order max rel err "
              f"{worst_pen:.2e} ({len(active)} active cases), {secs:.1f}s")


def test_closed_form_linear_case(criterion):
    g1, g2, _ = linear_factors(1.0)
    a1, a2 = linear_argmin("obs1", 1.0), linear_argmin("obs2", 1.0)
    ok_a = abs(a1 - 0.70711) <= 1e-3 and abs(a2 - 0.29289) <= 1e-3
    yd = linear_case(LinearCaseSetup(term="yd"))
    eta = linear_case(LinearCaseSetup(term="eta"))
    ok_b = (abs(yd["factor"] - 0.707) <= 0.05 and abs(eta["factor"] - 0.293) <= 0.05
            and yd["seconds"] < 900 and eta["seconds"] < 900)
    grid = np.round(np.arange(0.1, 3.0001, 0.1), 10)
    ok_c = all(linear_factors(s)[1] <= 1 / (1 + s * s) <= linear_factors(s)[0] for s in grid)
    bracket = eta["factor"] <= 0.5 <= yd["factor"]
    criterion(2, "closed-form linear case", ok_a and ok_b and ok_c and bracket,
              f"argmins {a1:.3f}/{a2:.3f} vs {g1:.5f}/{g2:.5f}; trained factors {yd['factor']:.4f} "
              f"({yd['seconds']:.0f}s) and {eta['factor']:.4f} ({eta['seconds']:.0f}s); "
              f"ordering on {len(grid)} sigmas {'holds' if ok_c else 'violated'}")


def test_noisy_baseline(criterion):
    rng = Rng(2024)
    y = sample_sine_batch(rng, 1024)
    yd = make_noisy(y, rng.normal(y.shape))
    mean = float(np.mean(psnr_per_sample(y, yd, peak=2.0)))
    criterion(3, "noisy baseline PSNR", abs(mean - 6.1) <= 0.3, f"mean {mean:.3f} dB over 1024 samples")


def test_scaled_down_denoising(criterion, tmp_path):
    cfg = sine_config(steps=20000, base_channels=8, seed=0)
    res = sine_denoising(cfg, n_test=1024, metrics_path=str(tmp_path / "sine.csv"))
    rep = res["report"]
    yd0, yd1 = w1_reduction(res["records"], "w1_yd")
    eta0, eta1 = w1_reduction(res["records"], "w1_eta")
    # the estimates hover around zero late in training and can change sign, so the
    # reduction is judged on magnitudes
    ok_w1 = abs(yd1) <= 0.5 * abs(yd0) and abs(eta1) <= 0.5 * abs(eta0)
    ok_psnr = rep.mean_denoised >= 12.0 and rep.mean_denoised - rep.mean_noisy >= 5.0
    ok_time = res["seconds"] <= 4 * 3600
    detail = (f"PSNR {rep.mean_denoised:.2f} dB vs noisy {rep.mean_noisy:.2f} dB after 20000 steps "
              f"({res['seconds'] / 60:.0f} min); W1 C_yd {yd0:.4f} -> {yd1:.4f}, C_eta {eta0:.4f} -> {eta1:.4f}")
    criterion(4, "scaled-down sine denoising", ok_psnr and ok_w1 and ok_time, detail)


def test_convolution_identity(criterion):
    rng = Rng(5)
    n = 100_000
    y, eta = rng.normal((n,)), rng.normal((n,))
    yd = rng.normal((n,)) + rng.normal((n,))
    d = convolution_identity_check(y, eta, yd, bins=64)
    d_neg = convolution_identity_check(y, eta, rng.normal((n,)), bins=64)
    criterion(5, "convolution identity", d < 0.05 and d_neg > 0.1,
              f"distance {d:.4f}, negative control {d_neg:.4f}")


def test_plain_wgan(criterion):
    res = plain_wgan(PlainWganSetup(steps=5000))
    ok = res["w1"] < 0.2 and res["seconds"] < 600
    criterion(6, "plain WGAN sanity", ok,
              f"empirical W1 {res['trace'][0][1]:.3f} -> {res['w1']:.4f} in 5000 steps ({res['seconds']:.0f}s)")


def test_tv_pipeline(criterion):
    rng = np.random.default_rng(0)
    x, z = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    A = BlurOp()
    adj = abs(np.vdot(A(x), z) - np.vdot(x, A(z)))
    b = rng.normal(size=(16, 16))
    ident = float(np.max(np.abs(tv_reconstruct(b, lam=0.0, tol=1e-12) - b)))
    res = tv_pipeline(PipelineSetup())
    tv, ours = res["tv"], res["denoise_tv"]
    ok = adj < 1e-10 and ident < 1e-9 and ours["psnr"] > tv["psnr"]
    criterion(7, "TV pipeline", ok,
              f"adjoint gap {adj:.1e}; lambda=0 deviation {ident:.1e}; TV alone {tv['psnr']:.2f} dB "
              f"(lambda {tv['lambda']:.3g}), denoise+TV {ours['psnr']:.2f} dB (lambda {ours['lambda']:.3g})")


TOY = {
    "train": {"batch_size": 8, "total_batches": 200, "eval_every": 10, "eval_n": 32, "checkpoint_every": 100},
    "data": {"task": "sine", "length": 32},
    "arch": {"generator": {"kind": "ae1d", "widths": [4, 8, 8], "bottleneck": 16},
             "critic": {"kind": "resnet", "base_channels": 4, "n_blocks": 3}},
}


def test_determinism(criterion, tmp_path):
    cfg_path = tmp_path / "toy.json"
    cfg_path.write_text(json.dumps(TOY))
    codes = [run(["train", "--config", str(cfg_path), "--seed", "7", "--out", str(tmp_path / d)])
             for d in ("a", "b")]
    same_csv = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    cfg = ExperimentConfig.from_dict({**TOY, "train": {**TOY["train"], "seed": 7}})
    sources = DataSources(cfg.data)
    full = train(cfg.train, sources, build_nets(cfg, sources.sample_shape))
    ckpt = tmp_path / "half.gtfd"
    train(cfg.train, sources, build_nets(cfg, sources.sample_shape), checkpoint_path=str(ckpt), stop_at=100)
    resumed = train(cfg.train, sources, state=load_state(str(ckpt)))
    tail_full = metrics_csv([r for r in full.records if r.step > 100])
    tail_resumed = metrics_csv([r for r in resumed.records if r.step > 100])
    same_params = all(np.array_equal(full.nets.g[k].data, resumed.nets.g[k].data) for k in full.nets.g.entries)
    ok = codes == [0, 0] and same_csv and tail_full == tail_resumed and same_params
    criterion(8, "determinism", ok,
              f"CLI metrics identical: {same_csv}; resume matches next 100 steps: "
              f"{tail_full == tail_resumed and same_params}")
