"""Dual-critic WGAN training of a denoiser from noisy samples and noise samples.

One iteration runs ``n_critic`` critic updates followed by one generator
update.  The measurement critic compares real measurements with renoised
denoiser outputs; the noise critic compares real noise with what the
denoiser removed.  Both critics carry the one-sided penalty
relu(|grad C| - 1)^2 on random interpolates.

``plain_wgan`` and ``supervised_l2`` reuse the same loop as references.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .data import DataSources, Prefetcher, producer_threads
from .evaluate import denoise, psnr_per_sample
from .optim import DEFAULT_ADAM, AdamState, adam_step
from .rng import Rng
from .tensor import Tensor

log = logging.getLogger(__name__)

MODES = ("dual_critic", "plain_wgan", "supervised_l2")
RESIDUAL_MODES = ("additive", "multiplicative")
CSV_HEADER = ["step", "loss_c_yd", "loss_c_eta", "loss_g", "gp_yd", "gp_eta", "w1_yd", "w1_eta", "psnr"]


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    lam: float = 10.0
    adam_g: tuple = DEFAULT_ADAM
    adam_c_yd: tuple = DEFAULT_ADAM
    adam_c_eta: tuple = DEFAULT_ADAM
    total_batches: int = 1000
    n_critic: int = 1
    mode: str = "dual_critic"
    residual_mode: str = "additive"
    terms: tuple = ("yd", "eta")
    seed: int = 0
    eval_every: int = 100
    eval_n: int = 256
    checkpoint_every: int = 0
    clamp_min: float = 1e-3

    def __post_init__(self):
        for name in ("adam_g", "adam_c_yd", "adam_c_eta", "terms"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.clamp_min <= 0:
            raise ValueError("clamp_min must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if not self.terms or any(t not in ("yd", "eta") for t in self.terms):
            raise ValueError(f"terms must be a non-empty subset of ('yd', 'eta'), got {self.terms}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def active_terms(self) -> tuple:
        return self.terms if self.mode == "dual_critic" else ("yd",) if self.mode == "plain_wgan" else ()


@dataclass
class MetricsRecord:
    step: int
    loss_c_yd: float | None = None
    loss_c_eta: float | None = None
    loss_g: float | None = None
    gp_yd: float | None = None
    gp_eta: float | None = None
    w1_yd: float | None = None
    w1_eta: float | None = None
    psnr: float | None = None

    def row(self) -> list[str]:
        return [str(self.step)] + ["" if (v := getattr(self, k)) is None else repr(float(v))
                                   for k in CSV_HEADER[1:]]


def metrics_csv(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_metrics_csv(path: str) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(MetricsRecord(int(row["step"]), **{
                k: (float(row[k]) if row[k] != "" else None) for k in CSV_HEADER[1:]}))
    return out


# ------------------------------------------------------------ network state

@dataclass
class Nets:
    g_spec: nn.NetworkSpec
    g: nn.ParamStore
    critic_specs: dict[str, nn.NetworkSpec] = field(default_factory=dict)
    critics: dict[str, nn.ParamStore] = field(default_factory=dict)


@dataclass
class TrainState:
    config: TrainConfig
    nets: Nets
    opts: dict[str, AdamState]
    rng: Rng
    step: int = 0
    records: list[MetricsRecord] = field(default_factory=list)
    window: dict[str, list] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def init_state(config: TrainConfig, nets: Nets) -> TrainState:
    opts = {"g": AdamState.for_params(nets.g, config.adam_g)}
    hyper = {"yd": config.adam_c_yd, "eta": config.adam_c_eta}
    for name, params in nets.critics.items():
        opts[name] = AdamState.for_params(params, hyper[name])
    return TrainState(config, nets, opts, Rng(config.seed, stream=0))


# ---------------------------------------------------------------- loss terms

def renoise(yhat, eta, residual_mode: str = "additive"):
    """Fresh noise applied to a denoised estimate (additive or pointwise product)."""
    if residual_mode == "additive":
        return T.add(yhat, eta)
    return T.mul(yhat, eta)


def residual(yd, yhat, residual_mode: str = "additive", clamp_min: float = 1e-3) -> Tensor:
    """What the denoiser removed: yd - yhat, or yd / yhat with |yhat| clamped below."""
    if residual_mode == "additive":
        return T.sub(yd, yhat)
    if residual_mode == "multiplicative":
        return T.div(yd, T.clamp_abs_min(yhat, clamp_min))
    raise ValueError(f"unknown residual mode {residual_mode!r}")


def _per_sample(eps: np.ndarray, ndim: int) -> np.ndarray:
    return np.asarray(eps, dtype=np.float64).reshape((-1,) + (1,) * (ndim - 1))


def gradient_penalty(spec: nn.NetworkSpec, params: nn.ParamStore, real, fake,
                     rng: Rng | None = None, eps=None) -> Tensor:
    """Batch mean of relu(|grad_x C(x)|_2 - 1)^2 at x = eps*real + (1-eps)*fake.

    One eps ~ U[0,1] per sample.  Inside an active tape on which the critic
    parameters are watched, the result is differentiable with respect to them.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real, dtype=np.float64)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise T.ShapeError(f"gradient_penalty: real {real.shape} and fake {fake.shape} differ")
    if eps is None:
        eps = rng.uniform((real.shape[0],))
    e = _per_sample(eps, real.ndim)
    xbar = Tensor(e * real + (1.0 - e) * fake)
    tape = T.active_tape()
    if tape is None:
        with T.Tape() as local:
            local.watch(xbar)
            return _penalty(spec, params, xbar).detach()
    tape.watch(xbar)
    return _penalty(spec, params, xbar)


def _penalty(spec, params, xbar):
    c = nn.forward(spec, params, xbar)
    (gx,) = T.backward(T.sum(c), [xbar], create_graph=True)
    return T.mean(T.square(T.relu(T.sub(T.l2norm(gx), 1.0))))


def critic_loss(spec, params, real, fake, eps, lam: float):
    """(total loss, penalty, W1 estimate) for one critic; call inside a tape."""
    k = real.shape[0]
    c = nn.forward(spec, params, np.concatenate([real, fake]))
    wass = T.sub(T.mean(T.slice_axis(c, 0, k, 2 * k)), T.mean(T.slice_axis(c, 0, 0, k)))
    gp = gradient_penalty(spec, params, real, fake, eps=eps)
    loss = T.add(wass, T.scale(gp, lam)) if lam else wass
    return loss, gp, -wass.item()


def _check_finite(step: int, what: str, values: dict):
    if not all(np.isfinite(v) for v in values.values() if v is not None):
        raise NonFiniteLossError(f"step {step}: non-finite {what} loss; components {values}")


def critic_batches(nets: Nets, config: TrainConfig, yd: np.ndarray, eta0: np.ndarray):
    """(real, fake) arrays for each active critic; the generator runs untracked."""
    pairs = {}
    with T.no_grad():
        if config.mode == "plain_wgan":
            # yd holds target samples, eta0 the latent input
            pairs["yd"] = (yd, nn.forward(nets.g_spec, nets.g, eta0).data)
            return pairs
        yhat = nn.forward(nets.g_spec, nets.g, yd).data
    if "yd" in config.terms:
        pairs["yd"] = (yd, renoise(Tensor(yhat), Tensor(eta0), config.residual_mode).data)
    if "eta" in config.terms:
        pairs["eta"] = (eta0, residual(Tensor(yd), Tensor(yhat), config.residual_mode, config.clamp_min).data)
    return pairs


def critic_step(state: TrainState, yd: np.ndarray, eta0: np.ndarray, eps: np.ndarray) -> dict:
    """One Adam step for every active critic.  Returns the logged scalars."""
    cfg, nets = state.config, state.nets
    out = {}
    for name, (real, fake) in critic_batches(nets, cfg, yd, eta0).items():
        spec, params = nets.critic_specs[name], nets.critics[name]
        with T.Tape() as tape:
            tape.watch(*params.tensors())
            loss, gp, w1 = critic_loss(spec, params, real, fake, eps, cfg.lam)
            grads = T.backward(loss, params.tensors())
        vals = {f"loss_c_{name}": loss.item(), f"gp_{name}": gp.item(), f"w1_{name}": w1}
        _check_finite(state.step, f"critic {name}", vals)
        adam_step(params, dict(zip(params.entries, grads)), state.opts[name])
        out.update(vals)
    return out


def generator_loss(nets: Nets, config: TrainConfig, y1: np.ndarray, eta1: np.ndarray,
                   y_clean: np.ndarray | None = None) -> Tensor:
    """Batch-mean generator loss; call inside a tape with generator params watched.

    dual_critic: -C_yd(G(y1) + eta1) - C_eta(y1 - G(y1));
    plain_wgan: -C(G(eta1)); supervised_l2: |G(y1) - y|^2 per sample.
    """
    if config.mode == "plain_wgan":
        fake = nn.forward(nets.g_spec, nets.g, eta1)
        return T.neg(T.mean(nn.forward(nets.critic_specs["yd"], nets.critics["yd"], fake)))
    yhat = nn.forward(nets.g_spec, nets.g, y1)
    if config.mode == "supervised_l2":
        if y_clean is None:
            raise ValueError("supervised_l2 needs clean targets")
        d = T.sub(yhat, y_clean)
        return T.mean(T.sum(T.square(d), axis=tuple(range(1, d.ndim))))
    terms = []
    if "yd" in config.terms:
        c = nn.forward(nets.critic_specs["yd"], nets.critics["yd"], renoise(yhat, eta1, config.residual_mode))
        terms.append(T.mean(c))
    if "eta" in config.terms:
        r = residual(y1, yhat, config.residual_mode, config.clamp_min)
        terms.append(T.mean(nn.forward(nets.critic_specs["eta"], nets.critics["eta"], r)))
    total = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
    return T.neg(total)


def generator_step(state: TrainState, y1: np.ndarray, eta1: np.ndarray, y_clean=None) -> dict:
    nets = state.nets
    params = nets.g
    with T.Tape() as tape:
        tape.watch(*params.tensors())
        loss = generator_loss(nets, state.config, y1, eta1, y_clean)
        grads = T.backward(loss, params.tensors())
    vals = {"loss_g": loss.item()}
    _check_finite(state.step, "generator", vals)
    adam_step(params, dict(zip(params.entries, grads)), state.opts["g"])
    return vals


# --------------------------------------------------------------------- loop

def draw_iteration(sources: DataSources, config: TrainConfig, rng: Rng) -> dict:
    """All random inputs for one outer iteration, in a fixed draw order."""
    k = config.batch_size
    crit = []
    if config.mode != "supervised_l2":
        for _ in range(config.n_critic):
            if config.mode == "plain_wgan":
                real, noise = sources.clean(rng, k), sources.noise(rng, k)
            else:
                real, noise = sources.noisy(rng, k), sources.noise(rng, k)
            crit.append((real, noise, rng.uniform((k,))))
    if config.mode == "supervised_l2":
        y, yd = sources.noisy_pair(rng, k)
        gen = (yd, None, y)
    elif config.mode == "plain_wgan":
        gen = (None, sources.noise(rng, k), None)
    else:
        gen = (sources.noisy(rng, k), sources.noise(rng, k), None)
    return {"critic": crit, "gen": gen}


def heldout_set(sources: DataSources, config: TrainConfig):
    if config.mode == "plain_wgan" or config.eval_n <= 0:
        return None
    return sources.noisy_pair(Rng(config.seed, stream=1), config.eval_n)


def train_iteration(state: TrainState, batch: dict) -> dict:
    vals: dict = {}
    for yd, eta0, eps in batch["critic"]:
        vals = critic_step(state, yd, eta0, eps)
    y1, eta1, y = batch["gen"]
    vals.update(generator_step(state, y1, eta1, y))
    return vals


def train(config: TrainConfig, sources: DataSources, nets: Nets | None = None,
          state: TrainState | None = None, metrics_path: str | None = None,
          checkpoint_path: str | None = None, on_record: Callable | None = None,
          stop_at: int | None = None) -> TrainState:
    """Run the training loop until ``config.total_batches`` (or ``stop_at``).

    Pass ``state`` to resume; records are windowed means over the last
    ``eval_every`` iterations, and ``psnr`` is the mean held-out PSNR.
    """
    if state is None:
        if nets is None:
            raise ValueError("train needs either nets or a state to resume")
        state = init_state(config, nets)
    end = min(config.total_batches, stop_at) if stop_at is not None else config.total_batches
    held = heldout_set(sources, config)
    peak = sources.spec.default_peak()
    threads = producer_threads()
    pre = Prefetcher(lambda r: draw_iteration(sources, config, r), config.seed, threads) if threads else None
    acc = state.window
    try:
        while state.step < end:
            batch = pre.get() if pre else draw_iteration(sources, config, state.rng)
            vals = train_iteration(state, batch)
            state.step += 1
            for k, v in vals.items():
                acc.setdefault(k, []).append(v)
            if state.step % config.eval_every == 0:
                rec = MetricsRecord(state.step, **{k: float(np.mean(v)) for k, v in acc.items()})
                if held is not None:
                    y, yd = held
                    rec.psnr = float(np.mean(psnr_per_sample(y, denoise(state.nets.g_spec, state.nets.g, yd), peak)))
                acc.clear()
                state.records.append(rec)
                log.info("step %d %s", state.step, rec)
                if on_record:
                    on_record(rec)
                if metrics_path:
                    with open(metrics_path, "w") as f:
                        f.write(metrics_csv(state.records))
            if checkpoint_path and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                from .checkpoint import save_state
                save_state(checkpoint_path, state)
    finally:
        if pre:
            pre.close()
    if metrics_path:
        with open(metrics_path, "w") as f:
            f.write(metrics_csv(state.records))
    if checkpoint_path:
        from .checkpoint import save_state
        save_state(checkpoint_path, state)
    return state
