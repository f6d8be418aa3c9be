import numpy as np
import pytest

from gtfd import nn
from gtfd import tensor as T
from gtfd.config import ExperimentConfig, build_nets
from gtfd.data import DataSources, DataSpec
from gtfd.oracle import w1_empirical
from gtfd.rng import Rng
from gtfd.tensor import Tensor
from gtfd.train import (CSV_HEADER, MetricsRecord, NonFiniteLossError, TrainConfig, critic_batches,
                        critic_step, generator_loss, generator_step, gradient_penalty, init_state,
                        metrics_csv, read_metrics_csv, residual, train)


def scalar_critic(w):
    """C(x) = w * x on scalar inputs."""
    spec = nn.NetworkSpec([nn.Layer("dense", "lin", {"fin": 1, "fout": 1, "bias": False, "init": w})],
                          (1,), role="critic")
    return spec, nn.init_params(spec, 0)


def toy_setup(mode="dual_critic", **train_kw):
    """Small vector task with dense networks, fast enough for many steps."""
    cfg = ExperimentConfig.from_dict({
        "train": {"mode": mode, "batch_size": 16, "eval_every": 10, "eval_n": 32, **train_kw},
        "data": {"task": "gaussian", "features": 4},
        "arch": {"generator": {"kind": "mlp", "hidden": [8]}, "critic": {"kind": "mlp", "hidden": [8]}},
    })
    src = DataSources(cfg.data)
    return cfg, src, build_nets(cfg, src.sample_shape)


def zero_critics(nets):
    for store in nets.critics.values():
        for t in store.tensors():
            t.data[...] = 0.0


def snapshot(store):
    return {k: v.data.copy() for k, v in store.entries.items()}


def same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


def test_residual_examples():
    assert residual(Tensor([3.0]), Tensor([1.0])).data.tolist() == [2.0]
    assert residual(Tensor([6.0]), Tensor([2.0]), "multiplicative").data.tolist() == [3.0]
    assert residual(Tensor([1.0]), Tensor([0.0]), "multiplicative", 1e-3).data[0] == pytest.approx(1000.0)
    assert residual(Tensor([1.0]), Tensor([-1e-5]), "multiplicative", 1e-3).data[0] == pytest.approx(-1000.0)


@pytest.mark.parametrize("w,expect", [(1.0, 0.0), (2.0, 1.0), (0.5, 0.0), (-3.0, 4.0)])
def test_gradient_penalty_examples(w, expect, rng):
    spec, params = scalar_critic(w)
    real, fake = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    assert gradient_penalty(spec, params, real, fake, Rng(0)).item() == pytest.approx(expect, abs=1e-12)


def test_gradient_penalty_is_differentiable_in_critic_params(rng):
    spec, params = scalar_critic(2.0)
    real, fake = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    with T.Tape() as tape:
        tape.watch(*params.tensors())
        gp = gradient_penalty(spec, params, real, fake, Rng(0))
        (g,) = T.backward(gp, params.tensors())
    # d/dw relu(|w| - 1)^2 = 2(|w| - 1) sign(w)
    assert g.data.item() == pytest.approx(2.0)


def test_zero_critics_give_zero_losses():
    cfg, src, nets = toy_setup(lam=0.0)
    zero_critics(nets)
    st = init_state(cfg.train, nets)
    k = cfg.train.batch_size
    g_before = snapshot(nets.g)
    vals = critic_step(st, src.noisy(Rng(1), k), src.noise(Rng(2), k), Rng(3).uniform((k,)))
    assert vals["loss_c_yd"] == 0 and vals["loss_c_eta"] == 0
    zero_critics(nets)
    assert generator_step(st, src.noisy(Rng(4), k), src.noise(Rng(5), k))["loss_g"] == 0
    assert same(g_before, snapshot(nets.g))


def test_first_step_finite_with_nonnegative_penalties():
    cfg = ExperimentConfig.from_dict({"data": {"task": "sine"}, "arch": {"critic": {"base_channels": 4}}})
    src = DataSources(cfg.data)
    nets = build_nets(cfg, src.sample_shape)
    st = init_state(cfg.train, nets)
    vals = critic_step(st, src.noisy(Rng(0), 8), src.noise(Rng(1), 8), Rng(2).uniform((8,)))
    vals.update(generator_step(st, src.noisy(Rng(3), 8), src.noise(Rng(4), 8)))
    assert all(np.isfinite(v) for v in vals.values())
    assert vals["gp_yd"] >= 0 and vals["gp_eta"] >= 0


def test_gradient_isolation():
    cfg, src, nets = toy_setup()
    st = init_state(cfg.train, nets)
    k = cfg.train.batch_size
    g0 = snapshot(nets.g)
    c0 = {n: snapshot(s) for n, s in nets.critics.items()}
    critic_step(st, src.noisy(Rng(1), k), src.noise(Rng(2), k), Rng(3).uniform((k,)))
    assert same(g0, snapshot(nets.g))
    assert not any(same(c0[n], snapshot(s)) for n, s in nets.critics.items())
    c1 = {n: snapshot(s) for n, s in nets.critics.items()}
    # the generator loss carries no gradient into critic parameters
    with T.Tape() as tape:
        crit = [t for s in nets.critics.values() for t in s.tensors()]
        tape.watch(*nets.g.tensors(), *crit)
        loss = generator_loss(nets, cfg.train, src.noisy(Rng(4), k), src.noise(Rng(5), k))
        grads = T.backward(loss, crit)
    assert any(np.any(g.data != 0) for g in grads)  # critic params do affect L_G ...
    generator_step(st, src.noisy(Rng(4), k), src.noise(Rng(5), k))
    assert all(same(c1[n], snapshot(s)) for n, s in nets.critics.items())  # ... but are never updated by it
    assert not same(g0, snapshot(nets.g))


def test_zero_noise_renoise_is_exact():
    cfg, src, nets = toy_setup()
    yd = src.noisy(Rng(0), 4)
    pairs = critic_batches(nets, cfg.train, yd, np.zeros_like(yd))
    yhat = nn.forward(nets.g_spec, nets.g, yd).data
    assert np.array_equal(pairs["yd"][1], yhat)
    assert np.array_equal(pairs["eta"][1], yd - yhat)


def test_plain_wgan_generator_loss():
    cfg, src, nets = toy_setup(mode="plain_wgan")
    assert list(nets.critics) == ["yd"]
    eta = src.noise(Rng(0), 6)
    loss = generator_loss(nets, cfg.train, None, eta).item()
    fake = nn.forward(nets.g_spec, nets.g, eta)
    assert loss == pytest.approx(-nn.forward(nets.critic_specs["yd"], nets.critics["yd"], fake).data.mean())


def test_supervised_l2_loss_and_requirements():
    cfg, src, nets = toy_setup(mode="supervised_l2")
    assert nets.critics == {}
    y, yd = src.noisy_pair(Rng(0), 6)
    loss = generator_loss(nets, cfg.train, yd, None, y).item()
    out = nn.forward(nets.g_spec, nets.g, yd).data
    assert loss == pytest.approx(((out - y) ** 2).sum(axis=1).mean())
    with pytest.raises(ValueError, match="clean"):
        generator_loss(nets, cfg.train, yd, None, None)


def test_non_finite_loss_aborts():
    cfg, src, nets = toy_setup()
    nets.critics["eta"]["out.b"].data[...] = np.nan
    st = init_state(cfg.train, nets)
    with pytest.raises(NonFiniteLossError, match="step 0.*critic eta"):
        critic_step(st, src.noisy(Rng(1), 4), src.noise(Rng(2), 4), Rng(3).uniform((4,)))


def test_multiplicative_mode_runs():
    cfg, src, nets = toy_setup(residual_mode="multiplicative", total_batches=5, eval_every=5)
    st = train(cfg.train, src, nets)
    assert st.step == 5 and np.isfinite(st.records[-1].loss_g)


def test_losses_bit_identical_for_100_steps():
    def run():
        cfg, src, nets = toy_setup(total_batches=100)
        return metrics_csv(train(cfg.train, src, nets).records)

    a, b = run(), run()
    assert a == b and a.count("\n") == 11


def test_metrics_csv_round_trip(tmp_path):
    cfg, src, nets = toy_setup(total_batches=20)
    path = tmp_path / "m.csv"
    st = train(cfg.train, src, nets, metrics_path=str(path))
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = read_metrics_csv(str(path))
    assert [r.row() for r in back] == [r.row() for r in st.records]
    assert all(r.gp_yd >= 0 and r.gp_eta >= 0 for r in back)
    assert MetricsRecord(3).row()[-1] == ""


def test_config_validation():
    for bad in ({"batch_size": 0}, {"lam": -1}, {"n_critic": 0}, {"clamp_min": 0}, {"mode": "gan"},
                {"terms": ["x"]}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"batchsize": 3})
    d = TrainConfig().to_dict()
    assert (d["lam"], d["batch_size"], d["adam_g"]) == (10.0, 8, [2e-4, 0.5, 0.9])
    assert TrainConfig.from_dict(d) == TrainConfig()


def test_plain_wgan_shift_toy_makes_progress():
    cfg = ExperimentConfig.from_dict({
        "train": {"mode": "plain_wgan", "batch_size": 64, "total_batches": 300, "eval_every": 300,
                  "adam_g": [1e-2, 0.5, 0.9], "adam_c_yd": [1e-2, 0.5, 0.9]},
        "data": {"task": "gaussian", "mean": 3.0, "features": 1},
        "arch": {"generator": {"kind": "mlp", "hidden": [8]}, "critic": {"kind": "mlp", "hidden": [16]}},
    })
    src = DataSources(cfg.data)
    nets = build_nets(cfg, src.sample_shape)
    z = src.noise(Rng(9), 2000)
    target = src.clean(Rng(10), 2000)
    before = w1_empirical(nn.forward(nets.g_spec, nets.g, z).data, target)
    train(cfg.train, src, nets)
    after = w1_empirical(nn.forward(nets.g_spec, nets.g, z).data, target)
    assert after < 0.5 * before
