import struct

import numpy as np
import pytest

from gtfd.checkpoint import (MAGIC, Checkpoint, CheckpointError, decode, encode, load_checkpoint,
                             load_state, save_checkpoint, save_state)
from gtfd.config import ExperimentConfig, build_nets
from gtfd.data import DataSources
from gtfd.train import metrics_csv, train


def toy(total=40):
    cfg = ExperimentConfig.from_dict({
        "train": {"batch_size": 8, "total_batches": total, "eval_every": 10, "eval_n": 16, "seed": 4},
        "data": {"task": "gaussian", "features": 3},
        "arch": {"generator": {"kind": "mlp", "hidden": [6]}, "critic": {"kind": "mlp", "hidden": [6]}},
    })
    src = DataSources(cfg.data)
    return cfg, src, build_nets(cfg, src.sample_shape)


def test_empty_store_layout():
    raw = encode(Checkpoint({}, {"a": 1}))
    assert raw[:4] == MAGIC
    assert struct.unpack("<II", raw[4:12]) == (1, 0)
    (jl,) = struct.unpack("<Q", raw[12:20])
    assert raw[20:20 + jl] == b'{"a":1}'
    assert decode(raw).records == {} and decode(raw).meta == {"a": 1}


def test_record_layout_is_float32_table(rng):
    w = rng.normal(size=(2, 3))
    raw = encode(Checkpoint({"w": w}, {}))
    assert struct.unpack("<I", raw[12:16]) == (1,)
    assert raw[16:17] == b"w"
    assert struct.unpack("<III", raw[17:29]) == (2, 2, 3)
    assert np.array_equal(np.frombuffer(raw[29:29 + 24], "<f4"), w.astype(np.float32).ravel())


def test_float32_table_round_trip(rng, tmp_path):
    w = rng.normal(size=(4, 5))
    raw = encode(Checkpoint({"w": w}, {}))
    # without the trailing exact section, values come back at 32-bit precision
    end = raw.rindex(struct.pack("<Q", w.size))
    table_only = decode(raw[:end]).records["w"]
    assert np.array_equal(table_only, w.astype(np.float32).astype(np.float64))
    path = tmp_path / "c.gtfd"
    save_checkpoint(str(path), Checkpoint({"w": w}, {"k": [1, 2]}))
    back = load_checkpoint(str(path))
    assert np.array_equal(back.records["w"], w) and back.meta == {"k": [1, 2]}


def test_bad_magic_version_and_truncation(rng):
    raw = encode(Checkpoint({"w": rng.normal(size=10)}, {"x": 1}))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(CheckpointError, match="data of w at offset 25"):
        decode(raw[:40])


def test_save_load_save_byte_identical(tmp_path):
    cfg, src, nets = toy(20)
    st = train(cfg.train, src, nets)
    a, b = tmp_path / "a.gtfd", tmp_path / "b.gtfd"
    save_state(str(a), st)
    save_state(str(b), load_state(str(a)))
    assert a.read_bytes() == b.read_bytes()


def test_config_snapshot_survives(tmp_path):
    cfg, src, nets = toy(10)
    st = train(cfg.train, src, nets)
    path = tmp_path / "c.gtfd"
    save_state(str(path), st)
    assert load_state(str(path)).config == cfg.train


def test_resume_matches_uninterrupted(tmp_path):
    cfg, src, nets = toy(40)
    full = train(cfg.train, src, nets)
    cfg, src, nets = toy(40)
    path = tmp_path / "half.gtfd"
    train(cfg.train, src, nets, checkpoint_path=str(path), stop_at=20)
    resumed = train(cfg.train, src, state=load_state(str(path)))
    assert metrics_csv(resumed.records) == metrics_csv(full.records)
    for k in full.nets.g.entries:
        assert np.array_equal(full.nets.g[k].data, resumed.nets.g[k].data)
