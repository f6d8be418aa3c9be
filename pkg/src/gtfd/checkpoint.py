"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GTFD"  u32 version=1  u32 n_records
    n_records x { u32 name_len, name (UTF-8), u32 ndim, u32 dims[ndim], float32 data[prod(dims)] }
    u64 json_len, JSON blob (UTF-8, sorted keys)
    u64 n_values, float64 data[n_values]   -- exact master copies of every record, in order

The float32 table is the portable payload; the trailing float64 section
lets a resumed run continue bit-for-bit.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .optim import AdamState
from .rng import Rng
from .tensor import Tensor

MAGIC = b"GTFD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    records: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", ckpt.version, len(ckpt.records))]
    masters = []
    for name, arr in ckpt.records.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
        masters.append(arr.ravel())
    blob = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<Q", len(blob)) + blob)
    flat = np.concatenate(masters) if masters else np.zeros(0)
    out.append(struct.pack("<Q", flat.size) + flat.astype("<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a GTFD checkpoint")
    version, n = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    records, shapes = {}, []
    for _ in range(n):
        (ln,) = r.unpack("<I", "name length")
        name = r.take(ln, "name").decode("utf-8")
        (nd,) = r.unpack("<I", f"ndim of {name}")
        dims = r.unpack(f"<{nd}I", f"dims of {name}") if nd else ()
        count = int(np.prod(dims)) if nd else 1
        data = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4")
        records[name] = data.astype(np.float64).reshape(dims)
        shapes.append((name, dims, count))
    (jl,) = r.unpack("<Q", "json length")
    meta = json.loads(r.take(jl, "json blob").decode("utf-8"))
    if r.pos < len(buf):
        (nv,) = r.unpack("<Q", "float64 section length")
        flat = np.frombuffer(r.take(8 * nv, "float64 section"), dtype="<f8")
        off = 0
        for name, dims, count in shapes:
            records[name] = flat[off:off + count].astype(np.float64).reshape(dims)
            off += count
    return Checkpoint(records, meta, version)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    data = encode(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return decode(f.read())


# ------------------------------------------------------- training state glue

def _opt_meta(st: AdamState) -> dict:
    return {"alpha": st.alpha, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "step": st.step}


def state_to_checkpoint(state) -> Checkpoint:
    """Snapshot a :class:`gtfd.train.TrainState` (params, Adam moments, rng, metrics)."""
    nets = state.nets
    stores = {"g": nets.g, **nets.critics}
    specs = {"g": nets.g_spec.to_dict(), **{k: v.to_dict() for k, v in nets.critic_specs.items()}}
    records = {}
    for net, store in stores.items():
        for pname, t in store.entries.items():
            records[f"{net}/{pname}"] = t.data
    for net, st in state.opts.items():
        for pname in stores[net].entries:
            records[f"opt/{net}/m/{pname}"] = st.m[pname]
            records[f"opt/{net}/v/{pname}"] = st.v[pname]
    meta = {
        "config": state.config.to_dict(),
        "experiment": state.meta,
        "specs": specs,
        "nets": list(stores),
        "step": state.step,
        "rng": state.rng.get_state(),
        "opt": {k: _opt_meta(v) for k, v in state.opts.items()},
        "records": [r.row() for r in state.records],
        "window": state.window,
        "param_seed": {k: v.rng_seed for k, v in stores.items()},
    }
    return Checkpoint(records, meta)


def checkpoint_to_state(ckpt: Checkpoint):
    from .train import CSV_HEADER, MetricsRecord, Nets, TrainConfig, TrainState

    meta = ckpt.meta
    specs = {k: nn.NetworkSpec.from_dict(v) for k, v in meta["specs"].items()}
    stores = {}
    for net in meta["nets"]:
        names = nn.param_shapes(specs[net])
        entries = {p: Tensor(ckpt.records[f"{net}/{p}"].copy()) for p in names}
        stores[net] = nn.ParamStore(entries, meta["param_seed"][net])
    nets = Nets(specs["g"], stores["g"],
                {k: specs[k] for k in meta["nets"] if k != "g"},
                {k: stores[k] for k in meta["nets"] if k != "g"})
    opts = {}
    for net in meta["nets"]:
        if net not in meta["opt"]:
            continue
        om = meta["opt"][net]
        st = AdamState(om["alpha"], om["beta1"], om["beta2"], om["eps"], om["step"])
        for p in stores[net].entries:
            st.m[p] = ckpt.records[f"opt/{net}/m/{p}"].copy()
            st.v[p] = ckpt.records[f"opt/{net}/v/{p}"].copy()
        opts[net] = st
    records = []
    for row in meta["records"]:
        records.append(MetricsRecord(int(row[0]), **{k: (float(v) if v != "" else None)
                                                      for k, v in zip(CSV_HEADER[1:], row[1:])}))
    state = TrainState(TrainConfig.from_dict(meta["config"]), nets, opts, Rng.from_state(meta["rng"]),
                       meta["step"], records, {k: list(v) for k, v in meta["window"].items()})
    state.meta = meta.get("experiment", {})
    return state


def save_state(path: str, state) -> None:
    save_checkpoint(path, state_to_checkpoint(state))


def load_state(path: str):
    return checkpoint_to_state(load_checkpoint(path))
