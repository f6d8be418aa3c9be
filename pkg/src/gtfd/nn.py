"""Network descriptions, parameter stores and forward evaluation.

A :class:`NetworkSpec` is a flat list of layer descriptors interpreted by
:func:`forward`.  Residual blocks are a single composite descriptor; UNet
skip links use ``push``/``concat_skip`` descriptors that name a slot.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

LAYER_KINDS = {
    "conv", "layernorm", "relu", "leakyrelu", "resblock", "subsample2", "upsample2",
    "selfconcat", "flatten", "unflatten", "dense", "push", "concat_skip",
}


class SpecError(ValueError):
    pass


@dataclass
class Layer:
    kind: str
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class NetworkSpec:
    layers: list[Layer]
    input_shape: tuple
    role: str = "generator"

    def to_dict(self) -> dict:
        return {"role": self.role, "input_shape": list(self.input_shape),
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls([Layer(**l) for l in d["layers"]], tuple(d["input_shape"]), d.get("role", "generator"))

    def output_shape(self) -> tuple:
        return _walk_shapes(self)[-1]


@dataclass
class ParamStore:
    entries: dict[str, Tensor]
    rng_seed: int = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def tensors(self) -> list[Tensor]:
        return list(self.entries.values())

    def count(self) -> int:
        return int(sum(t.size for t in self.entries.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: Tensor(v.data.copy()) for k, v in self.entries.items()}, self.rng_seed)


# ------------------------------------------------------------------ builders

def _conv(name, cin, cout, k=3, bias=True):
    return Layer("conv", name, {"cin": cin, "cout": cout, "k": k, "bias": bias})


def build_critic(dim: int = 1, in_channels: int = 1, spatial=(128,), base_channels: int = 16,
                 n_blocks: int = 5, slope: float = T.LEAKY_SLOPE) -> NetworkSpec:
    """Convolutional ResNet critic ending in a scalar dense layer.

    A linear conv lifts the input to ``base_channels``; each ResBlock halves
    the spatial size and doubles the channels by self-concatenation.
    """
    spatial = tuple(int(s) for s in np.atleast_1d(spatial))
    if len(spatial) != dim:
        raise SpecError(f"critic: dim={dim} but spatial={spatial}")
    div = 2 ** n_blocks
    if any(s % div for s in spatial):
        raise SpecError(f"critic: spatial extents {spatial} must be divisible by 2^{n_blocks}={div}")
    layers = [_conv("lift", in_channels, base_channels)]
    c, sp = base_channels, spatial
    for i in range(n_blocks):
        layers.append(Layer("resblock", f"res{i}", {"channels": c, "k": 3, "shape": [c, *sp],
                                                     "slope": slope}))
        c, sp = 2 * c, tuple(s // 2 for s in sp)
    layers += [Layer("flatten"), Layer("dense", "out", {"fin": c * int(np.prod(sp)), "fout": 1, "bias": True})]
    return NetworkSpec(layers, (in_channels, *spatial), role="critic")


def build_generator_1d(signal_len: int = 128, widths=(16, 32, 64), bottleneck: int = 64) -> NetworkSpec:
    """Convolutional autoencoder: 3 down blocks, dense bottleneck, 3 up blocks, linear 1x1 conv."""
    if signal_len < 8 or signal_len % 8:
        raise SpecError(f"generator_1d: signal_len must be a multiple of 8 and >= 8, got {signal_len}")
    layers, c, n = [], 1, signal_len
    for i, w in enumerate(widths):
        layers += [_conv(f"enc{i}", c, w), Layer("layernorm", f"enc{i}_ln", {"shape": [w, n]}),
                   Layer("relu"), Layer("subsample2")]
        c, n = w, n // 2
    flat = c * n
    layers += [Layer("flatten"),
               Layer("dense", "bott0", {"fin": flat, "fout": bottleneck, "bias": True}), Layer("relu"),
               Layer("dense", "bott1", {"fin": bottleneck, "fout": flat, "bias": True}), Layer("relu"),
               Layer("unflatten", attrs={"shape": [c, n]})]
    for i, w in enumerate(list(reversed(widths))[1:] + [widths[0]]):
        n *= 2
        layers += [Layer("upsample2"), _conv(f"dec{i}", c, w),
                   Layer("layernorm", f"dec{i}_ln", {"shape": [w, n]}), Layer("relu")]
        c = w
    layers.append(_conv("out", c, 1, k=1))
    return NetworkSpec(layers, (1, signal_len))


def build_generator_unet(channels: int = 1, spatial=(32, 32), widths=(16, 32, 64)) -> NetworkSpec:
    """Three-level UNet with average-pool downsampling and skip concatenation."""
    spatial = tuple(int(s) for s in spatial)
    levels = len(widths)
    if any(s % 2 ** levels for s in spatial):
        raise SpecError(f"unet: spatial {spatial} must be divisible by {2 ** levels}")

    def block(prefix, cin, cout, sp):
        return [_conv(f"{prefix}a", cin, cout), Layer("layernorm", f"{prefix}a_ln", {"shape": [cout, *sp]}),
                Layer("relu"),
                _conv(f"{prefix}b", cout, cout), Layer("layernorm", f"{prefix}b_ln", {"shape": [cout, *sp]}),
                Layer("relu")]

    layers, c, sp = [], channels, spatial
    for i, w in enumerate(widths):
        layers += block(f"down{i}", c, w, sp)
        layers += [Layer("push", attrs={"slot": f"skip{i}"}), Layer("subsample2")]
        c, sp = w, tuple(s // 2 for s in sp)
    layers += block("mid", c, c, sp)
    outs = list(reversed(widths[:-1])) + [widths[0]]
    for j, i in enumerate(reversed(range(levels))):
        sp = tuple(s * 2 for s in sp)
        layers += [Layer("upsample2"), Layer("concat_skip", attrs={"slot": f"skip{i}"})]
        layers += block(f"up{i}", c + widths[i], outs[j], sp)
        c = outs[j]
    layers.append(_conv("out", c, channels, k=1))
    return NetworkSpec(layers, (channels, *spatial))


def build_mlp(in_features: int = 1, hidden=(64, 64), out_features: int = 1,
              activation: str = "leakyrelu", role: str = "critic") -> NetworkSpec:
    """Dense network on flat vectors; the last layer is linear."""
    layers, f = [], in_features
    for i, h in enumerate(hidden):
        layers += [Layer("dense", f"fc{i}", {"fin": f, "fout": h, "bias": True}), Layer(activation)]
        f = h
    layers.append(Layer("dense", "out", {"fin": f, "fout": out_features, "bias": True}))
    return NetworkSpec(layers, (in_features,), role=role)


def build_linear(features: int = 1, init: float | None = None) -> NetworkSpec:
    """Scalar-linear map G(y) = a*y (no bias), optionally with a fixed initial factor."""
    attrs = {"fin": features, "fout": features, "bias": False}
    if init is not None:
        attrs["init"] = float(init)
    return NetworkSpec([Layer("dense", "lin", attrs)], (features,))


# --------------------------------------------------------------- parameters

def _walk_shapes(spec: NetworkSpec) -> list[tuple]:
    """Shape after each layer (batch axis excluded); validates channel chaining."""
    shape = tuple(spec.input_shape)
    slots = {}
    shapes = [shape]
    for layer in spec.layers:
        a, k = layer.attrs, layer.kind
        if k not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {k!r}")
        if k == "conv":
            if shape[0] != a["cin"]:
                raise SpecError(f"{layer.name}: expects {a['cin']} channels, got {shape[0]}")
            shape = (a["cout"],) + shape[1:]
        elif k in ("layernorm", "resblock"):
            want = tuple(a["shape"])
            if want != shape:
                raise SpecError(f"{layer.name}: expects shape {want}, got {shape}")
            if k == "resblock":
                shape = (2 * shape[0],) + tuple(s // 2 for s in shape[1:])
        elif k == "subsample2":
            shape = shape[:1] + tuple(s // 2 for s in shape[1:])
        elif k == "upsample2":
            shape = shape[:1] + tuple(s * 2 for s in shape[1:])
        elif k == "selfconcat":
            shape = (2 * shape[0],) + shape[1:]
        elif k == "flatten":
            shape = (int(np.prod(shape)),)
        elif k == "unflatten":
            if int(np.prod(a["shape"])) != int(np.prod(shape)):
                raise SpecError(f"unflatten: {shape} cannot become {a['shape']}")
            shape = tuple(a["shape"])
        elif k == "dense":
            if shape != (a["fin"],):
                raise SpecError(f"{layer.name}: expects ({a['fin']},) features, got {shape}")
            shape = (a["fout"],)
        elif k == "push":
            slots[a["slot"]] = shape
        elif k == "concat_skip":
            skip = slots[a["slot"]]
            if skip[1:] != shape[1:]:
                raise SpecError(f"concat_skip {a['slot']}: spatial {skip[1:]} != {shape[1:]}")
            shape = (shape[0] + skip[0],) + shape[1:]
        shapes.append(shape)
    if spec.role == "critic" and shapes[-1] != (1,):
        raise SpecError(f"critic must end in a single scalar, ends in {shapes[-1]}")
    return shapes


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[tuple, int]]:
    """Map parameter name -> (shape, fan_in).  fan_in 0 marks non-weight params."""
    _walk_shapes(spec)
    out: dict[str, tuple[tuple, int]] = {}
    dim = len(spec.input_shape) - 1

    def add(name, shape, fan_in):
        if name in out:
            raise SpecError(f"duplicate parameter name {name!r}")
        out[name] = (tuple(shape), fan_in)

    for layer in spec.layers:
        a, n = layer.attrs, layer.name
        if layer.kind == "conv":
            k = a["k"]
            add(f"{n}.w", (a["cout"], a["cin"]) + (k,) * dim, a["cin"] * k ** dim)
            if a.get("bias", True):
                add(f"{n}.b", (a["cout"],), 0)
        elif layer.kind == "layernorm":
            add(f"{n}.g", a["shape"], -1)
            add(f"{n}.b", a["shape"], 0)
        elif layer.kind == "resblock":
            c, k = a["channels"], a["k"]
            for j in (1, 2):
                add(f"{n}.conv{j}.w", (c, c) + (k,) * dim, c * k ** dim)
                add(f"{n}.conv{j}.b", (c,), 0)
                add(f"{n}.ln{j}.g", a["shape"], -1)
                add(f"{n}.ln{j}.b", a["shape"], 0)
        elif layer.kind == "dense":
            add(f"{n}.w", (a["fin"], a["fout"]), a["fin"])
            if a.get("bias", True):
                add(f"{n}.b", (a["fout"],), 0)
    return out


def init_params(spec: NetworkSpec, seed: int, stream: int = 0x5EED) -> ParamStore:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, unit layernorm gains."""
    rng = Rng(seed, stream=stream)
    entries = {}
    fixed = {f"{l.name}.w": l.attrs["init"] for l in spec.layers
             if l.kind == "dense" and "init" in l.attrs}
    for name, (shape, fan_in) in param_shapes(spec).items():
        if name in fixed:
            data = np.full(shape, fixed[name])
        elif fan_in > 0:
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(shape, -bound, bound)
        elif fan_in < 0:
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        entries[name] = Tensor(data)
    return ParamStore(entries, seed)


# ------------------------------------------------------------------ forward

def _resblock(x, p, n, slope):
    h = T.conv(x, p[f"{n}.conv1.w"], p[f"{n}.conv1.b"])
    h = T.leakyrelu(T.layernorm(h, p[f"{n}.ln1.g"], p[f"{n}.ln1.b"]), slope)
    h = T.conv(h, p[f"{n}.conv2.w"], p[f"{n}.conv2.b"])
    h = T.layernorm(h, p[f"{n}.ln2.g"], p[f"{n}.ln2.b"])
    h = T.subsample2(T.add(x, h))
    return T.channel_concat(h, h)


def forward(spec: NetworkSpec, params: ParamStore, batch, trace: list | None = None) -> Tensor:
    """Evaluate the network on ``batch`` of shape [B, *input_shape].

    Critic outputs are returned as shape [B].  When ``trace`` is a list, the
    activation after every layer is appended to it.
    """
    x = T.as_tensor(batch)
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise T.ShapeError(f"forward: batch shape {x.shape[1:]} != network input {tuple(spec.input_shape)}")
    p = params.entries
    slots = {}
    for layer in spec.layers:
        a, n, k = layer.attrs, layer.name, layer.kind
        if k == "conv":
            x = T.conv(x, p[f"{n}.w"], p.get(f"{n}.b"))
        elif k == "layernorm":
            x = T.layernorm(x, p[f"{n}.g"], p[f"{n}.b"])
        elif k == "relu":
            x = T.relu(x)
        elif k == "leakyrelu":
            x = T.leakyrelu(x, a.get("slope", T.LEAKY_SLOPE))
        elif k == "resblock":
            x = _resblock(x, p, n, a.get("slope", T.LEAKY_SLOPE))
        elif k == "subsample2":
            x = T.subsample2(x)
        elif k == "upsample2":
            x = T.upsample2(x)
        elif k == "selfconcat":
            x = T.channel_concat(x, x)
        elif k == "flatten":
            x = T.reshape(x, (x.shape[0], -1))
        elif k == "unflatten":
            x = T.reshape(x, (x.shape[0], *a["shape"]))
        elif k == "dense":
            x = T.dense(x, p[f"{n}.w"], p.get(f"{n}.b"))
        elif k == "push":
            slots[a["slot"]] = x
        elif k == "concat_skip":
            x = T.channel_concat(x, slots.pop(a["slot"]))
        else:
            raise SpecError(f"unknown layer kind {k!r}")
        if trace is not None:
            trace.append(x)
    if spec.role == "critic":
        x = T.reshape(x, (x.shape[0],))
    return x
