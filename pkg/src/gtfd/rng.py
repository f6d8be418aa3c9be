"""Seeded, counter-based random streams.

Uniforms come from numpy's Philox counter generator; normals are produced by
Box-Muller on that uniform stream so the draw sequence depends only on the
(seed, stream) pair and not on the library's normal sampler.
"""

from __future__ import annotations

import math

import numpy as np

ALGORITHM = "philox4x64+boxmuller"


def _key(seed: int, stream: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), int(stream)]).generate_state(2, np.uint64)


class Rng:
    """A reproducible random stream identified by (seed, stream)."""

    algorithm = ALGORITHM

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bitgen = np.random.Philox(key=_key(self.seed, self.stream))
        self._gen = np.random.Generator(self._bitgen)
        self.draws = 0

    def substream(self, stream_id: int) -> "Rng":
        return Rng(self.seed, stream_id)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        self.draws += n
        u = self._gen.random(n)
        out = low + (high - low) * u
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        self.draws += 2 * m
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))  # 1-u in (0, 1]
        theta = 2.0 * math.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = mean + std * z
        return out.reshape(shape) if shape else out[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        u = self.uniform(shape)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    # state round-trip -----------------------------------------------------

    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "stream": self.stream,
            "draws": self.draws,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        if state.get("algorithm") != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {state.get('algorithm')!r}")
        rng = cls(state["seed"], state["stream"])
        rng._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        rng.draws = state["draws"]
        return rng
