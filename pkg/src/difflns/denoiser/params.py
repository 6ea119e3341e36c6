"""Denoiser weights: shapes, seeded initialisation and the binary weight file.

Weight file layout (all integers little-endian)::

    8 bytes   magic b"DLNSWTS\\0"
    4 bytes   uint32 format version
    4 bytes   uint32 manifest length in bytes
    manifest  UTF-8 JSON: {"version", "config", "tensors": [{"name", "shape",
              "dtype", "offset", "nbytes"}, ...]}; offsets are relative to
              the start of the payload
    payload   concatenated little-endian IEEE-754 float64 tensors
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..grid import NUM_ACTIONS

MAGIC = b"DLNSWTS\0"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    hidden: int = 128
    cond: int = 128
    heads: int = 4
    layers: int = 4
    scales: int = 3
    points: int = 8
    window: int = 32
    stride: int = 16
    bias_hidden: int = 32
    ffn_mult: int = 4
    num_steps: int = 100
    neighbor_ratio_min: float = 0.10
    neighbor_ratio_max: float = 0.25
    entropy_radius_gain: float = 0.2

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by the head count")
        if self.scales != 3:
            raise ValueError("the map pyramid has exactly 3 scales")


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    D, Dc, C, S, P = cfg.hidden, cfg.cond, NUM_ACTIONS, cfg.scales, cfg.points
    shapes: dict[str, tuple[int, ...]] = {}

    def linear(name, fan_in, fan_out):
        shapes[f"{name}.w"] = (fan_in, fan_out)
        shapes[f"{name}.b"] = (fan_out,)

    linear("embed.action", C, D)
    linear("embed.start", 2, D)
    linear("embed.goal", 2, D)
    linear("embed.rel", 2, D)
    linear("cond.step", D, D)
    linear("cond.size", 2, D)
    linear("cond.density", 1, D)
    linear("cond.global1", 2 * D, Dc)
    linear("cond.global2", Dc, Dc)
    linear("cond.agent1", Dc + 3 * D, Dc)
    linear("cond.agent2", Dc, Dc)
    linear("cond.scale", Dc, S)
    for s in range(S):
        c_in = 3 if s == 0 else D
        shapes[f"pyr.conv{s}.w"] = (3, 3, c_in, D)
        shapes[f"pyr.conv{s}.b"] = (D,)
        linear(f"pyr.film{s}", Dc, 2 * D)
        linear(f"pyr.proj{s}", D, D)
    for layer in range(cfg.layers):
        p = f"block{layer}"
        linear(f"{p}.ada", Dc, 8 * D)
        for part in ("temporal", "social"):
            for proj in ("q", "k", "v"):
                linear(f"{p}.{part}.{proj}", D, D)
        linear(f"{p}.social.bias1", 2, cfg.bias_hidden)
        linear(f"{p}.social.bias2", cfg.bias_hidden, cfg.heads)
        linear(f"{p}.env.offset", D, 2 * P)
        linear(f"{p}.env.weight", D, S * P)
        shapes[f"{p}.env.radius"] = (1,)
        linear(f"{p}.env.out", D, D)
        linear(f"{p}.ffn1", D, cfg.ffn_mult * D)
        linear(f"{p}.ffn2", cfg.ffn_mult * D, D)
    shapes["head.ln.g"] = (D,)
    shapes["head.ln.b"] = (D,)
    linear("head.out", D, C)
    return shapes


@dataclass(frozen=True, eq=False)
class DenoiserParams:
    config: DenoiserConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def check(self) -> None:
        expected = param_shapes(self.config)
        missing = expected.keys() - self.tensors.keys()
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} contains non-finite values")

    def with_tensor(self, name: str, value: np.ndarray) -> DenoiserParams:
        tensors = dict(self.tensors)
        tensors[name] = np.asarray(value, dtype=np.float64)
        return DenoiserParams(self.config, tensors)


def init_params(seed: int, config: DenoiserConfig | None = None) -> DenoiserParams:
    """Gaussian weights scaled by ``1/sqrt(fan_in)``; small Gaussian biases."""
    config = config or DenoiserConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".radius"):
            tensors[name] = np.full(shape, 0.1)
        elif name == "head.ln.g":
            tensors[name] = np.ones(shape)
        elif len(shape) == 1:
            tensors[name] = 0.02 * rng.standard_normal(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return DenoiserParams(config, tensors)


def save_params(params: DenoiserParams, path: str | Path) -> None:
    entries, chunks, offset = [], [], 0
    for name in sorted(params.tensors):
        data = np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(params.tensors[name].shape),
                        "dtype": "<f8", "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps({"version": FORMAT_VERSION, "config": asdict(params.config),
                           "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_params(path: str | Path) -> DenoiserParams:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a denoiser weight file")
    version, mlen = struct.unpack_from("<II", raw, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    payload = memoryview(raw)[16 + mlen:]
    tensors = {}
    for entry in manifest["tensors"]:
        if entry["dtype"] != "<f8":
            raise ValueError(f"unsupported dtype {entry['dtype']} for {entry['name']}")
        chunk = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    params = DenoiserParams(DenoiserConfig(**manifest["config"]), tensors)
    params.check()
    return params
