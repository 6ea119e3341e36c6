"""Forward pass of the MAPF-conditioned clean-action predictor (numpy, float64).

Token tensors are ``(N, T, D)``. Normalised positions are ``(row, col)``
pairs in ``[-1, 1]``; cell ``(r, c)`` maps to ``(2r/(H-1) - 1, 2c/(W-1) - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..grid import DELTA_ARRAY, NUM_ACTIONS, Instance
from ..instances import density_feature
from .params import DenoiserConfig, DenoiserParams

LN_EPS = 1e-5


# --------------------------------------------------------------------------
# small building blocks


def linear(params: DenoiserParams, name: str, x: np.ndarray) -> np.ndarray:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def silu(x):
    return x / (1.0 + np.exp(-x))


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def sinusoidal_embedding(k: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = k * freqs
    out = np.zeros(dim)
    out[:half] = np.sin(ang)
    out[half:2 * half] = np.cos(ang)
    return out


# --------------------------------------------------------------------------
# condition


@dataclass(frozen=True, eq=False)
class Condition:
    """Network-facing view of an instance. Unlike :class:`Instance` it does
    not require distinct starts/goals."""

    obstacles: np.ndarray          # (H, W) bool
    starts: np.ndarray             # (N, 2) grid cells
    goals: np.ndarray              # (N, 2) grid cells
    density: float

    @classmethod
    def from_instance(cls, instance: Instance) -> Condition:
        return cls(instance.map.cells, np.array(instance.starts, dtype=np.int64).reshape(-1, 2),
                   np.array(instance.goals, dtype=np.int64).reshape(-1, 2),
                   density_feature(instance))

    @property
    def height(self) -> int:
        return self.obstacles.shape[0]

    @property
    def width(self) -> int:
        return self.obstacles.shape[1]

    @property
    def num_agents(self) -> int:
        return len(self.starts)

    @property
    def cell_scale(self) -> np.ndarray:
        """Normalised length of one cell step along (row, col)."""
        return np.array([2.0 / max(self.height - 1, 1), 2.0 / max(self.width - 1, 1)])

    def normalize(self, cells: np.ndarray) -> np.ndarray:
        return np.asarray(cells, dtype=np.float64) * self.cell_scale - 1.0

    @property
    def starts_norm(self) -> np.ndarray:
        return self.normalize(self.starts)

    @property
    def goals_norm(self) -> np.ndarray:
        return self.normalize(self.goals)

    @property
    def map_size(self) -> np.ndarray:
        return np.array([self.width, self.height], dtype=np.float64)

    def raster(self) -> np.ndarray:
        """(H, W, 3) channels: obstacle, free, goal."""
        out = np.zeros(self.obstacles.shape + (3,))
        out[..., 0] = self.obstacles
        out[..., 1] = ~self.obstacles
        if len(self.goals):
            out[self.goals[:, 0], self.goals[:, 1], 2] = 1.0
        return out

    def permuted(self, perm) -> Condition:
        perm = np.asarray(perm)
        return Condition(self.obstacles, self.starts[perm], self.goals[perm], self.density)


def as_condition(source: Instance | Condition) -> Condition:
    return source if isinstance(source, Condition) else Condition.from_instance(source)


@dataclass(frozen=True, eq=False)
class ConditionEncoding:
    global_cond: np.ndarray        # (Dc,)
    agent_cond: np.ndarray         # (N, Dc)
    scale_gate: np.ndarray         # (S,)
    start_emb: np.ndarray          # (N, D)
    goal_emb: np.ndarray           # (N, D)
    rel_emb: np.ndarray            # (N, D)


def encode_condition(cond: Condition, k: int, params: DenoiserParams) -> ConditionEncoding:
    D = params.config.hidden
    step = linear(params, "cond.step", sinusoidal_embedding(k, D))
    scene = (linear(params, "cond.size", np.log(cond.map_size))
             + linear(params, "cond.density", np.array([cond.density])))
    g = linear(params, "cond.global2", silu(linear(params, "cond.global1", np.concatenate([step, scene]))))
    s, gl = cond.starts_norm, cond.goals_norm
    start_emb = linear(params, "embed.start", s)
    goal_emb = linear(params, "embed.goal", gl)
    rel_emb = linear(params, "embed.rel", gl - s)
    n = cond.num_agents
    agent_in = np.concatenate([np.broadcast_to(g, (n, g.shape[0])), start_emb, goal_emb, rel_emb], axis=1)
    agent = linear(params, "cond.agent2", silu(linear(params, "cond.agent1", agent_in)))
    gate = softmax(linear(params, "cond.scale", g))
    return ConditionEncoding(g, agent, gate, start_emb, goal_emb, rel_emb)


# --------------------------------------------------------------------------
# trajectory-derived quantities


def inferred_trajectory(x_k: np.ndarray, cond: Condition) -> np.ndarray:
    """(N, T, 2) normalised positions after each of the T expected moves."""
    disp = np.asarray(x_k) @ DELTA_ARRAY * cond.cell_scale
    return cond.starts_norm[:, None, :] + np.cumsum(disp, axis=1)


def action_entropy(x_k: np.ndarray) -> np.ndarray:
    """Entropy of each row divided by ``log C`` (``0 log 0 = 0``)."""
    p = np.asarray(x_k, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1) / math.log(NUM_ACTIONS)


def neighbor_count(k: int, num_steps: int, n: int, cfg: DenoiserConfig | None = None) -> int:
    """Non-self neighbours kept at step ``k``; the ratio grows with noise."""
    cfg = cfg or DenoiserConfig()
    if n <= 1:
        return 0
    ratio = cfg.neighbor_ratio_min + (cfg.neighbor_ratio_max - cfg.neighbor_ratio_min) * k / num_steps
    return int(min(max(math.floor(ratio * n + 0.5), 1), n - 1))


def trajectory_distances(p_inf: np.ndarray) -> np.ndarray:
    """``d[i, j] = min_t |p_i(t) - p_j(t)|_1``."""
    diff = np.abs(p_inf[:, None, :, :] - p_inf[None, :, :, :]).sum(axis=-1)
    return diff.min(axis=-1)


def build_social_graph(p_inf: np.ndarray, k: int, num_steps: int,
                       cfg: DenoiserConfig | None = None) -> np.ndarray:
    """(N, M+1) neighbour indices: self first, then the M nearest agents
    (ties go to the lower index)."""
    n = p_inf.shape[0]
    m = neighbor_count(k, num_steps, n, cfg)
    if m == 0:
        return np.arange(n)[:, None]
    d = trajectory_distances(p_inf)
    np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :m]
    return np.concatenate([np.arange(n)[:, None], nearest], axis=1)


# --------------------------------------------------------------------------
# attention


def _heads(x: np.ndarray, heads: int) -> np.ndarray:
    return x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads))


def geometric_bias(params: DenoiserParams, prefix: str, rel: np.ndarray) -> np.ndarray:
    """Per-head scalar bias from a relative position (..., 2) -> (..., heads)."""
    return linear(params, f"{prefix}.bias2", silu(linear(params, f"{prefix}.bias1", rel)))


def sparse_social_attention(tokens: np.ndarray, p_inf: np.ndarray, neighbors: np.ndarray,
                            params: DenoiserParams, prefix: str) -> np.ndarray:
    """Per-timestep attention of agent i over ``neighbors[i]`` (-1 = padding)."""
    heads = params.config.heads
    n, t, D = tokens.shape
    d = D // heads
    q = _heads(linear(params, f"{prefix}.q", tokens), heads)
    k = _heads(linear(params, f"{prefix}.k", tokens), heads)
    v = _heads(linear(params, f"{prefix}.v", tokens), heads)
    slots = neighbors.shape[1]
    logits = np.full((n, t, heads, slots), -np.inf)
    for m in range(slots):
        idx = neighbors[:, m]
        valid = idx >= 0
        j = np.where(valid, idx, 0)
        score = np.einsum("nthd,nthd->nth", q, k[j]) / math.sqrt(d)
        score = score + geometric_bias(params, prefix, p_inf - p_inf[j])
        logits[..., m] = np.where(valid[:, None, None], score, -np.inf)
    attn = softmax(logits, axis=-1)
    out = np.zeros_like(q)
    for m in range(slots):
        j = np.where(neighbors[:, m] >= 0, neighbors[:, m], 0)
        out += attn[..., m:m + 1] * v[j]
    return out.reshape(n, t, D)


def temporal_mask(t: int, window: int, stride: int) -> np.ndarray:
    """``mask[a, b]``: step ``a`` may attend to ``b`` (same window, or ``b`` is an anchor)."""
    idx = np.arange(t)
    same = (idx[:, None] // window) == (idx[None, :] // window)
    anchor = (idx % stride == 0)[None, :]
    return same | anchor


def temporal_attention(tokens: np.ndarray, params: DenoiserParams, prefix: str) -> np.ndarray:
    cfg = params.config
    n, t, D = tokens.shape
    d = D // cfg.heads
    q = _heads(linear(params, f"{prefix}.q", tokens), cfg.heads)
    k = _heads(linear(params, f"{prefix}.k", tokens), cfg.heads)
    v = _heads(linear(params, f"{prefix}.v", tokens), cfg.heads)
    logits = np.einsum("nahd,nbhd->nhab", q, k) / math.sqrt(d)
    logits = np.where(temporal_mask(t, cfg.window, cfg.stride), logits, -np.inf)
    attn = softmax(logits, axis=-1)
    return np.einsum("nhab,nbhd->nahd", attn, v).reshape(n, t, D)


# --------------------------------------------------------------------------
# map pyramid and environment sensing


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """3x3 convolution, zero padding 1, channels-last ``(H, W, Cin)``."""
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
    win = win[::stride, ::stride]  # (Ho, Wo, Cin, 3, 3)
    return np.einsum("hwcij,ijco->hwo", win, w) + b


def _film(params: DenoiserParams, s: int, feat: np.ndarray, global_cond: np.ndarray) -> np.ndarray:
    gamma, beta = np.split(linear(params, f"pyr.film{s}", global_cond), 2)
    return (1.0 + gamma) * feat + beta


def feature_pyramid(cond: Condition, global_cond: np.ndarray, params: DenoiserParams) -> list[np.ndarray]:
    """Three channels-last feature maps at full, 1/2 and 1/4 resolution.

    Two stride-2 stages go down; one nearest-neighbour upsampling step adds
    the half-resolution features back into the full-resolution map.
    """
    f0 = gelu(_film(params, 0, conv2d(cond.raster(), params["pyr.conv0.w"], params["pyr.conv0.b"]), global_cond))
    f1 = gelu(_film(params, 1, conv2d(f0, params["pyr.conv1.w"], params["pyr.conv1.b"], 2), global_cond))
    f2 = gelu(_film(params, 2, conv2d(f1, params["pyr.conv2.w"], params["pyr.conv2.b"], 2), global_cond))
    up = np.repeat(np.repeat(f1, 2, axis=0), 2, axis=1)[: f0.shape[0], : f0.shape[1]]
    f0 = f0 + up
    return [linear(params, f"pyr.proj{s}", f) for s, f in enumerate((f0, f1, f2))]


def bilinear_sample(feat: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sample ``feat`` (Hs, Ws, D) at normalised (row, col) points ``u`` (..., 2).

    Points outside ``[-1, 1]`` are clamped to the border.
    """
    hs, ws = feat.shape[:2]
    y = np.clip((u[..., 0] + 1.0) * 0.5 * (hs - 1), 0, hs - 1)
    x = np.clip((u[..., 1] + 1.0) * 0.5 * (ws - 1), 0, ws - 1)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, hs - 1)
    x1 = np.minimum(x0 + 1, ws - 1)
    wy = (y - y0)[..., None]
    wx = (x - x0)[..., None]
    return ((1 - wy) * (1 - wx) * feat[y0, x0] + (1 - wy) * wx * feat[y0, x1]
            + wy * (1 - wx) * feat[y1, x0] + wy * wx * feat[y1, x1])


def sampling_locations(tokens: np.ndarray, p_inf: np.ndarray, entropy: np.ndarray,
                       params: DenoiserParams, prefix: str) -> np.ndarray:
    """(N, T, P, 2) points spread around the inferred positions."""
    P = params.config.points
    offsets = np.tanh(linear(params, f"{prefix}.offset", tokens)).reshape(tokens.shape[:2] + (P, 2))
    radius = params[f"{prefix}.radius"][0] * (1.0 + params.config.entropy_radius_gain * entropy)
    return p_inf[:, :, None, :] + radius[:, :, None, None] * offsets


def env_sense(tokens: np.ndarray, p_inf: np.ndarray, entropy: np.ndarray, pyramid: list[np.ndarray],
              scale_gate: np.ndarray, params: DenoiserParams, prefix: str) -> np.ndarray:
    cfg = params.config
    n, t, _ = tokens.shape
    locs = sampling_locations(tokens, p_inf, entropy, params, prefix)
    weights = softmax(linear(params, f"{prefix}.weight", tokens), axis=-1).reshape(n, t, cfg.scales, cfg.points)
    z = np.zeros((n, t, pyramid[0].shape[-1]))
    for s, feat in enumerate(pyramid):
        for p in range(cfg.points):
            w = (weights[:, :, s, p] * scale_gate[s])[..., None]
            z += w * bilinear_sample(feat, locs[:, :, p, :])
    return linear(params, f"{prefix}.out", z)


# --------------------------------------------------------------------------
# full network


def initial_tokens(x_k: np.ndarray, enc: ConditionEncoding, params: DenoiserParams) -> np.ndarray:
    agent_part = enc.start_emb + enc.goal_emb + enc.rel_emb
    return linear(params, "embed.action", x_k) + agent_part[:, None, :]


def _ada(h: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return (1.0 + gamma[:, None, :]) * layer_norm(h) + beta[:, None, :]


def interaction_block(h, layer, enc, p_inf, entropy, neighbors, pyramid, params):
    prefix = f"block{layer}"
    mods = linear(params, f"{prefix}.ada", enc.agent_cond)
    g = np.split(mods, 8, axis=-1)
    h = h + temporal_attention(_ada(h, g[0], g[1]), params, f"{prefix}.temporal")
    h = h + sparse_social_attention(_ada(h, g[2], g[3]), p_inf, neighbors, params, f"{prefix}.social")
    h = h + env_sense(_ada(h, g[4], g[5]), p_inf, entropy, pyramid, enc.scale_gate, params, f"{prefix}.env")
    ffn_in = _ada(h, g[6], g[7])
    h = h + linear(params, f"{prefix}.ffn2", gelu(linear(params, f"{prefix}.ffn1", ffn_in)))
    return h


def denoiser_logits(x_k: np.ndarray, source: Instance | Condition, k: int,
                    params: DenoiserParams) -> np.ndarray:
    params.check()
    cond = as_condition(source)
    x_k = np.asarray(x_k, dtype=np.float64)
    if x_k.ndim != 3 or x_k.shape[0] != cond.num_agents or x_k.shape[2] != NUM_ACTIONS:
        raise ValueError(f"x_k has shape {x_k.shape}, expected ({cond.num_agents}, T, {NUM_ACTIONS})")
    cfg = params.config
    enc = encode_condition(cond, k, params)
    p_inf = inferred_trajectory(x_k, cond)
    entropy = action_entropy(x_k)
    neighbors = build_social_graph(p_inf, k, cfg.num_steps, cfg)
    pyramid = feature_pyramid(cond, enc.global_cond, params)
    h = initial_tokens(x_k, enc, params)
    for layer in range(cfg.layers):
        h = interaction_block(h, layer, enc, p_inf, entropy, neighbors, pyramid, params)
    h = layer_norm(h) * params["head.ln.g"] + params["head.ln.b"]
    return linear(params, "head.out", h)


def denoiser_forward(x_k: np.ndarray, source: Instance | Condition, k: int,
                     params: DenoiserParams) -> np.ndarray:
    """Clean-action probabilities ``(N, T, C)`` for noisy actions ``x_k``."""
    return softmax(denoiser_logits(x_k, source, k, params), axis=-1)


class NeuralPredictor:
    """Adapter exposing :func:`denoiser_forward` as a diffusion predictor."""

    def __init__(self, params: DenoiserParams):
        params.check()
        self.params = params

    def __call__(self, x_k: np.ndarray, instance: Instance, k: int) -> np.ndarray:
        return denoiser_forward(x_k, instance, k, self.params)
