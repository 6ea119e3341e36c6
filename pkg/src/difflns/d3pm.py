"""Discrete diffusion over joint action tensors with a uniform transition kernel.

Tensors have shape ``(N, T, C)``: agents, timesteps, action categories. Rows
along the last axis are probability vectors (one-hot for sampled states).
All kernel and posterior arithmetic is float64.

Randomness is counter-based: every categorical draw uses a uniform keyed
by ``(seed, k, agent key, timestep, salt)``, so results do not depend on
the order rows are processed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .grid import NUM_ACTIONS, Instance
from .seeding import keyed_uniforms

C = NUM_ACTIONS
COSINE_OFFSET = 0.008
ALPHA_FLOOR = 0.001
LAMBDA_KL = 0.02
PROB_FLOOR = 1e-12

_SALT_FORWARD = 1
_SALT_PRIOR = 2
_SALT_REVERSE = 3


class Predictor(Protocol):
    def __call__(self, x_k: np.ndarray, instance: Instance, k: int) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """``alphas[k]`` and ``alpha_bars[k]`` for ``k = 0..K`` (index 0 is the clean state)."""

    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.alphas) - 1

    @classmethod
    def from_alphas(cls, step_alphas) -> DiffusionSchedule:
        step_alphas = np.asarray(step_alphas, dtype=np.float64)
        if step_alphas.ndim != 1 or len(step_alphas) < 1:
            raise ValueError("need at least one diffusion step")
        if np.any(step_alphas <= 0) or np.any(step_alphas > 1):
            raise ValueError("alphas must lie in (0, 1]")
        alphas = np.concatenate([[1.0], step_alphas])
        return cls(alphas, np.cumprod(alphas))


def cosine_schedule(num_steps: int, offset: float = COSINE_OFFSET,
                    floor: float = ALPHA_FLOOR) -> DiffusionSchedule:
    """Cosine schedule; per-step alphas are clipped to ``[floor, 1]`` and the
    cumulative products recomputed from the clipped values."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    k = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos((k / num_steps + offset) / (1 + offset) * math.pi / 2) ** 2
    bars = f / f[0]
    step = np.clip(bars[1:] / bars[:-1], floor, 1.0)
    return DiffusionSchedule.from_alphas(step)


def transition_matrix(alpha: float, num_classes: int = C) -> np.ndarray:
    """``alpha * I + (1 - alpha) / C * 11^T``."""
    return alpha * np.eye(num_classes) + (1.0 - alpha) / num_classes * np.ones((num_classes, num_classes))


def cumulative_matrix(k: int, schedule: DiffusionSchedule) -> np.ndarray:
    _check_step(k, schedule, allow_zero=True)
    return transition_matrix(schedule.alpha_bars[k])


def _check_step(k: int, schedule: DiffusionSchedule, allow_zero: bool = False) -> None:
    lo = 0 if allow_zero else 1
    if not lo <= k <= schedule.num_steps:
        raise ValueError(f"diffusion step {k} outside [{lo}, {schedule.num_steps}]")


def forward_marginal(x0: np.ndarray, k: int, schedule: DiffusionSchedule) -> np.ndarray:
    """``q(x_k | x_0)`` rows for one-hot (or probability) ``x0`` rows."""
    _check_step(k, schedule, allow_zero=True)
    a = schedule.alpha_bars[k]
    x0 = np.asarray(x0, dtype=np.float64)
    return a * x0 + (1.0 - a) / C * x0.sum(axis=-1, keepdims=True)


def one_hot(indices: np.ndarray, num_classes: int = C) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(indices)]


def _row_keys(shape: tuple[int, ...], agent_keys) -> tuple[np.ndarray, np.ndarray]:
    n, t = shape
    agents = np.arange(n) if agent_keys is None else np.asarray(agent_keys)
    if agents.shape != (n,):
        raise ValueError(f"need {n} agent keys, got shape {agents.shape}")
    return agents[:, None], np.arange(t)[None, :]


def sample_categorical(probs: np.ndarray, seed: int, k: int, salt: int,
                       agent_keys=None) -> np.ndarray:
    """One-hot draws from ``(N, T, C)`` probability rows, keyed per row."""
    agents, steps = _row_keys(probs.shape[:2], agent_keys)
    u = keyed_uniforms(seed, k, salt, agents, steps)
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < u[..., None] * cdf[..., -1:]).sum(axis=-1)
    return one_hot(np.minimum(idx, probs.shape[-1] - 1), probs.shape[-1])


def forward_sample(x0: np.ndarray, k: int, schedule: DiffusionSchedule, seed: int,
                   agent_keys=None) -> np.ndarray:
    """Draw ``x_k ~ q(x_k | x_0)`` independently per row."""
    if k == 0:
        return np.array(x0, dtype=np.float64)
    return sample_categorical(forward_marginal(x0, k, schedule), seed, k, _SALT_FORWARD, agent_keys)


def posterior_table(k: int, schedule: DiffusionSchedule) -> np.ndarray:
    """``P[c0, ck, c] = q(x_{k-1} = c | x_k = ck, x_0 = c0)``.

    Pairs ``(c0, ck)`` that the chain cannot produce (only possible when some
    alpha is exactly 1) get NaN rows.
    """
    _check_step(k, schedule)
    qk = transition_matrix(schedule.alphas[k])
    qbar_prev = transition_matrix(schedule.alpha_bars[k - 1])
    # unnormalised: Q_k[c, ck] * Qbar_{k-1}[c0, c]
    table = qbar_prev[:, None, :] * qk.T[None, :, :]
    norm = table.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm > 0, table / np.where(norm > 0, norm, 1.0), np.nan)


def posterior(xk: np.ndarray, x0: np.ndarray, k: int, schedule: DiffusionSchedule) -> np.ndarray:
    """``q(x_{k-1} | x_k, x_0)`` for one-hot rows ``xk`` and ``x0`` (any leading shape)."""
    table = posterior_table(k, schedule)
    out = table[np.argmax(x0, axis=-1), np.argmax(xk, axis=-1)]
    if np.isnan(out).any():
        raise ZeroDivisionError("posterior normaliser vanished: x_k is impossible given x_0")
    return out


def reverse_probs(xk: np.ndarray, x0_probs: np.ndarray, k: int,
                  schedule: DiffusionSchedule) -> np.ndarray:
    """``p(x_{k-1} | x_k) = sum_c x0_probs[c] q(x_{k-1} | x_k, x_0 = c)``.

    Clean states that cannot produce ``x_k`` drop out of the mixture, which
    is then renormalised; for alphas below 1 every state is possible and the
    sum is used as is.
    """
    table = posterior_table(k, schedule)  # (c0, ck, c)
    ik = np.argmax(xk, axis=-1)
    rows = np.moveaxis(table, 1, 0)[ik]  # (..., c0, c)
    possible = ~np.isnan(rows[..., 0])
    weights = np.where(possible, np.asarray(x0_probs, dtype=np.float64), 0.0)
    out = np.einsum("...a,...ab->...b", weights, np.nan_to_num(rows))
    total = out.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ZeroDivisionError("predicted clean states cannot produce x_k")
    return np.where(possible.all(axis=-1, keepdims=True), out, out / total)


def reverse_step(xk: np.ndarray, x0_probs: np.ndarray, k: int, schedule: DiffusionSchedule,
                 seed: int, agent_keys=None) -> np.ndarray:
    return sample_categorical(reverse_probs(xk, x0_probs, k, schedule), seed, k, _SALT_REVERSE,
                              agent_keys)


def prior_sample(num_agents: int, horizon: int, seed: int, num_steps: int,
                 agent_keys=None) -> np.ndarray:
    """``x_K`` drawn uniformly per row."""
    uniform = np.full((num_agents, horizon, C), 1.0 / C)
    return sample_categorical(uniform, seed, num_steps, _SALT_PRIOR, agent_keys)


def sample(predictor: Predictor, instance: Instance, schedule: DiffusionSchedule, seed: int,
           horizon: int | None = None, agent_keys=None,
           callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None) -> np.ndarray:
    """Ancestral sampling from ``x_K`` down to a one-hot draft.

    The draft is the row-wise argmax (lowest index on ties) of the last
    clean-state prediction, made at ``k = 1``.
    """
    horizon = instance.horizon if horizon is None else horizon
    K = schedule.num_steps
    xk = prior_sample(instance.num_agents, horizon, seed, K, agent_keys)
    x0_probs = None
    for k in range(K, 0, -1):
        x0_probs = np.asarray(predictor(xk, instance, k), dtype=np.float64)
        if x0_probs.shape != xk.shape:
            raise ValueError(f"predictor returned shape {x0_probs.shape}, expected {xk.shape}")
        if callback is not None:
            callback(k, xk, x0_probs)
        if k > 1:
            xk = reverse_step(xk, x0_probs, k, schedule, seed, agent_keys)
    return one_hot(np.argmax(x0_probs, axis=-1))


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) with 0 log 0 = 0 and a floor on q."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), PROB_FLOOR)
    safe_p = np.where(p > 0, p, 1.0)
    return np.sum(np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0), axis=-1)


def kl_from_prediction(x0: np.ndarray, xk: np.ndarray, x0_probs: np.ndarray, k: int,
                       schedule: DiffusionSchedule) -> float:
    """Mean row KL between the true posterior and the predictor-induced reverse kernel."""
    true_post = posterior(xk, x0, k, schedule)
    model = reverse_probs(xk, x0_probs, k, schedule)
    return float(np.mean(_kl_rows(true_post, model)))


def kl_loss(x0: np.ndarray, k: int, predictor: Predictor, instance: Instance,
            schedule: DiffusionSchedule, seed: int) -> float:
    """Sample ``x_k ~ q(x_k | x_0)`` then score the predictor's reverse kernel."""
    _check_step(k, schedule)
    xk = forward_sample(x0, k, schedule, seed)
    x0_probs = predictor(xk, instance, k)
    return kl_from_prediction(x0, xk, x0_probs, k, schedule)


def aux_loss(x0: np.ndarray, x0_probs: np.ndarray) -> float:
    """Token-level cross-entropy of the clean-state prediction."""
    x0 = np.asarray(x0)
    x0_probs = np.asarray(x0_probs, dtype=np.float64)
    if x0.shape != x0_probs.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {x0_probs.shape}")
    picked = np.take_along_axis(x0_probs, np.argmax(x0, axis=-1)[..., None], axis=-1)[..., 0]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def generative_loss(aux: float, kl: float, lambda_kl: float = LAMBDA_KL) -> float:
    return aux + lambda_kl * kl


def check_rows(x: np.ndarray, atol: float = 1e-9) -> None:
    """Raise if any row is negative or fails to sum to one."""
    x = np.asarray(x)
    if np.any(x < -atol) or not np.allclose(x.sum(axis=-1), 1.0, rtol=0, atol=atol):
        raise ValueError("tensor rows are not probability vectors")
