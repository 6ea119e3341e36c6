"""Task-shaping losses on predicted clean-action distributions.

Every loss accepts real or complex ``x0_probs`` of shape ``(N, T, C)``. With
a complex input ``x + i h v`` the imaginary part of the result, divided by
``h``, is the directional derivative along ``v`` (complex-step
differentiation). Branches (hinges, set membership, rounding) are decided on
real parts only, which is what makes that work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import DELTA_ARRAY, DELTAS, Instance
from .lns2 import agent_fields
from .single_agent import DistanceField


@dataclass(frozen=True)
class LossWeights:
    goal: float = 0.4
    vertex: float = 0.2
    edge: float = 0.2
    valid: float = 0.4
    kl: float = 0.02
    vertex_radius: float = 1.0
    edge_radius: float = 1.0

    def __post_init__(self):
        for name in ("goal", "vertex", "edge", "valid", "kl", "vertex_radius", "edge_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _cabs(z):
    return np.where(np.real(z) < 0, -z, z)


def _cmax0(z):
    return np.where(np.real(z) > 0, z, 0.0 * z)


def expected_positions(x0_probs: np.ndarray, instance: Instance) -> np.ndarray:
    """(N, T, 2) expected grid positions after each of the T actions."""
    starts = np.array(instance.starts, dtype=np.float64).reshape(-1, 2)
    return starts[:, None, :] + np.cumsum(x0_probs @ DELTA_ARRAY, axis=1)


def _snap(pos_real: np.ndarray, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    r = np.clip(np.floor(pos_real[..., 0] + 0.5), 0, shape[0] - 1).astype(np.int64)
    c = np.clip(np.floor(pos_real[..., 1] + 0.5), 0, shape[1] - 1).astype(np.int64)
    return r, c


def _lookup_distances(fields: Sequence[DistanceField], r: np.ndarray, c: np.ndarray) -> np.ndarray:
    out = np.empty(r.shape)
    for i, f in enumerate(fields):
        d = f.dist
        # snapped cells that are blocked or cut off count one step beyond the farthest reachable cell
        cap = float(np.max(d[np.isfinite(d)])) + 1.0
        out[i] = np.where(np.isfinite(d[r[i], c[i]]), d[r[i], c[i]], cap)
    return out


def goal_progress_loss(x0_probs: np.ndarray, instance: Instance,
                       fields: Sequence[DistanceField] | None = None) -> float | complex:
    n, t = x0_probs.shape[:2]
    if n == 0 or t < 2:
        return 0.0
    fields = fields or agent_fields(instance)
    h, w = instance.map.shape
    scale = max(h, w)
    pos = expected_positions(x0_probs, instance)
    r, c = _snap(np.real(pos), (h, w))
    d = _lookup_distances(fields, r, c)
    # the snapped lookup is piecewise constant in x0_probs; keep the dtype for complex steps
    d = d + 0.0 * np.sum(pos, axis=-1)
    # hinge in whole cells, then one division by the map scale (same value, no rounding residue)
    terms = _cmax0(d[:, 1:] - _cmax0(d[:, :-1] - 1.0)) / scale
    return terms.sum() / (n * (t - 1))


def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n, k=1)
    return i, j


def vertex_conflict_loss(x0_probs: np.ndarray, instance: Instance,
                         radius: float = 1.0) -> float | complex:
    n = x0_probs.shape[0]
    if n < 2:
        return 0.0
    pos = expected_positions(x0_probs, instance)
    i, j = _pairs(n)
    dist = _cabs(pos[i] - pos[j]).sum(axis=-1)
    inside = np.real(dist) <= radius
    if not inside.any():
        return 0.0
    return np.exp(-dist[inside]).mean()


def edge_conflict_loss(x0_probs: np.ndarray, instance: Instance,
                       radius: float = 1.0) -> float | complex:
    n, t = x0_probs.shape[:2]
    if n < 2 or t < 2:
        return 0.0
    pos = expected_positions(x0_probs, instance)
    i, j = _pairs(n)
    fwd = _cabs(pos[i, :-1] - pos[j, 1:]).sum(axis=-1)
    bwd = _cabs(pos[i, 1:] - pos[j, :-1]).sum(axis=-1)
    inside = (np.real(fwd) <= radius) & (np.real(bwd) <= radius)
    if not inside.any():
        return 0.0
    return np.exp(-(fwd[inside] + bwd[inside]) / 2).mean()


def rollout_positions(x0_probs: np.ndarray, instance: Instance) -> np.ndarray:
    """(N, T, 2) cell occupied before each action under the argmax rollout.

    Invalid argmax moves leave the agent in place.
    """
    n, t = x0_probs.shape[:2]
    grid = instance.map
    actions = np.argmax(np.real(x0_probs), axis=-1)
    out = np.zeros((n, t, 2), dtype=np.int64)
    for a in range(n):
        cur = instance.starts[a]
        for tau in range(t):
            out[a, tau] = cur
            dr, dc = DELTAS[actions[a, tau]]
            nxt = (cur[0] + dr, cur[1] + dc)
            if grid.is_free(nxt):
                cur = nxt
    return out


def invalid_action_mask(positions: np.ndarray, instance: Instance) -> np.ndarray:
    """(..., C) True where the action from ``positions`` leaves the map or hits an obstacle."""
    h, w = instance.map.shape
    nxt = positions[..., None, :] + np.array(DELTAS, dtype=np.int64)
    inside = (nxt[..., 0] >= 0) & (nxt[..., 0] < h) & (nxt[..., 1] >= 0) & (nxt[..., 1] < w)
    r = np.clip(nxt[..., 0], 0, h - 1)
    c = np.clip(nxt[..., 1], 0, w - 1)
    return ~inside | instance.map.cells[r, c]


def validity_loss(x0_probs: np.ndarray, instance: Instance) -> float | complex:
    n, t = x0_probs.shape[:2]
    if n == 0 or t == 0:
        return 0.0
    mask = invalid_action_mask(rollout_positions(x0_probs, instance), instance)
    return np.where(mask, x0_probs, 0.0 * x0_probs).sum() / (n * t)


def task_loss(x0_probs: np.ndarray, instance: Instance, weights: LossWeights = LossWeights(),
              fields: Sequence[DistanceField] | None = None) -> float | complex:
    return (weights.goal * goal_progress_loss(x0_probs, instance, fields)
            + weights.vertex * vertex_conflict_loss(x0_probs, instance, weights.vertex_radius)
            + weights.edge * edge_conflict_loss(x0_probs, instance, weights.edge_radius)
            + weights.valid * validity_loss(x0_probs, instance))


def task_loss_scale(epochs: float) -> float:
    """Warm-up factor ``0.2 + 0.8 * min(e / 150, 1)``."""
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    return 0.2 + 0.8 * min(epochs / 150.0, 1.0)


# --------------------------------------------------------------------------
# derivative checks

LossFn = Callable[[np.ndarray], "float | complex"]


def renormalized(x: np.ndarray, index: tuple[int, int, int], step: float) -> np.ndarray:
    """Add ``step`` to one entry and renormalise its row."""
    i, t, a = index
    out = np.array(x, dtype=np.float64)
    out[i, t, a] += step
    out[i, t] /= out[i, t].sum()
    return out


def perturbation_direction(x: np.ndarray, index: tuple[int, int, int]) -> np.ndarray:
    """Tangent of :func:`renormalized` at ``step = 0``: ``e_a - x_row`` on one row."""
    i, t, a = index
    v = np.zeros_like(x, dtype=np.float64)
    v[i, t] = -x[i, t]
    v[i, t, a] += 1.0
    return v


def central_difference(fn: LossFn, x: np.ndarray, index: tuple[int, int, int],
                       step: float = 1e-5) -> float:
    return (float(np.real(fn(renormalized(x, index, step))))
            - float(np.real(fn(renormalized(x, index, -step))))) / (2 * step)


def complex_step_derivative(fn: LossFn, x: np.ndarray, direction: np.ndarray,
                            step: float = 1e-20) -> float:
    return float(np.imag(fn(np.asarray(x, dtype=np.complex128) + 1j * step * direction))) / step


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def boundary_margin(x0_probs: np.ndarray, instance: Instance, loss: str,
                    weights: LossWeights = LossWeights()) -> float:
    """Distance (in the quantity each branch tests) to the nearest branch switch.

    Finite differences straddling a switch disagree with the local
    derivative, so gradient checks skip points whose margin is small.
    """
    x = np.real(np.asarray(x0_probs))
    n, t = x.shape[:2]
    margins = [np.inf]
    pos = expected_positions(x, instance)
    if loss == "goal":
        frac = pos - np.floor(pos)
        margins.append(np.abs(frac - 0.5).min() if frac.size else np.inf)
    elif loss in ("vertex", "edge") and n >= 2:
        i, j = _pairs(n)
        if loss == "vertex":
            diffs = [pos[i] - pos[j]]
            radius = weights.vertex_radius
        else:
            diffs = [pos[i, :-1] - pos[j, 1:], pos[i, 1:] - pos[j, :-1]]
            radius = weights.edge_radius
        for diff in diffs:
            if diff.size:
                margins.append(np.abs(diff).min())
                margins.append(np.abs(np.abs(diff).sum(axis=-1) - radius).min())
    elif loss == "valid" and x.size:
        top2 = np.sort(x, axis=-1)[..., -2:]
        margins.append((top2[..., 1] - top2[..., 0]).min())
    return float(min(margins))
