"""Training-free clean-action predictor driven by BFS distance fields."""

from __future__ import annotations

import numpy as np

from ..grid import DELTAS, NUM_ACTIONS, Action, Instance
from ..single_agent import UnreachableError, bfs_distance_map

BETA = 4.0
# Logit bonus for the action currently held by the noisy state. It is too
# small to beat a one-step distance gap (BETA) and only breaks ties between
# equally good moves, so different diffusion seeds yield different drafts.
TIE_BIAS = 1.0


def distance_stack(instance: Instance) -> np.ndarray:
    """(N, H, W) goal distances; ``inf`` on obstacles and unreachable cells."""
    cache: dict = {}
    rows = []
    for g in instance.goals:
        if g not in cache:
            cache[g] = bfs_distance_map(instance.map, g).dist
        rows.append(cache[g])
    if not rows:
        return np.zeros((0,) + instance.map.shape)
    return np.stack(rows)


def greedy_rollout(x_k: np.ndarray, instance: Instance, dist: np.ndarray,
                   beta: float = BETA, tie_bias: float = TIE_BIAS) -> np.ndarray:
    x_k = np.asarray(x_k, dtype=np.float64)
    n, horizon, _ = x_k.shape
    h, w = instance.map.shape
    pos = np.array(instance.starts, dtype=np.int64).reshape(n, 2)
    goals = np.array(instance.goals, dtype=np.int64).reshape(n, 2)
    agents = np.arange(n)
    if n and not np.all(np.isfinite(dist[agents, pos[:, 0], pos[:, 1]])):
        bad = int(np.flatnonzero(~np.isfinite(dist[agents, pos[:, 0], pos[:, 1]]))[0])
        raise UnreachableError(f"agent {bad} cannot reach its goal")
    deltas = np.array(DELTAS, dtype=np.int64)
    stay = np.eye(NUM_ACTIONS)[Action.STAY]
    out = np.zeros((n, horizon, NUM_ACTIONS))
    for t in range(horizon):
        nxt = pos[:, None, :] + deltas[None, :, :]                       # (N, C, 2)
        inside = (nxt[..., 0] >= 0) & (nxt[..., 0] < h) & (nxt[..., 1] >= 0) & (nxt[..., 1] < w)
        r = np.clip(nxt[..., 0], 0, h - 1)
        c = np.clip(nxt[..., 1], 0, w - 1)
        d = np.where(inside, dist[agents[:, None], r, c], np.inf)
        valid = np.isfinite(d)
        logits = np.where(valid, -beta * np.where(valid, d, 0.0) + tie_bias * x_k[:, t, :], -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        at_goal = np.all(pos == goals, axis=1)
        probs[at_goal] = stay
        out[:, t] = probs
        choice = np.argmax(probs, axis=1)
        pos = nxt[agents, choice]
    return out


class HeuristicPredictor:
    """Greedy distance-descent predictor; caches distance fields per instance."""

    def __init__(self, beta: float = BETA, tie_bias: float = TIE_BIAS):
        self.beta = beta
        self.tie_bias = tie_bias
        self._instance: Instance | None = None
        self._dist: np.ndarray | None = None

    def distances(self, instance: Instance) -> np.ndarray:
        if self._instance is not instance:
            self._dist = distance_stack(instance)
            self._instance = instance
        return self._dist

    def __call__(self, x_k: np.ndarray, instance: Instance, k: int) -> np.ndarray:
        return greedy_rollout(x_k, instance, self.distances(instance), self.beta, self.tie_bias)


def heuristic_predictor(x_k: np.ndarray, instance: Instance, k: int) -> np.ndarray:
    return HeuristicPredictor()(x_k, instance, k)
