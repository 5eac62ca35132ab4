"""Deterministic policy gradient, used as a baseline update rule and as the
reference for the first-order limit of the guide update."""
from __future__ import annotations

import numpy as np

from .errors import EmptyBatch, ShapeMismatch


def dpg_direction(actor, critic, states) -> list[np.ndarray]:
    """mean_n J_n' grad_a Q(s_n, a) at a = phi_theta(s_n), one array per actor parameter."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if S.shape[0] == 0:
        raise EmptyBatch("empty batch")
    g = critic.grad_action(S, actor.mean(S))
    g = np.asarray(g, dtype=np.float64).reshape(S.shape[0], -1)
    return actor.vjp(S, g / S.shape[0])


def dpg_step(actor, direction, alpha: float) -> None:
    """theta <- theta + alpha * direction, in place."""
    if len(direction) != len(actor.params):
        raise ShapeMismatch(f"{len(direction)} arrays for {len(actor.params)} parameters")
    for p, d in zip(actor.params, direction):
        if p.shape != np.shape(d):
            raise ShapeMismatch(f"direction shape {np.shape(d)} vs parameter {p.shape}")
    for p, d in zip(actor.params, direction):
        p += alpha * np.asarray(d, dtype=np.float64)


def surrogate(actor, critic, states) -> float:
    """mean_n Q(s_n, phi_theta(s_n)), the objective DPG ascends."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    return float(np.mean(critic.value(S, actor.mean(S))))
