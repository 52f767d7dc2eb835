"""Lossy closed-loop state update of the discretized plant."""

from __future__ import annotations

import numpy as np

__all__ = ["step_true_state", "apply_command", "closed_loop_matrix"]


def step_true_state(plant, x_t, x_hat_applied, eta, k):
    """One plant step ``X+ = Ã X + eta * B̃ K X̂``.

    ``x_t`` and ``x_hat_applied`` may carry leading batch dimensions
    (``(..., n)``); ``eta`` broadcasts against those leading dimensions.
    """
    u = np.asarray(x_hat_applied, dtype=float) @ np.asarray(k, dtype=float)
    return apply_command(plant, x_t, np.asarray(eta) * u)


def apply_command(plant, x_t, u):
    """``X+ = Ã X + B̃ u`` for a scalar input per batch row (``u = 0`` on a lost packet)."""
    x_t = np.asarray(x_t, dtype=float)
    return x_t @ plant.a_tilde.T + np.asarray(u, dtype=float)[..., None] * plant.b_tilde[:, 0]


def closed_loop_matrix(plant, k, epsilon_c):
    """Expected closed-loop matrix ``Ã + (1 - eps) B̃ K`` used by the predictor."""
    if not 0.0 <= epsilon_c <= 1.0:
        raise ValueError(f"epsilon_c must lie in [0, 1], got {epsilon_c!r}")
    k = np.asarray(k, dtype=float).reshape(1, -1)
    return plant.a_tilde + (1.0 - epsilon_c) * (plant.b_tilde @ k)
