"""Lyapunov convergence-rate check for the lossy, quantized loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import link_metrics
from .exceptions import ZeroStateError
from .plant import step_true_state
from .sensing import ErrorBoundInputs, estimation_error_bound

__all__ = [
    "ConvergenceCheck",
    "lyapunov_value",
    "rho_required",
    "convergence_rhs",
    "empirical_contraction",
]


@dataclass(frozen=True)
class ConvergenceCheck:
    rho_required: float
    rho_target: float
    feasible: bool
    terms: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rho_target - self.rho_required


def lyapunov_value(x, p):
    """Quadratic form ``xᵀ P x``; batched over leading axes of ``x``."""
    x = np.asarray(x, dtype=float)
    return np.einsum("...i,ij,...j->...", x, p, x)


def rho_required(plant, k, epsilon_c, f_e, x_t):
    """Smallest admissible convergence rate at ``x_t`` and the term breakdown.

    The estimation-error term is weighted by ``Tr(Kᵀ Bᵀ P B K)`` with the
    continuous input matrix ``B``.
    """
    p = plant.p
    x_t = np.asarray(x_t, dtype=float)
    v = float(lyapunov_value(x_t, p))
    if v <= 0.0:
        raise ZeroStateError("|x_t|_P^2 = 0; the rate condition is vacuous at the origin")
    k = np.asarray(k, dtype=float).reshape(1, -1)
    drift = float(lyapunov_value(plant.a_tilde @ x_t, p))
    closed = float(lyapunov_value((plant.a_tilde + plant.b_tilde @ k) @ x_t, p))
    bk = plant.b @ k
    gain_trace = float(np.trace(bk.T @ p @ bk))
    error = f_e * gain_trace
    f_rho = (1.0 - epsilon_c) * (-drift + closed + error) + drift
    terms = {
        "drift": drift,
        "closed_loop": closed,
        "error_bound": error,
        "f_e": f_e,
        "epsilon_c": epsilon_c,
        "v": v,
        "f_rho": f_rho,
    }
    return f_rho / v, terms


def convergence_rhs(params, plant, k, w_u, w_d, x_t):
    """Evaluate the sufficient rate condition for one candidate at ``x_t``."""
    eps = link_metrics(params, w_u, w_d).epsilon_c
    f_e = estimation_error_bound(
        ErrorBoundInputs(params.r, eps, params.d_c_max, params.t_d, plant, np.asarray(k, dtype=float))
    )
    required, terms = rho_required(plant, k, eps, f_e, x_t)
    return ConvergenceCheck(required, params.rho, bool(params.rho >= required), terms)


def empirical_contraction(plant, k, epsilon_c, x0, steps, trials, rng, *,
                          quantizer=None, floor=1e-9):
    """Monte-Carlo average of ``V(X_{t+1}) / V(X_t)`` along lossy trajectories.

    Each of ``trials`` trajectories starts at ``x0`` and runs ``steps``
    steps with ``eta ~ Bernoulli(1 - epsilon_c)`` and, if a quantizer is
    given, commands computed from the quantized state. Ratios are taken
    only where ``V(X_t) > floor``.
    """
    if steps < 1 or trials < 1:
        raise ValueError("steps and trials must be positive")
    x = np.broadcast_to(np.asarray(x0, dtype=float), (trials, plant.n)).copy()
    total = 0.0
    count = 0
    for _ in range(steps):
        v = lyapunov_value(x, plant.p)
        eta = (rng.random(trials) >= epsilon_c).astype(float)
        x_hat = quantizer(x) if quantizer is not None else x
        x_next = step_true_state(plant, x, x_hat, eta, k)
        v_next = lyapunov_value(x_next, plant.p)
        mask = v > floor
        total += float(np.sum(v_next[mask] / v[mask]))
        count += int(mask.sum())
        x = x_next
    if count == 0:
        return float("nan")
    return total / count
