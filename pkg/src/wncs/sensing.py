"""Uniform quantizer, delay-compensating predictor and estimation-error bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Quantizer",
    "ErrorBoundInputs",
    "quantize",
    "uplink_arrival_rate",
    "predict_states",
    "quantization_mse",
    "estimation_error_bound",
    "estimation_error_bound_at",
]

_TRACE_ONE_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class Quantizer:
    """``2**r`` uniform bins per component over ``[x_l, x_u]``."""

    x_l: np.ndarray
    x_u: np.ndarray
    r: int

    def __post_init__(self):
        object.__setattr__(self, "x_l", np.asarray(self.x_l, dtype=float))
        object.__setattr__(self, "x_u", np.asarray(self.x_u, dtype=float))
        if not np.all(self.x_l < self.x_u):
            raise ValueError("quantizer bounds need x_l < x_u componentwise")
        if self.r < 1:
            raise ValueError("r must be at least 1")

    @classmethod
    def for_plant(cls, plant, r):
        return cls(plant.x_l, plant.x_u, int(r))

    @property
    def bins(self):
        return 2 ** int(self.r)

    @property
    def step(self):
        return (self.x_u - self.x_l) / self.bins

    def __call__(self, x):
        return quantize(self, x)


def quantize(q, x, *, return_clamped=False):
    """Map each component to the midpoint of its bin.

    Values outside ``[x_l, x_u]`` land in the nearest edge bin. With
    ``return_clamped`` the per-row count of clamped components is also
    returned.
    """
    x = np.asarray(x, dtype=float)
    j = np.floor(q.bins * (x - q.x_l) / (q.x_u - q.x_l))
    out_of_range = (x < q.x_l) | (x > q.x_u)
    j = np.clip(j, 0, q.bins - 1)
    xq = q.x_l + (j + 0.5) * q.step
    if return_clamped:
        return xq, out_of_range.sum(axis=-1)
    return xq


def uplink_arrival_rate(r, t_d, n_components=1):
    """Sensing bits generated per second; ``n_components > 1`` charges r bits per state."""
    if r < 1 or not t_d > 0:
        raise ValueError("need r >= 1 and t_d > 0")
    return n_components * r / t_d


def predict_states(a_k, x_hat_0, n):
    """``[X̂, A_K X̂, ..., A_K^(n-1) X̂]`` stacked on a new second-to-last axis."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = np.asarray(x_hat_0, dtype=float)
    out = np.empty(x.shape[:-1] + (n, x.shape[-1]))
    out[..., 0, :] = x
    for tau in range(1, n):
        x = x @ a_k.T
        out[..., tau, :] = x
    return out


def quantization_mse(q):
    """Mean squared quantization error under a uniform-error assumption."""
    diff = q.x_l - q.x_u
    return float(diff @ diff) / 12.0 / 4.0 ** q.r


@dataclass(frozen=True, eq=False)
class ErrorBoundInputs:
    r: int
    epsilon_c: float
    d_c_max: float
    t_d: float
    plant: object
    k: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.epsilon_c <= 1.0:
            raise ValueError("epsilon_c must lie in [0, 1]")
        if not self.d_c_max > 0:
            raise ValueError("d_c_max must be positive")

    @property
    def tau_max(self):
        return int(math.floor(self.d_c_max / self.t_d + 1e-9))


def _bound_pieces(inp):
    plant = inp.plant
    k = np.asarray(inp.k, dtype=float).reshape(1, -1)
    trace_a = float(np.trace(plant.a_tilde.T @ plant.a_tilde))
    bk = plant.b_tilde @ k
    loss = (inp.epsilon_c - inp.epsilon_c**2) * float(np.trace(bk.T @ bk)) * float(plant.x_m @ plant.x_m)
    q0 = quantization_mse(Quantizer(plant.x_l, plant.x_u, inp.r))
    return trace_a, q0, loss


def _geometric(trace_a, tau, q0, loss):
    try:
        growth = trace_a**tau
    except OverflowError:  # long delay windows on an expanding plant
        return math.inf
    return q0 * growth + loss * (1.0 - growth) / (1.0 - trace_a)


def estimation_error_bound_at(inp, tau):
    """Bound on ``E[e_tau' e_tau]`` after ``tau`` prediction steps."""
    trace_a, q0, loss = _bound_pieces(inp)
    if abs(trace_a - 1.0) < _TRACE_ONE_ATOL:
        return q0 + loss * tau
    return _geometric(trace_a, tau, q0, loss)


def estimation_error_bound(inp):
    """Common bound on the mean-square estimation error for every delay index
    up to ``⌊d_c_max / t_d⌋``.

    Three regimes keyed on ``Tr(ÃᵀÃ)``: above one the error grows
    geometrically and the bound is taken at the largest delay index, below
    one the steady-state value is used, and exactly one (within 1e-12)
    grows linearly.
    """
    trace_a, q0, loss = _bound_pieces(inp)
    tau = inp.tau_max
    if abs(trace_a - 1.0) < _TRACE_ONE_ATOL:
        return q0 + loss * tau
    if trace_a > 1.0:
        return _geometric(trace_a, tau, q0, loss)
    return q0 + loss / (1.0 - trace_a)
