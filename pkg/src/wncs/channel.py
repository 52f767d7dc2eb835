"""Closed-form link metrics of the uplink/downlink tandem queue.

Units used throughout: capacities and arrival rates in bits/s, QoS
exponents ``theta`` in 1/bit, delay-distribution rates ``mu`` in 1/s,
delays in seconds, SNR as a linear power ratio.

The channel power gain enters every formula through the product
``snr * beta``; ``beta`` therefore acts as the mean of the exponential
gain variable (the two readings coincide for ``beta = 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .exceptions import ChannelDomainError, DegenerateConditioningError, QuadratureError

__all__ = [
    "LinkMetrics",
    "effective_capacity",
    "effective_capacity_oracle",
    "ergodic_capacity",
    "service_rate_mu",
    "packet_loss_rate",
    "expected_conditional_delay",
    "max_arrival_rate",
    "arrival_cap_from_capacities",
    "sample_closed_loop_delay",
    "link_metrics",
]

LN2 = math.log(2.0)
_EQUAL_RATE_RTOL = 1e-9


@dataclass(frozen=True)
class LinkMetrics:
    """Derived communication quantities for one bandwidth split.

    ``mu_u``/``mu_d`` are the rates of the exponential delay laws actually
    used for loss and delay, i.e. ``theta * C / delay_scale``.
    ``e_dc_cond`` is NaN when the no-loss event has negligible probability.
    """

    c_u: float
    c_d: float
    mu_u: float
    mu_d: float
    epsilon_c: float
    e_dc_cond: float
    lambda_max: float


def _check_domain(theta, w):
    a = w * theta / LN2
    if not a > 1.0:
        raise ChannelDomainError(
            f"W*theta/ln2 = {a:.4g} must exceed 1 (shrink theta or grow W)"
        )
    return a


def effective_capacity(theta, w, snr, beta):
    """Effective capacity of a Rayleigh-faded link, in bits/s.

    Large-exponent approximation
    ``C = ln(snr*beta * (W*theta/ln2 - 1)) / theta - 1/(snr*beta)``,
    valid when ``W*theta/ln2 > 1``.
    """
    a = _check_domain(theta, w)
    s = snr * beta
    c = (math.log(s) + math.log(a - 1.0)) / theta - 1.0 / s
    if not c > 0:
        raise ChannelDomainError(f"non-positive effective capacity {c:.4g} bits/s")
    return c


def service_rate_mu(theta, w, snr, beta):
    """Rate (1/s) of the exponential per-hop delay law, ``theta * C``."""
    return theta * effective_capacity(theta, w, snr, beta)


def effective_capacity_oracle(theta, w, snr, beta, *, epsrel=1e-10, epsabs=0.0):
    """Effective capacity by direct numerical integration of the log-MGF.

    Evaluates ``-ln E[exp(-theta W log2(1 + snr g))] / theta`` with
    ``g ~ Exp(mean=beta)``. For exponents above 1 the integral is mapped
    onto ``t = a ln(1 + s y)`` so the sharp peak at the origin becomes a
    smooth exponential tail.
    """
    a = w * theta / LN2
    s = snr * beta
    if a >= 1.0:
        def integrand(t):
            z = t / a
            if z > 700.0:
                return 0.0
            return math.exp(-t + z - math.expm1(z) / s)

        val, err = integrate.quad(integrand, 0.0, math.inf, epsabs=epsabs,
                                  epsrel=epsrel, limit=500)
        log_mgf = math.log(val) - math.log(a * s)
    else:
        def integrand(y):
            return math.exp(-y - a * math.log1p(s * y))

        val, err = integrate.quad(integrand, 0.0, math.inf, epsabs=epsabs,
                                  epsrel=epsrel, limit=500)
        log_mgf = math.log(val)
    if not (val > 0 and math.isfinite(val)) or err > max(1e-6 * abs(val), epsabs):
        raise QuadratureError(f"quadrature did not converge (value {val!r}, error {err!r})")
    return -log_mgf / theta


def ergodic_capacity(w, snr, beta):
    """``E[W log2(1 + snr g)]`` for ``g ~ Exp(mean=beta)``, in bits/s."""
    s = snr * beta
    return w / LN2 * math.exp(1.0 / s) * special.exp1(1.0 / s)


def packet_loss_rate(mu_u, mu_d, d_c_max):
    """``P(D_u + D_d > d_c_max)`` for independent exponential hop delays.

    Written as ``e^{-D mu_d} + mu_d e^{-D mu_u} expm1(D delta) / delta``,
    which is algebraically the two-rate closed form but free of the
    ``mu_u - mu_d`` cancellation. Equal rates use the Erlang-2 tail.
    """
    if not (mu_u > 0 and mu_d > 0):
        raise ValueError("mu_u and mu_d must be positive")
    if d_c_max < 0:
        raise ValueError("d_c_max must be nonnegative")
    if d_c_max == 0:
        return 1.0
    # The tail is symmetric in the two rates; ordering them keeps the
    # exponent of expm1 nonpositive so nothing overflows.
    mu_u, mu_d = min(mu_u, mu_d), max(mu_u, mu_d)
    delta = mu_u - mu_d
    if abs(delta) < _EQUAL_RATE_RTOL * mu_d:
        z = 0.5 * (mu_u + mu_d) * d_c_max
        eps = (1.0 + z) * math.exp(-z)
    else:
        eps = (math.exp(-d_c_max * mu_d)
               + mu_d * math.exp(-d_c_max * mu_u) * math.expm1(d_c_max * delta) / delta)
    return min(1.0, max(0.0, eps))


def expected_conditional_delay(mu_u, mu_d, d_c_max):
    """``E[D_c | D_c < d_c_max]`` in seconds."""
    if not (mu_u > 0 and mu_d > 0):
        raise ValueError("mu_u and mu_d must be positive")
    if not d_c_max > 0:
        raise ValueError("d_c_max must be positive")
    accept = 1.0 - packet_loss_rate(mu_u, mu_d, d_c_max)
    if accept <= 1e-12:
        raise DegenerateConditioningError(
            f"P(D_c < {d_c_max}) = {accept:.3g}; conditional mean undefined"
        )
    if math.isinf(d_c_max):
        return 1.0 / mu_u + 1.0 / mu_d
    if abs(mu_u - mu_d) < _EQUAL_RATE_RTOL * max(mu_u, mu_d):
        mu = 0.5 * (mu_u + mu_d)
        z = mu * d_c_max
        ez = math.exp(-z)
        return (2.0 / mu) * (1.0 - ez * (1.0 + z + 0.5 * z * z)) / (1.0 - ez * (1.0 + z))
    D = d_c_max
    eu, ed = math.exp(-D * mu_u), math.exp(-D * mu_d)
    num = mu_u**2 - mu_d**2 + eu * mu_d**2 * (1.0 + D * mu_u) - ed * mu_u**2 * (1.0 + D * mu_d)
    den = mu_u * mu_d * (mu_u - mu_d + eu * mu_d - ed * mu_u)
    return num / den


def arrival_cap_from_capacities(c_u, c_d, c_ratio):
    """Arrival-rate cap when the uplink exponent is the larger one."""
    return min(c_u, c_d / c_ratio)


def max_arrival_rate(params, w_u, w_d):
    """Largest admissible uplink arrival rate (bits/s) for a bandwidth split.

    For ``theta_u >= theta_d`` the uplink departure process equals its
    arrivals and the cap is ``min(C_u, C_d / c_d)``. Otherwise the
    logarithmic coupling term applies.
    """
    p = params
    c_u = effective_capacity(p.theta_u, w_u, p.snr_u, p.beta_u)
    c_dn = effective_capacity(p.theta_d, w_d, p.snr_d, p.beta_d)
    if p.theta_u >= p.theta_d:
        return arrival_cap_from_capacities(c_u, c_dn, p.c_d)
    s_u, s_d = p.snr_u * p.beta_u, p.snr_d * p.beta_d
    log_arg = (math.log(s_d) + math.log(w_d * p.theta_d / LN2)
               + p.c_d * math.log(s_u)
               + p.c_d * math.log(w_u * (p.theta_d - p.theta_u) / LN2))
    coupling = log_arg / (p.c_d * p.theta_u)
    return min(c_u, coupling)


def sample_closed_loop_delay(mu_u, mu_d, rng, size=None):
    """Draw ``Exp(mu_u) + Exp(mu_d)`` by inverse-CDF sampling on ``rng``."""
    if not (mu_u > 0 and mu_d > 0):
        raise ValueError("mu_u and mu_d must be positive")
    u1 = rng.random(size)
    u2 = rng.random(size)
    return -np.log1p(-u1) / mu_u - np.log1p(-u2) / mu_d


def link_metrics(params, w_u, w_d):
    """All link quantities for ``(w_u, w_d)``; raises :class:`ChannelDomainError`."""
    p = params
    c_u = effective_capacity(p.theta_u, w_u, p.snr_u, p.beta_u)
    c_dn = effective_capacity(p.theta_d, w_d, p.snr_d, p.beta_d)
    mu_u = p.theta_u * c_u / p.delay_scale
    mu_d = p.theta_d * c_dn / p.delay_scale
    eps = packet_loss_rate(mu_u, mu_d, p.d_c_max)
    try:
        e_dc = expected_conditional_delay(mu_u, mu_d, p.d_c_max)
    except DegenerateConditioningError:
        e_dc = math.nan
    return LinkMetrics(
        c_u=c_u, c_d=c_dn, mu_u=mu_u, mu_d=mu_d, epsilon_c=eps,
        e_dc_cond=e_dc, lambda_max=max_arrival_rate(p, w_u, w_d),
    )
