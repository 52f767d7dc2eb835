"""Joint control-gain / bandwidth allocation.

Decision vector: ``[K_1 .. K_n, W_u, W_d]``. The objective is the
``N``-step predicted quadratic cost with a Riccati terminal weight; the
constraints are the arrival-rate cap, the convergence-rate condition,
the bandwidth budget and the loss-rate range.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import link_metrics, max_arrival_rate
from .exceptions import ChannelDomainError, RiccatiConvergenceError, ZeroStateError
from .plant import closed_loop_matrix
from .sensing import ErrorBoundInputs, estimation_error_bound, uplink_arrival_rate
from .stability import rho_required

__all__ = [
    "Candidate",
    "ConstraintResult",
    "FeasibilityReport",
    "SolveReport",
    "GridSpec",
    "GridResult",
    "solve_riccati",
    "riccati_residual",
    "mpc_cost",
    "predicted_cost",
    "check_feasibility",
    "DeRun",
    "de_minimize",
    "de_optimize",
    "grid_oracle",
]


@dataclass(frozen=True, eq=False)
class Candidate:
    k: np.ndarray
    w_u: float
    w_d: float

    def __post_init__(self):
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float).ravel())
        object.__setattr__(self, "w_u", float(self.w_u))
        object.__setattr__(self, "w_d", float(self.w_d))

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:-2].copy(), xi[-2], xi[-1])

    def to_vector(self):
        return np.concatenate([self.k, [self.w_u, self.w_d]])

    def to_dict(self):
        return {"k": self.k.tolist(), "w_u": self.w_u, "w_d": self.w_d}

    @classmethod
    def from_dict(cls, d):
        return cls(d["k"], d["w_u"], d["w_d"])

    def __eq__(self, other):
        if not isinstance(other, Candidate):
            return NotImplemented
        return (np.array_equal(self.k, other.k) and self.w_u == other.w_u
                and self.w_d == other.w_d)

    def __repr__(self):
        return f"Candidate(k={self.k.tolist()}, w_u={self.w_u:.6g}, w_d={self.w_d:.6g})"


# --------------------------------------------------------------------------
# terminal weight and cost

def riccati_residual(plant, q, r_weight, p):
    a, b = plant.a_tilde, plant.b_tilde
    gain = np.linalg.solve(r_weight * np.eye(b.shape[1]) + b.T @ p @ b, b.T @ p @ a)
    rhs = q + a.T @ p @ a - a.T @ p @ b @ gain
    return float(np.max(np.abs(rhs - p)))


def solve_riccati(plant, q=None, r_weight=None, *, tol=1e-10, max_iter=100_000):
    """Terminal weight ``P_f`` by fixed-point iteration of the discrete
    Riccati map, started at ``P = Q`` and symmetrized every step."""
    q = plant.q if q is None else np.asarray(q, dtype=float)
    r_weight = plant.r_weight if r_weight is None else float(r_weight)
    if not r_weight > 0:
        raise ValueError("r_weight must be positive for the Riccati recursion")
    a, b = plant.a_tilde, plant.b_tilde
    r_mat = r_weight * np.eye(b.shape[1])
    p = q.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        gain = np.linalg.solve(r_mat + b.T @ p @ b, b.T @ p @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ gain
        p_next = 0.5 * (p_next + p_next.T)
        residual = float(np.max(np.abs(p_next - p)))
        p = p_next
        if residual < tol:
            return p
        if not np.all(np.isfinite(p)):
            break
    raise RiccatiConvergenceError(residual, it)


def predicted_cost(plant, k, epsilon_c, x_hat_0, horizon, p_f):
    """Cost of the ``horizon``-step prediction ``X̂_{t+1} = A_K X̂_t``."""
    k = np.asarray(k, dtype=float)
    a_k = closed_loop_matrix(plant, k, epsilon_c)
    x = np.asarray(x_hat_0, dtype=float)
    total = 0.0
    for _ in range(horizon):
        u = float(k @ x)
        total += float(x @ plant.q @ x) + plant.r_weight * u * u
        x = a_k @ x
    return total + 0.5 * float(x @ p_f @ x)


def mpc_cost(cand, x_hat_0, plant, params, p_f):
    """Objective ``J(K, W_u, W_d)``; raises :class:`ChannelDomainError` off-domain."""
    eps = link_metrics(params, cand.w_u, cand.w_d).epsilon_c
    return predicted_cost(plant, cand.k, eps, x_hat_0, params.horizon_n, p_f)


# --------------------------------------------------------------------------
# constraints

@dataclass(frozen=True)
class ConstraintResult:
    passed: bool
    slack: float
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"passed": self.passed, "slack": _json_float(self.slack), **{
            k: _json_float(v) if isinstance(v, float) else v for k, v in self.detail.items()}}


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint pass/fail and slack (positive slack = satisfied).

    ``arrival`` is the rate cap, ``rate`` the convergence condition,
    ``bandwidth`` the budget, ``loss`` the loss-rate range.
    ``precondition_ok`` is False when a link is outside the capacity
    formula's domain; that case is charged to ``arrival``.
    """

    arrival: ConstraintResult
    rate: ConstraintResult
    bandwidth: ConstraintResult
    loss: ConstraintResult
    precondition_ok: bool
    epsilon_c: float

    @property
    def feasible(self):
        return all(c.passed for c in (self.arrival, self.rate, self.bandwidth, self.loss))

    def to_dict(self):
        return {
            "feasible": self.feasible,
            "precondition_ok": self.precondition_ok,
            "epsilon_c": _json_float(self.epsilon_c),
            "P1b_arrival_rate": self.arrival.to_dict(),
            "P1c_convergence_rate": self.rate.to_dict(),
            "P1d_bandwidth": self.bandwidth.to_dict(),
            "P1e_loss_rate": self.loss.to_dict(),
        }


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _lambda_u(params, plant):
    n = plant.n if params.bits_per_state_vector else 1
    return uplink_arrival_rate(params.r, params.t_d, n)


def check_feasibility(cand, params, plant, x_hat_t):
    """Evaluate every constraint of the joint problem; never raises."""
    total = cand.w_u + cand.w_d
    bw_slack = min(params.w0 - total, cand.w_u, cand.w_d)
    bandwidth = ConstraintResult(bool(bw_slack >= 0), bw_slack, {"w_total": total})

    lam_u = _lambda_u(params, plant)
    try:
        metrics = link_metrics(params, cand.w_u, cand.w_d)
        lam_max = max_arrival_rate(params, cand.w_u, cand.w_d)
        precondition_ok = True
    except ChannelDomainError:
        metrics, lam_max, precondition_ok = None, math.nan, False

    if not precondition_ok:
        nan = ConstraintResult(False, math.nan)
        arrival = ConstraintResult(False, -math.inf, {"lambda_u": lam_u, "precondition": "violated"})
        return FeasibilityReport(arrival, nan, bandwidth, nan, False, math.nan)

    arrival = ConstraintResult(bool(lam_u <= lam_max), lam_max - lam_u,
                               {"lambda_u": lam_u, "lambda_max": lam_max})
    eps = metrics.epsilon_c
    loss_ok = bool(0.0 <= eps <= 1.0)
    loss = ConstraintResult(loss_ok, min(eps, 1.0 - eps) if loss_ok else math.nan)
    if not loss_ok:
        return FeasibilityReport(arrival, ConstraintResult(False, math.nan), bandwidth, loss,
                                 True, eps)

    f_e = estimation_error_bound(
        ErrorBoundInputs(params.r, eps, params.d_c_max, params.t_d, plant, cand.k))
    try:
        required, terms = rho_required(plant, cand.k, eps, f_e, x_hat_t)
        rate = ConstraintResult(bool(params.rho >= required), params.rho - required,
                                {"rho_required": required, **terms})
    except ZeroStateError:
        rate = ConstraintResult(True, math.inf, {"rho_required": 0.0, "zero_state": True})
    return FeasibilityReport(arrival, rate, bandwidth, loss, True, eps)


# --------------------------------------------------------------------------
# differential evolution

@dataclass
class SolveReport:
    best: Candidate | None
    j_best: float
    feasible: bool
    iterations: int
    evaluations: int
    stall_history: list
    best_history: list
    diagnostics: FeasibilityReport | None

    def to_dict(self):
        return {
            "feasible": self.feasible,
            "best": None if self.best is None else self.best.to_dict(),
            "j_best": _json_float(self.j_best),
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "stall_history": list(self.stall_history),
            "best_history": [_json_float(j) for j in self.best_history],
            "constraints": None if self.diagnostics is None else self.diagnostics.to_dict(),
        }


class _Problem:
    """Caches everything a single fitness evaluation needs."""

    def __init__(self, params, plant, x_hat_0, p_f=None):
        self.params = params
        self.plant = plant
        self.x_hat_0 = np.asarray(x_hat_0, dtype=float)
        self.p_f = solve_riccati(plant) if p_f is None else p_f

    def evaluate(self, xi):
        cand = Candidate.from_vector(xi)
        report = check_feasibility(cand, self.params, self.plant, self.x_hat_0)
        if report.precondition_ok and math.isfinite(report.epsilon_c):
            j = predicted_cost(self.plant, cand.k, report.epsilon_c, self.x_hat_0,
                               self.params.horizon_n, self.p_f)
        else:
            j = math.inf
        return report.feasible, j, report


def _sample_triangle(rng, size, w0):
    u = rng.random((size, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    return w0 * u


def _repair(xi, n_k, k_max, w0):
    xi[:n_k] = np.clip(xi[:n_k], -k_max, k_max)
    w = np.clip(xi[n_k:], 0.0, w0)
    total = w.sum()
    if total > w0:
        w *= w0 / total
    xi[n_k:] = w
    return xi


def _violation_score(report):
    """Ordering key for reporting the least-bad infeasible individual."""
    if not report.precondition_ok:
        return -math.inf
    slacks = [report.rate.slack, report.arrival.slack, report.bandwidth.slack]
    return sum(min(0.0, s) for s in slacks if math.isfinite(s))


@dataclass
class DeRun:
    """Final population and histories of one :func:`de_minimize` run."""

    population: np.ndarray
    feasible: np.ndarray
    cost: np.ndarray
    info: list
    iterations: int
    evaluations: int
    stall_history: list
    best_history: list

    @property
    def best_index(self):
        if not self.feasible.any():
            return None
        idx = np.flatnonzero(self.feasible)
        return int(idx[np.argmin(self.cost[idx])])


def de_minimize(evaluate, initial, repair, de_cfg, rng, *, executor=None, callback=None):
    """Constrained differential evolution on an arbitrary objective.

    ``evaluate(x)`` returns ``(feasible, cost, info)``; ``initial`` is the
    starting population (one row per individual) and ``repair(x)`` maps a
    trial back into the search domain in place.

    Per generation every individual gets a mutant
    ``V = X_r1 + F (X_r2 - X_r3)`` (distinct ``r1..r3``, none equal to the
    target). With ``crossover="vector"`` the trial is the whole mutant
    with probability ``p_cr`` and the unchanged target otherwise. A trial
    replaces its target when it is feasible and cheaper, or when the
    target itself is infeasible. The run stops after ``n_m`` generations
    or after ``n_stall`` consecutive generations whose stall test passes.
    With ``stall_rule="trial_gap"`` that test is
    ``|min J(trials) - min J(population)| < tol``, taken before selection
    over all individuals; ``"best_change"`` instead tests the change of
    the best feasible cost across the generation.

    All random draws come from ``rng`` on the calling thread; ``executor``
    (anything with ``map``) only parallelizes fitness evaluations, so the
    result does not depend on the worker count.
    """
    mapper = map if executor is None else executor.map
    pop = np.array(initial, dtype=float)
    n_p, dim = pop.shape
    if n_p < 4:
        raise ValueError("differential evolution needs at least 4 individuals")
    results = list(mapper(evaluate, pop))
    feas = np.array([bool(r[0]) for r in results])
    cost = np.array([float(r[1]) for r in results])
    info = [r[2] for r in results]
    evaluations = n_p

    def best_feasible():
        return float(cost[feas].min()) if feas.any() else math.inf

    best_history = [best_feasible()]
    stall_history = [0]
    counter = 0
    generation = 0
    while generation < de_cfg.n_m and counter < de_cfg.n_stall:
        generation += 1
        prev_best = best_feasible()
        trials = pop.copy()
        changed = np.zeros(n_p, dtype=bool)
        for k in range(n_p):
            others = [i for i in range(n_p) if i != k]
            r1, r2, r3 = rng.choice(others, size=3, replace=False)
            mutant = pop[r1] + de_cfg.f_d * (pop[r2] - pop[r3])
            if de_cfg.crossover == "vector":
                if rng.random() < de_cfg.p_cr:
                    trials[k] = mutant
                    changed[k] = True
            else:
                mask = rng.random(dim) < de_cfg.p_cr
                mask[rng.integers(dim)] = True
                trials[k] = np.where(mask, mutant, pop[k])
                changed[k] = True
            if changed[k]:
                repair(trials[k])
        idx = np.flatnonzero(changed)
        evaluated = list(mapper(evaluate, trials[idx]))
        evaluations += len(idx)
        if de_cfg.stall_rule == "trial_gap":
            trial_cost = cost.copy()
            for i, (_, t_cost, _) in zip(idx, evaluated):
                trial_cost[i] = t_cost
            gap = abs(float(trial_cost.min()) - float(cost.min()))
        for i, (t_feas, t_cost, t_info) in zip(idx, evaluated):
            if (t_feas and t_cost < cost[i]) or not feas[i]:
                pop[i] = trials[i]
                feas[i], cost[i], info[i] = bool(t_feas), float(t_cost), t_info
        now_best = best_feasible()
        if de_cfg.stall_rule != "trial_gap":
            gap = abs(now_best - prev_best)
        if math.isfinite(now_best) and gap < de_cfg.tol:
            counter += 1
        else:
            counter = 0
        best_history.append(now_best)
        stall_history.append(counter)
        if callback is not None:
            callback(generation, pop, feas, cost)
    return DeRun(pop, feas, cost, info, generation, evaluations, stall_history, best_history)


def de_optimize(params, plant, de_cfg, x_hat_0, rng, *, p_f=None, executor=None,
                callback=None):
    """Joint gain/bandwidth problem solved by :func:`de_minimize`.

    Gains start uniform in ``[-k_max, k_max]`` and the bandwidth pair
    uniform on the triangle ``w_u + w_d <= W0``; trials are clipped back
    into that box and triangle. The returned best is re-checked against
    every constraint. Without a feasible individual the report carries
    the least-violating one and ``feasible=False``.
    """
    problem = _Problem(params, plant, x_hat_0, p_f)
    n_k = plant.n
    initial = np.empty((de_cfg.n_p, n_k + 2))
    initial[:, :n_k] = rng.uniform(-de_cfg.k_max, de_cfg.k_max, size=(de_cfg.n_p, n_k))
    initial[:, n_k:] = _sample_triangle(rng, de_cfg.n_p, params.w0)

    def repair(xi):
        return _repair(xi, n_k, de_cfg.k_max, params.w0)

    run = de_minimize(problem.evaluate, initial, repair, de_cfg, rng,
                      executor=executor, callback=callback)
    i = run.best_index
    if i is not None:
        best = Candidate.from_vector(run.population[i])
        recheck = check_feasibility(best, params, plant, problem.x_hat_0)
        return SolveReport(best, float(run.cost[i]), recheck.feasible, run.iterations,
                           run.evaluations, run.stall_history, run.best_history, recheck)
    i = int(np.argmax([_violation_score(r) for r in run.info]))
    return SolveReport(Candidate.from_vector(run.population[i]), float(run.cost[i]), False,
                       run.iterations, run.evaluations, run.stall_history, run.best_history,
                       run.info[i])


# --------------------------------------------------------------------------
# exhaustive grid oracle

@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid: one value list per gain component, then ``W_u`` and ``W_d``."""

    k_axes: tuple
    w_u_values: tuple
    w_d_values: tuple
    max_points: int = 2_000_000

    @property
    def size(self):
        n = len(self.w_u_values) * len(self.w_d_values)
        for axis in self.k_axes:
            n *= len(axis)
        return n


@dataclass
class GridResult:
    best: Candidate | None
    j_best: float
    n_points: int
    n_feasible: int

    @property
    def empty(self):
        return self.best is None


def grid_oracle(params, plant, grid_spec, x_hat_0, *, p_f=None):
    """Exhaustively evaluate feasibility and cost on a grid (deterministic)."""
    if grid_spec.size > grid_spec.max_points:
        raise ValueError(f"grid has {grid_spec.size} points, limit is {grid_spec.max_points}")
    if len(grid_spec.k_axes) != plant.n:
        raise ValueError("need one gain axis per state component")
    problem = _Problem(params, plant, x_hat_0, p_f)
    best, j_best, n_feasible = None, math.inf, 0
    axes = [*grid_spec.k_axes, grid_spec.w_u_values, grid_spec.w_d_values]
    for point in itertools.product(*axes):
        ok, j, _ = problem.evaluate(np.array(point, dtype=float))
        if ok:
            n_feasible += 1
            if j < j_best:
                best, j_best = Candidate.from_vector(point), j
    return GridResult(best, j_best, grid_spec.size, n_feasible)
