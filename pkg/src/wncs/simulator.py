"""Monte-Carlo closed-loop trials with delay-compensated command sequences.

Every sampling period the sensor quantizes the true state, the controller
predicts ``N`` future states with ``A_K`` and ships the commands
``K X̂``. The actuator receives the sequence after the closed-loop delay
``D_c``; a sequence later than ``d_c_max`` is lost (no input that step),
otherwise entry ``min(⌊D_c / T_d⌋, N - 1)`` is applied.

Trials are simulated together as numpy batches. Each trial draws its
delays from its own generator, so a trial's path depends only on its own
seed and never on how many other trials run alongside it.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import link_metrics
from .exceptions import ChannelDomainError, InfeasibleCandidateError, WncsError
from .optimizer import Candidate, check_feasibility, de_optimize, solve_riccati
from .plant import apply_command, closed_loop_matrix
from .sensing import Quantizer, quantize

__all__ = [
    "DIVERGENCE_NORM",
    "CSV_COLUMNS",
    "TrialRecord",
    "MonteCarloResult",
    "SweepSpec",
    "optimizer_rng",
    "initial_estimate",
    "solve_initial",
    "run_trial",
    "trial_generators",
    "run_monte_carlo",
    "run_sweep",
]

DIVERGENCE_NORM = 1e12
CSV_COLUMNS = (
    "step", "time_s",
    "state_distance_mean", "state_distance_std",
    "acc_energy_mean", "acc_energy_std",
    "acc_cost_mean", "acc_cost_std",
    "loss_frac",
)
SWEEPABLE = ("d_c_max", "rho", "r", "delay_scale")

# Tag mixed into the seed of the optimizer stream so it never coincides
# with a per-trial stream derived from the same master seed.
_OPTIMIZER_TAG = 0xDE


def optimizer_rng(seed):
    """Generator used for the up-front DE solve of a run seeded with ``seed``."""
    return np.random.default_rng([_OPTIMIZER_TAG, int(seed)])


def initial_estimate(scenario):
    """Quantized initial state the controller sees at ``t = 0``."""
    params, plant, _ = scenario
    return quantize(Quantizer.for_plant(plant, params.r), plant.x0)


def solve_initial(scenario, rng, *, p_f=None):
    """Solve the joint problem once at the quantized initial state."""
    params, plant, de_cfg = scenario
    return de_optimize(params, plant, de_cfg, initial_estimate(scenario), rng, p_f=p_f)


@dataclass
class TrialRecord:
    """One closed-loop trajectory; per-step arrays have length ``steps``.

    ``x`` holds ``steps + 1`` states. ``source_index`` is the sequence entry
    applied at each step (-1 when the packet was lost). Rows after a
    divergence are NaN.
    """

    x: np.ndarray
    source_index: np.ndarray
    eta: np.ndarray
    delay: np.ndarray
    state_distance: np.ndarray
    control_energy: np.ndarray
    acc_control_energy: np.ndarray
    acc_cost: np.ndarray
    clamped_components: np.ndarray
    index_clamped: np.ndarray
    diverged: bool
    diverged_at: int | None
    seed: tuple | None = None

    @property
    def steps(self):
        return len(self.eta)


@dataclass
class MonteCarloResult:
    """Per-step mean and standard deviation across trials."""

    t_d: float
    state_distance_mean: np.ndarray
    state_distance_std: np.ndarray
    acc_energy_mean: np.ndarray
    acc_energy_std: np.ndarray
    acc_cost_mean: np.ndarray
    acc_cost_std: np.ndarray
    loss_frac: np.ndarray
    trials: int
    diverged: int
    clamp_events: int
    index_clamps: int
    extra: dict = field(default_factory=dict)

    @property
    def steps(self):
        return len(self.loss_frac)

    def rows(self):
        for t in range(self.steps):
            yield (t, t * self.t_d,
                   self.state_distance_mean[t], self.state_distance_std[t],
                   self.acc_energy_mean[t], self.acc_energy_std[t],
                   self.acc_cost_mean[t], self.acc_cost_std[t],
                   self.loss_frac[t])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in self.rows():
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    def final(self):
        """Last-step metrics and run counters as a JSON-friendly dict."""
        last = self.steps - 1
        out = {
            "steps": self.steps,
            "trials": self.trials,
            "final_state_distance_mean": _num(self.state_distance_mean[last]),
            "final_state_distance_std": _num(self.state_distance_std[last]),
            "final_acc_energy_mean": _num(self.acc_energy_mean[last]),
            "final_acc_energy_std": _num(self.acc_energy_std[last]),
            "final_acc_cost_mean": _num(self.acc_cost_mean[last]),
            "final_acc_cost_std": _num(self.acc_cost_std[last]),
            "mean_loss_frac": _num(np.mean(self.loss_frac)),
            "diverged_trials": self.diverged,
            "clamp_events": self.clamp_events,
            "index_clamps": self.index_clamps,
        }
        out.update(self.extra)
        return out


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _seed_of(rng):
    seq = getattr(rng.bit_generator, "seed_seq", None)
    if seq is None or not hasattr(seq, "spawn_key"):
        return None
    return (seq.entropy, tuple(seq.spawn_key))


class _LoopState:
    """Per-trial controller state (gain, loss rate and delay rates)."""

    def __init__(self, params, plant, cand, trials):
        metrics = link_metrics(params, cand.w_u, cand.w_d)
        self.k = np.tile(cand.k, (trials, 1))
        self.eps = np.full(trials, metrics.epsilon_c)
        self.mu_u = np.full(trials, metrics.mu_u)
        self.mu_d = np.full(trials, metrics.mu_d)
        a_k = closed_loop_matrix(plant, cand.k, metrics.epsilon_c)
        self.a_k = np.tile(a_k, (trials, 1, 1))

    def update(self, i, params, plant, cand):
        metrics = link_metrics(params, cand.w_u, cand.w_d)
        self.k[i] = cand.k
        self.eps[i] = metrics.epsilon_c
        self.mu_u[i] = metrics.mu_u
        self.mu_d[i] = metrics.mu_d
        self.a_k[i] = closed_loop_matrix(plant, cand.k, metrics.epsilon_c)


def _require_feasible(scenario, cand, allow_infeasible):
    params, plant, _ = scenario
    report = check_feasibility(cand, params, plant, initial_estimate(scenario))
    if not report.precondition_ok:
        raise ChannelDomainError(
            "candidate bandwidths lie outside the capacity formula's domain")
    if not report.feasible and not allow_infeasible:
        raise InfeasibleCandidateError(
            "candidate violates the joint-problem constraints; pass "
            "allow_infeasible=True to simulate it anyway", report)
    return report


def _simulate(scenario, cand, steps, rngs, *, delays=None, p_f=None):
    """Batched core shared by :func:`run_trial` and :func:`run_monte_carlo`."""
    params, plant, de_cfg = scenario
    trials = len(rngs)
    n = plant.n
    horizon = params.horizon_n
    quantizer = Quantizer.for_plant(plant, params.r)

    if delays is None:
        unit = np.stack([rng.random((steps, 2)) for rng in rngs])
        unit = -np.log1p(-unit)
        fixed = None
    else:
        unit = None
        fixed = np.broadcast_to(np.asarray(delays, dtype=float), (trials, steps))

    loop = _LoopState(params, plant, cand, trials)
    reopt = params.reoptimize_every
    if reopt and p_f is None:
        p_f = solve_riccati(plant)

    x = np.empty((trials, steps + 1, n))
    x[:, 0] = plant.x0
    source = np.full((trials, steps), -1, dtype=np.int64)
    delay = np.empty((trials, steps))
    energy = np.empty((trials, steps))
    clamped = np.zeros((trials, steps), dtype=np.int64)
    index_clamped = np.zeros((trials, steps), dtype=bool)
    alive = np.ones(trials, dtype=bool)
    diverged_at = np.full(trials, -1, dtype=np.int64)
    rows = np.arange(trials)

    for t in range(steps):
        x_t = x[:, t]
        x_hat, clamps = quantize(quantizer, x_t, return_clamped=True)
        clamped[:, t] = clamps

        if reopt and t > 0 and t % reopt == 0:
            for i in np.flatnonzero(alive):
                rep = de_optimize(params, plant, de_cfg, x_hat[i], rngs[i], p_f=p_f)
                if rep.feasible:
                    loop.update(i, params, plant, rep.best)

        if fixed is None:
            d_c = unit[:, t, 0] / loop.mu_u + unit[:, t, 1] / loop.mu_d
        else:
            d_c = fixed[:, t]
        delay[:, t] = d_c
        received = d_c <= params.d_c_max
        raw_index = np.floor(d_c / params.t_d)
        index = np.minimum(raw_index, horizon - 1).astype(np.int64)
        index[~received] = -1
        index_clamped[:, t] = received & (raw_index > horizon - 1)
        source[:, t] = index

        # Prediction A_K^index X̂ for each trial's own delay index.
        x_pred = x_hat.copy()
        current = x_hat
        for tau in range(1, int(index.max(initial=0)) + 1):
            current = np.einsum("tij,tj->ti", loop.a_k, current)
            hit = index == tau
            x_pred[hit] = current[hit]

        u = np.einsum("ti,ti->t", x_pred, loop.k)
        u = np.where(received, u, 0.0)
        energy[:, t] = plant.r_weight * u * u
        x_next = apply_command(plant, x_t, u)

        blown = alive & ~(np.linalg.norm(x_next, axis=1) <= DIVERGENCE_NORM)
        if blown.any():
            diverged_at[blown] = t + 1
            alive &= ~blown
        x_next[~alive] = np.nan
        x[:, t + 1] = x_next

    state_distance = np.einsum("tsi,ij,tsj->ts", x[:, :steps], plant.q, x[:, :steps])
    energy[np.isnan(state_distance)] = np.nan
    acc_energy = np.cumsum(energy, axis=1)
    acc_cost = np.cumsum(state_distance + energy, axis=1)
    return dict(
        x=x, source=source, delay=delay, rows=rows,
        state_distance=state_distance, energy=energy, acc_energy=acc_energy,
        acc_cost=acc_cost, clamped=clamped, index_clamped=index_clamped,
        diverged_at=diverged_at, eps=loop.eps,
    )


def run_trial(scenario, cand, steps, rng, *, allow_infeasible=False, delays=None, p_f=None):
    """Simulate one trajectory of ``steps`` sampling periods.

    ``delays`` overrides the random closed-loop delays with fixed values
    (a scalar or one value per step), which is how a loss-free,
    delay-free loop is forced in tests.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    _require_feasible(scenario, cand, allow_infeasible)
    out = _simulate(scenario, cand, steps, [rng], delays=delays, p_f=p_f)
    at = int(out["diverged_at"][0])
    return TrialRecord(
        x=out["x"][0],
        source_index=out["source"][0],
        eta=(out["source"][0] >= 0).astype(np.int8),
        delay=out["delay"][0],
        state_distance=out["state_distance"][0],
        control_energy=out["energy"][0],
        acc_control_energy=out["acc_energy"][0],
        acc_cost=out["acc_cost"][0],
        clamped_components=out["clamped"][0],
        index_clamped=out["index_clamped"][0],
        diverged=at >= 0,
        diverged_at=at if at >= 0 else None,
        seed=_seed_of(rng),
    )


def trial_generators(master_seed, trials):
    """Independent per-trial generators spawned from ``master_seed``."""
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(int(master_seed)).spawn(trials)]


def _mean_std(a):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(a, axis=0), np.nanstd(a, axis=0)


def run_monte_carlo(scenario, cand, steps, trials, master_seed, *, allow_infeasible=False,
                    p_f=None):
    """Average ``trials`` independent trajectories step by step.

    Trial ``i`` uses the ``i``-th child of ``SeedSequence(master_seed)``,
    so it matches ``run_trial`` called with that generator. Statistics
    skip diverged trials from the step they diverge; the standard
    deviation is the population one (zero for a single trial).
    """
    if trials < 1 or steps < 1:
        raise ValueError("trials and steps must be positive")
    params = tuple(scenario)[0]
    _require_feasible(scenario, cand, allow_infeasible)
    out = _simulate(scenario, cand, steps, trial_generators(master_seed, trials), p_f=p_f)
    sd_mean, sd_std = _mean_std(out["state_distance"])
    en_mean, en_std = _mean_std(out["acc_energy"])
    cost_mean, cost_std = _mean_std(out["acc_cost"])
    lost = (out["source"] < 0).astype(float)
    lost[np.isnan(out["state_distance"])] = np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        loss_frac = np.nanmean(lost, axis=0)
    return MonteCarloResult(
        t_d=params.t_d,
        state_distance_mean=sd_mean, state_distance_std=sd_std,
        acc_energy_mean=en_mean, acc_energy_std=en_std,
        acc_cost_mean=cost_mean, acc_cost_std=cost_std,
        loss_frac=loss_frac, trials=trials,
        diverged=int(np.sum(out["diverged_at"] >= 0)),
        clamp_events=int(out["clamped"].sum()),
        index_clamps=int(out["index_clamped"].sum()),
        extra={"epsilon_c": _num(out["eps"][0])},
    )


@dataclass(frozen=True)
class SweepSpec:
    """One parameter varied over ``values`` on top of ``base``.

    With ``candidate`` set, every value reuses that candidate; otherwise
    the joint problem is re-solved for each value.
    """

    param: str
    values: tuple
    base: object
    candidate: Candidate | None = None

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValueError(f"param must be one of {', '.join(SWEEPABLE)} (got {self.param!r})")
        if not self.values:
            raise ValueError("values must not be empty")
        for value in self.values:
            self.scenario_for(value)

    def scenario_for(self, value):
        if self.param == "r":
            if float(value) != int(value):
                raise ValueError(f"r must be an integer (got {value!r})")
            value = int(value)
        return self.base.with_params(**{self.param: value})


def _value_label(param, value):
    text = str(int(value)) if param == "r" else repr(float(value))
    return f"{param}_{text}"


def run_sweep(spec, out_dir, *, steps, trials, seed, allow_infeasible=False):
    """Run one Monte-Carlo batch per swept value.

    Writes ``<param>_<value>.csv`` per value and ``summary.json``. A value
    whose optimization or simulation fails is recorded in the summary and
    the remaining values still run. All values share the same optimizer
    and trial seeds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for value in spec.values:
        scenario = spec.scenario_for(value)
        label = _value_label(spec.param, value)
        entry = {"param": spec.param, "value": value}
        try:
            if spec.candidate is None:
                report = solve_initial(scenario, optimizer_rng(seed))
                entry["optimization"] = report.to_dict()
                cand = report.best
                if not report.feasible and not allow_infeasible:
                    entry.update(status="infeasible")
                    entries.append(entry)
                    continue
            else:
                cand = spec.candidate
            result = run_monte_carlo(scenario, cand, steps, trials, seed,
                                     allow_infeasible=allow_infeasible)
        except InfeasibleCandidateError as exc:
            entry.update(status="infeasible", error=str(exc), feasibility=exc.report.to_dict())
            entries.append(entry)
            continue
        except (WncsError, ValueError) as exc:
            entry.update(status="error", error=str(exc))
            entries.append(entry)
            continue
        csv_path = out_dir / f"{label}.csv"
        result.write_csv(csv_path)
        entry.update(status="ok", candidate=cand.to_dict(), csv=csv_path.name, **result.final())
        entries.append(entry)
    summary = {"param": spec.param, "steps": steps, "trials": trials, "seed": seed,
               "results": entries}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
