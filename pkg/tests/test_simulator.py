import json

import numpy as np
import pytest

from wncs.channel import link_metrics, packet_loss_rate
from wncs.config import DeConfig, Scenario, default_scenario, make_plant
from wncs.exceptions import InfeasibleCandidateError
from wncs.optimizer import Candidate
from wncs.simulator import (
    CSV_COLUMNS,
    SweepSpec,
    optimizer_rng,
    run_monte_carlo,
    run_sweep,
    run_trial,
    solve_initial,
    trial_generators,
)

# LQR gain of the reference plant (Q = diag(10, 10, 1), R = 1); spectral
# radius of the loss-free loop is 0.889.
K_LQR = np.array([2.11303389, 3.36440216, 0.45368707])
W_SPLIT = (7.5e5, 7.5e5)


@pytest.fixture(scope="module")
def solved():
    sc = default_scenario()
    return sc, solve_initial(sc, optimizer_rng(0)).best


def test_infeasible_candidate_refused(scenario):
    cand = Candidate(K_LQR, *W_SPLIT)
    with pytest.raises(InfeasibleCandidateError):
        run_trial(scenario, cand, 5, np.random.default_rng(0))
    rec = run_trial(scenario, cand, 5, np.random.default_rng(0), allow_infeasible=True)
    assert rec.steps == 5


def test_zero_initial_state_stays_at_rest():
    base = default_scenario()
    plant = make_plant(base.plant.a, base.plant.b, 0.1, x_l=base.plant.x_l, x_u=base.plant.x_u,
                       p=base.plant.p, q=base.plant.q, x0=np.zeros(3))
    sc = Scenario(base.params, plant, base.de)
    # quantizing 0 gives a nonzero bin midpoint, so use bounds centered on 0
    plant0 = make_plant(base.plant.a, base.plant.b, 0.1, x_l=[-1.5, -1.5, -1.5],
                        x_u=[1.0, 1.0, 1.0], x0=np.zeros(3))
    for s in (sc, Scenario(base.params.with_(r=30), plant0, base.de)):
        rec = run_trial(s, Candidate(np.zeros(3), *W_SPLIT), 50, np.random.default_rng(1),
                        allow_infeasible=True)
        np.testing.assert_array_equal(rec.state_distance, 0.0)
        np.testing.assert_array_equal(rec.acc_cost, 0.0)


def _wide(**overrides):
    # bounds wide enough that the LQR transient never clamps the quantizer
    base = default_scenario(**overrides)
    plant = make_plant(base.plant.a, base.plant.b, 0.1, x_l=[-1e3] * 3, x_u=[1e3] * 3,
                       p=base.plant.p, q=base.plant.q, x0=base.plant.x0)
    return Scenario(base.params, plant, base.de)


def test_perfect_loop_matches_deterministic_iteration():
    sc = _wide(r=30)
    cand = Candidate(K_LQR, *W_SPLIT)
    rec = run_trial(sc, cand, 100, np.random.default_rng(0), delays=0.0, allow_infeasible=True)
    x = sc.plant.x0.copy()
    a_cl = sc.plant.a_tilde + sc.plant.b_tilde @ K_LQR.reshape(1, -1)
    for _ in range(100):
        x = a_cl @ x
    scale = np.linalg.norm(sc.plant.x0)
    assert np.linalg.norm(rec.x[-1] - x) <= 1e-6 * scale
    assert np.all(rec.eta == 1) and np.all(rec.source_index == 0)


def test_contraction_with_fine_quantizer_and_no_loss():
    sc = _wide(r=30, d_c_max=1.0)
    cand = Candidate(K_LQR, *W_SPLIT)
    rec = run_trial(sc, cand, 400, np.random.default_rng(2), allow_infeasible=True)
    assert rec.state_distance[-1] < 1e-4 * rec.state_distance[0]
    assert rec.source_index.max() >= 1  # delayed entries were exercised


def test_accounting_identities(solved):
    sc, cand = solved
    rec = run_trial(sc, cand, 300, np.random.default_rng(4))
    lost = rec.eta == 0
    assert lost.any() and (~lost).any()
    np.testing.assert_array_equal(rec.control_energy[lost], 0.0)
    np.testing.assert_allclose(rec.acc_control_energy, np.cumsum(rec.control_energy))
    np.testing.assert_allclose(rec.acc_cost,
                               np.cumsum(rec.state_distance) + np.cumsum(rec.control_energy),
                               rtol=1e-12)
    assert np.all(np.diff(rec.acc_cost) >= 0) and np.all(np.diff(rec.acc_control_energy) >= 0)
    assert np.all(rec.state_distance >= 0)
    assert np.all(rec.delay[lost] > sc.params.d_c_max)
    q = sc.plant.q
    np.testing.assert_allclose(rec.state_distance, np.einsum("ti,ij,tj->t", rec.x[:-1], q, rec.x[:-1]))


def test_loss_fraction_matches_closed_form(solved):
    sc, cand = solved
    eps = link_metrics(sc.params, cand.w_u, cand.w_d).epsilon_c
    res = run_monte_carlo(sc, cand, 1000, 100, 11)
    n = 100 * 1000
    observed = float(np.mean(res.loss_frac))
    assert abs(observed - eps) <= 3 * np.sqrt(eps * (1 - eps) / n)


def test_single_trial_statistics(solved):
    sc, cand = solved
    res = run_monte_carlo(sc, cand, 50, 1, 3)
    rec = run_trial(sc, cand, 50, trial_generators(3, 1)[0])
    np.testing.assert_array_equal(res.state_distance_std, 0.0)
    np.testing.assert_array_equal(res.state_distance_mean, rec.state_distance)
    np.testing.assert_array_equal(res.acc_cost_mean, rec.acc_cost)


def test_trial_independent_of_batch_size(solved):
    sc, cand = solved
    gens = trial_generators(9, 4)
    lone = run_trial(sc, cand, 40, gens[2])
    res = run_monte_carlo(sc, cand, 40, 4, 9)
    again = run_trial(sc, cand, 40, trial_generators(9, 4)[2])
    np.testing.assert_array_equal(lone.x, again.x)
    assert lone.seed == again.seed
    assert res.trials == 4


def test_monte_carlo_deterministic(solved, tmp_path):
    sc, cand = solved
    a = run_monte_carlo(sc, cand, 100, 20, 42)
    b = run_monte_carlo(sc, cand, 100, 20, 42)
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == CSV_COLUMNS
    c = run_monte_carlo(sc, cand, 100, 20, 43)
    assert not np.array_equal(a.state_distance_mean, c.state_distance_mean)


def test_divergence_truncates_trial():
    base = default_scenario()
    plant = make_plant([[20.0]], [1.0], 0.1, x_l=[-1.0], x_u=[1.0], x0=[0.5])
    sc = Scenario(base.params, plant, base.de)  # open-loop pole at 3
    cand = Candidate(np.zeros(1), *W_SPLIT)
    rec = run_trial(sc, cand, 400, np.random.default_rng(0), allow_infeasible=True)
    assert rec.diverged
    assert np.isnan(rec.state_distance[-1])
    assert np.all(np.isfinite(rec.state_distance[: rec.diverged_at]))
    res = run_monte_carlo(sc, cand, 400, 5, 0, allow_infeasible=True)
    assert res.diverged == 5


def test_reoptimization_runs():
    sc = default_scenario(reoptimize_every=5)
    cand = solve_initial(sc, optimizer_rng(0)).best
    sc = Scenario(sc.params, sc.plant, DeConfig(n_m=5))
    res = run_monte_carlo(sc, cand, 12, 2, 0)
    assert res.steps == 12 and np.all(np.isfinite(res.acc_cost_mean))


def test_sweep_writes_files_and_records_failures(tmp_path):
    base = default_scenario()
    spec = SweepSpec("rho", (0.999, 0.9), base)
    summary = run_sweep(spec, tmp_path, steps=20, trials=3, seed=0)
    statuses = {e["value"]: e["status"] for e in summary["results"]}
    assert statuses == {0.999: "ok", 0.9: "infeasible"}
    assert (tmp_path / "rho_0.999.csv").exists()
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["results"][0]["final_state_distance_mean"] > 0


def test_sweep_fixed_candidate(tmp_path, solved):
    sc, cand = solved
    spec = SweepSpec("r", (5, 6), sc, cand)
    refused = run_sweep(spec, tmp_path / "strict", steps=10, trials=2, seed=0)
    statuses = [e["status"] for e in refused["results"]]
    assert statuses == ["infeasible", "ok"]  # the candidate was solved at r = 6
    assert refused["results"][0]["feasibility"]["feasible"] is False
    summary = run_sweep(spec, tmp_path, steps=10, trials=2, seed=0, allow_infeasible=True)
    assert [e["candidate"]["k"] for e in summary["results"]] == [cand.k.tolist()] * 2


def test_sweep_spec_validation(scenario):
    with pytest.raises(ValueError):
        SweepSpec("theta_u", (0.1,), scenario)
    with pytest.raises(ValueError):
        SweepSpec("r", (4.5,), scenario)
    with pytest.raises(ValueError):
        SweepSpec("rho", (), scenario)


def test_loss_rate_helper_consistency(solved):
    sc, cand = solved
    m = link_metrics(sc.params, cand.w_u, cand.w_d)
    assert m.epsilon_c == packet_loss_rate(m.mu_u, m.mu_d, sc.params.d_c_max)
