import json

import numpy as np
import pytest

from wncs.config import (
    DeConfig,
    Scenario,
    SystemParams,
    agv_plant,
    db_to_linear,
    default_scenario,
    load_scenario,
    make_plant,
    save_scenario,
    scenario_from_dict,
)
from wncs.exceptions import ConfigError, ScenarioParseError, ScenarioValidationError

SHIPPED = "scenarios/reference.json"


def test_defaults_match_reference_values():
    p = SystemParams()
    assert p.snr_u == pytest.approx(1000.0)
    assert p.snr_d == pytest.approx(10 ** 3.3)
    assert (p.theta_u, p.theta_d, p.w0, p.t_d, p.c_d) == (0.02, 0.04, 1.5e6, 0.1, 0.1)
    assert (p.r, p.horizon_n, p.trials, p.rho) == (6, 10, 500, 0.999)
    de = DeConfig()
    assert (de.n_p, de.p_cr, de.f_d, de.n_m, de.n_stall, de.tol) == (15, 0.7, 0.5, 1000, 5, 0.01)


def test_db_conversion():
    assert db_to_linear(30.0) == pytest.approx(1000.0)
    assert db_to_linear(0.0) == 1.0


@pytest.mark.parametrize("field, value", [
    ("theta_u", 0.0), ("w0", -1.0), ("snr_d", float("nan")), ("r", 0),
    ("horizon_n", 0), ("trials", 0), ("t_d", 0.0), ("d_c_max", 0.0), ("delay_scale", 0.0),
])
def test_invalid_params_rejected(field, value):
    with pytest.raises(ScenarioValidationError):
        SystemParams(**{field: value})


def test_tau_max_guards_float_division():
    assert SystemParams(d_c_max=0.3, t_d=0.1).tau_max == 3
    assert SystemParams(d_c_max=0.1, t_d=0.1).tau_max == 1
    assert SystemParams(d_c_max=0.06, t_d=0.1).tau_max == 0


def test_agv_plant_discretization():
    plant = agv_plant(0.125, 0.1)
    expected_a = np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.1], [0.0, 0.0, 0.2]])
    np.testing.assert_allclose(plant.a_tilde, expected_a, atol=1e-15)
    np.testing.assert_allclose(plant.b_tilde.ravel(), [0.0, 0.0, -0.8], atol=1e-15)
    np.testing.assert_array_equal(plant.x_m, [150.0, 10.0, 10.0])
    np.testing.assert_array_equal(np.diag(plant.q), [10.0, 10.0, 1.0])
    assert np.trace(plant.a_tilde.T @ plant.a_tilde) == pytest.approx(2.06)


def test_agv_plant_rejects_zero_constant():
    with pytest.raises(ScenarioValidationError):
        agv_plant(0.0, 0.1)


def test_plant_arrays_read_only():
    plant = agv_plant(0.125, 0.1)
    with pytest.raises(ValueError):
        plant.a_tilde[0, 0] = 5.0


def test_make_plant_validation():
    with pytest.raises(ScenarioValidationError):
        make_plant([[0.0]], [1.0], 0.1, x_l=[1.0], x_u=[0.0])
    with pytest.raises(ScenarioValidationError):
        make_plant([[0.0]], [1.0], 0.1, x_l=[0.0], x_u=[1.0], q=[[-1.0]])


def test_shipped_scenario_equals_default():
    params, plant, de = load_scenario(SHIPPED)
    ref = default_scenario()
    assert params == ref.params
    assert plant == ref.plant
    assert de == ref.de


def test_save_load_roundtrip(tmp_path):
    sc = default_scenario(r=4, delay_scale=2.5)
    path = tmp_path / "s.json"
    save_scenario(path, *sc)
    params, plant, de = load_scenario(path)
    assert params == sc.params and plant == sc.plant and de == sc.de


def test_roundtrip_custom_plant(tmp_path):
    plant = make_plant([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0], 0.1, x_l=[-1, -1], x_u=[1, 1])
    sc = Scenario(SystemParams(), plant, DeConfig())
    save_scenario(tmp_path / "c.json", *sc)
    _, loaded, _ = load_scenario(tmp_path / "c.json")
    assert loaded == plant


def test_unknown_key_rejected():
    with pytest.raises(ScenarioParseError, match="unknown keys"):
        scenario_from_dict({"theta_uu": 0.1})


def test_conflicting_snr_keys():
    with pytest.raises(ScenarioParseError):
        scenario_from_dict({"snr_u": 1000.0, "snr_u_db": 30.0})


def test_wrong_type_rejected():
    with pytest.raises(ScenarioParseError):
        scenario_from_dict({"r": 6.5})
    with pytest.raises(ScenarioParseError):
        scenario_from_dict({"theta_u": "fast"})


def test_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_db_and_linear_snr_agree(tmp_path):
    a = scenario_from_dict({"snr_u_db": 30.0})
    b = scenario_from_dict({"snr_u": 1000.0})
    assert a.params.snr_u == pytest.approx(b.params.snr_u, rel=1e-15)


def test_custom_plant_needs_bounds():
    with pytest.raises(ScenarioValidationError):
        scenario_from_dict({"a": [[0.0]], "b": [1.0]})


def test_de_config_validation():
    with pytest.raises(ScenarioValidationError):
        DeConfig(n_p=3)
    with pytest.raises(ScenarioValidationError):
        DeConfig(crossover="uniform")
    with pytest.raises(ScenarioValidationError):
        DeConfig(stall_rule="never")


def test_shipped_file_is_plain_json():
    raw = json.loads(open(SHIPPED).read())
    assert raw["snr_u_db"] == 30.0 and raw["k_max"] == 1.0
