"""Scenario parameters: validated records plus JSON load/save.

A scenario file is a flat JSON object. Keys mirror the symbols of the
model (``theta_u``, ``snr_u_db``, ``w0_hz`` ...). SNRs may be given in dB
(``snr_u_db``) or as a linear power ratio (``snr_u``); internally they are
always linear. See ``README.md`` for the full key table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .exceptions import ScenarioParseError, ScenarioValidationError

__all__ = [
    "SystemParams",
    "PlantModel",
    "DeConfig",
    "Scenario",
    "agv_plant",
    "make_plant",
    "load_scenario",
    "save_scenario",
    "default_scenario",
    "db_to_linear",
]

DEFAULT_WEIGHT_DIAG = (10.0, 10.0, 1.0)
DEFAULT_X0 = (-100.0, 1.0, 1.0)
DEFAULT_X_L = (-150.0, -10.0, -10.0)
DEFAULT_X_U = (50.0, 10.0, 10.0)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def _require(cond, message):
    if not cond:
        raise ScenarioValidationError(message)


@dataclass(frozen=True)
class SystemParams:
    """Physical and communication constants of one scenario.

    Units: bandwidth in Hz, QoS exponents in 1/bit, times in seconds,
    SNR as a linear power ratio. ``delay_scale`` multiplies every
    closed-loop delay (1 leaves the channel model untouched).
    """

    snr_u: float = db_to_linear(30.0)
    snr_d: float = db_to_linear(33.0)
    beta_u: float = 1.0
    beta_d: float = 1.0
    theta_u: float = 0.02
    theta_d: float = 0.04
    w0: float = 1.5e6
    c_d: float = 0.1
    t_d: float = 0.1
    d_c_max: float = 0.1
    rho: float = 0.999
    r: int = 6
    horizon_n: int = 10
    trials: int = 500
    seed: int = 0
    delay_scale: float = 1.0
    bits_per_state_vector: bool = False
    reoptimize_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("snr_u", "snr_d", "beta_u", "beta_d", "theta_u",
                     "theta_d", "w0", "t_d", "d_c_max", "delay_scale"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value > 0, f"{name} > 0 (got {value!r})")
        _require(self.rho > 0, f"rho > 0 (got {self.rho!r})")
        _require(self.c_d > 0, f"c_d > 0 (got {self.c_d!r})")
        _require(int(self.r) == self.r and self.r >= 1, f"r ≥ 1 (got {self.r!r})")
        _require(int(self.horizon_n) == self.horizon_n and self.horizon_n >= 1,
                 f"horizon_n ≥ 1 (got {self.horizon_n!r})")
        _require(self.trials >= 1, f"trials ≥ 1 (got {self.trials!r})")
        _require(self.reoptimize_every >= 0,
                 f"reoptimize_every ≥ 0 (got {self.reoptimize_every!r})")

    @property
    def tau_max(self):
        """Largest delay index ⌊D_c,max / T_d⌋ (guarded against 0.3/0.1 = 2.999...)."""
        return int(math.floor(self.d_c_max / self.t_d + 1e-9))

    def with_(self, **changes):
        return replace(self, **changes)


def _as_readonly(a, shape=None):
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Continuous and Euler-discretized state-space model with weights.

    ``a_tilde = t_d * a + I`` and ``b_tilde = t_d * b``; both are derived
    in :func:`make_plant` and never passed in independently.
    """

    a: np.ndarray
    b: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    x_l: np.ndarray
    x_u: np.ndarray
    x_m: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r_weight: float
    x0: np.ndarray
    t_d: float
    varsigma: float | None = None

    @property
    def n(self):
        return self.a.shape[0]

    def validate(self):
        n = self.n
        _require(self.a.shape == (n, n), "a must be square")
        _require(self.b.shape == (n, 1), "b must be n×1")
        for name in ("x_l", "x_u", "x0"):
            _require(getattr(self, name).shape == (n,), f"{name} must have length {n}")
        _require(np.all(self.x_l < self.x_u), "x_l < x_u componentwise")
        _require(np.all(self.x_m >= 0), "x_m ≥ 0 componentwise")
        _require(self.r_weight >= 0, "r_weight ≥ 0")
        for name in ("p", "q"):
            m = getattr(self, name)
            _require(m.shape == (n, n), f"{name} must be {n}×{n}")
            _require(np.allclose(m, m.T, rtol=0, atol=1e-12), f"{name} symmetric")
            _require(np.linalg.eigvalsh(m).min() >= -1e-12, f"{name} positive semidefinite")
        _require(np.all(np.isfinite(self.a_tilde)) and np.all(np.isfinite(self.b_tilde)),
                 "discretized matrices finite")
        return self

    def __eq__(self, other):
        if not isinstance(other, PlantModel):
            return NotImplemented
        for f in fields(self):
            x, y = getattr(self, f.name), getattr(other, f.name)
            if isinstance(x, np.ndarray):
                if not np.array_equal(x, y):
                    return False
            elif x != y:
                return False
        return True


def make_plant(a, b, t_d, *, x_l, x_u, p=None, q=None, r_weight=1.0, x0=None,
               varsigma=None):
    """Build a :class:`PlantModel` from continuous ``(a, b)`` by Euler's method."""
    a = _as_readonly(a)
    n = a.shape[0]
    b = _as_readonly(b, (n, 1))
    if not t_d > 0:
        raise ScenarioValidationError(f"t_d > 0 (got {t_d!r})")
    x_l = _as_readonly(x_l)
    x_u = _as_readonly(x_u)
    weight = np.diag(DEFAULT_WEIGHT_DIAG) if n == 3 else np.eye(n)
    p = _as_readonly(weight if p is None else _matrix(p, n))
    q = _as_readonly(weight if q is None else _matrix(q, n))
    if x0 is None:
        x0 = DEFAULT_X0 if n == 3 else np.zeros(n)
    plant = PlantModel(
        a=a,
        b=b,
        a_tilde=_as_readonly(t_d * a + np.eye(n)),
        b_tilde=_as_readonly(t_d * b),
        x_l=x_l,
        x_u=x_u,
        x_m=_as_readonly(np.maximum(np.abs(x_u), np.abs(x_l))),
        p=p,
        q=q,
        r_weight=float(r_weight),
        x0=_as_readonly(x0),
        t_d=float(t_d),
        varsigma=varsigma,
    )
    return plant.validate()


def _matrix(m, n):
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        return np.diag(m)
    if m.shape != (n, n):
        raise ScenarioValidationError(f"weight matrix must be {n}×{n} or a diagonal of length {n}")
    return m


def agv_plant(varsigma, t_d, *, p=None, q=None, r_weight=1.0, x_l=DEFAULT_X_L,
              x_u=DEFAULT_X_U, x0=None):
    """Longitudinal AGV model: position, velocity, acceleration.

    ``varsigma`` is the engine time constant; the acceleration relaxes
    toward the command with rate ``1/varsigma``.
    """
    if varsigma == 0 or not math.isfinite(varsigma):
        raise ScenarioValidationError(f"varsigma ≠ 0 (got {varsigma!r})")
    k = -1.0 / varsigma
    a = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, k]]
    b = [0.0, 0.0, k]
    return make_plant(a, b, t_d, x_l=x_l, x_u=x_u, p=p, q=q, r_weight=r_weight,
                      x0=x0, varsigma=float(varsigma))


@dataclass(frozen=True)
class DeConfig:
    """Differential-evolution settings.

    ``crossover`` is ``"vector"`` (trial is the whole mutant with
    probability ``p_cr``) or ``"binomial"`` (per-dimension mixing).
    ``stall_rule`` selects the stall test, see :func:`wncs.optimizer.de_optimize`.
    """

    n_p: int = 15
    p_cr: float = 0.7
    f_d: float = 0.5
    n_m: int = 1000
    n_stall: int = 5
    tol: float = 0.01
    k_max: float = 1.0
    crossover: str = "vector"
    stall_rule: str = "trial_gap"

    def __post_init__(self):
        _require(self.n_p >= 4, f"n_p ≥ 4 (got {self.n_p!r})")
        _require(0 <= self.p_cr <= 1, f"0 ≤ p_cr ≤ 1 (got {self.p_cr!r})")
        _require(self.f_d > 0, f"f_d > 0 (got {self.f_d!r})")
        _require(self.n_m >= 1, f"n_m ≥ 1 (got {self.n_m!r})")
        _require(self.n_stall >= 1, f"n_stall ≥ 1 (got {self.n_stall!r})")
        _require(self.tol > 0, f"tol > 0 (got {self.tol!r})")
        _require(self.k_max > 0, f"k_max > 0 (got {self.k_max!r})")
        _require(self.crossover in ("vector", "binomial"),
                 f"crossover in {{vector, binomial}} (got {self.crossover!r})")
        _require(self.stall_rule in ("trial_gap", "best_change"),
                 f"stall_rule in {{trial_gap, best_change}} (got {self.stall_rule!r})")


@dataclass(frozen=True)
class Scenario:
    params: SystemParams
    plant: PlantModel
    de: DeConfig = field(default_factory=DeConfig)

    def with_params(self, **changes):
        return replace(self, params=replace(self.params, **changes))

    def __iter__(self):
        return iter((self.params, self.plant, self.de))


# --------------------------------------------------------------------------
# file I/O

_SYSTEM_KEYS = {
    "beta_u": float, "beta_d": float, "theta_u": float, "theta_d": float,
    "c_d": float, "t_d": float, "d_c_max": float, "rho": float,
    "r": int, "horizon_n": int, "trials": int, "seed": int,
    "delay_scale": float, "bits_per_state_vector": bool, "reoptimize_every": int,
}
_DE_KEYS = {
    "n_p": int, "p_cr": float, "f_d": float, "n_m": int, "n_stall": int,
    "tol": float, "k_max": float, "crossover": str, "stall_rule": str,
}
_PLANT_KEYS = {"varsigma", "a", "b", "p", "q", "r_weight", "x0", "x_l", "x_u"}


def _coerce(key, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ScenarioParseError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"{key}: expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ScenarioParseError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _snr(raw, side):
    lin, db = f"snr_{side}", f"snr_{side}_db"
    if lin in raw and db in raw:
        raise ScenarioParseError(f"give either {lin} or {db}, not both")
    if db in raw:
        return db_to_linear(_coerce(db, raw[db], float))
    if lin in raw:
        return _coerce(lin, raw[lin], float)
    return None


def scenario_from_dict(raw):
    """Validate a parsed scenario mapping (see module docstring)."""
    if not isinstance(raw, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    known = (set(_SYSTEM_KEYS) | set(_DE_KEYS) | _PLANT_KEYS
             | {"snr_u", "snr_d", "snr_u_db", "snr_d_db", "w0_hz"})
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ScenarioParseError(f"unknown keys: {', '.join(unknown)}")

    sys_kw = {k: _coerce(k, raw[k], t) for k, t in _SYSTEM_KEYS.items() if k in raw}
    for side in ("u", "d"):
        value = _snr(raw, side)
        if value is not None:
            sys_kw[f"snr_{side}"] = value
    if "w0_hz" in raw:
        sys_kw["w0"] = _coerce("w0_hz", raw["w0_hz"], float)
    params = SystemParams(**sys_kw)

    de_kw = {}
    for k, t in _DE_KEYS.items():
        if k in raw:
            de_kw[k] = raw[k] if t is str else _coerce(k, raw[k], t)
    de = DeConfig(**de_kw)

    for k in ("x_l", "x_u"):
        if k not in raw and "a" in raw:
            raise ScenarioValidationError(f"{k} is required for a custom plant")
    plant_kw = dict(
        p=raw.get("p"), q=raw.get("q"), r_weight=_coerce("r_weight", raw.get("r_weight", 1.0), float),
        x0=raw.get("x0"), x_l=raw.get("x_l", DEFAULT_X_L), x_u=raw.get("x_u", DEFAULT_X_U),
    )
    try:
        if "a" in raw or "b" in raw:
            plant = make_plant(raw["a"], raw["b"], params.t_d, **plant_kw)
        else:
            plant = agv_plant(_coerce("varsigma", raw.get("varsigma", 0.125), float),
                              params.t_d, **plant_kw)
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ScenarioValidationError):
            raise
        raise ScenarioParseError(f"bad plant definition: {exc}") from exc
    return Scenario(params, plant, de)


def load_scenario(path):
    """Read a scenario file and return ``(SystemParams, PlantModel, DeConfig)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return tuple(scenario_from_dict(raw))


def scenario_to_dict(params, plant, de):
    out = {}
    for f in fields(params):
        value = getattr(params, f.name)
        out["w0_hz" if f.name == "w0" else f.name] = value
    if plant.varsigma is None:
        out["a"] = plant.a.tolist()
        out["b"] = plant.b.ravel().tolist()
    else:
        out["varsigma"] = plant.varsigma
    out.update(
        p=plant.p.tolist(), q=plant.q.tolist(), r_weight=plant.r_weight,
        x0=plant.x0.tolist(), x_l=plant.x_l.tolist(), x_u=plant.x_u.tolist(),
    )
    for f in fields(de):
        out[f.name] = getattr(de, f.name)
    return out


def save_scenario(path, params, plant, de):
    """Write a scenario file. SNRs are stored linear so a reload is bit-exact."""
    Path(path).write_text(json.dumps(scenario_to_dict(params, plant, de), indent=2) + "\n")


def default_scenario(**param_changes):
    """Reference scenario with the shipped state bounds and search box."""
    params = SystemParams(**param_changes)
    plant = agv_plant(0.125, params.t_d)
    return Scenario(params, plant, DeConfig())
