"""Problem instance and exact (non-surrogate) rate evaluation.

All arrays are stored 0-based: slot ``n`` of the documentation is row
``n - 1`` here, GBS ``m`` is row ``m - 1`` and CEU ``k`` is row ``k - 1``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

EPS_FEAS = 1e-6
LOG2E = 1.0 / math.log(2.0)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the first offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _points(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and arr.size == 2 and name in ("start_point",):
        return arr
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ScenarioError(name, "expected a non-empty list of 2D points")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(name, "coordinates must be finite")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance.

    Powers are in Watts, lengths in meters, ``ref_gain`` and
    ``noise_power`` are linear (use :meth:`from_dict` to convert from the
    dB / dBm values of a configuration file).
    """

    gbs_positions: np.ndarray
    ceu_positions: np.ndarray
    altitude: float
    period: float
    num_slots: int
    start_point: np.ndarray
    v_max: float
    a_max: float
    p_gbs: float
    p_uav: float
    ref_gain: float
    noise_power: float
    num_antennas: int
    fading_sq_norms: Optional[np.ndarray] = None
    rate_floor: Any = 0.0
    weights: Optional[np.ndarray] = None
    slot_len: float = field(init=False)

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731

        set_("gbs_positions", _frozen(_points(self.gbs_positions, "gbs_positions")))
        set_("ceu_positions", _frozen(_points(self.ceu_positions, "ceu_positions")))
        n_b = self.gbs_positions.shape[0]
        k = self.ceu_positions.shape[0]

        for name in ("altitude", "period"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(name, "must be strictly positive")
            set_(name, value)
        if int(self.num_slots) != self.num_slots or int(self.num_slots) < 2:
            raise ScenarioError("num_slots", "must be an integer >= 2")
        set_("num_slots", int(self.num_slots))

        start = np.asarray(self.start_point, dtype=float)
        if start.shape != (2,) or not np.all(np.isfinite(start)):
            raise ScenarioError("start_point", "expected one finite 2D point")
        set_("start_point", _frozen(start))

        for name in ("v_max", "a_max", "p_gbs", "p_uav", "ref_gain", "noise_power"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(name, "must be strictly positive")
            set_(name, value)
        if int(self.num_antennas) != self.num_antennas or int(self.num_antennas) < 1:
            raise ScenarioError("num_antennas", "must be a positive integer")
        set_("num_antennas", int(self.num_antennas))

        fading = self.fading_sq_norms
        if fading is None:
            fading = np.full(n_b, float(self.num_antennas))
        fading = np.asarray(fading, dtype=float).reshape(-1)
        if fading.shape != (n_b,):
            raise ScenarioError("fading_sq_norms", f"expected {n_b} values")
        if not np.all(np.isfinite(fading)) or np.any(fading < 0):
            raise ScenarioError("fading_sq_norms", "values must be finite and >= 0")
        set_("fading_sq_norms", _frozen(fading))

        floor = np.broadcast_to(np.asarray(self.rate_floor, dtype=float), (k,))
        if not np.all(np.isfinite(floor)) or np.any(floor < 0):
            raise ScenarioError("rate_floor", "values must be finite and >= 0")
        set_("rate_floor", _frozen(floor))

        weights = np.ones(k) if self.weights is None else self.weights
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.shape != (k,):
            raise ScenarioError("weights", f"expected {k} values")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ScenarioError("weights", "values must be > 0")
        set_("weights", _frozen(weights))

        set_("slot_len", self.period / self.num_slots)

    @property
    def num_gbs(self) -> int:
        return self.gbs_positions.shape[0]

    @property
    def num_ceus(self) -> int:
        return self.ceu_positions.shape[0]

    def replace(self, **changes) -> "Scenario":
        """Copy with some fields changed (validation runs again)."""
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        """Build from a configuration mapping (see ``scenarios/reference.yaml``).

        ``ref_gain_db`` and ``noise_dbm`` are converted here. Fading is
        either an explicit ``fading_sq_norms`` list or a mapping
        ``fading: {mode: deterministic | random, seed: int}``.
        """
        required = ("gbs_positions", "ceu_positions", "altitude", "period", "num_slots",
                    "start_point", "v_max", "a_max", "p_gbs", "p_uav", "ref_gain_db",
                    "noise_dbm", "num_antennas")
        for name in required:
            if name not in data:
                raise ScenarioError(name, "missing")
        try:
            n_b = len(data["gbs_positions"])
        except TypeError:
            raise ScenarioError("gbs_positions", "expected a list of 2D points") from None

        fading = data.get("fading_sq_norms")
        fading_cfg = data.get("fading") or {}
        if fading is None and fading_cfg:
            mode = fading_cfg.get("mode", "deterministic")
            if mode == "random":
                if "seed" not in fading_cfg:
                    raise ScenarioError("fading.seed", "random fading requires a seed")
                fading = random_fading(n_b, int(data["num_antennas"]), int(fading_cfg["seed"]))
            elif mode != "deterministic":
                raise ScenarioError("fading.mode", f"unknown mode {mode!r}")

        def number(name):
            try:
                return float(data[name])
            except (TypeError, ValueError):
                raise ScenarioError(name, "expected a number") from None

        return cls(
            gbs_positions=data["gbs_positions"],
            ceu_positions=data["ceu_positions"],
            altitude=number("altitude"),
            period=number("period"),
            num_slots=data["num_slots"],
            start_point=data["start_point"],
            v_max=number("v_max"),
            a_max=number("a_max"),
            p_gbs=number("p_gbs"),
            p_uav=number("p_uav"),
            ref_gain=db_to_linear(number("ref_gain_db")),
            noise_power=dbm_to_watts(number("noise_dbm")),
            num_antennas=data["num_antennas"],
            fading_sq_norms=fading,
            rate_floor=data.get("rate_floor", 0.0),
            weights=data.get("weights"),
        )

    def to_dict(self) -> dict:
        """Plain mapping accepted by :meth:`from_dict` (fading made explicit)."""
        return {
            "gbs_positions": self.gbs_positions.tolist(),
            "ceu_positions": self.ceu_positions.tolist(),
            "altitude": self.altitude,
            "period": self.period,
            "num_slots": self.num_slots,
            "start_point": self.start_point.tolist(),
            "v_max": self.v_max,
            "a_max": self.a_max,
            "p_gbs": self.p_gbs,
            "p_uav": self.p_uav,
            "ref_gain_db": 10.0 * math.log10(self.ref_gain),
            "noise_dbm": 10.0 * math.log10(self.noise_power) + 30.0,
            "num_antennas": self.num_antennas,
            "fading_sq_norms": self.fading_sq_norms.tolist(),
            "rate_floor": self.rate_floor.tolist(),
            "weights": self.weights.tolist(),
        }


def random_fading(num_gbs: int, num_antennas: int, seed: int) -> np.ndarray:
    """Squared norms of unit-variance complex Gaussian fades, one per GBS."""
    rng = np.random.default_rng(seed)
    pairs = rng.standard_normal((num_gbs, num_antennas, 2))
    return 0.5 * np.sum(pairs**2, axis=(1, 2))


def load_scenario(path) -> Scenario:
    """Read a YAML (or JSON) scenario file."""
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise ScenarioError("<root>", "scenario file must contain a mapping")
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario.to_dict(), fh, sort_keys=False)


def reference_scenario(**overrides) -> Scenario:
    """Three hexagonal cells of radius 1000 m meeting at the start point.

    Four CEUs sit roughly 500 m around the cell intersection. The flight
    period is 120 s over 60 slots.
    """
    r = 1000.0
    center = np.array([math.sqrt(3) * r / 2, r / 2])
    offsets = np.array([[-420.0, 260.0], [330.0, 380.0], [-250.0, -430.0], [420.0, -200.0]])
    data = dict(
        gbs_positions=[[0.0, r], [math.sqrt(3) * r, r], [math.sqrt(3) * r / 2, -r / 2]],
        ceu_positions=(center + offsets).tolist(),
        altitude=100.0,
        period=120.0,
        num_slots=60,
        start_point=center.tolist(),
        v_max=50.0,
        a_max=5.0,
        p_gbs=10.0,
        p_uav=1.0,
        ref_gain_db=-60.0,
        noise_dbm=-114.0,
        num_antennas=8,
        rate_floor=0.5,
    )
    data.update(overrides)
    return Scenario.from_dict(data)


# --------------------------------------------------------------------------
# channel gains and rates

def _check_index(index: int, size: int, what: str) -> int:
    if not (0 <= int(index) < size):
        raise ValueError(f"{what} index {index} out of range [0, {size})")
    return int(index)


def _sq_dist(positions: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Horizontal squared distances, shape ``positions.shape[:-1] + (M,)``."""
    diff = np.asarray(positions, dtype=float)[..., None, :] - anchors
    return np.einsum("...j,...j->...", diff, diff)


def link_gain_gbs(scenario: Scenario, position, m: int) -> float:
    m = _check_index(m, scenario.num_gbs, "GBS")
    d2 = _sq_dist(position, scenario.gbs_positions[m : m + 1])[..., 0]
    return scenario.ref_gain / (scenario.altitude**2 + d2)


def link_gain_ceu(scenario: Scenario, position, k: int) -> float:
    k = _check_index(k, scenario.num_ceus, "CEU")
    d2 = _sq_dist(position, scenario.ceu_positions[k : k + 1])[..., 0]
    return scenario.ref_gain / (scenario.altitude**2 + d2)


def uplink_snr(scenario: Scenario, positions) -> np.ndarray:
    """MRT-combined receive SNR at the UAV (sum of per-GBS terms)."""
    gains = scenario.ref_gain / (scenario.altitude**2 + _sq_dist(positions, scenario.gbs_positions))
    return scenario.p_gbs * (gains @ scenario.fading_sq_norms) / scenario.noise_power


def uplink_rate(scenario: Scenario, position) -> float:
    """GBS-to-UAV rate in bps/Hz at one position (array input broadcasts)."""
    return np.log2(1.0 + uplink_snr(scenario, position))


def slot_user_rate(scenario: Scenario, position, k: int) -> float:
    """UAV-to-CEU ``k`` rate in bps/Hz if CEU ``k`` is served at ``position``."""
    return np.log2(1.0 + scenario.p_uav * link_gain_ceu(scenario, position, k) / scenario.noise_power)


def slot_user_rates(scenario: Scenario, positions) -> np.ndarray:
    """Rate matrix ``m[k, n]`` for every CEU and slot, shape ``(K, N)``."""
    d2 = _sq_dist(positions, scenario.ceu_positions)
    snr = scenario.p_uav * scenario.ref_gain / (scenario.noise_power * (scenario.altitude**2 + d2))
    return np.log2(1.0 + snr).T


# --------------------------------------------------------------------------
# plans, associations and their audits

@dataclass(frozen=True)
class TrajectoryPlan:
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        for name in ("positions", "velocities", "accelerations"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"{name} must have shape (N, 2)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.positions.shape == self.velocities.shape == self.accelerations.shape):
            raise ValueError("positions, velocities and accelerations differ in length")

    @property
    def num_slots(self) -> int:
        return self.positions.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))
                    and np.all(np.isfinite(self.accelerations)))

    def audit(self, scenario: Scenario) -> "FeasibilityReport":
        return audit_plan(scenario, self)


def hover_plan(scenario: Scenario) -> TrajectoryPlan:
    n = scenario.num_slots
    return TrajectoryPlan(np.tile(scenario.start_point, (n, 1)), np.zeros((n, 2)), np.zeros((n, 2)))


@dataclass
class FeasibilityReport:
    """Normalized constraint violations; 0 means satisfied."""

    violations: dict
    tol: float = EPS_FEAS

    @property
    def feasible(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    @property
    def first_violation(self) -> Optional[str]:
        for name, value in self.violations.items():
            if value > self.tol:
                return name
        return None

    def __bool__(self) -> bool:
        return self.feasible


def audit_plan(scenario: Scenario, plan: TrajectoryPlan, tol: float = EPS_FEAS) -> FeasibilityReport:
    """Check the mobility constraints; residuals are relative to their natural scale."""
    if plan.num_slots != scenario.num_slots:
        raise ValueError(f"plan has {plan.num_slots} slots, scenario has {scenario.num_slots}")
    u, v, a = plan.positions, plan.velocities, plan.accelerations
    dt = scenario.slot_len
    step = scenario.v_max * dt
    u0 = scenario.start_point
    viol = {}
    viol["endpoints"] = max(np.linalg.norm(u[0] - u0), np.linalg.norm(u[-1] - u0)) / step
    disp = np.linalg.norm(np.diff(u, axis=0), axis=1)
    viol["displacement"] = max(0.0, float(disp.max(initial=0.0)) / step - 1.0)
    vel_res = v[1:] - v[:-1] - a[:-1] * dt
    viol["velocity_kinematics"] = float(np.abs(vel_res).max(initial=0.0)) / scenario.v_max
    pos_res = u[1:] - u[:-1] - v[:-1] * dt - 0.5 * a[:-1] * dt**2
    viol["position_kinematics"] = float(np.abs(pos_res).max(initial=0.0)) / step
    viol["speed"] = max(0.0, float(np.linalg.norm(v, axis=1).max()) / scenario.v_max - 1.0)
    viol["acceleration"] = max(0.0, float(np.linalg.norm(a, axis=1).max()) / scenario.a_max - 1.0)
    if not plan.is_finite():
        viol = {key: math.inf for key in viol}
    return FeasibilityReport(viol, tol)


def check_association(scenario: Scenario, rho) -> np.ndarray:
    """Validate a ``K x N`` 0/1 association; returns it as an int array."""
    rho = np.asarray(rho)
    shape = (scenario.num_ceus, scenario.num_slots)
    if rho.shape != shape:
        raise ValueError(f"association must have shape {shape}, got {rho.shape}")
    if not np.all((rho == 0) | (rho == 1)):
        raise ValueError("association entries must be 0 or 1")
    rho = rho.astype(int)
    if np.any(rho[:, 0]):
        raise ValueError("slot 1 must be idle")
    if np.any(rho.sum(axis=0) > 1):
        raise ValueError("at most one CEU may be served per slot")
    return rho


def association_from_labels(scenario: Scenario, labels) -> np.ndarray:
    """Build ``rho`` from per-slot labels (-1 means idle)."""
    labels = np.asarray(labels, dtype=int)
    rho = np.zeros((scenario.num_ceus, scenario.num_slots), dtype=int)
    served = labels >= 0
    rho[labels[served], np.nonzero(served)[0]] = 1
    return rho


def association_labels(rho) -> np.ndarray:
    """Per-slot served CEU index, -1 for idle slots."""
    rho = np.asarray(rho)
    return np.where(rho.any(axis=0), rho.argmax(axis=0), -1)


@dataclass(frozen=True)
class RateProfile:
    uplink: np.ndarray
    downlink: np.ndarray
    per_user: np.ndarray
    slot_user_rate: np.ndarray


def rate_profile(scenario: Scenario, plan: TrajectoryPlan, assoc) -> RateProfile:
    if plan.num_slots != scenario.num_slots:
        raise ValueError(f"plan has {plan.num_slots} slots, scenario has {scenario.num_slots}")
    rho = np.asarray(assoc, dtype=float)
    if rho.shape != (scenario.num_ceus, scenario.num_slots):
        raise ValueError(f"association must have shape {(scenario.num_ceus, scenario.num_slots)}")
    m = slot_user_rates(scenario, plan.positions)
    uplink = uplink_rate(scenario, plan.positions)
    uplink[-1] = 0.0
    downlink = np.sum(rho * m, axis=0)
    downlink[0] = 0.0
    per_user = np.sum(rho[:, 1:] * m[:, 1:], axis=1) / scenario.num_slots
    return RateProfile(uplink, downlink, per_user, m)


def causality_slack(profile: RateProfile) -> np.ndarray:
    """Buffer slack for slots n = 2..N (received up to n-1 minus forwarded 2..n)."""
    received = np.cumsum(profile.uplink)[:-1]
    forwarded = np.cumsum(profile.downlink[1:])
    return received - forwarded


def causality_slack_from(uplink, downlink) -> np.ndarray:
    return np.cumsum(uplink)[:-1] - np.cumsum(downlink[1:])
