"""Scenario presets and ground-truth synthesis."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .analytical import AnalyticalParams
from .network import Network, generate_synthetic_network, validate_network
from .simulator import FieldMeasurements, SimulatorConfig, sample_measurements, simulate
from .solver import SolverConfig

# desk-scale totals: one tenth of the case-study scenarios
CONGESTION_TOTALS = {"low": 2000.0, "medium": 3500.0, "high": 5000.0}


class SpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    topology: str = "corridor"
    segments: int = 30
    grid_rows: int = 3
    grid_cols: int = 3
    ods: int = 12
    congestion: str = "medium"
    total_demand: float | None = None
    demand_spread: float = 0.75
    penetration: float = 0.15
    d_max_factor: float = 3.0
    seed: int = 7
    demand_seed: int = 11
    measurement_seed: int = 13
    analytical: dict = field(default_factory=dict)
    simulator: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.topology not in ("corridor", "grid"):
            raise SpecError("topology", f"expected 'corridor' or 'grid', got {self.topology!r}")
        if self.total_demand is None and self.congestion not in CONGESTION_TOTALS:
            raise SpecError("congestion", f"expected one of {sorted(CONGESTION_TOTALS)}")
        if not self.demand_total > 0:
            raise SpecError("total_demand", "must be positive")
        if not 0 < self.penetration <= 1:
            raise SpecError("penetration", "must be in (0, 1]")
        if self.ods < 1:
            raise SpecError("ods", "must be >= 1")
        if self.d_max_factor <= 0:
            raise SpecError("d_max_factor", "must be positive")

    @property
    def demand_total(self) -> float:
        if self.total_demand is not None:
            return float(self.total_demand)
        return CONGESTION_TOTALS[self.congestion]

    @property
    def d_max(self) -> float:
        return self.d_max_factor * self.demand_total / self.ods

    def analytical_params(self) -> AnalyticalParams:
        try:
            return AnalyticalParams.from_dict(self.analytical)
        except (TypeError, ValueError) as exc:
            raise SpecError("analytical", str(exc)) from None

    def simulator_config(self) -> SimulatorConfig:
        try:
            return SimulatorConfig.from_dict(self.simulator, self.analytical_params())
        except (TypeError, ValueError) as exc:
            raise SpecError("simulator", str(exc)) from None

    def solver_config(self, **overrides) -> SolverConfig:
        data = {"d_max": self.d_max, **self.solver, **overrides}
        try:
            return SolverConfig.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise SpecError("solver", str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioSpec:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SpecError(unknown[0], "unknown field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise SpecError("spec", str(exc)) from None

    @classmethod
    def load(cls, path) -> ScenarioSpec:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError("spec", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)


def ground_truth_demand(spec: ScenarioSpec, n_od: int) -> np.ndarray:
    rng = np.random.default_rng(spec.demand_seed)
    w = rng.lognormal(0.0, spec.demand_spread, size=n_od)
    return spec.demand_total * w / w.sum()


@dataclass
class Scenario:
    spec: ScenarioSpec
    network: Network
    gt_demand: np.ndarray
    measurements: FieldMeasurements

    @property
    def sim_config(self) -> SimulatorConfig:
        return self.spec.simulator_config()


def build_scenario(spec: ScenarioSpec) -> Scenario:
    """Network, ground-truth demand and sampled field measurements for ``spec``."""
    network = generate_synthetic_network(spec)
    sim_config = spec.simulator_config()
    problems = validate_network(network, sim_config.params.v_min)
    if problems:
        raise SpecError("network", "; ".join(problems))
    gt = ground_truth_demand(spec, network.n_od)
    result = simulate(network, gt, sim_config, spec.measurement_seed, keep_trips=True)
    meas = sample_measurements(result, network, spec.penetration, spec.measurement_seed + 1)
    return Scenario(spec, network, gt, meas)


# -- scenario directory layout ----------------------------------------------------

NETWORK_FILE = "network.json"
DEMAND_FILE = "demand.json"
MEASUREMENTS_FILE = "measurements.json"
SPEC_FILE = "scenario.json"


def save_scenario(scenario: Scenario, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / SPEC_FILE, out / NETWORK_FILE, out / DEMAND_FILE, out / MEASUREMENTS_FILE]
    paths[0].write_text(json.dumps(scenario.spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    scenario.network.save(paths[1])
    demand = {z: float(v) for z, v in zip(scenario.network.od_pairs, scenario.gt_demand)}
    paths[2].write_text(json.dumps({"demand": demand}, indent=2) + "\n", encoding="utf-8")
    scenario.measurements.save(paths[3])
    return paths


def load_scenario(scenario_dir) -> Scenario:
    root = Path(scenario_dir)
    for name in (SPEC_FILE, NETWORK_FILE, DEMAND_FILE, MEASUREMENTS_FILE):
        if not (root / name).is_file():
            raise FileNotFoundError(f"{root / name} not found")
    spec = ScenarioSpec.load(root / SPEC_FILE)
    network = Network.load(root / NETWORK_FILE)
    demand = json.loads((root / DEMAND_FILE).read_text(encoding="utf-8"))["demand"]
    gt = np.array([demand[z] for z in network.od_pairs], dtype=float)
    meas = FieldMeasurements.load(root / MEASUREMENTS_FILE)
    return Scenario(spec, network, gt, meas)
