"""Stochastic quasi-static traffic simulator used as the calibration black box.

One rollout draws trips per OD, splits them over paths, then resolves segment
speeds with a damped fixed point of the fundamental diagram in which density
grows as speed drops below the limit. Each segment carries a lognormal speed
disturbance that is fixed for the rollout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path as FilePath

import numpy as np

from .analytical import MINUTES_PER_HOUR, AnalyticalParams, velocity

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulatorConfig:
    params: AnalyticalParams = field(default_factory=AnalyticalParams)
    sigma_v: float = 0.05
    demand_noise: str = "poisson"  # or "deterministic"
    speed_feedback: float = 0.1
    tol: float = 1e-8
    max_iter: int = 500
    damping: float = 0.5

    def __post_init__(self):
        if self.sigma_v < 0:
            raise ValueError("sigma_v must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.demand_noise not in ("poisson", "deterministic"):
            raise ValueError(f"unknown demand noise model {self.demand_noise!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict | None, params: AnalyticalParams | None = None) -> SimulatorConfig:
        data = dict(data or {})
        if "params" in data:
            params = AnalyticalParams.from_dict(data.pop("params"))
        return cls(params=params or AnalyticalParams(), **data)


@dataclass
class SimulationResult:
    counts: np.ndarray  # vehicles per segment
    path_times: np.ndarray  # minutes per path
    trip_path: np.ndarray | None = None  # path index of every trip
    converged: bool = True
    iterations: int = 0

    def trip_times(self) -> np.ndarray:
        return self.path_times[self.trip_path]


@dataclass
class FieldMeasurements:
    path_ids: list[str]
    travel_times: np.ndarray  # minutes, aligned with path_ids
    segment_ids: list[str]
    counts: np.ndarray  # sampled vehicles, aligned with segment_ids
    penetration: float = 1.0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.travel_times = np.asarray(self.travel_times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)

    def validate(self) -> list[str]:
        problems = []
        for pid, t in zip(self.path_ids, self.travel_times):
            if not t > 0:
                problems.append(f"path {pid}: travel time must be > 0")
        for sid, c in zip(self.segment_ids, self.counts):
            if not c > 0:
                problems.append(f"segment {sid}: sample count must be > 0")
        if not 0 < self.penetration <= 1:
            problems.append(f"penetration {self.penetration} outside (0, 1]")
        return problems

    def to_dict(self) -> dict:
        return {
            "paths": {p: float(t) for p, t in zip(self.path_ids, self.travel_times)},
            "segments": {s: float(c) for s, c in zip(self.segment_ids, self.counts)},
            "penetration": self.penetration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> FieldMeasurements:
        return cls(list(data["paths"]), list(data["paths"].values()),
                   list(data["segments"]), list(data["segments"].values()),
                   float(data.get("penetration", 1.0)))

    def save(self, path) -> None:
        FilePath(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> FieldMeasurements:
        return cls.from_dict(json.loads(FilePath(path).read_text(encoding="utf-8")))


def _draw_trips(network, d, config, rng) -> np.ndarray:
    """Number of trips on every path."""
    if config.demand_noise == "poisson":
        od_trips = rng.poisson(d)
    else:
        od_trips = np.rint(d).astype(np.int64)
    per_path = np.zeros(network.n_paths, dtype=np.int64)
    for z in range(network.n_od):
        members = np.flatnonzero(network.path_od == z)
        if len(members) == 1:
            per_path[members[0]] = od_trips[z]
        elif len(members) > 1:
            splits = network.path_splits[members]
            splits = splits / splits.sum()
            if config.demand_noise == "poisson":
                per_path[members] = rng.multinomial(od_trips[z], splits)
            else:
                per_path[members] = _largest_remainder(od_trips[z], splits)
    return per_path


def _largest_remainder(total: int, shares: np.ndarray) -> np.ndarray:
    raw = total * shares
    out = np.floor(raw).astype(np.int64)
    short = int(total - out.sum())
    out[np.argsort(-(raw - out), kind="stable")[:short]] += 1
    return out


def simulate(network, d, config: SimulatorConfig, seed: int, keep_trips: bool = False) -> SimulationResult:
    d = np.asarray(d, dtype=float)
    if d.shape != (network.n_od,):
        raise ValueError(f"demand has shape {d.shape}, expected ({network.n_od},)")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("demand must be finite and nonnegative")

    rng = np.random.default_rng(seed)
    per_path = _draw_trips(network, d, config, rng)
    noise = np.exp(config.sigma_v * rng.standard_normal(network.n_segments))

    counts = network.path_incidence.T @ per_path.astype(float)
    params = config.params
    v_max = network.speed_limits
    k_base = params.kappa * params.k_jam * counts / network.lanes

    v = v_max.copy()
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        k = k_base * (v_max / v) ** config.speed_feedback
        target = np.clip(velocity(k, v_max, params) * noise, params.v_min, v_max)
        v_new = (1.0 - config.damping) * v + config.damping * target
        change = np.max(np.abs(v_new - v) / v)
        v = v_new
        if change < config.tol:
            converged = True
            break
    if not converged:
        log.warning("speed fixed point did not converge in %d iterations", config.max_iter)

    path_times = MINUTES_PER_HOUR * network.path_incidence @ (network.lengths / v)
    trip_path = np.repeat(np.arange(network.n_paths), per_path) if keep_trips else None
    return SimulationResult(counts, path_times, trip_path, converged, it)


def rollout_seeds(seed: int, rollouts: int) -> list[int]:
    return [seed + r for r in range(1, rollouts + 1)]


def estimate_expectations(network, d, config: SimulatorConfig, rollouts: int, seed: int):
    """Mean segment counts and mean path times over ``rollouts`` seeded runs."""
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    results = [simulate(network, d, config, s) for s in rollout_seeds(seed, rollouts)]
    counts = np.mean([r.counts for r in results], axis=0)
    times = np.mean([r.path_times for r in results], axis=0)
    return counts, times


def sample_measurements(result: SimulationResult, network, penetration: float, seed: int) -> FieldMeasurements:
    """Keep each trip with probability ``penetration`` and aggregate the retained ones."""
    if result.trip_path is None:
        raise ValueError("simulation result carries no trip records (use keep_trips=True)")
    if not 0 < penetration <= 1:
        raise ValueError("penetration must be in (0, 1]")
    rng = np.random.default_rng(seed)
    kept = rng.random(len(result.trip_path)) < penetration
    kept_per_path = np.bincount(result.trip_path[kept], minlength=network.n_paths)
    all_per_path = np.bincount(result.trip_path, minlength=network.n_paths)
    seg_counts = network.path_incidence.T @ kept_per_path.astype(float)
    trip_times = result.trip_times()
    time_sum = np.bincount(result.trip_path[kept], weights=trip_times[kept], minlength=network.n_paths)

    warnings = []
    times = []
    for pid in network.measured_paths:
        j = network.path_index[pid]
        if kept_per_path[j] > 0:
            times.append(time_sum[j] / kept_per_path[j])
        else:
            # all trips on a path share its time, so the all-trip mean is the path time
            times.append(float(result.path_times[j]))
            reason = "no trips" if all_per_path[j] == 0 else "no sampled trips"
            warnings.append(f"path {pid}: {reason}; using all-trip mean travel time")
    counts = []
    for sid in network.measured_segments:
        c = seg_counts[network.segment_index[sid]]
        if c < 1:
            warnings.append(f"segment {sid}: zero sampled count; floored at 1")
            c = 1.0
        counts.append(c)
    for w in warnings:
        log.warning(w)
    return FieldMeasurements(list(network.measured_paths), np.array(times),
                             list(network.measured_segments), np.array(counts),
                             penetration, warnings)
