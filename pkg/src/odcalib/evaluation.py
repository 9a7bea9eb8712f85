"""nRMSE metrics for calibrated demand, path travel times and segment counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import estimate_expectations


@dataclass(frozen=True)
class MetricsTriple:
    nrmse_demand: float
    nrmse_time: float
    nrmse_count: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.nrmse_demand, self.nrmse_time, self.nrmse_count)


def nrmse(estimate, truth) -> float:
    """Root mean squared error normalized by the mean of ``truth``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape or truth.size == 0:
        raise ValueError("estimate and truth must be nonempty and equally shaped")
    scale = truth.mean()
    if not scale > 0:
        raise ValueError("mean of truth must be positive")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)) / scale)


def metrics_from_expectations(d, gt_demand, mean_counts, mean_times, measurements, network) -> MetricsTriple:
    p_idx = [network.path_index[p] for p in measurements.path_ids]
    s_idx = [network.segment_index[s] for s in measurements.segment_ids]
    nd = nrmse(d, gt_demand) if gt_demand is not None else float("nan")
    nt = nrmse(np.asarray(mean_times)[p_idx], measurements.travel_times)
    nc = nrmse(measurements.penetration * np.asarray(mean_counts)[s_idx], measurements.counts)
    return MetricsTriple(nd, nt, nc)


def evaluate_solution(d, gt_demand, measurements, network, sim_config, rollouts: int = 5,
                      seed: int = 0) -> MetricsTriple:
    counts, times = estimate_expectations(network, d, sim_config, rollouts, seed)
    return metrics_from_expectations(d, gt_demand, counts, times, measurements, network)


def percent_change(new: float, reference: float) -> float:
    """Signed relative change of ``new`` against ``reference`` in percent."""
    if reference == 0:
        return 0.0 if new == 0 else float("inf") * np.sign(new)
    return 100.0 * (new - reference) / reference
