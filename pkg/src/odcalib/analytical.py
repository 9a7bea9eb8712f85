"""Physics-based metamodel: link demand, density, FD velocity, path times and their gradients.

Units: lengths in km, speeds in km/h, travel times in minutes, demand in vehicles
per analysis interval.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

MINUTES_PER_HOUR = 60.0
_JAM_SNAP = 16 * np.finfo(float).eps


@dataclass(frozen=True)
class AnalyticalParams:
    v_min: float = 10.0
    k_jam: float = 160.0
    k_crit: float = 40.0
    kappa: float = 0.001
    gamma1: float = 2.0
    gamma2: float = 2.0

    def __post_init__(self):
        if not 0 < self.k_crit < self.k_jam:
            raise ValueError("need 0 < k_crit < k_jam")
        if self.v_min <= 0 or self.kappa <= 0:
            raise ValueError("v_min and kappa must be positive")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("FD exponents must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> AnalyticalParams:
        return cls(**(data or {}))


@dataclass(frozen=True)
class ObjectiveWeights:
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("weights must be nonnegative with a positive sum")


@dataclass
class CorrectionParams:
    """Scale + affine correction coefficients.

    ``beta = (beta0, beta1, beta_2..beta_{|Z|+1})`` corrects the travel-time term,
    ``alpha`` the count-ratio term, both with the same layout.
    """

    beta: np.ndarray
    alpha: np.ndarray

    @classmethod
    def identity(cls, n_od: int) -> CorrectionParams:
        e = np.zeros(n_od + 2)
        e[0] = 1.0
        return cls(e.copy(), e.copy())


@dataclass
class AnalyticalState:
    lam: np.ndarray
    k: np.ndarray
    v: np.ndarray
    y: np.ndarray  # analytical time on every measured path


# -- elementwise laws ------------------------------------------------------------

def link_demand(A: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.asarray(A) @ np.asarray(d, dtype=float)


def density(lam, lanes, params: AnalyticalParams):
    return params.kappa * params.k_jam * np.asarray(lam, dtype=float) / np.asarray(lanes, dtype=float)


def _congestion_ratio(k, params: AnalyticalParams):
    # clamped at 1: past k_crit + k_jam the law would leave its real domain
    u = (np.maximum(k, params.k_crit) - params.k_crit) / params.k_jam
    # k_crit + k_jam rounds; without snapping, gamma2 < 1 turns one ulp into a visible speed gap
    return np.where(u >= 1.0 - _JAM_SNAP, 1.0, u)


def velocity(k, v_max, params: AnalyticalParams):
    """Fundamental-diagram speed for density ``k`` on a link with speed limit ``v_max``."""
    u = _congestion_ratio(np.asarray(k, dtype=float), params)
    s = 1.0 - u ** params.gamma1
    v = params.v_min + (np.asarray(v_max, dtype=float) - params.v_min) * s ** params.gamma2
    return np.clip(v, params.v_min, v_max)


def velocity_slope(k, v_max, params: AnalyticalParams):
    """dv/dk; zero on the free-flow branch (including the kink itself) and past jam."""
    k = np.asarray(k, dtype=float)
    u = _congestion_ratio(k, params)
    active = (k > params.k_crit) & (k < params.k_crit + params.k_jam)
    g1, g2 = params.gamma1, params.gamma2
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1.0 - u ** g1
        slope = -(np.asarray(v_max, dtype=float) - params.v_min) * g2 * s ** (g2 - 1.0) \
            * g1 * u ** (g1 - 1.0) / params.k_jam
    return np.where(active, slope, 0.0)


def path_travel_time(lengths, v) -> float:
    """Minutes to traverse segments with ``lengths`` (km) at speeds ``v`` (km/h)."""
    return float(MINUTES_PER_HOUR * np.sum(np.asarray(lengths, dtype=float) / np.asarray(v, dtype=float)))


def ratio_variance(values, reference) -> float:
    """Population variance of ``values / reference``."""
    r = np.asarray(values, dtype=float) / np.asarray(reference, dtype=float)
    # shift by a sample first: identical ratios then give exactly zero
    s = r - r[0]
    return float(np.mean((s - s.mean()) ** 2))


def travel_time_mse(times, reference) -> float:
    diff = np.asarray(reference, dtype=float) - np.asarray(times, dtype=float)
    return float(np.mean(diff ** 2))


# -- the metamodel -----------------------------------------------------------------

class AnalyticalModel:
    """Analytical objective terms for one network/measurement pair.

    Everything measurement-dependent is precomputed once so the subproblem solver
    can evaluate values and gradients cheaply.
    """

    def __init__(self, network, measurements, params: AnalyticalParams):
        self.network = network
        self.params = params
        self.A = network.assignment
        self.lengths = network.lengths
        self.v_max = network.speed_limits
        self.k_scale = params.kappa * params.k_jam / network.lanes
        p_idx = network.path_index
        s_idx = network.segment_index
        self.path_rows = np.array([p_idx[p] for p in measurements.path_ids], dtype=int)
        self.seg_rows = np.array([s_idx[s] for s in measurements.segment_ids], dtype=int)
        self.P = network.path_incidence[self.path_rows]
        self.y_gt = np.asarray(measurements.travel_times, dtype=float)
        self.x_gt = np.asarray(measurements.counts, dtype=float)
        if np.any(self.x_gt <= 0):
            raise ValueError("sample counts must be positive on measured segments")
        if len(self.y_gt) == 0 or len(self.x_gt) == 0:
            raise ValueError("measurement sets must be nonempty")

    @property
    def n_od(self) -> int:
        return self.A.shape[1]

    def state(self, d) -> AnalyticalState:
        lam = self.A @ np.asarray(d, dtype=float)
        k = self.k_scale * lam
        v = velocity(k, self.v_max, self.params)
        y = MINUTES_PER_HOUR * self.P @ (self.lengths / v)
        return AnalyticalState(lam, k, v, y)

    def f1(self, d) -> float:
        return travel_time_mse(self.state(d).y, self.y_gt)

    def f2(self, d) -> float:
        lam = self.A @ np.asarray(d, dtype=float)
        return ratio_variance(lam[self.seg_rows], self.x_gt)

    def terms_and_gradients(self, d):
        """Return ``(f1, grad f1, f2, grad f2)`` at ``d``."""
        st = self.state(d)
        resid = st.y - self.y_gt
        f1 = float(np.mean(resid ** 2))
        dy = 2.0 * resid / len(resid)
        dv = (self.P.T @ dy) * (-MINUTES_PER_HOUR * self.lengths / st.v ** 2)
        dlam = dv * velocity_slope(st.k, self.v_max, self.params) * self.k_scale
        g1 = self.A.T @ dlam

        r = st.lam[self.seg_rows] / self.x_gt
        dev = r - r.mean()
        f2 = ratio_variance(st.lam[self.seg_rows], self.x_gt)
        dlam2 = np.zeros_like(st.lam)
        np.add.at(dlam2, self.seg_rows, 2.0 * dev / (len(r) * self.x_gt))
        g2 = self.A.T @ dlam2
        return f1, g1, f2, g2

    def metamodel(self, d, corr: CorrectionParams, weights: ObjectiveWeights):
        """Value and gradient of the corrected metamodel at ``d``."""
        d = np.asarray(d, dtype=float)
        f1, g1, f2, g2 = self.terms_and_gradients(d)
        b, a = corr.beta, corr.alpha
        phi1 = b[1] + b[2:] @ d
        phi2 = a[1] + a[2:] @ d
        value = weights.w1 * (b[0] * f1 + phi1) + weights.w2 * (a[0] * f2 + phi2)
        grad = weights.w1 * (b[0] * g1 + b[2:]) + weights.w2 * (a[0] * g2 + a[2:])
        return float(value), grad


def f1_analytical(d, network, measurements, params: AnalyticalParams) -> float:
    return AnalyticalModel(network, measurements, params).f1(d)


def f2_analytical(d, network, measurements, params: AnalyticalParams) -> float:
    return AnalyticalModel(network, measurements, params).f2(d)


def metamodel_value_and_gradient(d, corr, weights, network, measurements, params):
    return AnalyticalModel(network, measurements, params).metamodel(d, corr, weights)


def simulated_terms(mean_counts, mean_times, measurements, network) -> tuple[float, float]:
    """Travel-time MSE and count-ratio variance from simulated expectations."""
    p_idx = [network.path_index[p] for p in measurements.path_ids]
    s_idx = [network.segment_index[s] for s in measurements.segment_ids]
    f1 = travel_time_mse(np.asarray(mean_times)[p_idx], measurements.travel_times)
    f2 = ratio_variance(np.asarray(mean_counts)[s_idx], measurements.counts)
    return f1, f2


def simulated_objective(mean_counts, mean_times, measurements, weights: ObjectiveWeights,
                        network) -> float:
    f1, f2 = simulated_terms(mean_counts, mean_times, measurements, network)
    return weights.w1 * f1 + weights.w2 * f2
