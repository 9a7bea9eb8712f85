"""Iterative metamodel simulation-based optimization for OD demand calibration."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytical import AnalyticalModel, CorrectionParams, ObjectiveWeights, simulated_terms
from .evaluation import MetricsTriple, metrics_from_expectations
from .simulator import SimulationError, SimulatorConfig, estimate_expectations

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "objective", "f1_sim", "f2_sim",
                 "nrmse_demand", "nrmse_time", "nrmse_count", "incumbent")


@dataclass
class SolverConfig:
    d_max: float | list[float] = 1000.0
    w1: float = 1.0
    w2: float | None = None  # None: balance against w1 at the initial point
    regularized: bool = True
    rollouts: int = 5
    iterations: int = 30
    decay_length: float | None = None  # None: 10% of the box diagonal
    prior_strength: float = 1.0
    subproblem_max_iter: int = 2000
    subproblem_tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.d_max, dtype=float) <= 0):
            raise ValueError("d_max must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if self.prior_strength < 0:
            raise ValueError("prior_strength must be >= 0")
        if self.decay_length is not None and not self.decay_length > 0:
            raise ValueError("decay_length must be > 0")

    def upper(self, n_od: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.d_max, dtype=float), (n_od,)).copy()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> SolverConfig:
        return cls(**(data or {}))


@dataclass
class EvaluationRecord:
    d: np.ndarray
    sim_f1: float
    sim_f2: float
    iteration: int
    seed: int
    metrics: MetricsTriple | None = None
    failed: bool = False


@dataclass
class TraceRow:
    iteration: int
    objective: float
    f1_sim: float
    f2_sim: float
    nrmse_demand: float
    nrmse_time: float
    nrmse_count: float
    incumbent: int


@dataclass
class CalibrationTrace:
    rows: list[TraceRow]
    weights: ObjectiveWeights
    initial: EvaluationRecord
    best_d: np.ndarray
    history: list[EvaluationRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in self.rows:
                writer.writerow([r.iteration] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:-1]]
                                + [r.incumbent])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [TraceRow(int(r["iteration"]), *(float(r[c]) for c in TRACE_COLUMNS[1:-1]),
                         int(r["incumbent"])) for r in reader]


# -- correction fit -----------------------------------------------------------------

def _ridge_fit(X: np.ndarray, y: np.ndarray, w: np.ndarray, prior: np.ndarray, mu: float) -> np.ndarray:
    resid = y - X @ prior
    sw = np.sqrt(w)
    lhs = sw[:, None] * X
    rhs = sw * resid
    if mu > 0:
        # ridge as an augmented least-squares system; avoids squaring the condition number
        lhs = np.vstack([lhs, np.sqrt(mu) * np.eye(X.shape[1])])
        rhs = np.concatenate([rhs, np.zeros(X.shape[1])])
    # with mu == 0 this is the minimum-norm step away from the prior
    delta, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return prior + delta


def fit_correction_params(history, d_current, model: AnalyticalModel, mu: float,
                          rho: float) -> CorrectionParams:
    """Distance-weighted ridge fit of scale + affine corrections to the simulated terms.

    Shrinks toward the identity correction (scale 1, affine part 0); with no history
    the identity is returned unchanged.
    """
    n = model.n_od
    corr = CorrectionParams.identity(n)
    usable = [h for h in history if not h.failed]
    if not usable:
        return corr
    D = np.array([h.d for h in usable], dtype=float)
    f1a = np.array([model.f1(d) for d in D])
    f2a = np.array([model.f2(d) for d in D])
    w = 1.0 / (1.0 + np.linalg.norm(D - np.asarray(d_current, dtype=float), axis=1) / rho)
    ones = np.ones(len(usable))
    prior = corr.beta
    beta = _ridge_fit(np.column_stack([f1a, ones, D]), np.array([h.sim_f1 for h in usable]), w, prior, mu)
    alpha = _ridge_fit(np.column_stack([f2a, ones, D]), np.array([h.sim_f2 for h in usable]), w, prior, mu)
    return CorrectionParams(beta, alpha)


# -- subproblem -----------------------------------------------------------------------

def minimize_box(fun, x0, lower, upper, max_iter: int = 2000, tol: float = 1e-12,
                 armijo: float = 1e-4):
    """Projected gradient descent with spectral step sizes and Armijo backtracking.

    ``fun(x)`` returns ``(value, gradient)``. Once value differences drop to
    rounding level a step is also accepted if the slope along it is still
    downhill at its end point; no accepted point exceeds the starting value by
    more than 1e-9.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    f_start = f
    span = float(np.max(upper - lower))
    gmax = float(np.max(np.abs(g)))
    step = 0.1 * span / gmax if gmax > 0 else 1.0
    for _ in range(max_iter):
        pg = x - np.clip(x - g, lower, upper)
        if np.max(np.abs(pg)) <= tol:
            break
        noise = 1e3 * np.finfo(float).eps * max(1.0, abs(f))
        accepted = False
        for _ in range(60):
            x_new = np.clip(x - step * g, lower, upper)
            s = x_new - x
            f_new, g_new = fun(x_new)
            if f_new <= f + armijo * float(g @ s):
                accepted = True
                break
            if f_new <= f + noise and f_new <= f_start + 1e-9 and float(g_new @ s) <= 0:
                accepted = True
                break
            step *= 0.5
        if not accepted or not np.any(s):
            break
        y = g_new - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * step
        step = min(max(step, 1e-12), 1e12)
        x, f, g = x_new, f_new, g_new
    return x


def solve_subproblem(corr: CorrectionParams, d_init, config: SolverConfig, model: AnalyticalModel,
                     weights: ObjectiveWeights) -> np.ndarray:
    upper = config.upper(model.n_od)
    return minimize_box(lambda d: model.metamodel(d, corr, weights), d_init, np.zeros_like(upper),
                        upper, config.subproblem_max_iter, config.subproblem_tol)


# -- main loop ----------------------------------------------------------------------

def initial_demand(config: SolverConfig, n_od: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0])
    return rng.uniform(0.0, config.upper(n_od) / 2.0)


def run_calibration(network, measurements, gt_demand, config: SolverConfig,
                    sim_config: SimulatorConfig, d0=None) -> CalibrationTrace:
    """Run the metamodel loop for ``config.iterations`` iterations from a random start.

    Every candidate is simulated with the same rollout seeds so incumbent
    comparisons share their random numbers.
    """
    model = AnalyticalModel(network, measurements, sim_config.params)
    upper = config.upper(network.n_od)
    rho = config.decay_length or 0.1 * float(np.linalg.norm(upper))
    sim_seed = config.seed

    def evaluate(d, iteration):
        counts, times = estimate_expectations(network, d, sim_config, config.rollouts, sim_seed)
        f1, f2 = simulated_terms(counts, times, measurements, network)
        m = metrics_from_expectations(d, gt_demand, counts, times, measurements, network)
        return EvaluationRecord(np.asarray(d, dtype=float).copy(), f1, f2, iteration, sim_seed, m)

    d0 = initial_demand(config, network.n_od) if d0 is None else np.clip(np.asarray(d0, float), 0, upper)
    first = evaluate(d0, 0)
    if not config.regularized:
        weights = ObjectiveWeights(config.w1, 0.0)
    elif config.w2 is not None:
        weights = ObjectiveWeights(config.w1, config.w2)
    else:
        w2 = config.w1 * first.sim_f1 / first.sim_f2 if first.sim_f2 > 0 else config.w1
        weights = ObjectiveWeights(config.w1, w2)

    def objective(rec):
        return weights.w1 * rec.sim_f1 + weights.w2 * rec.sim_f2

    history = [first]
    best, best_obj = first, objective(first)
    rows = []
    for k in range(1, config.iterations + 1):
        corr = fit_correction_params(history, best.d, model, config.prior_strength, rho)
        cand = solve_subproblem(corr, best.d, config, model, weights)
        try:
            rec = evaluate(cand, k)
        except (SimulationError, FloatingPointError) as exc:
            log.warning("iteration %d: candidate evaluation failed: %s", k, exc)
            history.append(EvaluationRecord(cand, 0.0, 0.0, k, sim_seed, failed=True))
            rec = None
        accepted = False
        if rec is not None:
            history.append(rec)
            obj = objective(rec)
            if obj < best_obj:
                best, best_obj, accepted = rec, obj, True
        m = best.metrics
        rows.append(TraceRow(k, best_obj, best.sim_f1, best.sim_f2, m.nrmse_demand, m.nrmse_time,
                             m.nrmse_count, int(accepted)))
        log.debug("iteration %d: objective %.6g accepted=%s", k, best_obj, accepted)
    return CalibrationTrace(rows, weights, first, best.d.copy(), history)
