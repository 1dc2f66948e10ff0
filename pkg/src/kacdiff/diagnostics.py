"""Cross-validation reports: conservation, chaos metrics, rate and order fits.

Every report is a pure function of its inputs and declared tolerances and
is emitted as a JSON-able dict with fixed keys
{metric, value, stderr, tolerance, pass}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .markov import EnsembleStats, SimulationResult
from .model import SystemParams


def check_item(metric: str, value: float, stderr: float, tolerance: float, passed: bool) -> dict:
    return {
        "metric": metric,
        "value": float(value),
        "stderr": float(stderr),
        "tolerance": float(tolerance),
        "pass": bool(passed),
    }


def conservation_report(results, tolerance: float = 1e-10) -> list:
    """Max momentum/energy drift over one or more simulation runs."""
    if isinstance(results, SimulationResult):
        results = [results]
    if not results:
        raise ValueError("need at least one simulation result")
    items = []
    for res in results:
        if len(res.checkpoints) < 1:
            raise ValueError("run has no checkpoints")
        tag = f"{res.scheme}_N{res.params.n_particles}"
        items.append(
            check_item(
                f"momentum_drift_{tag}",
                res.max_momentum_residual,
                0.0,
                tolerance,
                res.max_momentum_residual <= tolerance,
            )
        )
        items.append(
            check_item(
                f"energy_drift_{tag}",
                res.max_energy_residual,
                0.0,
                tolerance,
                res.max_energy_residual <= tolerance,
            )
        )
    return items


@dataclass
class ChaosMetric:
    pair_cov: np.ndarray
    pair_cov_stderr: np.ndarray
    l1_product_defect: float


def chaos_metric(stats: EnsembleStats, params: SystemParams) -> ChaosMetric:
    """Pair covariance and the L1 defect of the 2-marginal vs product of 1-marginals.

    The product reference is built from the 1-d marginals of the joint
    histogram itself, so binning and samples match exactly.
    """
    if stats.hist_pair is None:
        raise ValueError("pair histogram missing from the ensemble statistics")
    joint = stats.hist_pair.values
    w = stats.hist_pair.axes[0].weights[0]
    m1 = joint.sum(axis=1) * w
    m2 = joint.sum(axis=0) * w
    product = np.outer(m1, m2)
    defect = float(np.sum(np.abs(joint - product)) * w * w)
    return ChaosMetric(
        pair_cov=stats.pair_cov,
        pair_cov_stderr=stats.pair_cov_stderr,
        l1_product_defect=defect,
    )


@dataclass
class GapFit:
    rate: float
    stderr: float
    n_points: int
    log_amplitude: float


def gap_estimate(taus, values, expected_limit: float, noise_floor: float = 0.0) -> GapFit:
    """Least-squares exponential fit of |value - limit| over time.

    Points with residual below 10x the noise floor are excluded before the
    log-linear fit.  A residual series whose sign flips inside the fit
    window signals a noise-dominated regime and is rejected.
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    if taus.shape != values.shape or taus.ndim != 1:
        raise ValueError("need matching 1-d tau and value arrays")
    resid = values - expected_limit
    keep = np.abs(resid) > 10.0 * noise_floor
    if np.count_nonzero(keep) < 10:
        raise ValueError(f"need >= 10 usable time points, got {np.count_nonzero(keep)}")
    r = resid[keep]
    t = taus[keep]
    signs = np.sign(r)
    if np.any(signs == 0.0) or np.any(signs != signs[0]):
        raise ValueError("residual series crosses zero inside the fit window")
    y = np.log(np.abs(r))
    tbar = t.mean()
    ybar = y.mean()
    sxx = float(np.sum((t - tbar) ** 2))
    slope = float(np.sum((t - tbar) * (y - ybar)) / sxx)
    intercept = ybar - slope * tbar
    ssr = float(np.sum((y - intercept - slope * t) ** 2))
    dof = max(t.size - 2, 1)
    stderr = math.sqrt(ssr / dof / sxx)
    return GapFit(rate=-slope, stderr=stderr, n_points=int(t.size), log_amplitude=intercept)


@dataclass
class OrderFit:
    slope: float
    stderr: float


def convergence_order(scales, errors, noise_allowance: float = 1.3) -> OrderFit:
    """Log-log regression slope of error against scale.

    Error sequences that are non-monotone in the scale beyond the allowance
    factor are rejected rather than silently fitted.
    """
    scales = np.asarray(scales, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if scales.size < 3:
        raise ValueError("need at least 3 scales")
    if np.any(errors <= 0.0) or np.any(scales <= 0.0):
        raise ValueError("scales and errors must be positive")
    idx = np.argsort(scales)
    e = errors[idx]
    trend = 1.0 if e[-1] >= e[0] else -1.0
    for a, b in zip(e[:-1], e[1:]):
        if trend * (b - a) < 0 and max(a / b, b / a) > noise_allowance:
            raise ValueError("error sequence is non-monotone beyond the noise allowance")
    x = np.log(scales)
    y = np.log(errors)
    xbar = x.mean()
    ybar = y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    intercept = ybar - slope * xbar
    ssr = float(np.sum((y - intercept - slope * x) ** 2))
    dof = max(x.size - 2, 1)
    stderr = math.sqrt(ssr / dof / sxx)
    return OrderFit(slope=slope, stderr=stderr)
