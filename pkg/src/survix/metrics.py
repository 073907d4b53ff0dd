"""Evaluation metrics: time-dependent local accuracy, concordance index,
integrated Brier score, curve smoothing, time-dependence classification and
approximation error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.signal import savgol_filter

from .core import InteractionExplanation, SurvivalDataset, TimeGrid


@dataclass(frozen=True)
class LocalAccuracyCurve:
    """Normalized per-timepoint reconstruction error and its time average."""

    grid: TimeGrid
    sigma: np.ndarray
    mean: float


def local_accuracy(explanations: Sequence[InteractionExplanation],
                   predictions: np.ndarray,
                   baseline: np.ndarray | None = None) -> LocalAccuracyCurve:
    """Root-mean-square decomposition residual, normalized by the raw
    prediction scale.

    For each instance the residual is the prediction minus the attribution
    reconstruction (order-zero term plus all curves). When ``baseline`` is
    given it replaces every explanation's stored order-zero term; expectations
    are means over the instance set.
    """
    if len(explanations) == 0:
        raise ValueError("at least one explanation is required")
    grid = explanations[0].grid
    T = len(grid)
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    if predictions.shape != (len(explanations), T):
        raise ValueError("predictions must be (n_instances, n_timepoints)")
    residuals = np.empty_like(predictions)
    for i, expl in enumerate(explanations):
        if len(expl.grid) != T or not np.allclose(expl.grid.points, grid.points):
            raise ValueError("all explanations must share one grid")
        recon = expl.attribution_sum()
        if baseline is not None:
            recon = recon - expl.baseline + np.asarray(baseline, dtype=float)
        residuals[i] = predictions[i] - recon
    denom = np.mean(predictions ** 2, axis=0)
    if np.any(denom <= 0):
        bad = grid.points[np.flatnonzero(denom <= 0)]
        raise ValueError(f"zero prediction scale at t={bad.tolist()}")
    sigma = np.sqrt(np.mean(residuals ** 2, axis=0) / denom)
    return LocalAccuracyCurve(grid=grid, sigma=sigma, mean=float(sigma.mean()))


def concordance_index(risk_scores: np.ndarray, data: SurvivalDataset) -> float:
    """Harrell's concordance: over pairs (i, j) with y_i < y_j and an event
    at y_i, the fraction where the earlier failure has the higher risk score;
    risk ties count one half."""
    risk = np.asarray(risk_scores, dtype=float)
    y, d = data.times, data.events
    n = data.n
    concordant = 0.0
    comparable = 0
    for i in range(n):
        if d[i] != 1:
            continue
        later = y > y[i]
        comparable += int(later.sum())
        concordant += np.sum(risk[later] < risk[i])
        concordant += 0.5 * np.sum(risk[later] == risk[i])
    if comparable == 0:
        raise ValueError("no comparable pairs in the dataset")
    return float(concordant / comparable)


def censoring_km(data: SurvivalDataset):
    """Kaplan-Meier estimate of the censoring survival function G(t).

    Returns (times, values) of the right-continuous step function.
    """
    y, d = data.times, data.events
    order = np.argsort(y, kind="stable")
    ys, ds = y[order], d[order]
    uniq, first = np.unique(ys, return_index=True)
    n = ys.size
    at_risk = n - first
    censored = np.array([
        np.sum((ys == t) & (ds == 0)) for t in uniq
    ])
    factors = 1.0 - censored / at_risk
    return uniq, np.cumprod(factors)


def _step_lookup(times, values, query, side):
    idx = np.searchsorted(times, query, side=side)
    padded = np.concatenate(([1.0], values))
    return padded[idx]


def integrated_brier(surv: np.ndarray, data: SurvivalDataset,
                     grid: TimeGrid) -> float:
    """Censoring-weighted Brier score integrated over the grid (trapezoid,
    divided by the grid span)."""
    surv = np.atleast_2d(np.asarray(surv, dtype=float))
    y, d = data.times, data.events
    if surv.shape != (data.n, len(grid)):
        raise ValueError("surv must be (n_instances, n_timepoints)")
    if grid.points[-1] >= y.max():
        raise ValueError("grid must end before the largest observed time")
    km_t, km_v = censoring_km(data)
    g_at_y = _step_lookup(km_t, km_v, y, side="left")  # limit from the left
    bs = np.empty(len(grid))
    for ti, t in enumerate(grid.points):
        g_at_t = _step_lookup(km_t, km_v, t, side="right")
        event_by_t = (y <= t) & (d == 1)
        at_risk = y > t
        if np.any(at_risk) and g_at_t <= 0:
            raise ValueError(f"censoring survival reaches 0 before t={t}")
        terms = np.zeros(data.n)
        if np.any(event_by_t):
            if np.any(g_at_y[event_by_t] <= 0):
                raise ValueError("zero censoring weight at an event time")
            terms[event_by_t] = surv[event_by_t, ti] ** 2 / g_at_y[event_by_t]
        if np.any(at_risk):
            terms[at_risk] = (1.0 - surv[at_risk, ti]) ** 2 / g_at_t
        bs[ti] = terms.mean()
    span = grid.points[-1] - grid.points[0]
    if span == 0:
        return float(bs[0])
    return float(np.trapezoid(bs, grid.points) / span)


def savgol_smooth(series: np.ndarray, window: int = 11,
                  poly_order: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing with polynomial boundary handling."""
    series = np.asarray(series, dtype=float)
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if not 0 <= poly_order < window:
        raise ValueError("poly_order must be non-negative and below window")
    if window > series.shape[-1]:
        raise ValueError("window exceeds series length")
    return savgol_filter(series, window_length=window, polyorder=poly_order,
                         mode="interp")


def smooth_explanation(expl: InteractionExplanation, window: int = 11,
                       poly_order: int = 3) -> InteractionExplanation:
    """Explanation with every attribution curve (and baseline) smoothed."""
    window = min(window, len(expl.grid) if len(expl.grid) % 2 else len(expl.grid) - 1)
    if window < poly_order + 1:
        return expl
    return InteractionExplanation(
        order=expl.order,
        target=expl.target,
        grid=expl.grid,
        baseline=savgol_smooth(expl.baseline, window, poly_order),
        values={k: savgol_smooth(v, window, poly_order)
                for k, v in expl.values.items()},
        info=dict(expl.info, smoothed=True),
    )


def classify_time_dependence(expl: InteractionExplanation,
                             tol: float = 1e-6) -> Tuple[frozenset, frozenset]:
    """Split the explanation's coalitions into time-dependent and
    time-independent sets: a curve is time-dependent when its maximum
    deviation from its time average exceeds ``tol``."""
    if len(expl.grid) < 2:
        raise ValueError("need at least two grid points to assess variation")
    dependent, independent = set(), set()
    for key, curve in expl.values.items():
        if np.max(np.abs(curve - curve.mean())) > tol:
            dependent.add(key)
        else:
            independent.add(key)
    return frozenset(dependent), frozenset(independent)


def approximation_error(approx: InteractionExplanation,
                        exact: InteractionExplanation) -> float:
    """Mean squared difference between two explanations over all
    (coalition, timepoint) entries."""
    if approx.order != exact.order:
        raise ValueError("orders differ")
    if set(approx.values) != set(exact.values):
        raise ValueError("coalition sets differ")
    if len(approx.grid) != len(exact.grid) or not np.allclose(
        approx.grid.points, exact.grid.points
    ):
        raise ValueError("grids differ")
    total = 0.0
    count = 0
    for key, curve in exact.values.items():
        diff = approx.values[key] - curve
        total += float(np.sum(diff ** 2))
        count += diff.size
    return total / count
