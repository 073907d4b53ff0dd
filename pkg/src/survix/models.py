"""Ground-truth multiplicative-hazard models and a Cox proportional-hazards
fitter.

A ground-truth model is a constant baseline hazard times the exponential of a
term-based risk score: each term multiplies a coefficient, per-feature
transforms of a feature subset, and an optional time factor. Log-hazard and
hazard evaluate in closed form; survival integrates the hazard, using the
exact constant-hazard formula when no term depends on time and Gauss-Legendre
panel quadrature otherwise.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import integrate

from .core import PredictionTarget

QUAD_ABS_TOL = 1e-10
_NODES_PER_PANEL = 10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_NODES_PER_PANEL)

_ARCTAN_RE = re.compile(r"scaled_arctan\(\s*([-+0-9.eE]+)\s*\)")


def _transform_fn(tag: str) -> Callable[[np.ndarray], np.ndarray]:
    if tag == "identity":
        return lambda x: x
    if tag == "square":
        return np.square
    m = _ARCTAN_RE.fullmatch(tag)
    if m:
        a = float(m.group(1))
        return lambda x, a=a: (2.0 / np.pi) * np.arctan(a * x)
    raise ValueError(f"unknown feature transform {tag!r}")


@dataclass(frozen=True)
class RiskTerm:
    """One additive term of a risk score.

    features: 0-based indices of the participating features (non-empty).
    transforms: one transform tag per feature ('identity', 'square',
        or 'scaled_arctan(a)').
    time: 'constant' or 'log1p' (multiplies the term by log(t + 1)).
    """

    features: Tuple[int, ...]
    beta: float
    transforms: Tuple[str, ...] = ()
    time: str = "constant"

    def __post_init__(self):
        feats = tuple(int(i) for i in self.features)
        if len(feats) == 0:
            raise ValueError("a risk term needs at least one feature")
        if len(set(feats)) != len(feats):
            raise ValueError("duplicate feature in risk term")
        transforms = tuple(self.transforms) or ("identity",) * len(feats)
        if len(transforms) != len(feats):
            raise ValueError("one transform per feature is required")
        for tag in transforms:
            _transform_fn(tag)  # validate
        if self.time not in ("constant", "log1p"):
            raise ValueError(f"unknown time modifier {self.time!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "transforms", transforms)

    @property
    def time_dependent(self) -> bool:
        return self.time != "constant"

    def feature_product(self, X: np.ndarray) -> np.ndarray:
        """Product of transformed feature columns for each row of X."""
        out = np.full(X.shape[0], self.beta)
        for j, tag in zip(self.features, self.transforms):
            out = out * _transform_fn(tag)(X[:, j])
        return out

    def time_factor(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.time == "log1p":
            return np.log1p(times)
        return np.ones_like(times)


@dataclass(frozen=True)
class RiskScoreSpec:
    """Additive collection of risk terms over p features."""

    p: int
    terms: Tuple[RiskTerm, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        for term in terms:
            if max(term.features) >= self.p:
                raise ValueError(f"term {term.features} exceeds p={self.p}")
        object.__setattr__(self, "terms", terms)

    @property
    def time_independent(self) -> bool:
        return all(not t.time_dependent for t in self.terms)

    def term_products(self, X: np.ndarray) -> np.ndarray:
        """(m, n_terms) matrix of coefficient-scaled feature products."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        if not self.terms:
            return np.zeros((X.shape[0], 0))
        return np.column_stack([t.feature_product(X) for t in self.terms])

    def time_factors(self, times: np.ndarray) -> np.ndarray:
        """(n_terms, T) matrix of per-term time factors."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if not self.terms:
            return np.zeros((0, times.size))
        return np.vstack([t.time_factor(times) for t in self.terms])


def eval_risk_score(risk: RiskScoreSpec, x: np.ndarray, t: float) -> float:
    """Risk score G(t|x) for a single observation and timepoint."""
    x = np.asarray(x, dtype=float)
    if x.shape != (risk.p,):
        raise ValueError(f"expected a vector of length {risk.p}")
    if t < 0:
        raise ValueError("t must be >= 0")
    products = risk.term_products(x[None, :])[0]
    factors = risk.time_factors([t])[:, 0]
    return float(products @ factors)


@dataclass(frozen=True)
class GroundTruthModel:
    """Constant baseline hazard lam times exp(risk score)."""

    lam: float
    risk: RiskScoreSpec

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("baseline hazard must be positive")

    @property
    def p(self) -> int:
        return self.risk.p

    @property
    def time_independent(self) -> bool:
        return self.risk.time_independent

    # -- batch evaluation ---------------------------------------------------

    def log_hazard_matrix(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        C = self.risk.term_products(X)
        L = self.risk.time_factors(times)
        return math.log(self.lam) + C @ L

    def hazard_matrix(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        out = np.exp(self.log_hazard_matrix(X, times) - math.log(self.lam))
        out *= self.lam
        _check_finite(out)
        return out

    def cumulative_hazard_matrix(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Integral of the hazard from 0 to each timepoint, per row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < 0):
            raise ValueError("times must be >= 0")
        if self.time_independent:
            g = self.risk.term_products(X).sum(axis=1)
            out = self.lam * np.exp(g)[:, None] * times[None, :]
            _check_finite(out)
            return out
        return self._quadrature_cumhaz(X, times)

    def _quadrature_cumhaz(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        # Gauss-Legendre panels between consecutive grid points (first panel
        # starts at 0). The integrand is smooth, so a fixed node count per
        # panel reaches well below QUAD_ABS_TOL. With the closed time
        # vocabulary the integrand splits into exp(c0) * exp(c1 * log(1+u)),
        # so rows sharing the time-dependent load c1 reuse one node sweep;
        # imputation batches repeat few distinct values there.
        edges = np.concatenate(([0.0], times))
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        C = self.risk.term_products(X)
        td_cols = [i for i, t in enumerate(self.risk.terms) if t.time_dependent]
        const_cols = [i for i in range(len(self.risk.terms)) if i not in td_cols]
        c0 = C[:, const_cols].sum(axis=1) if const_cols else np.zeros(C.shape[0])
        c1 = C[:, td_cols].sum(axis=1)
        uniq, inverse = np.unique(c1, return_inverse=True)
        log_nodes = np.log1p(nodes)
        integral = np.empty((uniq.size, times.size))
        chunk = max(1, 32_000_000 // max(nodes.size, 1))
        for lo in range(0, uniq.size, chunk):
            hi = min(lo + chunk, uniq.size)
            g = np.exp(np.outer(uniq[lo:hi], log_nodes))
            g = g.reshape(hi - lo, times.size, _NODES_PER_PANEL)
            integral[lo:hi] = np.cumsum((g @ _GL_WEIGHTS) * half[None, :], axis=1)
        out = self.lam * np.exp(c0)[:, None] * integral[inverse]
        _check_finite(out)
        return out

    def survival_matrix(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        return np.exp(-self.cumulative_hazard_matrix(X, times))

    def predict(self, X: np.ndarray, times: np.ndarray,
                target: PredictionTarget) -> np.ndarray:
        """(m, T) prediction matrix on the requested scale."""
        if target is PredictionTarget.LOG_HAZARD:
            out = self.log_hazard_matrix(X, times)
            _check_finite(out)
            return out
        if target is PredictionTarget.HAZARD:
            return self.hazard_matrix(X, times)
        if target is PredictionTarget.SURVIVAL:
            return self.survival_matrix(X, times)
        raise ValueError(f"unknown target {target!r}")

    def prediction_function(self, target: PredictionTarget):
        """Batch callable (X, times) -> (m, T) for use in value functions."""
        return lambda X, times: self.predict(X, times, target)


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(
            "non-finite model prediction (overflow in exp); "
            "check coefficients and feature ranges"
        )


def _exp_checked(value: float) -> float:
    try:
        out = math.exp(value)
    except OverflowError:
        raise FloatingPointError(f"exp({value:.3g}) overflows") from None
    if not math.isfinite(out):
        raise FloatingPointError(f"exp({value:.3g}) overflows")
    return out


def cumulative_hazard(model: GroundTruthModel, x: np.ndarray, t: float) -> float:
    """Scalar cumulative hazard with adaptive quadrature on [0, t].

    Uses the closed form lam * t * exp(G(x)) when the risk score is
    time-independent; otherwise adaptive Gauss-Kronrod integration to
    absolute tolerance QUAD_ABS_TOL.
    """
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    if model.time_independent:
        return float(model.lam * t * _exp_checked(eval_risk_score(model.risk, x, 0.0)))
    products = model.risk.term_products(x[None, :])[0]

    def integrand(u):
        factors = model.risk.time_factors(np.atleast_1d(u))
        return model.lam * np.exp(products @ factors)

    value, abserr = integrate.quad(
        lambda u: float(integrand(u)[0]), 0.0, t,
        epsabs=QUAD_ABS_TOL, epsrel=1e-12, limit=200,
    )
    if not math.isfinite(value):
        raise FloatingPointError("cumulative hazard overflowed")
    if abserr > max(QUAD_ABS_TOL, 1e-8 * abs(value)):
        raise RuntimeError(
            f"quadrature did not reach tolerance (residual estimate {abserr:.3e})"
        )
    return float(value)


def eval_target(model: GroundTruthModel, target: PredictionTarget,
                x: np.ndarray, t: float) -> float:
    """Scalar log-hazard, hazard, or survival evaluation."""
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if target is PredictionTarget.LOG_HAZARD:
        return math.log(model.lam) + eval_risk_score(model.risk, x, t)
    if target is PredictionTarget.HAZARD:
        return model.lam * _exp_checked(eval_risk_score(model.risk, x, t))
    if target is PredictionTarget.SURVIVAL:
        return math.exp(-cumulative_hazard(model, x, t))
    raise ValueError(f"unknown target {target!r}")


# ---------------------------------------------------------------------------
# model spec JSON
# ---------------------------------------------------------------------------

def model_to_json(model: GroundTruthModel, path) -> None:
    payload = {
        "p": model.p,
        "lambda": model.lam,
        "terms": [
            {
                "features": [i + 1 for i in term.features],
                "beta": term.beta,
                "transforms": list(term.transforms),
                "time": term.time,
            }
            for term in model.risk.terms
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def model_from_json(path) -> GroundTruthModel:
    with open(path) as fh:
        payload = json.load(fh)
    terms = tuple(
        RiskTerm(
            features=tuple(i - 1 for i in spec["features"]),
            beta=float(spec["beta"]),
            transforms=tuple(spec.get("transforms", ())),
            time=spec.get("time", "constant"),
        )
        for spec in payload["terms"]
    )
    return GroundTruthModel(
        lam=float(payload["lambda"]),
        risk=RiskScoreSpec(p=int(payload["p"]), terms=terms),
    )


# ---------------------------------------------------------------------------
# Cox proportional hazards
# ---------------------------------------------------------------------------

class ConvergenceError(RuntimeError):
    """Raised when the partial-likelihood optimizer fails; carries the
    iteration trace in ``trace``."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class CoxModel:
    """Fitted Cox model: coefficients, Breslow cumulative baseline hazard as
    a right-continuous step function, and the centering means."""

    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray | None = None
    iterations: int = 0

    def __post_init__(self):
        for name in ("beta", "baseline_times", "baseline_cumhaz", "mean"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(np.diff(self.baseline_cumhaz) < 0) or (
            self.baseline_cumhaz.size and self.baseline_cumhaz[0] < 0
        ):
            raise ValueError("cumulative baseline hazard must start at 0 and be non-decreasing")

    @property
    def p(self) -> int:
        return self.beta.size

    def cumhaz_at(self, times: np.ndarray) -> np.ndarray:
        """Step-function lookup of H0; times beyond the last event reuse the
        final value (documented extrapolation)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.baseline_times, times, side="right")
        steps = np.concatenate(([0.0], self.baseline_cumhaz))
        return steps[idx]

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.mean) @ self.beta

    def survival_matrix(self, X: np.ndarray, times: np.ndarray) -> np.ndarray:
        h0 = self.cumhaz_at(times)
        eta = self.linear_predictor(X)
        return np.exp(-np.exp(eta)[:, None] * h0[None, :])

    def prediction_function(self, target: PredictionTarget = PredictionTarget.SURVIVAL):
        if target is not PredictionTarget.SURVIVAL:
            raise ValueError("Cox predictions are exposed on the survival scale")
        return lambda X, times: self.survival_matrix(X, times)

    def to_json(self, path) -> None:
        payload = {
            "beta": self.beta.tolist(),
            "baseline": [[float(t), float(h)] for t, h in
                         zip(self.baseline_times, self.baseline_cumhaz)],
            "mean": self.mean.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path) -> "CoxModel":
        with open(path) as fh:
            payload = json.load(fh)
        baseline = np.array(payload["baseline"], dtype=float).reshape(-1, 2)
        return cls(
            beta=np.array(payload["beta"]),
            baseline_times=baseline[:, 0],
            baseline_cumhaz=baseline[:, 1],
            mean=np.array(payload["mean"]),
        )


def coxph_survival(model: CoxModel, x: np.ndarray, t: float) -> float:
    """Predicted survival probability for one observation at one timepoint."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(model.survival_matrix(np.asarray(x)[None, :], [t])[0, 0])


def fit_coxph(data, tol: float = 1e-8, max_iter: int = 100) -> CoxModel:
    """Newton-Raphson fit of the Breslow-tie-corrected partial likelihood.

    Features are centered at their training means for numerical stability;
    predictions are invariant to the centering. Standard errors come from
    the inverse observed information.
    """
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.times, dtype=float)
    d = np.asarray(data.events, dtype=int)
    n, p = X.shape
    if d.sum() < 1:
        raise ValueError("at least one event is required")
    if np.any(X.std(axis=0) == 0):
        raise ValueError("constant feature column; drop it before fitting")

    mean = X.mean(axis=0)
    Xc = X - mean
    order = np.argsort(y, kind="stable")
    Xs, ys, ds = Xc[order], y[order], d[order]
    # risk set of an observation starts at the first index sharing its time
    risk_start = np.searchsorted(ys, ys, side="left")
    ev = np.flatnonzero(ds == 1)

    beta = np.zeros(p)
    trace = []
    for iteration in range(1, max_iter + 1):
        loglik, grad, info = _breslow_derivatives(Xs, ds, risk_start, ev, beta)
        trace.append((iteration, float(loglik), float(np.linalg.norm(grad))))
        if np.linalg.norm(beta) > 50:
            raise ConvergenceError(
                "diverging coefficients; the data may be separable", trace
            )
        if np.linalg.norm(grad) < tol:
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular information matrix: {exc}", trace)
        # step-halving keeps the likelihood monotone
        new_beta = beta + step
        for _ in range(30):
            new_ll = _breslow_derivatives(Xs, ds, risk_start, ev, new_beta)[0]
            if new_ll >= loglik - 1e-12:
                break
            step *= 0.5
            new_beta = beta + step
        beta = new_beta
    else:
        raise ConvergenceError(
            f"no convergence after {max_iter} iterations", trace
        )

    loglik, grad, info = _breslow_derivatives(Xs, ds, risk_start, ev, beta)
    try:
        stderr = np.sqrt(np.diag(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        stderr = np.full(p, np.nan)

    # Breslow cumulative baseline hazard at distinct event times
    w = np.exp(Xs @ beta)
    s0 = np.cumsum(w[::-1])[::-1]
    event_times, first_idx, counts = np.unique(
        ys[ev], return_index=True, return_counts=True
    )
    denom = s0[risk_start[ev][first_idx]]
    cumhaz = np.cumsum(counts / denom)
    return CoxModel(
        beta=beta,
        baseline_times=event_times,
        baseline_cumhaz=cumhaz,
        mean=mean,
        stderr=stderr,
        iterations=len(trace),
    )


def _breslow_derivatives(Xs, ds, risk_start, ev, beta):
    """Log partial likelihood, gradient and observed information (Breslow)."""
    eta = Xs @ beta
    eta_max = eta.max()
    w = np.exp(eta - eta_max)
    wx = Xs * w[:, None]
    wxx = np.einsum("ij,ik->ijk", Xs, wx)
    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum(wx[::-1], axis=0)[::-1]
    s2 = np.cumsum(wxx[::-1], axis=0)[::-1]
    at = risk_start[ev]
    s0e = s0[at]
    mu = s1[at] / s0e[:, None]
    loglik = float(np.sum(eta[ev] - (np.log(s0e) + eta_max)))
    grad = Xs[ev].sum(axis=0) - mu.sum(axis=0)
    info = (s2[at] / s0e[:, None, None]).sum(axis=0) - np.einsum(
        "ij,ik->jk", mu, mu
    )
    return loglik, grad, info
