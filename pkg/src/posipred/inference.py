"""Coverage targets and interval assembly for post-selection prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ConstantEstimate
from .design import ModelId, _columns, full_model, model_indices, restricted_ols

DESIGN_DEPENDENT = "design-dependent"
DESIGN_INDEPENDENT = "design-independent"
_TARGET_KINDS = (DESIGN_DEPENDENT, DESIGN_INDEPENDENT)


@dataclass(frozen=True)
class TargetSpec:
    """What the interval is supposed to cover.

    The design-dependent target projects the mean vector onto the selected
    columns of the realized X; the design-independent one uses the population
    second-moment matrix instead and needs ``sigma_mat`` (and ``beta``).
    """

    kind: str
    beta: np.ndarray | None = None
    mu: np.ndarray | None = None
    sigma_mat: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _TARGET_KINDS:
            raise ValueError(f"target kind must be one of {_TARGET_KINDS}, got {self.kind!r}")
        if self.kind == DESIGN_INDEPENDENT:
            if self.sigma_mat is None or self.beta is None:
                raise ValueError("the design-independent target needs beta and sigma_mat")
            s = np.asarray(self.sigma_mat, dtype=float)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError("sigma_mat must be square")
            if np.max(np.abs(s - s.T)) > 1e-10:
                raise ValueError("sigma_mat must be symmetric")
            if np.min(np.linalg.eigvalsh(0.5 * (s + s.T))) <= 0:
                raise ValueError("sigma_mat must be positive definite")
            object.__setattr__(self, "sigma_mat", s)


def beta_target_n(X: np.ndarray, mu: np.ndarray, m: ModelId) -> np.ndarray:
    """Coefficients of the projection of the mean vector onto the columns in m.

    This is what the restricted least squares estimator is unbiased for; the
    empty model gives a length-0 vector (prediction identically zero).
    """
    return restricted_ols(X, mu, m)


def beta_target_star(sigma_mat: np.ndarray, beta: np.ndarray, m: ModelId) -> np.ndarray:
    """Population best-linear-predictor coefficients for the columns in m."""
    beta = np.asarray(beta, dtype=float).ravel()
    sigma_mat = np.asarray(sigma_mat, dtype=float)
    p = beta.shape[0]
    if sigma_mat.shape != (p, p):
        raise ValueError(f"sigma_mat must be {p}x{p}, got {sigma_mat.shape}")
    if m == 0:
        return np.zeros(0)
    cols = _columns(m)
    if cols[-1] >= p:
        raise ValueError("model references columns beyond the coefficient vector")
    if m == full_model(p):
        return beta.copy()
    comp = sorted(set(range(p)) - set(cols))
    s_mm = sigma_mat[np.ix_(cols, cols)]
    s_mc = sigma_mat[np.ix_(cols, comp)]
    try:
        adj = np.linalg.solve(s_mm, s_mc @ beta[comp])
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"second-moment block for model {{{','.join(map(str, model_indices(m)))}}} "
            f"is singular"
        ) from exc
    return beta[cols] + adj


@dataclass(frozen=True)
class PredictionInterval:
    """A closed interval ``center +/- half_width`` for the selected model."""

    center: float
    half_width: float
    model: ModelId
    constant_kind: str

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half width must be nonnegative")
        if self.model == 0 and (self.center != 0.0 or self.half_width != 0.0):
            raise ValueError("the empty-model interval is {0}")

    def to_json_dict(self) -> dict:
        return {
            "center": self.center,
            "half_width": self.half_width,
            "model": list(model_indices(self.model)),
            "constant_kind": self.constant_kind,
        }


def build_interval(x0: np.ndarray, m: ModelId, beta_hat_m: np.ndarray,
                   k: ConstantEstimate, s_norm: float, sigma_hat: float) -> PredictionInterval:
    """Interval for the selected-model prediction at x0.

    The empty model always yields the degenerate interval {0}, which contains
    its (zero) target by construction.
    """
    if s_norm < 0:
        raise ValueError("s_norm must be nonnegative")
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    if m == 0:
        return PredictionInterval(center=0.0, half_width=0.0, model=0,
                                  constant_kind=k.kind)
    x0 = np.asarray(x0, dtype=float).ravel()
    cols = _columns(m)
    beta_hat_m = np.asarray(beta_hat_m, dtype=float).ravel()
    if beta_hat_m.shape[0] != len(cols):
        raise ValueError(f"coefficient vector has length {beta_hat_m.shape[0]}, "
                         f"expected {len(cols)}")
    center = float(x0[cols] @ beta_hat_m)
    return PredictionInterval(center=center, half_width=k.value * s_norm * sigma_hat,
                              model=m, constant_kind=k.kind)


def covers(interval: PredictionInterval, target_value: float) -> bool:
    """Closed-interval membership; boundary points count as covered."""
    return abs(target_value - interval.center) <= interval.half_width
