"""Model selection procedures and residual variance estimators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .design import (
    ModelId,
    _columns,
    full_model,
    model_from_indices,
    model_indices,
    model_size,
    restricted_ols,
)
from .numerics import ConvergenceError, RngStream

GREEDY_IC = "greedy-ic"
LASSO_CV = "lasso-cv"
LASSO_FIXED = "lasso-fixed"
FIXED_MODEL = "fixed"
CUSTOM = "custom"
_KINDS = (GREEDY_IC, LASSO_CV, LASSO_FIXED, FIXED_MODEL, CUSTOM)

LOG_N_PENALTY = "log-n"  # resolves to ln(n) once the sample size is known

_RSS_FLOOR = 1e-300
_LAM_GRID_POINTS = 100
_MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class SelectorSpec:
    """Which selector to run and with what knobs.

    ``penalty`` is the information-criterion multiplier (2 gives AIC,
    ``LOG_N_PENALTY`` resolves to ln(n) and gives BIC). ``protected`` lists
    1-based column indices that every selected model must contain.
    """

    kind: str
    penalty: float | str = 2.0
    protected: tuple[int, ...] = ()
    folds: int = 10
    lam: float | None = None
    fixed_model: ModelId | None = None
    chooser: Callable | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"selector kind must be one of {_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "protected",
                           tuple(sorted(set(int(i) for i in self.protected))))
        if self.kind == LASSO_CV and self.folds < 2:
            raise ValueError("cross-validation needs at least 2 folds")
        if self.kind == LASSO_FIXED and (self.lam is None or self.lam <= 0):
            raise ValueError("a positive penalty level is required for the fixed-penalty lasso")
        if self.kind == FIXED_MODEL and self.fixed_model is None:
            raise ValueError("fixed-model selection needs the model")
        if self.kind == CUSTOM and self.chooser is None:
            raise ValueError("custom selection needs a callable")
        if isinstance(self.penalty, str) and self.penalty != LOG_N_PENALTY:
            raise ValueError(f"penalty must be a number or {LOG_N_PENALTY!r}")

    def label(self) -> str:
        if self.kind == GREEDY_IC:
            return "bic" if self.penalty == LOG_N_PENALTY else \
                ("aic" if self.penalty == 2.0 else f"ic:{self.penalty}")
        if self.kind == FIXED_MODEL:
            return "fixed:" + (",".join(map(str, model_indices(self.fixed_model))) or "0")
        if self.kind == LASSO_FIXED:
            return f"lasso-fixed:{self.lam}"
        return self.kind


def aic_spec(protected=()) -> SelectorSpec:
    return SelectorSpec(kind=GREEDY_IC, penalty=2.0, protected=protected)


def bic_spec(protected=()) -> SelectorSpec:
    return SelectorSpec(kind=GREEDY_IC, penalty=LOG_N_PENALTY, protected=protected)


# ---------------------------------------------------------------------------
# Greedy information-criterion search
# ---------------------------------------------------------------------------

def _rss(X: np.ndarray, Y: np.ndarray, m: ModelId) -> float:
    if m == 0:
        return float(Y @ Y)
    beta = restricted_ols(X, Y, m)
    resid = Y - X[:, _columns(m)] @ beta
    return float(resid @ resid)


def _ic(n: int, rss: float, size: int, penalty: float) -> float:
    return n * math.log(max(rss, _RSS_FLOOR) / n) + penalty * size


def resolve_penalty(penalty, n: int) -> float:
    return math.log(n) if penalty == LOG_N_PENALTY else float(penalty)


def select_greedy_ic(X: np.ndarray, Y: np.ndarray, spec: SelectorSpec,
                     rss_fn=None) -> ModelId:
    """Backward greedy search on the Gaussian profile information criterion.

    From the full model, repeatedly drop the unprotected variable whose
    removal most decreases ``n log(RSS/n) + penalty * |M|``, stopping when no
    single drop improves. Ties go to the smallest variable index, so the
    result is a deterministic function of the inputs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n, p = X.shape
    penalty = resolve_penalty(spec.penalty, n)
    protected = model_from_indices(spec.protected, p)
    if rss_fn is None:
        rss_fn = lambda m: _rss(X, Y, m)  # noqa: E731
    current = full_model(p)
    current_ic = _ic(n, rss_fn(current), model_size(current), penalty)
    while True:
        best_idx, best_ic = None, current_ic
        for j in model_indices(current & ~protected):
            cand = current & ~(1 << (j - 1))
            cand_ic = _ic(n, rss_fn(cand), model_size(cand), penalty)
            if cand_ic < best_ic:
                best_idx, best_ic = j, cand_ic
        if best_idx is None:
            return current
        current = current & ~(1 << (best_idx - 1))
        current_ic = best_ic


# ---------------------------------------------------------------------------
# Lasso by cyclic coordinate descent
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cd_path_kernel(gram, xty, yty, n, lams, gap_tol, max_sweeps):
    """Warm-started coordinate descent along a decreasing penalty path.

    Inputs are the per-sample Gram matrix X'X/n, the correlations X'y/n, and
    ||y||^2; the objective is ||y - Xb||^2/(2n) + lam * ||b||_1. Returns the
    coefficient path, the final duality gaps, and a failure flag per penalty
    value. At ``lam == 0`` the stopping rule falls back to the stationarity
    residual, since the scaled-residual dual point degenerates there.
    """
    p = gram.shape[0]
    nlam = lams.shape[0]
    coefs = np.zeros((nlam, p))
    gaps = np.zeros(nlam)
    failed = np.zeros(nlam, np.int64)
    b = np.zeros(p)
    for li in range(nlam):
        lam = lams[li]
        gap = np.inf
        ok = False
        for _sweep in range(max_sweeps):
            for j in range(p):
                gjj = gram[j, j]
                if gjj <= 0.0:
                    b[j] = 0.0
                    continue
                gj = xty[j] - np.dot(gram[j], b) + gjj * b[j]
                if gj > lam:
                    b[j] = (gj - lam) / gjj
                elif gj < -lam:
                    b[j] = (gj + lam) / gjj
                else:
                    b[j] = 0.0
            gb = gram @ b
            xtr = xty - gb
            rnorm2 = yty - 2.0 * n * np.dot(b, xty) + n * np.dot(b, gb)
            if rnorm2 < 0.0:
                rnorm2 = 0.0
            maxcorr = 0.0
            l1 = 0.0
            for j in range(p):
                if abs(xtr[j]) > maxcorr:
                    maxcorr = abs(xtr[j])
                l1 += abs(b[j])
            if lam > 0.0:
                primal = rnorm2 / (2.0 * n) + lam * l1
                scale = 1.0 if maxcorr <= lam else lam / maxcorr
                dual = scale * (rnorm2 + n * np.dot(b, xtr)) / n \
                    - scale * scale * rnorm2 / (2.0 * n)
                gap = primal - dual
            else:
                gap = maxcorr
            if gap <= gap_tol:
                ok = True
                break
        coefs[li] = b
        gaps[li] = gap
        if not ok:
            failed[li] = 1
    return coefs, gaps, failed


def lasso_cd(Xs: np.ndarray, Ys: np.ndarray, lam: float, tol: float = 1e-8,
             max_sweeps: int = _MAX_SWEEPS) -> np.ndarray:
    """Lasso coefficients minimizing ``||y - Xb||^2/(2n) + lam ||b||_1``.

    Cyclic coordinate descent with sweep order 1..p, terminated once the
    duality gap falls below ``tol * max(1, ||y||^2/(2n))``. Columns are used
    as given; callers wanting standardized columns scale beforehand. Hitting
    the sweep cap raises :class:`ConvergenceError` with the unresolved gap.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ys = np.asarray(Ys, dtype=float).ravel()
    n = Xs.shape[0]
    if Ys.shape[0] != n:
        raise ValueError(f"response has length {Ys.shape[0]}, expected {n}")
    if lam < 0:
        raise ValueError("the penalty level must be nonnegative")
    gram = Xs.T @ Xs / n
    xty = Xs.T @ Ys / n
    yty = float(Ys @ Ys)
    gap_tol = tol * max(1.0, yty / (2.0 * n))
    coefs, gaps, failed = _cd_path_kernel(gram, xty, yty, float(n),
                                          np.asarray([float(lam)]), gap_tol, max_sweeps)
    if failed[0]:
        raise ConvergenceError(
            f"coordinate descent hit the sweep cap {max_sweeps} with duality gap "
            f"{gaps[0]:.3e}"
        )
    return coefs[0]


@dataclass
class LassoWorkspace:
    """Precomputed pieces of the protected-lasso problem for one design."""

    xs: np.ndarray
    q_prot: np.ndarray | None
    free_cols: list[int]
    protected: ModelId

    def project_y(self, Y: np.ndarray) -> np.ndarray:
        if self.q_prot is None:
            return np.asarray(Y, dtype=float).ravel()
        Y = np.asarray(Y, dtype=float).ravel()
        return Y - self.q_prot @ (self.q_prot.T @ Y)


def lasso_workspace(X: np.ndarray, spec: SelectorSpec) -> LassoWorkspace:
    """Project the unprotected columns off the protected block and rescale.

    The protected block (which usually contains the intercept) is removed by
    orthogonal projection, after which the remaining columns are scaled to
    unit mean square. No explicit centering happens: with an intercept among
    the protected columns the projection already removes column means, and
    without one the fit is intentionally intercept-free.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = X.shape[1]
    protected = model_from_indices(spec.protected, p)
    prot_cols = _columns(protected)
    free_cols = [j for j in range(p) if j not in set(prot_cols)]
    q = None
    if prot_cols:
        q, _ = np.linalg.qr(X[:, prot_cols])
    xt = X[:, free_cols]
    if q is not None and free_cols:
        xt = xt - q @ (q.T @ xt)
    if free_cols:
        scales = np.sqrt(np.mean(xt * xt, axis=0))
        xt = xt / np.where(scales > 0.0, scales, 1.0)
    return LassoWorkspace(xs=xt, q_prot=q, free_cols=free_cols, protected=protected)


def lasso_select_from_workspace(ws: LassoWorkspace, yt: np.ndarray, spec: SelectorSpec,
                                gen: np.random.Generator | None) -> ModelId:
    """Pick the penalty (by CV or from the spec), fit, and read off the support."""
    if not ws.free_cols:
        return ws.protected
    xs = ws.xs
    n = xs.shape[0]
    gram = xs.T @ xs / n
    xty = xs.T @ yt / n
    yty = float(yt @ yt)
    gap_tol = 1e-8 * max(1.0, yty / (2.0 * n))

    if spec.kind == LASSO_FIXED:
        lam = float(spec.lam)
    else:
        lam_max = float(np.max(np.abs(xty)))
        if lam_max <= 0.0:
            return ws.protected
        lam_grid = lam_max * np.logspace(0.0, -4.0, _LAM_GRID_POINTS)
        if n < spec.folds:
            raise ValueError(f"{spec.folds}-fold cross-validation needs at least "
                             f"{spec.folds} observations")
        if gen is None:
            raise ValueError("cross-validated selection needs a random stream")
        perm = gen.permutation(n)
        folds = np.array_split(perm, spec.folds)
        sq_err = np.zeros(lam_grid.shape[0])
        for test_idx in folds:
            mask = np.ones(n, dtype=bool)
            mask[test_idx] = False
            xtr, ytr = xs[mask], yt[mask]
            ntr = xtr.shape[0]
            g_tr = xtr.T @ xtr / ntr
            c_tr = xtr.T @ ytr / ntr
            y2_tr = float(ytr @ ytr)
            tol_tr = 1e-8 * max(1.0, y2_tr / (2.0 * ntr))
            path, gaps, failed = _cd_path_kernel(g_tr, c_tr, y2_tr, float(ntr),
                                                 lam_grid, tol_tr, _MAX_SWEEPS)
            if failed.any():
                raise ConvergenceError(
                    f"coordinate descent failed on a cross-validation fold "
                    f"(worst gap {gaps[failed.astype(bool)].max():.3e})"
                )
            resid = yt[test_idx][:, None] - xs[test_idx] @ path.T
            sq_err += np.sum(resid * resid, axis=0)
        # Grid is decreasing, so argmin lands on the largest penalty among ties.
        lam = float(lam_grid[int(np.argmin(sq_err / n))])

    coefs, gaps, failed = _cd_path_kernel(gram, xty, yty, float(n),
                                          np.asarray([lam]), gap_tol, _MAX_SWEEPS)
    if failed[0]:
        raise ConvergenceError(
            f"coordinate descent hit the sweep cap with duality gap {gaps[0]:.3e}"
        )
    selected = ws.protected
    for pos, j in enumerate(ws.free_cols):
        if coefs[0][pos] != 0.0:
            selected |= 1 << j
    return selected


def select_lasso(X: np.ndarray, Y: np.ndarray, spec: SelectorSpec,
                 stream: RngStream) -> ModelId:
    """Lasso-based selection with protected columns partialled out.

    The response and the unprotected columns are projected off the protected
    block, the unprotected columns are rescaled to unit mean square, and the
    lasso runs on the result (no intercept). The penalty level comes from
    k-fold cross-validation over a 100-point log grid (minimum mean squared
    error, largest penalty on ties) or from ``spec.lam``. The selected model
    is the protected set plus the support of the fit.
    """
    ws = lasso_workspace(X, spec)
    gen = stream.gen if stream is not None else None
    return lasso_select_from_workspace(ws, ws.project_y(Y), spec, gen)


def lasso_lambda_default(X: np.ndarray, protected=(), draws: int = 10_000,
                         stream: RngStream | None = None) -> tuple[float, str]:
    """Stand-in default penalty: twice the mean sup-correlation with pure noise.

    Estimated by Monte Carlo on the protected-projected design. This is a
    pragmatic default, not a reproduction of any published tuning rule, and
    the returned flag says so.
    """
    if stream is None:
        stream = RngStream(0)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    ws = lasso_workspace(X, SelectorSpec(kind=LASSO_FIXED, lam=1.0, protected=protected))
    if not ws.free_cols:
        raise ValueError("all columns are protected; there is nothing to penalize")
    xt = ws.xs
    eps = stream.gen.standard_normal((draws, n))
    sup = np.max(np.abs(eps @ xt), axis=1) / n
    return 2.0 * float(sup.mean()), "stand-in-default"


def select_model(X: np.ndarray, Y: np.ndarray, spec: SelectorSpec,
                 stream: RngStream | None = None) -> ModelId:
    """Dispatch a SelectorSpec to the matching procedure."""
    if spec.kind == FIXED_MODEL:
        return spec.fixed_model
    if spec.kind == GREEDY_IC:
        return select_greedy_ic(X, Y, spec)
    if spec.kind in (LASSO_CV, LASSO_FIXED):
        return select_lasso(X, Y, spec, stream)
    return spec.chooser(X, Y, stream)


# ---------------------------------------------------------------------------
# Variance estimators
# ---------------------------------------------------------------------------

def sigma_hat_full(X: np.ndarray, Y: np.ndarray) -> tuple[float, int]:
    """Residual variance from the full design and its degrees of freedom n - rank."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n = X.shape[0]
    d = int(np.linalg.matrix_rank(X))
    if n <= d:
        raise ValueError(
            "the full-model residual variance estimator does not exist when the "
            "sample size equals the design rank"
        )
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef
    sigma2 = float(resid @ resid) / (n - d)
    if sigma2 == 0.0:
        warnings.warn("exact fit: the residual variance estimate is zero", stacklevel=2)
    return sigma2, n - d


def sigma_hat_pms(X: np.ndarray, Y: np.ndarray, m_hat: ModelId) -> float:
    """Residual variance from the selected model, with n - |M| denominator."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n = X.shape[0]
    size = model_size(m_hat)
    if n <= size:
        raise ValueError("the post-selection variance estimator needs n > |M|")
    if m_hat == 0:
        sigma2 = float(Y @ Y) / n
    else:
        beta = restricted_ols(X, Y, m_hat)
        resid = Y - X[:, _columns(m_hat)] @ beta
        sigma2 = float(resid @ resid) / (n - size)
    if sigma2 == 0.0:
        warnings.warn("exact fit: the residual variance estimate is zero", stacklevel=2)
    return sigma2
