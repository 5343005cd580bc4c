"""Design-matrix geometry: canonical coordinates, model universes, and
restricted least squares.

Candidate models are bitmasks over the columns of X: bit ``i - 1`` set means
column ``i`` (1-based) is in the model, and ``0`` is the empty model. Python
integers are unbounded, so the same representation covers any practical
number of regressors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy.linalg import solve_triangular

from .numerics import INFINITE, check_dof

ModelId = int

DEFAULT_MODEL_BUDGET = 1 << 22


class DegenerateDesignError(ValueError):
    """Numerical rank of the design is ambiguous at the working precision."""


class RankDeficiencyError(ValueError):
    """A user-supplied universe contains rank-deficient submodels."""


class UniverseSizeError(ValueError):
    """The requested universe exceeds the configured enumeration budget."""


# ---------------------------------------------------------------------------
# Model bitmask helpers
# ---------------------------------------------------------------------------

def model_from_indices(indices, p: int) -> ModelId:
    """Bitmask for a collection of 1-based column indices."""
    m = 0
    for i in indices:
        i = int(i)
        if not 1 <= i <= p:
            raise ValueError(f"model index {i} outside 1..{p}")
        m |= 1 << (i - 1)
    return m


def model_indices(m: ModelId) -> tuple[int, ...]:
    """Sorted 1-based column indices of a model bitmask."""
    out = []
    i = 1
    while m:
        if m & 1:
            out.append(i)
        m >>= 1
        i += 1
    return tuple(out)


def model_size(m: ModelId) -> int:
    return int(m).bit_count()


def is_subset(m1: ModelId, m2: ModelId) -> bool:
    return (m1 & ~m2) == 0


def full_model(p: int) -> ModelId:
    return (1 << p) - 1


def _columns(m: ModelId) -> list[int]:
    """0-based column positions of a model bitmask."""
    return [i - 1 for i in model_indices(m)]


# ---------------------------------------------------------------------------
# Core data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignProblem:
    """A fixed design X, a query point x0, a level alpha, and dof r."""

    X: np.ndarray
    x0: np.ndarray
    alpha: float
    r: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        x0 = np.asarray(self.x0, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "x0", x0)
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError("design matrix must be at least 1x1")
        if x0.shape[0] != p:
            raise ValueError(f"x0 has length {x0.shape[0]}, expected {p}")
        if np.any(np.all(X == 0.0, axis=0)):
            raise ValueError("design matrix must not contain an all-zero column")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "r", check_dof(self.r))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CanonicalDesign:
    """Rank-d reduction of a design: X = Q @ Xt with Q'Q = I_d."""

    d: int
    Q: np.ndarray
    Xt: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def p(self) -> int:
        return self.Xt.shape[1]


def canonicalize(X: np.ndarray) -> CanonicalDesign:
    """Reduce X to canonical coordinates via an orthonormal basis of col(X).

    Uses the SVD; singular values below ``max(n, p) * eps * s_max`` count as
    zero. Values inside the band [0.5, 2] times that threshold make the rank
    call ambiguous and raise :class:`DegenerateDesignError`. When the rank
    equals the number of rows, Q is taken to be the identity so the
    transformed design is X itself.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if np.any(np.all(X == 0.0, axis=0)):
        raise ValueError("design matrix must not contain an all-zero column")
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    thr = max(n, p) * np.finfo(float).eps * s[0]
    band = (s > 0.5 * thr) & (s < 2.0 * thr)
    if np.any(band):
        raise DegenerateDesignError(
            f"singular values {s[band]} sit in the ambiguity band around the "
            f"rank threshold {thr:.3e}"
        )
    d = int(np.sum(s > thr))
    if d == n:
        return CanonicalDesign(d=d, Q=np.eye(n), Xt=X.copy())
    Q = u[:, :d]
    return CanonicalDesign(d=d, Q=Q, Xt=Q.T @ X)


@dataclass(frozen=True)
class ModelUniverse:
    """An admissible collection of candidate models over p columns."""

    models: tuple[ModelId, ...]
    p: int
    dropped_rank_deficient: int = 0

    def __post_init__(self):
        if len(set(self.models)) != len(self.models):
            raise ValueError("universe contains duplicate models")
        if 0 not in self.models:
            raise ValueError("the empty model must belong to the universe")
        union = 0
        for m in self.models:
            if m < 0 or m >= (1 << self.p):
                raise ValueError(f"model {m:#x} outside the column range 1..{self.p}")
            union |= m
        if union != full_model(self.p):
            missing = model_indices(full_model(self.p) & ~union)
            raise ValueError(f"columns {missing} appear in no model of the universe")

    def __len__(self) -> int:
        return len(self.models)

    def __contains__(self, m: ModelId) -> bool:
        return m in set(self.models)


def _subset_has_full_rank(X: np.ndarray, m: ModelId) -> bool:
    cols = _columns(m)
    sub = X[:, cols]
    return np.linalg.matrix_rank(sub) == len(cols)


def enumerate_universe(p: int, max_size, X: np.ndarray,
                       max_models: int = DEFAULT_MODEL_BUDGET) -> ModelUniverse:
    """All submodels of size up to ``max_size`` (None or >= p means all).

    Rank-deficient subsets are dropped with a warning and counted on the
    returned universe; this is the generated-universe path, where dropping is
    safe because the remaining collection still satisfies every invariant.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != p:
        raise ValueError(f"X has {X.shape[1]} columns, expected {p}")
    if max_size is None:
        max_size = p
    max_size = int(max_size)
    if not 1 <= max_size <= p:
        raise ValueError(f"max_size must lie in 1..{p}, got {max_size}")
    total = sum(comb(p, k) for k in range(max_size + 1))
    if total > max_models:
        raise UniverseSizeError(
            f"universe would contain {total} models, over the budget of {max_models}"
        )
    # With a full-column-rank X every subset of columns is full rank.
    all_full_rank = np.linalg.matrix_rank(X) == p
    models: list[ModelId] = [0]
    dropped = 0
    for k in range(1, max_size + 1):
        for idx in combinations(range(p), k):
            m = 0
            for i in idx:
                m |= 1 << i
            if all_full_rank or _subset_has_full_rank(X, m):
                models.append(m)
            else:
                dropped += 1
    if dropped:
        warnings.warn(f"dropped {dropped} rank-deficient submodels from the universe",
                      stacklevel=2)
    return ModelUniverse(models=tuple(models), p=p, dropped_rank_deficient=dropped)


def make_universe(models, p: int, X: np.ndarray) -> ModelUniverse:
    """Validate a user-supplied model collection against X.

    Unlike :func:`enumerate_universe`, rank-deficient entries are an error
    here (listing the offending subsets), since silently altering an explicit
    universe would change every constant computed from it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    models = tuple(int(m) for m in models)
    offenders = [m for m in models if m != 0 and not _subset_has_full_rank(X, m)]
    if offenders:
        listing = ", ".join("{" + ",".join(map(str, model_indices(m))) + "}" for m in offenders)
        raise RankDeficiencyError(f"rank-deficient submodels in universe: {listing}")
    return ModelUniverse(models=models, p=p)


def count_not_subset(m: ModelId, universe: ModelUniverse) -> int:
    """Number of universe models that are not contained in m."""
    if m not in universe:
        raise ValueError("model does not belong to the universe")
    return sum(1 for other in universe.models if other & ~m)


# ---------------------------------------------------------------------------
# The prediction functionals s_M
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SbarVector:
    """Canonical-coordinate prediction functional of one model.

    ``s_tilde`` maps transformed data to the model's prediction at x0; its
    norm equals the norm of the untransformed functional, and ``s_bar`` is
    the unit-norm version (zero when the functional vanishes).
    """

    s_tilde: np.ndarray
    norm: float
    s_bar: np.ndarray = field(repr=False)


def s_vector(canon: CanonicalDesign, x0: np.ndarray, m: ModelId) -> SbarVector:
    """Prediction functional of model ``m`` at ``x0`` in canonical coordinates.

    The empty model maps to the zero functional; so does any model whose
    active x0-entries are all zero.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape[0] != canon.p:
        raise ValueError(f"x0 has length {x0.shape[0]}, expected {canon.p}")
    d = canon.d
    if m == 0:
        z = np.zeros(d)
        return SbarVector(s_tilde=z, norm=0.0, s_bar=z.copy())
    cols = _columns(m)
    if cols[-1] >= canon.p:
        raise ValueError("model references columns beyond the design")
    x0m = x0[cols]
    if not np.any(x0m):
        z = np.zeros(d)
        return SbarVector(s_tilde=z, norm=0.0, s_bar=z.copy())
    a = canon.Xt[:, cols]
    q, rmat = np.linalg.qr(a)
    diag = np.abs(np.diag(rmat))
    if diag.min() <= len(cols) * np.finfo(float).eps * diag.max():
        raise np.linalg.LinAlgError(
            f"gram matrix of submodel {{{','.join(map(str, model_indices(m)))}}} "
            f"is numerically singular"
        )
    w = solve_triangular(rmat, x0m, trans="T", lower=False)
    s_tilde = q @ w
    norm = float(np.linalg.norm(s_tilde))
    s_bar = s_tilde / norm if norm > 0.0 else np.zeros(d)
    return SbarVector(s_tilde=s_tilde, norm=norm, s_bar=s_bar)


def restricted_ols(X: np.ndarray, Y: np.ndarray, m: ModelId) -> np.ndarray:
    """Least squares coefficients of Y on the columns of X selected by m.

    Rank-deficient submodels fall back to the minimum-norm (pseudoinverse)
    solution. The empty model returns a length-0 vector, whose predictions
    are identically zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"Y has length {Y.shape[0]}, expected {X.shape[0]}")
    if m == 0:
        return np.zeros(0)
    cols = _columns(m)
    if cols[-1] >= X.shape[1]:
        raise ValueError("model references columns beyond the design")
    beta, *_ = np.linalg.lstsq(X[:, cols], Y, rcond=None)
    return beta


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def load_design_csv(path, header: bool = False) -> np.ndarray:
    """Load a design matrix from CSV (rows = observations, columns = regressors)."""
    X = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    return np.asarray(X, dtype=float)


def load_x0_csv(path, header: bool = False) -> np.ndarray:
    """Load a query point from a single-row CSV."""
    row = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if row.shape[0] != 1:
        raise ValueError(f"x0 file must contain exactly one row, found {row.shape[0]}")
    return row[0]


def load_y_csv(path, header: bool = False) -> np.ndarray:
    """Load a response vector from CSV (one value per row, or a single row)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if 1 not in data.shape:
        raise ValueError("response file must be a single row or a single column")
    return data.ravel()


def load_universe_file(path, p: int, X: np.ndarray) -> ModelUniverse:
    """Read a universe file: one model per line as comma-separated 1-based
    indices, with a blank line denoting the empty model."""
    models = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                models.append(0)
                continue
            indices = [int(tok) for tok in line.split(",") if tok.strip()]
            models.append(model_from_indices(indices, p))
    return make_universe(models, p, X)
