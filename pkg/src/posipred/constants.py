"""The interval constants: the naive t-quantile, the sphere-sampling Monte
Carlo constants, the partial-union-bound constants, and the Scheffe constant.

All Monte Carlo work runs in canonical coordinates. One shared sample of
sphere draws can be passed to several constants so that ordering relations
between them hold with minimal noise; every stochastic result carries a
bootstrap standard error over its draw sample.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import (
    CanonicalDesign,
    ModelUniverse,
    _columns,
    count_not_subset,
    full_model,
    is_subset,
    model_indices,
    model_size,
    s_vector,
)
from .numerics import (
    DEFAULT_TOL,
    RngStream,
    beta_half_tail,
    beta_half_tail_inverse,
    fsharp_cdf,
    fsharp_table,
    invert_monotone,
    check_dof,
    sample_unit_sphere_block,
    student_t_quantile,
)

LOWER = "lower"
UPPER = "upper"
BOTH = "both"
_VARIANTS = (LOWER, UPPER, BOTH)

KIND_NAIVE = "NAIVE"
KIND_K1 = "K1"
KIND_K2 = "K2"
KIND_K3 = "K3"
KIND_K4 = "K4"
KIND_K5 = "K5"
KIND_K6 = "K6"

# Sub-stream ids; fixed so results never depend on call order or thread count.
_TAG_SPHERE = 1
_TAG_BOOT = 2
_TAG_K2_CAND = 3
_TAG_K2_SPHERE = 4

_N_BOOTSTRAP = 50
_MSTAR_ONE_EPS = 1e-12


def default_draws(p: int) -> int:
    """Default sphere-sample count: generous below 12 columns, thrifty above."""
    return 100_000 if p <= 12 else 1_000


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo configuration: draw count I, grid size J, seed, variant."""

    seed: int | None = None
    draws: int | None = 100_000
    grid: int = 10_000
    variant: str = LOWER

    def __post_init__(self):
        if self.draws is not None and self.draws < 1:
            raise ValueError("draw count must be at least 1")
        if self.grid < 2:
            raise ValueError("grid size must be at least 2")
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class K2SearchConfig:
    """Three-stage search budgets for the observed-coordinates supremum."""

    seed: int
    stage1_candidates: int = 100_000
    stage1_draws: int = 1_000
    stage2_candidates: int = 1_000
    stage2_draws: int = 100_000
    stage3_draws: int = 1_000_000

    def __post_init__(self):
        if self.stage2_candidates > self.stage1_candidates:
            raise ValueError("stage 2 cannot rescore more candidates than stage 1 produced")
        if min(self.stage1_candidates, self.stage1_draws, self.stage2_candidates,
               self.stage2_draws, self.stage3_draws) < 1:
            raise ValueError("all search budgets must be positive")


@dataclass(frozen=True)
class ConstantEstimate:
    """A computed interval constant with its Monte Carlo provenance."""

    kind: str
    value: float
    value_upper: float | None = None
    mc_stderr: float | None = None
    config: McConfig | None = None
    model: int | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("constants are nonnegative")
        if self.value_upper is not None and self.value_upper < self.value - 1e-12:
            raise ValueError("upper variant below lower variant")

    def midpoint(self) -> float:
        if self.value_upper is None:
            return self.value
        return 0.5 * (self.value + self.value_upper)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "value_upper": self.value_upper,
            "stderr": self.mc_stderr,
            "I": self.config.draws if self.config else None,
            "J": self.config.grid if self.config else None,
            "seed": self.config.seed if self.config else None,
            "variant": self.config.variant if self.config else None,
            "model": list(model_indices(self.model)) if self.model is not None else None,
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# Shared Monte Carlo plumbing
# ---------------------------------------------------------------------------

def draw_shared_sphere(d: int, count: int, seed: int) -> np.ndarray:
    """The canonical sphere sample for (seed, d, count); shareable across constants."""
    stream = RngStream(seed, (_TAG_SPHERE,))
    return sample_unit_sphere_block(d, count, stream)


def sbar_matrix(canon: CanonicalDesign, x0: np.ndarray, universe: ModelUniverse,
                models=None) -> np.ndarray:
    """Stack the unit functionals of the given models (rows of zeros allowed)."""
    if models is None:
        models = universe.models
    rows = np.zeros((len(models), canon.d))
    for i, m in enumerate(models):
        rows[i] = s_vector(canon, x0, m).s_bar
    return rows


def _cvalues(S: np.ndarray, V: np.ndarray, threads: int = 1) -> np.ndarray:
    """c_i = max over models of |s_bar' V_i|, blocked to bound memory."""
    n_draws = V.shape[0]
    n_models = max(S.shape[0], 1)
    out = np.empty(n_draws)
    block = max(8, min(4096, 2_000_000 // n_models))
    spans = [(s, min(s + block, n_draws)) for s in range(0, n_draws, block)]
    st = S.T

    def work(span):
        lo, hi = span
        out[lo:hi] = np.abs(V[lo:hi] @ st).max(axis=1) if S.shape[0] else 0.0

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))
    else:
        for span in spans:
            work(span)
    return out


def _fsharp_quantile(d: int, r: float, q: float, tol: float = DEFAULT_TOL) -> float:
    return invert_monotone(lambda t: fsharp_cdf(d, r, t), q,
                           bracket=(0.0, 2.0 * math.sqrt(d)), tol=tol)


def _table_quantile_hint(table, q: float) -> float:
    idx = int(np.searchsorted(table.values, q))
    idx = min(idx, table.NODES - 1)
    return math.exp(table._log_lo + table._step * idx) + 1e-9


_C_FLOOR = 1e-8  # below this a c-value behaves as cdf(K/c) = 1 for any relevant K


class ShiftedCdfSums:
    """Fast evaluation of ``sum_i w_i F(K / c_i)`` over a fixed c-sample.

    The c-values are linearly binned onto the cdf table's own log grid, so
    every evaluation reduces to one short dot product against a contiguous
    table slice (the binning step and the interpolation step commute to the
    same second-order accuracy as the table itself). Root-finding over a
    bootstrap's worth of reweightings then costs one bincount per weighting
    plus a dot per bisection step, instead of a gather over every draw.

    c-values at or below ``_C_FLOOR`` are folded into a constant term of
    weight one each, matching the convention that a vanishing c contributes
    a full count for every positive K.
    """

    def __init__(self, table, c: np.ndarray):
        self.table = table
        c = np.minimum(np.asarray(c, dtype=float), 1.0)
        self.tiny = c <= _C_FLOOR
        self.active = ~self.tiny
        step = table._step
        with np.errstate(divide="ignore"):
            offsets = np.where(self.active, np.log(np.maximum(c, _C_FLOOR)), 0.0) / step
        ofloor = np.floor(offsets)
        self._frac = offsets - ofloor
        self._omin = float(ofloor.min()) if c.size else 0.0
        self._idx = (ofloor - self._omin).astype(np.int64)
        self._bins = int(self._idx.max()) + 2 if c.size else 2
        pad = self._bins + 4
        vals = table.values
        self._padded = np.concatenate([np.full(pad, vals[0]), vals,
                                       np.full(pad, vals[-1])])
        self._pad = pad

    def prepare(self, weights: np.ndarray | None = None, upto: int | None = None):
        """Bin (a reweighting of) the c-sample; returns (sum_fn, const_ones).

        ``upto`` restricts to the first ``upto`` positions of the sample (the
        caller keeps c sorted when it needs prefixes). ``const_ones`` is the
        weight mass sitting on effectively-zero c-values, which contributes
        that many ones to the sum at any K > 0.
        """
        sl = slice(None) if upto is None else slice(0, upto)
        idx = self._idx[sl]
        frac = self._frac[sl]
        active = self.active[sl]
        if weights is None:
            w = active.astype(float)
            ones = float(np.sum(~active))
        else:
            w = np.where(active, weights[sl], 0.0)
            ones = float(np.sum(weights[sl]) - np.sum(w))
        binned = np.bincount(idx, weights=w * (1.0 - frac), minlength=self._bins)
        binned += np.bincount(idx + 1, weights=w * frac, minlength=self._bins)
        rev = binned[::-1].copy()
        nbins = self._bins
        total_w = float(np.sum(w))
        table = self.table
        log_lo, step, nodes = table._log_lo, table._step, table.NODES
        omin, pad, padded = self._omin, self._pad, self._padded

        def sum_at(k: float) -> float:
            if k <= 0.0:
                return 0.0
            base = (math.log(k) - log_lo) / step - omin
            k0 = math.floor(base)
            fb = base - k0
            # Saturate outside [-2, nodes + nbins + 1]; the pad regions hold the
            # boundary cdf values so every slice position stays meaningful.
            k0 = min(max(k0, -2), nodes + nbins + 1)
            start = int(k0) - nbins + 1 + pad
            s0 = float(np.dot(rev, padded[start:start + nbins]))
            s1 = float(np.dot(rev, padded[start + 1:start + 1 + nbins]))
            return ones + (1.0 - fb) * s0 + fb * s1

        return sum_at, total_w + ones


def _solve_mean_equation(sums: ShiftedCdfSums, weights, total: float,
                         alpha: float, tol: float = DEFAULT_TOL) -> float:
    """Smallest K with ``sum_i w_i F(K / c_i) / total >= 1 - alpha``."""
    target = 1.0 - alpha
    sum_at, _ = sums.prepare(weights)

    def g(k):
        return sum_at(k) / total if k > 0.0 else 0.0

    hint = _table_quantile_hint(sums.table, target)
    return invert_monotone(g, target, bracket=(0.0, hint), tol=tol)


def _bootstrap_stderr(solve_with_weights, n_items: int, seed: int) -> float:
    """Std. deviation of the constant over 50 multinomial resamples of the draws."""
    stream = RngStream(seed, (_TAG_BOOT,))
    values = np.empty(_N_BOOTSTRAP)
    for b in range(_N_BOOTSTRAP):
        idx = stream.gen.integers(0, n_items, n_items)
        weights = np.bincount(idx, minlength=n_items).astype(float)
        values[b] = solve_with_weights(weights)
    return float(np.std(values, ddof=1))


# ---------------------------------------------------------------------------
# Simple constants
# ---------------------------------------------------------------------------

def k_naive(r, alpha: float) -> ConstantEstimate:
    """The fixed-model t-quantile, valid only when the model was never selected."""
    _check_alpha(alpha)
    value = student_t_quantile(r, 1.0 - alpha / 2.0)
    return ConstantEstimate(kind=KIND_NAIVE, value=value)


def k5(d: int, r, alpha: float) -> ConstantEstimate:
    """The Scheffe constant: the (1 - alpha)-quantile of the scale variable G."""
    _check_alpha(alpha)
    r = check_dof(r)
    return ConstantEstimate(kind=KIND_K5, value=_fsharp_quantile(d, r, 1.0 - alpha))


def k6(d: int, r, alpha: float) -> ConstantEstimate:
    """Large-p rule of thumb: 0.866 times the Scheffe constant.

    Only sensible for a power-set universe with p = d large; the flag marks
    it as an asymptotic shortcut, not a guaranteed bound.
    """
    base = k5(d, r, alpha)
    return ConstantEstimate(kind=KIND_K6, value=0.866 * base.value,
                            flags=("rule-of-thumb",))


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


# ---------------------------------------------------------------------------
# K1: full-information simultaneous constant
# ---------------------------------------------------------------------------

def k1(canon: CanonicalDesign, x0: np.ndarray, universe: ModelUniverse, r, alpha: float,
       cfg: McConfig, v_sample: np.ndarray | None = None, threads: int = 1,
       with_stderr: bool = True) -> ConstantEstimate:
    """Simultaneous constant over the whole universe for a fully observed x0.

    Draws I points uniform on the d-sphere, takes c_i as the largest
    |s_bar' V_i| over the universe, and solves the averaged scale-mixture
    equation ``mean_i F(K / c_i) = 1 - alpha`` for the smallest root. A zero
    x0 short-circuits to the exact value 0.
    """
    _check_alpha(alpha)
    r = check_dof(r)
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.any(x0):
        return ConstantEstimate(kind=KIND_K1, value=0.0, mc_stderr=0.0, config=cfg)
    S = sbar_matrix(canon, x0, universe)
    V = _resolve_draws(canon.d, cfg, v_sample)
    c = _cvalues(S, V, threads=threads)
    value, stderr = _mean_equation_with_stderr(
        c, canon.d, r, alpha, cfg.seed, with_stderr=with_stderr)
    return ConstantEstimate(kind=KIND_K1, value=value, mc_stderr=stderr, config=cfg)


def _resolve_draws(d: int, cfg: McConfig, v_sample: np.ndarray | None) -> np.ndarray:
    if v_sample is not None:
        if v_sample.shape[1] != d:
            raise ValueError(f"shared sphere sample has dimension {v_sample.shape[1]}, "
                             f"expected {d}")
        return v_sample
    if cfg.seed is None or cfg.draws is None:
        raise ValueError("a seed and draw count are required when no sphere sample is supplied")
    return draw_shared_sphere(d, cfg.draws, cfg.seed)


def _mean_equation_with_stderr(c: np.ndarray, d: int, r: float, alpha: float,
                               seed: int | None, with_stderr: bool):
    table = fsharp_table(d, r)
    sums = ShiftedCdfSums(table, c)
    total = float(c.size)
    value = _solve_mean_equation(sums, None, total, alpha)
    stderr = None
    if with_stderr:
        if seed is None:
            raise ValueError("a seed is required to bootstrap the Monte Carlo error")
        stderr = _bootstrap_stderr(
            lambda w: _solve_mean_equation(sums, w, total, alpha), c.size, seed)
    return value, stderr


# ---------------------------------------------------------------------------
# K3 / K4: partial union bound constants
# ---------------------------------------------------------------------------

class _TailInverseTable:
    """Interpolated inverse of the sphere-coordinate tail, keyed by dimension.

    Used only inside bootstrap resampling, where thousands of re-inversions
    of the same smooth function would otherwise dominate the run time.
    """

    NODES = 60_000

    def __init__(self, d: int):
        self.log_targets = np.linspace(math.log(1e-18), 0.0, self.NODES)
        self.m = beta_half_tail_inverse(d, np.exp(self.log_targets))

    def __call__(self, targets: np.ndarray) -> np.ndarray:
        return np.interp(np.log(targets), self.log_targets, self.m)


_TAIL_INV_CACHE: dict[int, _TailInverseTable] = {}


def _tail_inverse_table(d: int) -> _TailInverseTable:
    table = _TAIL_INV_CACHE.get(d)
    if table is None:
        table = _TailInverseTable(d)
        if len(_TAIL_INV_CACHE) > 32:
            _TAIL_INV_CACHE.clear()
        _TAIL_INV_CACHE[d] = table
    return table


def _locate_mstar(c_desc: np.ndarray, cum_weights: np.ndarray, total: float,
                  c_not_subset: float, d: int) -> float:
    """Smallest point above which the clipped union bound stays below one.

    The criterion is ``N(t)/total + c_not_subset * tail(t) < 1`` with N(t) the
    weighted count of c-values above t. Both pieces are nonincreasing in t, so
    the left-limit profile is monotone across the sorted breakpoints; a binary
    search finds the crossing interval and a scalar bisection resolves the
    smooth part inside it.
    """
    tail = lambda t: beta_half_tail(d, t)  # noqa: E731

    def bottom_limit(k):
        # phi approached from above at the lower end of interval k (between
        # breakpoints k-1 and k of c_desc; k == len exhausts the breakpoints).
        w = cum_weights[k - 1] if k >= 1 else 0.0
        t = c_desc[k] if k < len(c_desc) else 0.0
        return w / total + c_not_subset * tail(t), t

    lo_k, hi_k = 0, len(c_desc) + 1
    # Invariant: bottom_limit(k) < 1 for k < lo_k is false; find smallest k with >= 1.
    # bottom_limit is nondecreasing in k; at k = len(c_desc) it is >= 1 because tail(0) = 1.
    while lo_k < hi_k:
        mid = (lo_k + hi_k) // 2
        val, _ = bottom_limit(mid)
        if val >= 1.0:
            hi_k = mid
        else:
            lo_k = mid + 1
    k = lo_k
    upper = c_desc[k - 1] if k >= 1 else 1.0
    lower = c_desc[k] if k < len(c_desc) else 0.0
    step = (cum_weights[k - 1] if k >= 1 else 0.0) / total
    # Top limit of the crossing interval: phi just below the upper breakpoint.
    if step + c_not_subset * tail(upper) >= 1.0:
        return float(upper)
    lo_t, hi_t = lower, upper
    for _ in range(200):
        mid = 0.5 * (lo_t + hi_t)
        if step + c_not_subset * tail(mid) >= 1.0:
            lo_t = mid
        else:
            hi_t = mid
        if hi_t - lo_t <= 1e-15 * max(1.0, hi_t):
            break
    return float(lo_t)


def _k3_equation_solver(c_desc: np.ndarray, d: int, r: float, alpha: float,
                        c_not_subset: int, grid: int, tail_inverse, table,
                        tol: float = DEFAULT_TOL):
    """Return a function mapping draw weights to the (lower, upper) roots.

    ``c_desc`` must be sorted in descending order so that the draws exceeding
    the union-bound threshold form a prefix.
    """
    total = float(c_desc.size)
    target = 1.0 - alpha
    sums = ShiftedCdfSums(table, c_desc)

    def solve(weights: np.ndarray | None, variants=(LOWER, UPPER)):
        if weights is None:
            cum = np.arange(1.0, total + 1.0)
        else:
            cum = np.cumsum(weights)
        m_star = _locate_mstar(c_desc, cum, total, c_not_subset, d)
        if m_star >= 1.0 - _MSTAR_ONE_EPS:
            k = _fsharp_quantile(d, r, target, tol)
            return {v: k for v in variants}
        tail_star = beta_half_tail(d, m_star)
        m_grid = tail_inverse(tail_star * np.arange(1, grid) / grid)
        log_m_star = math.log(m_star)
        log_m_grid = np.log(m_grid)
        n_above = int(np.searchsorted(-c_desc, -m_star, side="left"))
        sum_above, w_above = sums.prepare(weights, upto=n_above)
        factor = c_not_subset * tail_star / grid

        def rhs(k, log_m_extra):
            if k <= 0:
                return 0.0
            log_k = math.log(k)
            f_mstar = float(table.eval_from_log(np.asarray([log_k - log_m_star]))[0])
            emp = w_above * f_mstar - sum_above(k)
            f_m = table.eval_from_log(log_k - log_m_extra)
            grid_term = factor * float((f_m - f_mstar).sum())
            return f_mstar - emp / total + grid_term

        hint = _table_quantile_hint(table, target)
        out = {}
        for variant in variants:
            logs = log_m_grid if variant == LOWER else np.concatenate(([0.0], log_m_grid))
            out[variant] = invert_monotone(lambda k: rhs(k, logs), target,
                                           bracket=(0.0, hint), tol=tol)
        return out

    return solve


def k3(canon: CanonicalDesign, x0: np.ndarray, model: int, universe: ModelUniverse,
       r, alpha: float, cfg: McConfig, v_sample: np.ndarray | None = None,
       threads: int = 1, with_stderr: bool = True) -> ConstantEstimate:
    """Partial-union-bound constant for a model, using only the observed x0[M].

    Dispatch follows the exact identities: the full model reduces to
    :func:`k1`, the empty model and singleton models with a nonvanishing
    functional reduce to :func:`k4`, and rank-one designs collapse to the
    quantile of the scale distribution. The general case combines the
    Monte Carlo tail over submodels of M with a step-function integration of
    the union-bound remainder (from below, above, or both).
    """
    _check_alpha(alpha)
    r = check_dof(r)
    if model not in universe:
        raise ValueError("model does not belong to the universe")
    x0 = np.asarray(x0, dtype=float).ravel()
    fullm = full_model(universe.p)
    if model == fullm:
        base = k1(canon, x0, universe, r, alpha, cfg, v_sample=v_sample,
                  threads=threads, with_stderr=with_stderr)
        return ConstantEstimate(kind=KIND_K3, value=base.value, mc_stderr=base.mc_stderr,
                                config=cfg, model=model)
    if model == 0:
        base = k4(canon.d, r, alpha, count_not_subset(0, universe), grid=cfg.grid,
                  variant=cfg.variant)
        return ConstantEstimate(kind=KIND_K3, value=base.value, value_upper=base.value_upper,
                                config=cfg, model=model)
    if canon.d == 1:
        value = _fsharp_quantile(1, r, 1.0 - alpha)
        upper = value if cfg.variant == BOTH else None
        return ConstantEstimate(kind=KIND_K3, value=value, value_upper=upper,
                                config=cfg, model=model)
    if model_size(model) == 1 and s_vector(canon, x0, model).norm > 0.0:
        # The single submodel's functional has the exact sphere-coordinate
        # distribution, so the bound coincides with the empty-model constant
        # computed over c(M) + 1 models.
        base = k4(canon.d, r, alpha, count_not_subset(model, universe) + 1,
                  grid=cfg.grid, variant=cfg.variant)
        return ConstantEstimate(kind=KIND_K3, value=base.value, value_upper=base.value_upper,
                                config=cfg, model=model)

    submodels = [m for m in universe.models if m != 0 and is_subset(m, model)]
    S = sbar_matrix(canon, x0, universe, models=submodels)
    V = _resolve_draws(canon.d, cfg, v_sample)
    c = _cvalues(S, V, threads=threads)
    c_desc = np.sort(c)[::-1].copy()
    c_m = count_not_subset(model, universe)
    table = fsharp_table(canon.d, r)
    solver = _k3_equation_solver(c_desc, canon.d, r, alpha, c_m, cfg.grid,
                                 lambda t: beta_half_tail_inverse(canon.d, t), table)
    wanted = (LOWER, UPPER) if cfg.variant == BOTH else (cfg.variant,)
    roots = solver(None, variants=wanted)
    stderr = None
    if with_stderr:
        if cfg.seed is None:
            raise ValueError("a seed is required to bootstrap the Monte Carlo error")
        fast_inv = _tail_inverse_table(canon.d)
        boot_solver = _k3_equation_solver(c_desc, canon.d, r, alpha, c_m, cfg.grid,
                                          fast_inv, table)
        primary = wanted[0]
        stderr = _bootstrap_stderr(lambda w: boot_solver(w, variants=(primary,))[primary],
                                   c.size, cfg.seed)
    if cfg.variant == BOTH:
        return ConstantEstimate(kind=KIND_K3, value=roots[LOWER], value_upper=roots[UPPER],
                                mc_stderr=stderr, config=cfg, model=model)
    return ConstantEstimate(kind=KIND_K3, value=roots[cfg.variant], mc_stderr=stderr,
                            config=cfg, model=model)


def k4(d: int, r, alpha: float, c_empty: int, grid: int = 10_000,
       variant: str = LOWER) -> ConstantEstimate:
    """Union-bound constant: needs only d, r, alpha, and the universe size term.

    Fully deterministic given the grid size J. The step-function integration
    brackets the exact value from below (``lower``), above (``upper``), or
    both. Rank-one designs reduce to the quantile of the scale distribution.
    """
    _check_alpha(alpha)
    r = check_dof(r)
    if c_empty < 1:
        raise ValueError("the empty model must have at least one non-subset in the universe")
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}, got {variant!r}")
    cfg = McConfig(seed=None, draws=None, grid=grid, variant=variant)
    if d == 1:
        value = _fsharp_quantile(1, r, 1.0 - alpha)
        return ConstantEstimate(kind=KIND_K4, value=value,
                                value_upper=value if variant == BOTH else None, config=cfg)
    targets = np.arange(1, grid + 1, dtype=float) / (grid * float(c_empty))
    m = beta_half_tail_inverse(d, targets)
    target = 1.0 - alpha

    def solve(m_nodes: np.ndarray) -> float:
        # A zero grid node (possible only in the two-model universe, where the
        # last tail target is 1) contributes its limiting cdf value of one;
        # this keeps the lower/upper variants an honest bracket.
        pos = m_nodes[m_nodes > 0.0]
        base = float(m_nodes.size - pos.size)

        def g(k):
            if k <= 0:
                return 0.0
            vals = _vec_fsharp(d, r, k / pos)
            return (float(vals.sum()) + base) / grid

        return invert_monotone(g, target, bracket=(0.0, 2.0 * math.sqrt(d)),
                               tol=DEFAULT_TOL)

    results = {}
    if variant in (LOWER, BOTH):
        results[LOWER] = solve(m)
    if variant in (UPPER, BOTH):
        results[UPPER] = solve(np.concatenate(([1.0], m[:-1])))
    if variant == BOTH:
        return ConstantEstimate(kind=KIND_K4, value=results[LOWER],
                                value_upper=results[UPPER], config=cfg)
    return ConstantEstimate(kind=KIND_K4, value=results[variant], config=cfg)


def _vec_fsharp(d: int, r: float, t: np.ndarray) -> np.ndarray:
    from .numerics import _fsharp_cdf_vec

    return _fsharp_cdf_vec(d, r, t)


# ---------------------------------------------------------------------------
# K2: supremum over the unobserved coordinates
# ---------------------------------------------------------------------------

class _SbarOperator:
    """Batch evaluation of all model functionals as a linear map of x0."""

    def __init__(self, canon: CanonicalDesign, universe: ModelUniverse):
        d, p = canon.d, canon.p
        n_models = len(universe.models)
        B = np.zeros((n_models * d, p))
        for i, m in enumerate(universe.models):
            if m == 0:
                continue
            cols = _columns(m)
            a = canon.Xt[:, cols]
            q, rmat = np.linalg.qr(a)
            t_m = q @ np.linalg.inv(rmat).T
            B[i * d:(i + 1) * d, cols] = t_m
        self._B = B
        self.n_models = n_models
        self.d = d

    def sbar(self, x: np.ndarray) -> np.ndarray:
        st = (self._B @ x).reshape(self.n_models, self.d)
        norms = np.linalg.norm(st, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        return st / safe[:, None]


def k2(canon: CanonicalDesign, x0_active: np.ndarray, model: int,
       universe: ModelUniverse, r, alpha: float, search: K2SearchConfig,
       threads: int = 1) -> ConstantEstimate:
    """Supremum of the full-information constant over the unobserved x0 entries.

    Three stochastic stages: score many Gaussian completions of x0 cheaply,
    rescore the best at a larger draw count, then polish the single best
    candidate. The result is a stochastic lower bound for the true supremum
    and is flagged as such.
    """
    _check_alpha(alpha)
    r = check_dof(r)
    if model not in universe:
        raise ValueError("model does not belong to the universe")
    p = universe.p
    cols_m = _columns(model)
    x0_active = np.asarray(x0_active, dtype=float).ravel()
    if x0_active.shape[0] != len(cols_m):
        raise ValueError(f"x0 restriction has length {x0_active.shape[0]}, "
                         f"expected {len(cols_m)}")
    flags = ["stochastic-lower-bound"]
    table = fsharp_table(canon.d, r)
    base_cfg = McConfig(seed=search.seed, draws=search.stage3_draws)

    if model == full_model(p):
        x_full = np.zeros(p)
        x_full[cols_m] = x0_active
        est = k1(canon, x_full, universe, r, alpha, base_cfg, threads=threads)
        return ConstantEstimate(kind=KIND_K2, value=est.value, mc_stderr=est.mc_stderr,
                                config=base_cfg, model=model, flags=tuple(flags))

    cols_free = sorted(set(range(p)) - set(cols_m))
    n = canon.n
    xt_free = canon.Xt[:, cols_free]
    cov = xt_free.T @ xt_free / n
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] <= 1e-10 * max(eigs[-1], 1.0):
        cov = cov + 1e-8 * np.eye(cov.shape[0])
        flags.append("covariance-regularized")
    chol = np.linalg.cholesky(cov)

    op = _SbarOperator(canon, universe)
    cand_stream = RngStream(search.seed, (_TAG_K2_CAND,))
    z = cand_stream.gen.standard_normal((search.stage1_candidates, len(cols_free)))
    candidates = np.zeros((search.stage1_candidates, p))
    candidates[:, cols_m] = x0_active
    candidates[:, cols_free] = z @ chol.T

    def score_batch(cand_rows: np.ndarray, draws: int, stage: int) -> np.ndarray:
        v = sample_unit_sphere_block(canon.d, draws,
                                     RngStream(search.seed, (_TAG_K2_SPHERE, stage)))
        scores = np.empty(cand_rows.shape[0])

        def work(i):
            c = np.abs(op.sbar(cand_rows[i]) @ v.T).max(axis=0)
            scores[i] = _solve_mean_equation(ShiftedCdfSums(table, c), None,
                                             float(c.size), alpha)
            return None

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(cand_rows.shape[0])))
        else:
            for i in range(cand_rows.shape[0]):
                work(i)
        return scores

    stage1 = score_batch(candidates, search.stage1_draws, stage=1)
    keep = np.argsort(-stage1, kind="stable")[:search.stage2_candidates]
    stage2 = score_batch(candidates[keep], search.stage2_draws, stage=2)
    best = keep[int(np.argmax(stage2))]

    x_best = candidates[best]
    v3 = sample_unit_sphere_block(canon.d, search.stage3_draws,
                                  RngStream(search.seed, (_TAG_K2_SPHERE, 3)))
    c = _cvalues(op.sbar(x_best), v3, threads=threads)
    value, stderr = _mean_equation_with_stderr(c, canon.d, r, alpha, search.seed,
                                               with_stderr=True)
    return ConstantEstimate(kind=KIND_K2, value=value, mc_stderr=stderr,
                            config=base_cfg, model=model, flags=tuple(flags))
