"""Seed-deterministic simulation harness: data generators, the interval-length
study, and the three-step minimal-coverage search.

Replications are processed in fixed-size blocks; each block owns a child
random stream keyed by its index, and per-block hit counts are summed in
index order. Results are therefore byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .constants import (
    BOTH,
    ConstantEstimate,
    K2SearchConfig,
    KIND_K1,
    KIND_K2,
    KIND_K3,
    KIND_K4,
    KIND_K5,
    KIND_K6,
    KIND_NAIVE,
    McConfig,
    default_draws,
    draw_shared_sphere,
    k1,
    k2,
    k3,
    k4,
    k5,
    k6,
    k_naive,
)
from .design import (
    DesignProblem,
    ModelUniverse,
    _columns,
    canonicalize,
    count_not_subset,
    enumerate_universe,
    full_model,
    model_indices,
    model_size,
    s_vector,
)
from .inference import DESIGN_DEPENDENT, DESIGN_INDEPENDENT, beta_target_star
from .numerics import RngStream
from .selectors import (
    FIXED_MODEL,
    GREEDY_IC,
    LASSO_CV,
    LASSO_FIXED,
    SelectorSpec,
    lasso_select_from_workspace,
    lasso_workspace,
    resolve_penalty,
    select_greedy_ic,
    select_model,
)

REPLICATION_BLOCK = 256

MC_KINDS = (KIND_NAIVE, KIND_K1, KIND_K2, KIND_K3, KIND_K4, KIND_K5, KIND_K6)

_PRECOMPUTE_LIMIT = 4096


# ---------------------------------------------------------------------------
# Data generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaFamily:
    """Second-moment structure of the non-intercept regressor block."""

    kind: str
    p_tilde: int
    a: float | None = None
    c: float | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("exchangeable", "equicorrelated", "iid", "user"):
            raise ValueError(f"unknown covariance family {self.kind!r}")
        if self.p_tilde < 1:
            raise ValueError("the regressor block needs at least one column")
        sig = self.sigma_tilde()
        try:
            np.linalg.cholesky(sig)
        except np.linalg.LinAlgError as exc:
            raise ValueError("the covariance family is not positive definite") from exc

    @staticmethod
    def exchangeable(p_tilde: int, a: float = 10.0) -> "SigmaFamily":
        return SigmaFamily(kind="exchangeable", p_tilde=p_tilde, a=float(a))

    @staticmethod
    def equicorrelated(p_tilde: int, c: float | None = None) -> "SigmaFamily":
        if c is None:
            if p_tilde < 2:
                raise ValueError("the equicorrelated family needs at least two columns")
            c = math.sqrt(0.8 / (p_tilde - 1))
        return SigmaFamily(kind="equicorrelated", p_tilde=p_tilde, c=float(c))

    @staticmethod
    def iid(p_tilde: int) -> "SigmaFamily":
        return SigmaFamily(kind="iid", p_tilde=p_tilde)

    @staticmethod
    def user(matrix: np.ndarray) -> "SigmaFamily":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("a user covariance must be square")
        if np.max(np.abs(matrix - matrix.T)) > 1e-10:
            raise ValueError("a user covariance must be symmetric")
        return SigmaFamily(kind="user", p_tilde=matrix.shape[0], matrix=matrix)

    def sigma_tilde(self) -> np.ndarray:
        pt = self.p_tilde
        if self.kind == "exchangeable":
            return np.eye(pt) + (2.0 * self.a + pt * self.a ** 2) * np.ones((pt, pt))
        if self.kind == "equicorrelated":
            sig = np.eye(pt)
            sig[-1, :-1] = self.c
            sig[:-1, -1] = self.c
            return sig
        if self.kind == "iid":
            return np.eye(pt)
        return self.matrix.copy()

    def full_sigma(self, intercept: bool = True) -> np.ndarray:
        """Second moments of a generated row, including the intercept slot."""
        sig = self.sigma_tilde()
        if not intercept:
            return sig
        p = self.p_tilde + 1
        out = np.zeros((p, p))
        out[0, 0] = 1.0
        out[1:, 1:] = sig
        return out


def gen_design(family: SigmaFamily, n: int, p: int, intercept: bool,
               stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw a design matrix and query point from the family.

    Generates n + 1 rows (intercept slot fixed at 1 when requested, the rest
    jointly normal with the family covariance); the first n rows form X and
    the last one is x0. Rank-deficient draws are regenerated, at most ten
    times.
    """
    expected_p = family.p_tilde + (1 if intercept else 0)
    if p != expected_p:
        raise ValueError(f"p={p} does not match the family (expected {expected_p})")
    chol = np.linalg.cholesky(family.sigma_tilde())
    for _attempt in range(10):
        z = stream.gen.standard_normal((n + 1, family.p_tilde)) @ chol.T
        rows = np.column_stack([np.ones(n + 1), z]) if intercept else z
        X = rows[:n]
        if np.linalg.matrix_rank(X) == p:
            return X, rows[n].copy()
    raise ValueError("failed to generate a full-column-rank design in 10 attempts")


# ---------------------------------------------------------------------------
# Coverage engine
# ---------------------------------------------------------------------------

class CoverageEngine:
    """Replicated coverage evaluation against a fixed (X, x0, universe).

    Interval constants do not depend on the observed responses, so they are
    computed once (from one shared sphere sample) and reused across every
    replication; model-dependent constants are filled in lazily as the
    selector visits models.
    """

    def __init__(self, X, x0, alpha, selector: SelectorSpec, kinds, target_kinds,
                 mc: McConfig, universe: ModelUniverse | None = None,
                 sigma_mat: np.ndarray | None = None, threads: int = 1,
                 k2_search: K2SearchConfig | None = None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.x0 = np.asarray(x0, dtype=float).ravel()
        self.n, self.p = self.X.shape
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
        self.alpha = float(alpha)
        self.selector = selector
        self.kinds = tuple(kinds)
        for kind in self.kinds:
            if kind not in MC_KINDS:
                raise ValueError(f"unknown constant kind {kind!r}")
        self.target_kinds = tuple(target_kinds)
        for tk in self.target_kinds:
            if tk not in (DESIGN_DEPENDENT, DESIGN_INDEPENDENT):
                raise ValueError(f"unknown target kind {tk!r}")
        if DESIGN_INDEPENDENT in self.target_kinds and sigma_mat is None:
            raise ValueError("the design-independent target needs sigma_mat")
        self.sigma_mat = None if sigma_mat is None else np.asarray(sigma_mat, dtype=float)
        self.threads = max(1, int(threads))
        self.canon = canonicalize(self.X)
        d = self.canon.d
        if self.n <= d:
            raise ValueError("coverage replication needs n > rank(X) for the "
                             "variance estimator")
        self.r = self.n - d
        self.universe = universe if universe is not None \
            else enumerate_universe(self.p, None, self.X)
        if selector.kind == FIXED_MODEL and selector.fixed_model not in self.universe:
            raise ValueError("the fixed model must belong to the universe")
        if selector.kind != FIXED_MODEL and len(self.universe) != (1 << self.p):
            raise ValueError("data-driven selectors require the power-set universe, "
                             "otherwise selected models may fall outside it")
        self.mc = mc if mc.draws is not None else replace(mc, draws=default_draws(self.p))
        self.k2_search = k2_search
        needs_draws = bool(set(self.kinds) & {KIND_K1, KIND_K3})
        self._v = draw_shared_sphere(d, self.mc.draws, self.mc.seed) if needs_draws else None

        self._lock = threading.Lock()
        self._scalar_k: dict[str, float] = {}
        self._k_by_model: dict[tuple[str, int], float] = {}
        self._model_geom: dict[int, tuple[float, np.ndarray | None]] = {}
        self._estimates: dict[str, ConstantEstimate] = {}

        # Basis of col(X) for fast residual sums of squares.
        self._q_full = self.canon.Q if d == self.n else np.linalg.qr(self.X)[0][:, :d]

        for kind in self.kinds:
            if kind == KIND_NAIVE:
                est = k_naive(self.r, self.alpha)
            elif kind == KIND_K1:
                est = k1(self.canon, self.x0, self.universe, self.r, self.alpha,
                         self.mc, v_sample=self._v, threads=self.threads,
                         with_stderr=False)
            elif kind == KIND_K4:
                est = k4(d, self.r, self.alpha, count_not_subset(0, self.universe),
                         grid=self.mc.grid, variant=self.mc.variant)
            elif kind == KIND_K5:
                est = k5(d, self.r, self.alpha)
            elif kind == KIND_K6:
                est = k6(d, self.r, self.alpha)
            else:
                continue  # K3 and K2 are per-model, filled lazily
            self._estimates[kind] = est
            self._scalar_k[kind] = est.value

        if len(self.universe) <= _PRECOMPUTE_LIMIT:
            for m in self.universe.models:
                self._model_geom[m] = self._build_geometry(m)

        self._greedy_rss = None
        if selector.kind == GREEDY_IC and len(self.universe) <= _PRECOMPUTE_LIMIT:
            self._greedy_rss = {m: self._q_model(m) for m in self.universe.models}
        self._lasso_ws = None
        if selector.kind in (LASSO_CV, LASSO_FIXED):
            self._lasso_ws = lasso_workspace(self.X, selector)

    # -- per-model pieces ---------------------------------------------------

    def _q_model(self, m: int) -> np.ndarray | None:
        if m == 0:
            return None
        return np.linalg.qr(self.X[:, _columns(m)])[0]

    def _build_geometry(self, m: int):
        """(s_norm, w) with w'Y the selected-model prediction at x0."""
        sb = s_vector(self.canon, self.x0, m)
        if m == 0:
            return 0.0, None
        cols = _columns(m)
        a = np.linalg.pinv(self.X[:, cols])
        w = a.T @ self.x0[cols]
        return sb.norm, w

    def _geometry(self, m: int):
        geom = self._model_geom.get(m)
        if geom is None:
            with self._lock:
                geom = self._model_geom.get(m)
                if geom is None:
                    geom = self._build_geometry(m)
                    self._model_geom[m] = geom
        return geom

    def constant_value(self, kind: str, m: int) -> float:
        val = self._scalar_k.get(kind)
        if val is not None:
            return val
        key = (kind, m)
        val = self._k_by_model.get(key)
        if val is None:
            with self._lock:
                val = self._k_by_model.get(key)
                if val is None:
                    if kind == KIND_K3:
                        est = k3(self.canon, self.x0, m, self.universe, self.r,
                                 self.alpha, self.mc, v_sample=self._v,
                                 with_stderr=False)
                    elif kind == KIND_K2:
                        if self.k2_search is None:
                            raise ValueError("K2 coverage needs a K2SearchConfig")
                        cols = _columns(m)
                        est = k2(self.canon, self.x0[cols], m, self.universe,
                                 self.r, self.alpha, self.k2_search)
                    else:
                        raise ValueError(f"unknown constant kind {kind!r}")
                    val = est.value
                    self._k_by_model[key] = val
        return val

    def constant_estimate(self, kind: str) -> ConstantEstimate | None:
        return self._estimates.get(kind)

    # -- replication --------------------------------------------------------

    def _select(self, Y: np.ndarray, yty: float, gen: np.random.Generator) -> int:
        spec = self.selector
        if spec.kind == FIXED_MODEL:
            return spec.fixed_model
        if spec.kind == GREEDY_IC and self._greedy_rss is not None:
            cache = self._greedy_rss

            def rss_fn(m):
                q = cache[m]
                if q is None:
                    return yty
                proj = q.T @ Y
                return max(yty - float(proj @ proj), 0.0)

            return select_greedy_ic(self.X, Y, spec, rss_fn=rss_fn)
        if spec.kind in (LASSO_CV, LASSO_FIXED):
            ws = self._lasso_ws
            return lasso_select_from_workspace(ws, ws.project_y(Y), spec, gen)
        return select_model(self.X, Y, spec, None)

    def run(self, beta: np.ndarray, sigma: float, reps: int, stream: RngStream):
        """Hit frequencies over ``reps`` replications of the full experiment.

        Returns a dict mapping (constant kind, target kind) to coverage.
        """
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.shape[0] != self.p:
            raise ValueError(f"beta has length {beta.shape[0]}, expected {self.p}")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        mu = self.X @ beta
        target_cache: dict[tuple[str, int], float] = {}
        cache_lock = threading.Lock()

        def target_value(tk: str, m: int) -> float:
            key = (tk, m)
            val = target_cache.get(key)
            if val is None:
                with cache_lock:
                    val = target_cache.get(key)
                    if val is None:
                        if m == 0:
                            val = 0.0
                        elif tk == DESIGN_DEPENDENT:
                            _, w = self._geometry(m)
                            val = float(w @ mu)
                        else:
                            cols = _columns(m)
                            val = float(self.x0[cols] @
                                        beta_target_star(self.sigma_mat, beta, m))
                        target_cache[key] = val
            return val

        n_kinds, n_tk = len(self.kinds), len(self.target_kinds)
        spans = [(s, min(s + REPLICATION_BLOCK, reps))
                 for s in range(0, reps, REPLICATION_BLOCK)]

        def run_block(args):
            bi, (lo, hi) = args
            gen = stream.child(bi).gen
            count = hi - lo
            noise = gen.standard_normal((count, self.n))
            local = np.zeros((n_kinds, n_tk), dtype=np.int64)
            for i in range(count):
                Y = mu + sigma * noise[i]
                yty = float(Y @ Y)
                proj = self._q_full.T @ Y
                rss_full = max(yty - float(proj @ proj), 0.0)
                sigma_hat = math.sqrt(rss_full / self.r)
                m = self._select(Y, yty, gen)
                s_norm, w = self._geometry(m)
                center = float(w @ Y) if w is not None else 0.0
                for ti, tk in enumerate(self.target_kinds):
                    err = abs(target_value(tk, m) - center)
                    for ki, kind in enumerate(self.kinds):
                        hw = self.constant_value(kind, m) * s_norm * sigma_hat
                        if err <= hw:
                            local[ki, ti] += 1
            return local

        if self.threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                blocks = list(pool.map(run_block, enumerate(spans)))
        else:
            blocks = [run_block(item) for item in enumerate(spans)]
        hits = np.zeros((n_kinds, n_tk), dtype=np.int64)
        for local in blocks:
            hits += local
        return {
            (kind, tk): int(hits[ki, ti]) / reps
            for ki, kind in enumerate(self.kinds)
            for ti, tk in enumerate(self.target_kinds)
        }


def binomial_stderr(coverage: float, reps: int) -> float:
    return math.sqrt(max(coverage * (1.0 - coverage), 0.0) / reps)


def coverage_at(X, x0, beta, sigma, spec: SelectorSpec, kind: str, target_kind: str,
                B: int, stream: RngStream, *, alpha: float = 0.05,
                universe: ModelUniverse | None = None, sigma_mat=None,
                mc: McConfig | None = None, threads: int = 1,
                k2_search: K2SearchConfig | None = None):
    """Coverage frequency of one interval against one target over B replications.

    Each replication draws responses from the Gaussian model at (beta, sigma),
    estimates the variance from the full model, runs the selector, builds the
    interval, and checks coverage of the requested target. Returns the hit
    frequency and its binomial standard error.
    """
    if mc is None:
        mc = McConfig(seed=stream.seed, draws=None)
    engine = CoverageEngine(X, x0, alpha, spec, (kind,), (target_kind,), mc,
                            universe=universe, sigma_mat=sigma_mat, threads=threads,
                            k2_search=k2_search)
    cov = engine.run(beta, sigma, B, stream)[(kind, target_kind)]
    return cov, binomial_stderr(cov, B)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class SimulationReport:
    """Rows plus provenance for one study; renderable as JSON and CSV."""

    study: str
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    partial: bool = False

    def to_json_dict(self) -> dict:
        return {
            "study": self.study,
            "partial": self.partial,
            "provenance": self.provenance,
            "rows": self.rows,
        }


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() if out.returncode == 0 else None


def write_report(report: SimulationReport, outdir, csv_name: str, columns) -> None:
    """Write report.json, the flat CSV, and meta.json into ``outdir``."""
    import os

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    with open(os.path.join(outdir, csv_name), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in report.rows:
            writer.writerow([row.get(col, "") for col in columns])
    meta = {
        "version": __version__,
        "git": _git_revision(),
        "partial": report.partial,
        "provenance": report.provenance,
    }
    with open(os.path.join(outdir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# The two studies
# ---------------------------------------------------------------------------

LENGTH_COLUMNS = ("kind", "model", "model_size", "constant", "s_norm", "std_length")


def length_study(problem: DesignProblem, chain, universe: ModelUniverse, kinds,
                 cfg: McConfig, k2_search: K2SearchConfig | None = None,
                 threads: int = 1, sink: list | None = None) -> SimulationReport:
    """Standardized interval lengths ``2 K ||s_M||`` along a chain of models.

    Constants that do not depend on the model are computed once from a shared
    sphere sample; the per-model constants are recomputed for every chain
    entry from that same sample. ``sink``, when given, receives rows as they
    are produced so interrupted runs can be flushed as partial reports.
    """
    chain = [int(m) for m in chain]
    for m in chain:
        if m not in universe:
            raise ValueError(f"chain model {{{','.join(map(str, model_indices(m)))}}} "
                             f"is not in the universe")
    canon = canonicalize(problem.X)
    cfg = cfg if cfg.draws is not None else replace(cfg, draws=default_draws(problem.p))
    needs_draws = bool(set(kinds) & {KIND_K1, KIND_K3})
    v = draw_shared_sphere(canon.d, cfg.draws, cfg.seed) if needs_draws else None
    scalar: dict[str, ConstantEstimate] = {}
    for kind in kinds:
        if kind == KIND_NAIVE:
            scalar[kind] = k_naive(problem.r, problem.alpha)
        elif kind == KIND_K1:
            scalar[kind] = k1(canon, problem.x0, universe, problem.r, problem.alpha,
                              cfg, v_sample=v, threads=threads, with_stderr=False)
        elif kind == KIND_K4:
            scalar[kind] = k4(canon.d, problem.r, problem.alpha,
                              count_not_subset(0, universe), grid=cfg.grid,
                              variant=cfg.variant)
        elif kind == KIND_K5:
            scalar[kind] = k5(canon.d, problem.r, problem.alpha)
        elif kind == KIND_K6:
            scalar[kind] = k6(canon.d, problem.r, problem.alpha)
        elif kind not in (KIND_K2, KIND_K3):
            raise ValueError(f"unknown constant kind {kind!r}")
    rows = sink if sink is not None else []
    for kind in kinds:
        for m in chain:
            s_norm = s_vector(canon, problem.x0, m).norm
            if kind in scalar:
                value = scalar[kind].value
            elif kind == KIND_K3:
                value = k3(canon, problem.x0, m, universe, problem.r, problem.alpha,
                           cfg, v_sample=v, threads=threads, with_stderr=False).value
            else:
                if k2_search is None:
                    raise ValueError("K2 lengths need a K2SearchConfig")
                cols = _columns(m)
                value = k2(canon, problem.x0[cols], m, universe, problem.r,
                           problem.alpha, k2_search, threads=threads).value
            rows.append({
                "kind": kind,
                "model": ",".join(map(str, model_indices(m))) or "0",
                "model_size": model_size(m),
                "constant": value,
                "s_norm": s_norm,
                "std_length": 2.0 * value * s_norm,
            })
    provenance = {
        "seed": cfg.seed,
        "draws": cfg.draws,
        "grid": cfg.grid,
        "alpha": problem.alpha,
        "dof": None if math.isinf(problem.r) else problem.r,
        "kinds": list(kinds),
        "universe_size": len(universe),
    }
    return SimulationReport(study="lengths", rows=rows, provenance=provenance)


COVERAGE_COLUMNS = ("kind", "target", "selector", "coverage", "stderr", "reps",
                    "beta_index", "stage")


@dataclass(frozen=True)
class CoverageSearchConfig:
    """Budgets and wiring for the three-step minimal-coverage search.

    Desk-scale defaults; :meth:`paper_scale` switches to the published
    budgets (1000 candidates at 1000 replications, then 100 at 10000, then
    100000 for the final cross-evaluation).
    """

    seed: int
    selector: SelectorSpec
    kinds: tuple[str, ...] = (KIND_K1, KIND_NAIVE)
    target_kind: str = DESIGN_DEPENDENT
    alpha: float = 0.05
    m1: int = 200
    i1: int = 200
    m2: int = 20
    i2: int = 2000
    i3: int = 20000
    mc_draws: int | None = None
    grid: int = 10_000
    allow_k2: bool = False
    k2_search: K2SearchConfig | None = None

    def __post_init__(self):
        if self.m2 > self.m1:
            raise ValueError("the rescored candidate count cannot exceed the pool size")
        if not self.i1 <= self.i2 <= self.i3:
            raise ValueError("replication budgets must be nondecreasing across steps")
        for kind in self.kinds:
            if kind not in MC_KINDS:
                raise ValueError(f"unknown constant kind {kind!r}")
        if KIND_K2 in self.kinds and not self.allow_k2:
            raise ValueError("K2 is excluded from coverage searches by default "
                             "(too costly); set allow_k2=True to include it")

    def paper_scale(self) -> "CoverageSearchConfig":
        return replace(self, m1=1000, i1=1000, m2=100, i2=10_000, i3=100_000)


def sample_search_betas(X: np.ndarray, count: int, stream: RngStream) -> np.ndarray:
    """Coefficient candidates whose mean vectors are standard normal in col(X)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = stream.gen.standard_normal((X.shape[0], count))
    betas, *_ = np.linalg.lstsq(X, z, rcond=None)
    return betas.T


def minimal_coverage_search(config: CoverageSearchConfig, X, x0, *,
                            universe: ModelUniverse | None = None, sigma_mat=None,
                            threads: int = 1,
                            sink: list | None = None) -> SimulationReport:
    """Three-step stochastic search for the minimal coverage probability.

    Per constant kind: score ``m1`` coefficient candidates at ``i1``
    replications, rescore the worst ``m2`` at ``i2``, and keep the worst as
    that constant's candidate minimizer. Every constant is then re-evaluated
    at every minimizer with ``i3`` replications and the smallest value is
    reported. The noise variance is fixed at one, which is no loss of
    generality for these intervals. Results are stochastic upper bounds for
    the true minimal coverage.

    ``sink``, when given, receives result rows as they are produced, so an
    interrupted run can still be written out as a partial report.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mc = McConfig(seed=config.seed, draws=config.mc_draws, grid=config.grid)
    engine = CoverageEngine(X, x0, config.alpha, config.selector, config.kinds,
                            (config.target_kind,), mc, universe=universe,
                            sigma_mat=sigma_mat, threads=threads,
                            k2_search=config.k2_search)
    master = RngStream(config.seed)
    betas = sample_search_betas(X, config.m1, master.child(1))
    rows = sink if sink is not None else []
    label = config.selector.label()
    tk = config.target_kind

    argmins: dict[str, int] = {}
    for ki, kind in enumerate(config.kinds):
        step1 = np.empty(config.m1)
        for i in range(config.m1):
            step1[i] = engine.run(betas[i], 1.0, config.i1,
                                  master.child(2, ki, 1, i))[(kind, tk)]
        worst = np.argsort(step1, kind="stable")[:config.m2]
        step2 = np.empty(config.m2)
        for pos, cand in enumerate(worst):
            step2[pos] = engine.run(betas[cand], 1.0, config.i2,
                                    master.child(2, ki, 2, int(cand)))[(kind, tk)]
        argmins[kind] = int(worst[int(np.argmin(step2))])

    final: dict[str, tuple[float, int]] = {}
    cross: dict[int, dict] = {}
    for ki, kind in enumerate(config.kinds):
        cand = argmins[kind]
        if cand not in cross:
            cross[cand] = engine.run(betas[cand], 1.0, config.i3,
                                     master.child(3, int(cand)))
        for other in config.kinds:
            cov = cross[cand][(other, tk)]
            best = final.get(other)
            if best is None or cov < best[0]:
                final[other] = (cov, cand)

    for kind in config.kinds:
        cov, cand = final[kind]
        rows.append({
            "kind": kind,
            "target": tk,
            "selector": label,
            "coverage": cov,
            "stderr": binomial_stderr(cov, config.i3),
            "reps": config.i3,
            "beta_index": cand,
            "stage": "final-minimum",
        })
    provenance = {
        "seed": config.seed,
        "selector": label,
        "target": tk,
        "alpha": config.alpha,
        "budgets": {"m1": config.m1, "i1": config.i1, "m2": config.m2,
                    "i2": config.i2, "i3": config.i3},
        "constants_draws": engine.mc.draws,
        "candidate_pools": "per-constant",
        "note": "reported minima are stochastic upper bounds of the true minimal coverage",
        "argmin_beta": {kind: betas[cand].tolist() for kind, (cov, cand)
                        in final.items()},
    }
    return SimulationReport(study="coverage", rows=rows, provenance=provenance)
