"""Batch command-line front end.

JSON results go to stdout, diagnostics to stderr. Exit codes: 0 success,
2 usage or validation problem, 3 numerical precision failure, 4 iteration
budget exhausted. Every stochastic command requires an explicit --seed and
is byte-reproducible for any --threads setting.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from math import comb

import numpy as np

from .constants import (
    BOTH,
    K2SearchConfig,
    KIND_K1,
    KIND_K2,
    KIND_K3,
    KIND_K4,
    KIND_K5,
    KIND_K6,
    KIND_NAIVE,
    LOWER,
    McConfig,
    UPPER,
    default_draws,
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
    canonicalize,
    enumerate_universe,
    full_model,
    load_design_csv,
    load_universe_file,
    load_x0_csv,
    load_y_csv,
    model_from_indices,
    model_indices,
    s_vector,
)
from .inference import DESIGN_DEPENDENT, DESIGN_INDEPENDENT, build_interval
from .numerics import INFINITE, ConvergenceError, PrecisionLossError, RngStream
from .selectors import (
    FIXED_MODEL,
    LASSO_CV,
    LASSO_FIXED,
    SelectorSpec,
    aic_spec,
    bic_spec,
    select_model,
    sigma_hat_full,
    sigma_hat_pms,
)
from .simharness import (
    COVERAGE_COLUMNS,
    CoverageEngine,
    CoverageSearchConfig,
    LENGTH_COLUMNS,
    SigmaFamily,
    SimulationReport,
    binomial_stderr,
    gen_design,
    length_study,
    minimal_coverage_search,
    write_report,
)

_CONSTANT_KINDS = {
    "naive": KIND_NAIVE, "k1": KIND_K1, "k2": KIND_K2, "k3": KIND_K3,
    "k4": KIND_K4, "k5": KIND_K5, "k6": KIND_K6,
}
_STOCHASTIC_KINDS = {KIND_K1, KIND_K2, KIND_K3}

_TARGETS = {"dd": DESIGN_DEPENDENT, "di": DESIGN_INDEPENDENT}


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("POSI_THREADS")
    return max(1, int(env)) if env else 1


def _resolve_dof(args):
    if args.known_variance:
        return INFINITE
    if args.dof is None:
        raise ValueError("either --dof or --known-variance is required")
    return args.dof


def _parse_model_token(token: str, p: int) -> int:
    token = token.strip()
    if token in ("", "0"):
        return 0
    if token == "full":
        return full_model(p)
    return model_from_indices([int(t) for t in token.split(",") if t.strip()], p)


def _parse_constant_token(token: str):
    if ":" in token:
        name, model_token = token.split(":", 1)
    else:
        name, model_token = token, None
    kind = _CONSTANT_KINDS.get(name.lower())
    if kind is None:
        raise ValueError(f"--constant: unknown constant {name!r}")
    if kind in (KIND_K2, KIND_K3) and model_token is None:
        raise ValueError(f"--constant: {name} needs a model, e.g. {name}:1,2 or {name}:0")
    return kind, model_token


def _universe_empty_count(spec: str, p: int) -> int:
    """c(empty, universe) for all/max specs without enumerating the models."""
    if spec == "all":
        return (1 << p) - 1
    if spec.startswith("max:"):
        cap = int(spec.split(":", 1)[1])
        return sum(comb(p, k) for k in range(cap + 1)) - 1
    raise ValueError(f"--universe: cannot size {spec!r} without reading it")


def _build_universe(spec: str, X: np.ndarray):
    p = X.shape[1]
    if spec == "all":
        return enumerate_universe(p, None, X)
    if spec.startswith("max:"):
        return enumerate_universe(p, int(spec.split(":", 1)[1]), X)
    if spec.startswith("file:"):
        return load_universe_file(spec.split(":", 1)[1], p, X)
    raise ValueError(f"--universe: expected all, max:<k>, or file:<path>, got {spec!r}")


def _parse_selector(args) -> SelectorSpec:
    token = args.selector
    protected = tuple(int(t) for t in args.protected.split(",") if t.strip()) \
        if args.protected else ()
    if token == "aic":
        return aic_spec(protected)
    if token == "bic":
        return bic_spec(protected)
    if token == "lasso-cv":
        return SelectorSpec(kind=LASSO_CV, protected=protected, folds=args.folds)
    if token.startswith("lasso-fixed:"):
        return SelectorSpec(kind=LASSO_FIXED, protected=protected,
                            lam=float(token.split(":", 1)[1]))
    if token.startswith("fixed:"):
        return SelectorSpec(kind=FIXED_MODEL,
                            fixed_model=_parse_model_token(token.split(":", 1)[1],
                                                           args._p_hint))
    raise ValueError(f"--selector: expected aic, bic, lasso-cv, lasso-fixed:<lam>, "
                     f"or fixed:<indices>, got {token!r}")


def _k2_config(args, seed: int) -> K2SearchConfig:
    if args.k2_paper_scale:
        return K2SearchConfig(seed=seed)
    return K2SearchConfig(seed=seed, stage1_candidates=1000, stage1_draws=200,
                          stage2_candidates=100, stage2_draws=2000,
                          stage3_draws=10_000)


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")


# ---------------------------------------------------------------------------
# constant
# ---------------------------------------------------------------------------

def cmd_constant(args) -> int:
    kind, model_token = _parse_constant_token(args.constant)
    r = _resolve_dof(args)
    if kind == KIND_NAIVE:
        _emit(k_naive(r, args.alpha).to_json_dict())
        return 0
    if args.design is None:
        raise ValueError("--design is required for this constant")
    X = load_design_csv(args.design, header=args.header)
    p = X.shape[1]
    canon = canonicalize(X)
    if kind == KIND_K5:
        _emit(k5(canon.d, r, args.alpha).to_json_dict())
        return 0
    if kind == KIND_K6:
        _emit(k6(canon.d, r, args.alpha).to_json_dict())
        return 0
    if kind == KIND_K4:
        if args.universe.startswith("file:"):
            c_empty = len(_build_universe(args.universe, X)) - 1
        else:
            c_empty = _universe_empty_count(args.universe, p)
        est = k4(canon.d, r, args.alpha, c_empty, grid=args.grid, variant=args.variant)
        _emit(est.to_json_dict())
        return 0
    # The sphere-sampling constants.
    if args.seed is None:
        raise ValueError("--seed is required for stochastic constants")
    if args.x0 is None:
        raise ValueError("--x0 is required for this constant")
    x0 = load_x0_csv(args.x0, header=args.header)
    universe = _build_universe(args.universe, X)
    threads = _threads(args)
    draws = args.mc if args.mc is not None else default_draws(p)
    cfg = McConfig(seed=args.seed, draws=draws, grid=args.grid, variant=args.variant)
    if kind == KIND_K1:
        est = k1(canon, x0, universe, r, args.alpha, cfg, threads=threads)
    elif kind == KIND_K3:
        model = _parse_model_token(model_token, p)
        est = k3(canon, x0, model, universe, r, args.alpha, cfg, threads=threads)
    else:
        model = _parse_model_token(model_token, p)
        cols = [i - 1 for i in model_indices(model)]
        est = k2(canon, x0[cols], model, universe, r, args.alpha,
                 _k2_config(args, args.seed), threads=threads)
    _emit(est.to_json_dict())
    return 0


# ---------------------------------------------------------------------------
# interval
# ---------------------------------------------------------------------------

def cmd_interval(args) -> int:
    X = load_design_csv(args.design, header=args.header)
    x0 = load_x0_csv(args.x0, header=args.header)
    Y = load_y_csv(args.y, header=args.header)
    p = X.shape[1]
    args._p_hint = p
    spec = _parse_selector(args)
    kind, _ = _parse_constant_token(args.constant)
    needs_seed = kind in _STOCHASTIC_KINDS or spec.kind == LASSO_CV
    if needs_seed and args.seed is None:
        raise ValueError("--seed is required for stochastic selectors or constants")
    stream = RngStream(args.seed) if args.seed is not None else None
    m_hat = select_model(X, Y, spec, stream.child(1) if stream else None)

    sigma_src = args.sigma
    if sigma_src == "full":
        sigma2, r = sigma_hat_full(X, Y)
        sigma_hat = math.sqrt(sigma2)
    elif sigma_src == "pms":
        sigma2 = sigma_hat_pms(X, Y, m_hat)
        sigma_hat = math.sqrt(sigma2)
        r = X.shape[0] - len(model_indices(m_hat))
    elif sigma_src.startswith("fixed:"):
        sigma_hat = float(sigma_src.split(":", 1)[1])
        if sigma_hat <= 0:
            raise ValueError("--sigma fixed:<v> needs a positive value")
        r = INFINITE
    else:
        raise ValueError(f"--sigma: expected full, pms, or fixed:<v>, got {sigma_src!r}")

    canon = canonicalize(X)
    threads = _threads(args)
    if kind == KIND_NAIVE:
        est = k_naive(r, args.alpha)
    elif kind == KIND_K5:
        est = k5(canon.d, r, args.alpha)
    elif kind == KIND_K6:
        est = k6(canon.d, r, args.alpha)
    else:
        universe = _build_universe(args.universe, X)
        draws = args.mc if args.mc is not None else default_draws(p)
        cfg = McConfig(seed=args.seed, draws=draws, grid=args.grid, variant=args.variant)
        if kind == KIND_K4:
            from .design import count_not_subset

            est = k4(canon.d, r, args.alpha, count_not_subset(0, universe),
                     grid=args.grid, variant=args.variant)
        elif kind == KIND_K1:
            est = k1(canon, x0, universe, r, args.alpha, cfg, threads=threads)
        elif kind == KIND_K3:
            est = k3(canon, x0, m_hat, universe, r, args.alpha, cfg, threads=threads)
        else:
            cols = [i - 1 for i in model_indices(m_hat)]
            est = k2(canon, x0[cols], m_hat, universe, r, args.alpha,
                     _k2_config(args, args.seed), threads=threads)

    from .design import restricted_ols

    beta_hat = restricted_ols(X, Y, m_hat)
    s_norm = s_vector(canon, x0, m_hat).norm
    interval = build_interval(x0, m_hat, beta_hat, est, s_norm, sigma_hat)
    payload = interval.to_json_dict()
    payload["constant"] = est.to_json_dict()
    payload["sigma_hat"] = sigma_hat
    _emit(payload)
    return 0


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def _family_from_args(args) -> tuple[SigmaFamily, bool]:
    intercept = not args.no_intercept
    p_tilde = args.p - (1 if intercept else 0)
    if args.family == "exchangeable":
        fam = SigmaFamily.exchangeable(p_tilde, a=args.a)
    elif args.family == "equicorrelated":
        fam = SigmaFamily.equicorrelated(p_tilde, c=args.c)
    elif args.family == "iid":
        fam = SigmaFamily.iid(p_tilde)
    else:
        raise ValueError(f"--family: unknown family {args.family!r}")
    return fam, intercept


def cmd_gen_data(args) -> int:
    fam, intercept = _family_from_args(args)
    X, x0 = gen_design(fam, args.n, args.p, intercept, RngStream(args.seed))
    os.makedirs(args.out, exist_ok=True)
    x_path = os.path.join(args.out, "X.csv")
    x0_path = os.path.join(args.out, "x0.csv")
    np.savetxt(x_path, X, delimiter=",", fmt="%.17g")
    np.savetxt(x0_path, x0[None, :], delimiter=",", fmt="%.17g")
    print(f"wrote {x_path} ({args.n}x{args.p}) and {x0_path}")
    return 0


# ---------------------------------------------------------------------------
# lengths
# ---------------------------------------------------------------------------

def _nested_chain(p: int) -> list[int]:
    return [model_from_indices(range(1, k + 1), p) for k in range(1, p + 1)]


def cmd_lengths(args) -> int:
    X = load_design_csv(args.design, header=args.header)
    x0 = load_x0_csv(args.x0, header=args.header)
    p = X.shape[1]
    r = _resolve_dof(args)
    problem = DesignProblem(X=X, x0=x0, alpha=args.alpha, r=r)
    kinds = _parse_kind_list(args.kinds)
    if any(k in _STOCHASTIC_KINDS for k in kinds) and args.seed is None:
        raise ValueError("--seed is required for stochastic constants")
    universe = _build_universe(args.universe, X)
    if args.chain == "nested":
        chain = _nested_chain(p)
    elif args.chain.startswith("file:"):
        path = args.chain.split(":", 1)[1]
        with open(path, "r", encoding="utf-8") as fh:
            chain = [_parse_model_token(line.strip(), p) for line in fh]
    else:
        raise ValueError(f"--chain: expected nested or file:<path>, got {args.chain!r}")
    draws = args.mc if args.mc is not None else default_draws(p)
    cfg = McConfig(seed=args.seed, draws=draws, grid=args.grid, variant=args.variant)
    k2cfg = _k2_config(args, args.seed) if KIND_K2 in kinds else None
    sink: list = []
    partial = False
    try:
        report = length_study(problem, chain, universe, kinds, cfg, k2_search=k2cfg,
                              threads=_threads(args), sink=sink)
    except KeyboardInterrupt:
        partial = True
        report = SimulationReport(study="lengths", rows=sink,
                                  provenance={"seed": args.seed, "kinds": list(kinds)},
                                  partial=True)
    write_report(report, args.out, "lengths.csv", LENGTH_COLUMNS)
    for row in report.rows:
        print(f"{row['kind']:>6}  M={{{row['model']}}}  "
              f"K={row['constant']:.4f}  2K||s||={row['std_length']:.4f}")
    if partial:
        print("interrupted: partial results written", file=sys.stderr)
        return 130
    return 0


def _parse_kind_list(tokens: str) -> tuple[str, ...]:
    kinds = []
    for tok in tokens.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok not in _CONSTANT_KINDS:
            raise ValueError(f"--kinds: unknown constant {tok!r}")
        kinds.append(_CONSTANT_KINDS[tok])
    if not kinds:
        raise ValueError("--kinds: at least one constant is required")
    return tuple(kinds)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def cmd_coverage(args) -> int:
    if args.design is not None:
        X = load_design_csv(args.design, header=args.header)
        x0 = load_x0_csv(args.x0, header=args.header)
        sigma_mat = np.loadtxt(args.sigma_mat, delimiter=",", ndmin=2) \
            if args.sigma_mat else None
    else:
        fam, intercept = _family_from_args(args)
        X, x0 = gen_design(fam, args.n, args.p, intercept, RngStream(args.seed, (101,)))
        sigma_mat = fam.full_sigma(intercept)
    p = X.shape[1]
    args._p_hint = p
    spec = _parse_selector(args)
    kinds = _parse_kind_list(args.kinds)
    target = _TARGETS.get(args.target)
    if target is None:
        raise ValueError(f"--target: expected dd or di, got {args.target!r}")
    if target == DESIGN_INDEPENDENT and sigma_mat is None:
        raise ValueError("the design-independent target needs --sigma-mat or a "
                         "generated --family design")
    threads = _threads(args)
    universe = _build_universe(args.universe, X)
    sink: list = []
    partial = False
    if args.search:
        config = CoverageSearchConfig(
            seed=args.seed, selector=spec, kinds=kinds, target_kind=target,
            alpha=args.alpha, m1=args.m1, i1=args.i1, m2=args.m2, i2=args.i2,
            i3=args.i3, mc_draws=args.mc, grid=args.grid,
            allow_k2=KIND_K2 in kinds,
            k2_search=_k2_config(args, args.seed) if KIND_K2 in kinds else None)
        if args.paper_scale:
            config = config.paper_scale()
        try:
            report = minimal_coverage_search(config, X, x0, universe=universe,
                                             sigma_mat=sigma_mat, threads=threads,
                                             sink=sink)
        except KeyboardInterrupt:
            partial = True
            report = SimulationReport(study="coverage", rows=sink,
                                      provenance={"seed": args.seed}, partial=True)
    else:
        beta = np.zeros(p) if args.beta is None else \
            np.asarray([float(t) for t in args.beta.split(",")])
        if beta.shape[0] != p:
            raise ValueError(f"--beta has {beta.shape[0]} entries, expected {p}")
        mc = McConfig(seed=args.seed, draws=args.mc, grid=args.grid)
        engine = CoverageEngine(X, x0, args.alpha, spec, kinds, (target,), mc,
                                universe=universe, sigma_mat=sigma_mat,
                                threads=threads,
                                k2_search=_k2_config(args, args.seed)
                                if KIND_K2 in kinds else None)
        try:
            result = engine.run(beta, args.sigma_true, args.B,
                                RngStream(args.seed, (7,)))
            for kind in kinds:
                cov = result[(kind, target)]
                sink.append({
                    "kind": kind, "target": target, "selector": spec.label(),
                    "coverage": cov, "stderr": binomial_stderr(cov, args.B),
                    "reps": args.B, "beta_index": -1, "stage": "point",
                })
        except KeyboardInterrupt:
            partial = True
        report = SimulationReport(
            study="coverage", rows=sink,
            provenance={"seed": args.seed, "selector": spec.label(),
                        "target": target, "alpha": args.alpha, "B": args.B,
                        "beta": beta.tolist(), "sigma": args.sigma_true},
            partial=partial)
    write_report(report, args.out, "coverage.csv", COVERAGE_COLUMNS)
    for row in report.rows:
        print(f"{row['kind']:>6}  {row['target']:<18} {row['selector']:<14} "
              f"coverage={row['coverage']:.4f} (se {row['stderr']:.4f})")
    if partial:
        print("interrupted: partial results written", file=sys.stderr)
        return 130
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_design_flags(sp, required: bool):
    sp.add_argument("--design", required=required, help="design matrix CSV, rows = "
                    "observations, columns = regressors, no header by default")
    sp.add_argument("--x0", required=required,
                    help="query point CSV: a single row of regressor values")
    sp.add_argument("--header", action="store_true",
                    help="input CSVs carry one header row")


def _add_dof_flags(sp):
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--dof", type=int, default=None,
                   help="degrees of freedom of the variance estimate")
    g.add_argument("--known-variance", action="store_true",
                   help="treat the noise scale as known (infinite degrees of freedom)")


def _add_mc_flags(sp):
    sp.add_argument("--seed", type=int, default=None,
                    help="master seed; required for any stochastic computation")
    sp.add_argument("--mc", type=int, default=None,
                    help="sphere-sample count for the Monte Carlo constants "
                    "(default: 100000 up to 12 columns, 1000 beyond)")
    sp.add_argument("--grid", type=int, default=10_000,
                    help="step-function grid size for the union-bound constants")
    sp.add_argument("--variant", choices=[LOWER, UPPER, BOTH], default=LOWER,
                    help="integrate the union-bound remainder from below, above, or both")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: POSI_THREADS or 1); results "
                    "do not depend on this")
    sp.add_argument("--k2-paper-scale", action="store_true",
                    help="use the full-size search budgets for k2")


def _add_selector_flags(sp):
    sp.add_argument("--selector", required=True,
                    help="aic | bic | lasso-cv | lasso-fixed:<lam> | fixed:<indices|0|full>")
    sp.add_argument("--protected", default="",
                    help="comma-separated 1-based indices every model must keep")
    sp.add_argument("--folds", type=int, default=10, help="cross-validation folds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posipred",
        description="Confidence intervals for predictors chosen after model "
                    "selection: interval constants, intervals, and coverage studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("constant", help="compute one interval constant as JSON")
    _add_design_flags(sp, required=False)
    _add_dof_flags(sp)
    sp.add_argument("--alpha", type=float, required=True, help="1 - confidence level")
    sp.add_argument("--universe", default="all",
                    help="all | max:<k> | file:<path> (one model per line, "
                    "comma-separated 1-based indices, blank line = empty model)")
    sp.add_argument("--constant", required=True,
                    help="naive | k1 | k2:<model> | k3:<model> | k4 | k5 | k6 "
                    "(model token: comma list of indices, 0 for the empty model)")
    _add_mc_flags(sp)
    sp.set_defaults(func=cmd_constant)

    sp = sub.add_parser("interval", help="select a model and print its interval as JSON")
    _add_design_flags(sp, required=True)
    sp.add_argument("--y", required=True, help="response CSV (one column)")
    _add_selector_flags(sp)
    sp.add_argument("--constant", required=True,
                    help="naive | k1 | k2 | k3 | k4 | k5 | k6 (model-specific "
                    "constants use the selected model)")
    sp.add_argument("--sigma", default="full",
                    help="noise-scale source: full | pms | fixed:<value>")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--universe", default="all")
    _add_mc_flags(sp)
    sp.set_defaults(func=cmd_interval)

    sp = sub.add_parser("coverage", help="estimate coverage, or search for its minimum")
    _add_design_flags(sp, required=False)
    sp.add_argument("--family", default=None,
                    help="generate the design instead: exchangeable | equicorrelated | iid")
    sp.add_argument("--a", type=float, default=10.0, help="exchangeable family strength")
    sp.add_argument("--c", type=float, default=None,
                    help="equicorrelated family correlation (default sqrt(0.8/(p-2)))")
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--p", type=int, default=10)
    sp.add_argument("--no-intercept", action="store_true",
                    help="generated designs omit the leading column of ones")
    _add_selector_flags(sp)
    sp.add_argument("--kinds", default="k1,naive",
                    help="comma list of constants to evaluate")
    sp.add_argument("--target", default="dd", help="dd (design-dependent) | di "
                    "(design-independent; needs a generated family or --sigma-mat)")
    sp.add_argument("--sigma-mat", default=None,
                    help="CSV with the row second-moment matrix for the di target")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--B", type=int, default=10_000,
                    help="replications for a single-point coverage estimate")
    sp.add_argument("--beta", default=None,
                    help="comma list of true coefficients (default: all zeros)")
    sp.add_argument("--sigma-true", type=float, default=1.0,
                    help="true noise scale for the replications")
    sp.add_argument("--search", action="store_true",
                    help="run the three-step minimal-coverage search instead")
    sp.add_argument("--m1", type=int, default=200)
    sp.add_argument("--i1", type=int, default=200)
    sp.add_argument("--m2", type=int, default=20)
    sp.add_argument("--i2", type=int, default=2000)
    sp.add_argument("--i3", type=int, default=20_000)
    sp.add_argument("--paper-scale", action="store_true",
                    help="use the full-size search budgets (slow)")
    sp.add_argument("--universe", default="all")
    sp.add_argument("--out", required=True, help="output directory for the report files")
    _add_mc_flags(sp)
    sp.set_defaults(func=cmd_coverage)

    sp = sub.add_parser("lengths", help="standardized interval lengths along a model chain")
    _add_design_flags(sp, required=True)
    _add_dof_flags(sp)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--kinds", default="naive,k1,k3,k4,k5")
    sp.add_argument("--chain", default="nested",
                    help="nested (1; 1,2; ...; full) or file:<path> of model lines")
    sp.add_argument("--universe", default="all")
    sp.add_argument("--out", required=True)
    _add_mc_flags(sp)
    sp.set_defaults(func=cmd_lengths)

    sp = sub.add_parser("gen-data", help="generate a design and query point as CSV")
    sp.add_argument("--family", required=True,
                    help="exchangeable | equicorrelated | iid")
    sp.add_argument("--a", type=float, default=10.0)
    sp.add_argument("--c", type=float, default=None)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--no-intercept", action="store_true")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrecisionLossError as exc:
        print(f"numerical precision failure: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
