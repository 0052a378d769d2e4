"""Command-line entry point: bench, quantify, bound and score-check."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .baselines import fit_context, run_method
from .core import EmptyClass, NotASimplexPoint, ZeroClassProbability, make_simplex, project_to_simplex
from .oracle import GaussianMixtureModel, SingularFisherInfo, bound_gamma, efficiency_bound, mixture_fisher_mc
from .selse import SelseConfig, quantify

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 1, 2
SEED_ENV = "SHIFTQUANT_SEED"


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _matrix(text: str) -> np.ndarray:
    """Rows separated by ';', entries by ','."""
    try:
        return np.array([[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()])
    except ValueError:
        raise ConfigError(f"cannot parse matrix {text!r}") from None


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


def _model(args) -> GaussianMixtureModel:
    if args.model:
        try:
            model_file = json.loads(Path(args.model).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file is not valid JSON: {exc}") from None
        means, covs = model_file.get("means"), model_file.get("covs")
    else:
        means = _matrix(args.means)
        covs = None if args.covs is None else [_matrix(c) for c in args.covs.split("|")]
    try:
        means = np.atleast_2d(np.asarray(means, dtype=float))
        if covs is None:
            return GaussianMixtureModel.isotropic(means)
        return GaussianMixtureModel(means, np.asarray(covs, dtype=float))
    except (ValueError, TypeError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"invalid model file: {exc}") from None


def cmd_bench(args) -> int:
    if not args.out:
        raise ConfigError("--out is required")
    try:
        grid = bench.ExperimentGrid(
            n=args.n, pi_tr=args.pi_tr, tau_values=args.taus, pi_star_values=args.pi_stars, reps=args.reps,
            quantifiers=tuple(args.methods), source=args.source, label_column=args.label_column,
            seed=_seed(args), timing=args.timing,
        )
    except (ValueError, NotASimplexPoint) as exc:
        raise ConfigError(str(exc)) from None
    if grid.source != "gaussian" and not Path(grid.source).is_file():
        print(f"error: cannot read {grid.source}", file=sys.stderr)
        return EXIT_IO
    results = bench.run_grid(grid, jobs=args.jobs)
    bench.write_results(results, grid, args.out, args.summary)
    return EXIT_OK


def cmd_quantify(args) -> int:
    valid = bench.QUANTIFIERS
    if args.method not in valid:
        raise ConfigError(f"unknown method {args.method!r}; valid: {', '.join(valid)}")
    train, mapping = bench.load_csv(args.train, args.label_column)
    test = bench.load_features_csv(args.test, drop=(args.label_column,))
    if test.d != train.d:
        raise ConfigError(f"train has {train.d} features, test has {test.d}")
    seed = _seed(args)
    if args.method == "selse":
        res = quantify(train, test, SelseConfig(seed=seed))
        est, extra = res.pi_hat, {"degenerate": res.degenerate}
    else:
        out = run_method(args.method, fit_context(train, seed), test)
        est, extra = out.estimate, {}
    if args.project_simplex:
        est = project_to_simplex(est).entries
    labels = sorted(mapping, key=mapping.get)
    print(json.dumps({"method": args.method, "classes": labels[1:], "estimate": [float(v) for v in est],
                      "seed": seed, **extra}))
    return EXIT_OK


def cmd_bound(args) -> int:
    model = None if args.fisher else _model(args)
    try:
        pi_star = make_simplex(args.pi_star)
        pi_tr = make_simplex(args.pi_tr)
        m = pi_star.m if model is None else model.m
        if pi_star.m != m or pi_tr.m != m:
            raise ConfigError(f"model has {m + 1} classes but priors have {pi_star.m + 1}")
        if not 0 < args.tau < 1:
            raise ConfigError("--tau must lie in (0, 1)")
        seed = _seed(args)
        gam = bound_gamma(pi_star, pi_tr, args.tau)
        if args.fisher:
            info = _matrix(args.fisher)
            if info.shape != (m, m):
                raise ConfigError(f"--fisher must be {m}x{m}")
        else:
            info = mixture_fisher_mc(model, gam, args.n_mc, seed)
        b = efficiency_bound(info, pi_star, pi_tr, args.tau)
    except (NotASimplexPoint, ZeroClassProbability, SingularFisherInfo) as exc:
        raise ConfigError(str(exc)) from None
    print(json.dumps({"V": b.V.tolist(), "normalized": b.normalized.tolist(), "gamma": b.gamma.tolist(),
                      "fisher": np.atleast_2d(info).tolist(), "tau": args.tau, "pi_star": pi_star.entries.tolist(),
                      "pi_tr": pi_tr.entries.tolist(), "n_mc": args.n_mc, "seed": seed}))
    return EXIT_OK


def cmd_score_check(args) -> int:
    model = _model(args)
    seed = _seed(args)
    try:
        pi_star = make_simplex(args.pi_star)
        pi_tr = make_simplex(args.pi_tr)
    except (NotASimplexPoint, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    n_te = bench.test_size(args.n, args.tau)
    train, test, _ = bench.synthetic(model, pi_tr, pi_star, args.n - n_te, n_te, (seed,))
    res, scores = quantify(train, test, SelseConfig(seed=seed), return_scores=True)
    gam = bound_gamma(pi_star, pi_tr, args.tau)
    corrs = [bench.score_correlation(s, model, gam, args.n_eval, seed) for s in scores]
    print(json.dumps({"correlation": [c.values.tolist() for c in corrs],
                      "constant": [c.constant.tolist() for c in corrs],
                      "pi_hat": res.pi_hat.tolist(), "seed": seed}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shiftquant", description="Prevalence estimation under label shift.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    b = sub.add_parser("bench", help="run an experiment grid and write results")
    b.add_argument("--source", default="gaussian", help="'gaussian' or a CSV path")
    b.add_argument("--label-column", default="label")
    b.add_argument("--n", type=int, default=500)
    b.add_argument("--pi-tr", type=_floats, default=(0.5,))
    b.add_argument("--taus", type=_floats, default=bench.DEFAULT_TAUS)
    b.add_argument("--pi-stars", type=_floats, default=bench.DEFAULT_PI_STARS)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--methods", type=lambda s: s.split(","), default=list(bench.QUANTIFIERS))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte-identical reruns)")
    b.add_argument("--out")
    b.add_argument("--summary", help="JSON summary path (default: --out with .json suffix)")
    b.set_defaults(func=cmd_bench)

    q = sub.add_parser("quantify", help="estimate test prevalences from CSV files")
    q.add_argument("--train", required=True)
    q.add_argument("--test", required=True)
    q.add_argument("--label-column", default="label")
    q.add_argument("--method", default="selse")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--project-simplex", action="store_true")
    q.set_defaults(func=cmd_quantify)

    for name, func, help_ in (("bound", cmd_bound, "efficiency bound for a Gaussian mixture"),
                              ("score-check", cmd_score_check, "correlation of estimated and true scores")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--means", default="-1,-1;1,1", help="class means, rows separated by ';'")
        s.add_argument("--covs", help="covariances separated by '|' (default identity)")
        s.add_argument("--model", help="JSON file with 'means' and optional 'covs'")
        s.add_argument("--pi-star", type=_floats, default=(0.3,))
        s.add_argument("--pi-tr", type=_floats, default=(0.5,))
        s.add_argument("--tau", type=float, default=0.5)
        s.add_argument("--seed", type=int, default=0)
        if name == "bound":
            s.add_argument("--n-mc", type=int, default=200_000)
            s.add_argument("--fisher", help="mixture Fisher information to use instead of Monte Carlo")
        else:
            s.add_argument("--n", type=int, default=2000)
            s.add_argument("--n-eval", type=int, default=2000)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, bench.ParseError, bench.MissingColumn, EmptyClass) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
