"""Command-line entry point: ``popalloc {optimize,bound,simulate,estimate}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import allocation, csvio, eif, estimate
from .config import RunConfig, load_config
from .exceptions import ConfigError, DataError, PopallocError
from .model import IDENTITY
from .simulate import run_study

log = logging.getLogger("popalloc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML run configuration (default: bundled baseline study)")
    common.add_argument("--out", type=Path, default=Path("popalloc-out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="popalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("optimize", parents=[common], help="optimal CIR/CDR allocations per target")
    p = sub.add_parser("bound", parents=[common], help="efficiency bounds and relative efficiencies")
    p.add_argument("--monte-carlo", type=int, default=0, metavar="N",
                   help="also estimate each bound from N simulated observations")
    p = sub.add_parser("simulate", parents=[common], help="replicated design-comparison study")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--oracle-nuisances", action="store_true",
                   help="use true nuisance functions instead of fitted ones")
    sub.add_parser("estimate", parents=[common], help="one-step estimates from CSV data")
    return parser


def _provenance(cfg: RunConfig, seed) -> dict:
    return {"config_sha256": cfg.sha256, "master_seed": seed}


def _comment(prov: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in prov.items())


def _write_table(path: Path, header, rows, prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_comment(prov)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def _seed(cfg: RunConfig, args) -> int:
    return args.seed if args.seed is not None else int(cfg.doc.get("study", {}).get("master_seed", 0))


def cmd_optimize(cfg: RunConfig, args) -> None:
    prov = _provenance(cfg, _seed(cfg, args))
    trial, outcome, link = cfg.trial, cfg.outcome, cfg.link
    rows, summary = [], {}
    for name, target in cfg.targets().items():
        mom = allocation.design_moments(trial, target, outcome, cfg.order)
        pi = allocation.optimal_cir(mom, link)
        rows.append([name, pi, mom.m1, mom.m0, mom.mu1_star, mom.mu0_star, mom.var_star_delta])
        summary[name] = {"pi_opt": pi, **vars(mom)}
        print(f"{name:<12} pi_opt = {pi:.4f}")
    _write_table(args.out / "optimal_cir.csv",
                 ["target", "pi_opt", "m1", "m0", "mu1_star", "mu0_star", "var_star_delta"], rows, prov)

    trial_mom = allocation.design_moments(trial, cfg.targets()["trial"], outcome, cfg.order)
    cdr = allocation.optimal_cdr(outcome, link, trial_mom)
    lower, upper = trial.support
    grid = np.linspace(lower, upper, cfg.grid_points)
    grid_rows = [[float(w1), w2, float(cdr.prob(np.array([w1]), np.array([float(w2)]))[0])]
                 for w2 in (0, 1) for w1 in grid]
    _write_table(args.out / "p_opt_grid.csv", ["w1", "w2", "p_opt"], grid_rows, prov)
    params = None
    if outcome.family == "normal":
        params = allocation.optimal_cdr_parameters(outcome, link, trial_mom)
    (args.out / "optimize.json").write_text(json.dumps(
        {**prov, "link": link.name, "optimal_cir": summary, "optimal_cdr_logit": params}, indent=2))


def cmd_bound(cfg: RunConfig, args) -> None:
    seed = _seed(cfg, args)
    prov = _provenance(cfg, seed)
    if cfg.link is not IDENTITY:
        raise ConfigError("bound computes efficiency bounds for difference contrasts; set design.link = 'identity'")
    targets = cfg.targets()
    designs = cfg.designs()
    ref_label = cfg.doc.get("study", {}).get("reference", next(iter(designs)))
    if ref_label not in designs:
        raise ConfigError(f"reference design {ref_label!r} is not among the designs")
    bounds = {(d, t): eif.variance_bound(designs[d], targets[t], cfg.trial, cfg.outcome, cfg.gamma,
                                         order=cfg.order)
              for d in designs for t in targets}
    names = list(targets)
    _write_table(args.out / "bounds.csv", ["design", *names],
                 [[d, *(bounds[d, t] for t in names)] for d in designs], prov)
    re_rows = [[d, *(bounds[ref_label, t] / bounds[d, t] for t in names)] for d in designs]
    _write_table(args.out / "relative_efficiency.csv", ["design", *names], re_rows, prov)
    for row in re_rows:
        print(f"{row[0]:<20}" + " ".join(f"{v:8.3f}" for v in row[1:]))
    payload = {**prov, "reference": ref_label,
               "bounds": {d: {t: bounds[d, t] for t in names} for d in designs}}
    if args.monte_carlo:
        from .numerics import RngStream

        mc = {}
        for i, d in enumerate(designs):
            mc[d] = {}
            for j, t in enumerate(names):
                stream = RngStream(seed, i).child(j)
                mc[d][t] = eif.variance_bound(designs[d], targets[t], cfg.trial, cfg.outcome, cfg.gamma,
                                              method="monte_carlo", n=args.monte_carlo, stream=stream,
                                              order=cfg.order)
        payload["monte_carlo"] = {"n": args.monte_carlo, "bounds": mc}
    (args.out / "bounds.json").write_text(json.dumps(payload, indent=2))


def cmd_simulate(cfg: RunConfig, args) -> None:
    study = cfg.study(args.replications, args.seed, True if args.oracle_nuisances else None)
    prov = _provenance(cfg, study.master_seed)
    result = run_study(study, jobs=args.jobs)
    table = result.relative_efficiency_table()
    _write_table(args.out / "relative_efficiency.csv", table[0], table[1:], prov)
    result.write_json(args.out / "study.json",
                      extra={**prov, "replications": study.replications, "oracle": study.oracle,
                             "n": study.n, "n_star": study.n_star})
    for row in table:
        print(f"{row[0]:<20}" + " ".join(f"{v:>10.3f}" if isinstance(v, float) else f"{v:>10}"
                                          for v in row[1:]))


def cmd_estimate(cfg: RunConfig, args) -> None:
    spec = cfg.doc.get("estimate")
    if not spec or "trial" not in spec and "generalization" not in spec:
        raise ConfigError("[estimate] needs at least 'trial' or 'generalization'")
    prov = _provenance(cfg, _seed(cfg, args))
    from .model import LinkFunction

    link = LinkFunction.from_name(spec.get("link", "identity"))
    family = spec.get("outcome_family", "gaussian")
    reports = {}
    if "trial" in spec:
        trial = csvio.load_csv(cfg.resolve(spec["trial"]), "trial")
        fit = estimate.fit_outcome_regression(trial, family=family)
        nu = estimate.FittedNuisances(fit)
        reports["trial"] = estimate.estimate_link_contrast(estimate.trial_components(trial, nu), link)
        if "target" in spec:
            target = csvio.load_csv(cfg.resolve(spec["target"]), "target")
            tnu = estimate.FittedNuisances(fit, ratio=estimate.fit_density_ratio(trial, target))
            reports["transport"] = estimate.estimate_link_contrast(
                estimate.transport_components(trial, target, tnu), link)
        if "weights" in spec:
            weights = csvio.load_csv(cfg.resolve(spec["weights"]), "weights")
            strata = cfg.strata(weights)
            if strata is None:
                raise ConfigError("post-stratified estimation needs [targets.poststrat].cutpoint")
            reports["poststrat"] = estimate.estimate_link_contrast(
                estimate.poststrat_components(trial, strata, nu), link)
    if "generalization" in spec:
        cohort = csvio.load_csv(cfg.resolve(spec["generalization"]), "generalization")
        gnu = estimate.FittedNuisances(estimate.fit_outcome_regression(cohort.trial(), family=family),
                                       participation=estimate.fit_participation(cohort))
        reports["generalize"] = estimate.estimate_link_contrast(
            estimate.generalize_components(cohort, gnu), link)
    for name, rep in reports.items():
        print(f"{name:<12} {rep.point:.6f} (SE {rep.std_error:.6f}, n={rep.n_effective})")
    (args.out / "estimates.json").write_text(json.dumps(
        {**prov, "link": link.name, "estimates": {k: r.to_dict() for k, r in reports.items()}},
        indent=2, default=float))


COMMANDS = {"optimize": cmd_optimize, "bound": cmd_bound, "simulate": cmd_simulate,
            "estimate": cmd_estimate}


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (PopallocError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
