"""Command-line interface: generate data, fit once, or run a whole study.

Every subcommand reads one JSON config and writes its outputs under --out.
Exit codes: 0 success, 2 invalid run (too many failed replicates, or a
failed built-in check), 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .boost import BoostConfig
from .checks import checks_csv, run_oracle_checks
from .datagen import GenerativeConfig, generate_trial, truths_to_csv
from .harness import (
    fit_masked_nuisances,
    owl_baseline_weights,
    owl_itt_policy,
    params_from_config,
    run_scenario,
    run_sweep,
    run_train_test,
    scenario_spec_from_config,
    sweep_spec_from_config,
    traintest_spec_from_config,
    METHODS,
    _learn,
    _weights_for,
)
from .learner import policy_to_json
from .model import Dataset, LinearPolicy
from .value import RESULT_HEADER, ipw_value, mr_value, result_csv_row


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.prog + ": error: " + message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otrsens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate one synthetic trial dataset with its truth sidecar"),
        ("fit", "fit nuisances and learn per-method policies on one dataset"),
        ("scenario", "replicated simulation study under a misspecification case"),
        ("sweep", "analysis-tilt grid study at a fixed true tilt"),
        ("traintest", "repeated train/test split value comparison"),
        ("oracle-check", "run the built-in exactness and sampler checks"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=(name != "oracle-check"),
                       help="path to the JSON config document")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for replicated runs")
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config must be a JSON object")
    return config


def _take(config, allowed, label):
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ValueError(
            f"unknown {label} config keys {unknown}; allowed: {sorted(allowed)}"
        )


def _write(path: Path, text: str):
    path.write_text(text)
    print(path)


def cmd_gen(config, out: Path, args) -> int:
    _take(config, {"n", "seed", "replicate", "alpha", "phi", "strata_scheme",
                   "mean_of_accepted"}, "gen")
    alpha = config.get("alpha", (0.5, 0.5))
    cfg = GenerativeConfig(
        n=int(config.get("n", 500)),
        true_alpha=params_from_config(alpha),
        phi=float(config.get("phi", 0.5)),
        seed=int(args.seed if args.seed is not None else config.get("seed", 0)),
        strata_scheme=str(config.get("strata_scheme", "s4_first")),
        rejection_mean_of_accepted=bool(config.get("mean_of_accepted", False)),
    )
    dataset, truths = generate_trial(cfg, replicate=int(config.get("replicate", 0)))
    dataset.to_csv(out / "dataset.csv")
    print(out / "dataset.csv")
    truths_to_csv(truths, out / "truths.csv")
    print(out / "truths.csv")
    return 0


def _policy_json(policy) -> str:
    if isinstance(policy, LinearPolicy):
        return policy_to_json(policy)
    if hasattr(policy, "action"):
        return json.dumps({"kind": "constant", "action": int(policy.action)})
    return json.dumps({"kind": "boosted_sign"})


class _FitSpec:
    """Just enough spec surface for the shared policy-fitting helpers."""

    def __init__(self, config):
        self.lam = float(config.get("lam", 0.01))
        self.lambda_grid = tuple(float(v) for v in config.get("lambda_grid", ()))
        self.owl_rounds = tuple(int(r) for r in config.get("owl_rounds", (0,)))


def cmd_fit(config, out: Path, args) -> int:
    _take(config, {"dataset", "alpha", "methods", "masks", "n_mc", "seed", "lam",
                   "lambda_grid", "owl_rounds", "kappa_folds", "kappa_rounds",
                   "label"}, "fit")
    if "dataset" not in config:
        raise ValueError("fit config needs a 'dataset' path")
    if "alpha" not in config:
        raise ValueError("fit config needs an 'alpha' tilt")
    dataset = Dataset.from_csv(config["dataset"])
    params = params_from_config(config["alpha"])
    methods = tuple(config.get("methods", METHODS))
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    spec = _FitSpec(config)
    ns = fit_masked_nuisances(
        dataset,
        config.get("masks", {}),
        params=params,
        n_mc=int(config.get("n_mc", 3000)),
        mc_seed=seed,
        kappa=True,
        kappa_folds=int(config.get("kappa_folds", 5)),
        kappa_config=BoostConfig(n_rounds=int(config.get("kappa_rounds", 150))),
    )
    label = str(config.get("label", "fit"))
    lines = [RESULT_HEADER]
    for m in methods:
        if m == "OWL":
            owl_baseline_weights(dataset, ns).to_csv(out / f"weights_{m}.csv")
            print(out / f"weights_{m}.csv")
            policy = owl_itt_policy(dataset, ns, rounds_grid=spec.owl_rounds)
        else:
            weights = _weights_for(m, dataset, ns, params)
            weights.to_csv(out / f"weights_{m}.csv")
            print(out / f"weights_{m}.csv")
            policy, _ = _learn(dataset, weights, spec)
        (out / f"policy_{m}.json").write_text(_policy_json(policy))
        print(out / f"policy_{m}.json")
        scenario = f"{label}:{m}"
        lines.append(result_csv_row(ipw_value(dataset, policy, ns, params),
                                    params, scenario, seed))
        lines.append(result_csv_row(mr_value(dataset, policy, ns, params),
                                    params, scenario, seed))
    _write(out / "results.csv", "\n".join(lines) + "\n")
    return 0


def cmd_scenario(config, out: Path, args) -> int:
    spec = scenario_spec_from_config(config, seed=args.seed)
    result = run_scenario(spec, jobs=args.jobs)
    _write(out / "summary.csv", result.summary_csv())
    _write(out / "replicates.csv", result.replicates_csv())
    _write(out / "run.log", "\n".join(result.log_lines()) + "\n")
    return 2 if result.invalid else 0


def cmd_sweep(config, out: Path, args) -> int:
    spec = sweep_spec_from_config(config, seed=args.seed)
    result = run_sweep(spec, jobs=args.jobs)
    _write(out / "sweep.csv", result.to_csv())
    _write(out / "run.log", "\n".join(result.log_lines()) + "\n")
    return 2 if result.invalid else 0


def cmd_traintest(config, out: Path, args) -> int:
    spec = traintest_spec_from_config(config, seed=args.seed)
    result = run_train_test(spec, jobs=args.jobs)
    _write(out / "traintest.csv", result.to_csv())
    _write(out / "differences.csv", result.differences_csv())
    _write(out / "run.log", "\n".join(result.log_lines()) + "\n")
    return 2 if result.invalid else 0


def cmd_oracle_check(config, out: Path, args) -> int:
    if args.seed is not None:
        config = dict(config, seed=args.seed)
    rows = run_oracle_checks(config)
    _write(out / "oracle_check.csv", checks_csv(rows))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        print("FAILED: " + " ".join(failed), file=sys.stderr)
        return 2
    print(f"all {len(rows)} checks passed")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "scenario": cmd_scenario,
    "sweep": cmd_sweep,
    "traintest": cmd_traintest,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out, args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code is None else int(exc.code)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"otrsens: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
