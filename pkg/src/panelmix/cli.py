"""Batch command-line front end.

Subcommands: simulate | fit | gamma | score | diagnose.  Every command is a
pure function of its input files, flags and seed; outputs land in --out with
fixed file names plus a run manifest.  Seeds are mandatory where randomness
is involved (the MSD_SEED environment variable is accepted as a fallback;
explicit flags win).
"""

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import association, diagnostics, gibbs, simgen
from .association import EmptySubpopulationError
from .dataset import DataError, load_dataset, save_dataset
from .draws import read_draws
from .model import ConfigError, ModelConfig
from .schema import SchemaError, SubpopulationQuery

MANIFEST_NAME = "manifest.json"


class CliError(SystemExit):
    def __init__(self, message):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _file_sha256(*paths) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def _prepare_out_dir(out, force: bool) -> str:
    os.makedirs(out, exist_ok=True)
    manifest = os.path.join(out, MANIFEST_NAME)
    if os.path.exists(manifest) and not force:
        raise CliError(f"{out} already holds a manifest; use --force or a fresh directory")
    return manifest


def _write_manifest(path, command, args, seed, outputs, started,
                    config_hash=None, dataset_hash=None) -> None:
    doc = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": seed,
        "config_hash": config_hash,
        "dataset_hash": dataset_hash,
        "started_utc": started,
        "finished_utc": _utc_now(),
        "outputs": outputs,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _require_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("MSD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"MSD_SEED={env!r} is not an integer") from None
    raise CliError("an explicit --seed is required (or set MSD_SEED)")


# --- simulate ------------------------------------------------------------------

def cmd_simulate(args) -> None:
    started = _utc_now()
    seed = _require_seed(args)
    if args.case not in (1, 2, 3):
        raise CliError("--case must be 1, 2 or 3")
    n = args.n if args.n is not None else (4500 if args.case == 3 else 4000)
    manifest = _prepare_out_dir(args.out, args.force)

    spec = simgen.make_spec(args.case, n, seed)
    data_rng = np.random.default_rng([seed, args.case, 1])
    dataset = simgen.generate(spec, data_rng)

    paths = {
        "subjects": os.path.join(args.out, "subjects.csv"),
        "observations": os.path.join(args.out, "observations.csv"),
        "schema": os.path.join(args.out, "schema.yaml"),
        "dgp": os.path.join(args.out, "dgp.json"),
        "oracle": os.path.join(args.out, "oracle.csv"),
    }
    save_dataset(dataset, paths["subjects"], paths["observations"], paths["schema"])
    spec.to_json(paths["dgp"])

    oracle_rng = np.random.default_rng([seed, args.case, 2])
    rows = []
    for expr in args.oracle_subpop:
        query = SubpopulationQuery.parse(expr, simgen.SIM_COVARIATES)
        rows.extend(simgen.oracle_gamma(spec, args.oracle_m, query, oracle_rng))
    simgen.write_oracle_csv(rows, paths["oracle"])

    _write_manifest(manifest, "simulate", args, seed, paths, started,
                    dataset_hash=_file_sha256(*paths.values()))
    print(f"simulated case {args.case} (n={n}) into {args.out}")


# --- fit -----------------------------------------------------------------------

def _run_one_chain(config, dataset, seed, chain, draws_path, trace_path, progress):
    rng = np.random.default_rng([seed, chain])
    gibbs.run_chain(
        config, dataset, rng, draws_path=draws_path, trace_path=trace_path,
        chain_seed=[seed, chain], progress=progress,
    )


def cmd_fit(args) -> None:
    started = _utc_now()
    seed = _require_seed(args)
    manifest = _prepare_out_dir(args.out, args.force)

    subjects = os.path.join(args.data, "subjects.csv")
    observations = os.path.join(args.data, "observations.csv")
    schema = os.path.join(args.data, "schema.yaml")
    for p in (subjects, observations, schema):
        if not os.path.exists(p):
            raise CliError(f"missing dataset file {p}")
    dataset = load_dataset(subjects, observations, schema)
    config = ModelConfig.from_yaml(args.config) if args.config else ModelConfig()
    config.seed = seed

    outputs = {}
    jobs = []
    for chain in range(1, args.chains + 1):
        draws_path = os.path.join(args.out, f"draws_chain{chain}.bin")
        trace_path = os.path.join(args.out, f"trace_chain{chain}.csv")
        jobs.append((chain, draws_path, trace_path))
        outputs[f"draws_chain{chain}"] = draws_path
        outputs[f"trace_chain{chain}"] = trace_path
    if args.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_run_one_chain, config, dataset, seed, chain,
                            draws_path, trace_path, args.progress)
                for chain, draws_path, trace_path in jobs
            ]
            for fut in futures:
                fut.result()
    else:
        for chain, draws_path, trace_path in jobs:
            _run_one_chain(config, dataset, seed, chain, draws_path, trace_path,
                           args.progress)

    _write_manifest(manifest, "fit", args, seed, outputs, started,
                    config_hash=config.hash(),
                    dataset_hash=_file_sha256(subjects, observations, schema))
    print(f"fit complete: {args.chains} chain(s) in {args.out}")


# --- gamma ------------------------------------------------------------------------

def cmd_gamma(args) -> None:
    started = _utc_now()
    seed = _require_seed(args)
    manifest = _prepare_out_dir(args.out, args.force)
    meta, records = read_draws(args.draws)
    if not records:
        raise CliError(f"{args.draws} holds no saved sweeps")
    query = SubpopulationQuery.parse(args.subpop, meta.covariates)
    trajectories = association.gamma_trajectories(
        records, meta, query, args.R, seed, weight_mode=args.weights
    )
    out_csv = os.path.join(args.out, "gamma.csv")
    association.write_trajectory_csv(trajectories, out_csv)
    _write_manifest(manifest, "gamma", args, seed, {"gamma": out_csv}, started,
                    dataset_hash=_file_sha256(args.draws))
    print(f"gamma trajectories written to {out_csv}")


# --- score -------------------------------------------------------------------------

def cmd_score(args) -> None:
    started = _utc_now()
    manifest = _prepare_out_dir(args.out, args.force)
    estimate_rows = []
    for path in args.estimate:
        estimate_rows.extend(association.read_trajectory_csv(path))
    oracle_rows = simgen.read_oracle_csv(args.oracle)
    try:
        rows = simgen.score_mae(estimate_rows, oracle_rows)
    except ValueError as err:
        raise CliError(str(err)) from None
    out_csv = os.path.join(args.out, "mae.csv")
    simgen.write_score_csv(rows, out_csv)
    _write_manifest(manifest, "score", args, None, {"mae": out_csv}, started,
                    dataset_hash=_file_sha256(args.oracle, *args.estimate))
    print(f"scores written to {out_csv}")


# --- diagnose -----------------------------------------------------------------------

def cmd_diagnose(args) -> None:
    started = _utc_now()
    manifest = _prepare_out_dir(args.out, args.force)
    try:
        series = diagnostics.read_trace(args.trace)
    except ValueError as err:
        raise CliError(str(err)) from None
    report = diagnostics.diagnose(series, max_lag=args.lags)
    out_json = os.path.join(args.out, "diagnostics.json")
    diagnostics.write_diagnostics(report, out_json)
    _write_manifest(manifest, "diagnose", args, None, {"diagnostics": out_json}, started,
                    dataset_hash=_file_sha256(args.trace))
    print(f"diagnostics written to {out_json}")


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelmix",
        description="Mixture-of-factor-models inference for mixed-scale longitudinal surveys",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset and its oracle")
    p.add_argument("--case", type=int, required=True, help="generator case: 1, 2 or 3")
    p.add_argument("--n", type=int, default=None, help="sample size (case 3: total over strata)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle-m", type=int, default=8000, dest="oracle_m",
                   help="forward-simulation size for the oracle table")
    p.add_argument("--oracle-subpop", action="append",
                   default=None, help="subpopulation expressions for the oracle (repeatable)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a dataset directory")
    p.add_argument("--data", required=True, help="directory with subjects/observations/schema")
    p.add_argument("--config", default=None, help="model config YAML")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1,
                   help="run up to this many chains as parallel processes")
    p.add_argument("--out", required=True)
    p.add_argument("--progress", type=int, default=None, help="print every k sweeps")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gamma", help="posterior-predictive gamma trajectories")
    p.add_argument("--draws", required=True)
    p.add_argument("--R", type=int, default=2500, help="predictive subjects per saved sweep")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subpop", default="", help='e.g. "x=1" or "gender=1;race=2,3"')
    p.add_argument("--weights", choices=("adjusted", "unadjusted"), default="adjusted")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("score", help="mean absolute error of trajectories against an oracle")
    p.add_argument("--estimate", action="append", required=True,
                   help="trajectory CSV (repeatable)")
    p.add_argument("--oracle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("diagnose", help="autocorrelations and running means from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--lags", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "oracle_subpop", 0) is None:
        args.oracle_subpop = ["", "x=0", "x=1"]
    try:
        args.func(args)
    except (SchemaError, DataError, ConfigError, EmptySubpopulationError) as err:
        raise CliError(str(err)) from err
    return 0


if __name__ == "__main__":
    sys.exit(main())
