"""``scout`` command line: generate, pipeline, triage, bench, sweep, perturb.

Exit codes: 0 success, 2 configuration error, 3 missing input, 4 stage failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path
from typing import Sequence

from .bundle import ModelFormatError, TriageModel, load_model, save_model
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .correction import build_corrected_training_set, export_soft_targets
from .evaluation import cost_sweep, latency_bench, perturbation_check, run_protocol
from .evaluation.protocol import OA_CAL, ProtocolResult
from .evaluation.reports import format_table, write_json
from .features import (
    FeatureSchema,
    HistoryIndex,
    SchemaError,
    extract_dataset,
    feature_from_record,
    write_schema_manifest,
)
from .scoring import SchemaMismatchError
from .simulator import benchmark_summary, export_dataset, generate_benchmark, import_dataset
from .simulator.io import DatasetFormatError, read_header, record_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_STAGE = 4


class MissingInputError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (ConfigError, MissingInputError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------- helpers

def _config(args) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        cfg = load_config(path)
    else:
        cfg = parse_config({})
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    for flag, key in (("c_fp", "cost.c_fp"), ("c_fn", "cost.c_fn"), ("c_auto", "cost.c_auto")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    if args.out is not None:
        overrides["output_dir"] = args.out
    return cfg.with_overrides(**overrides) if overrides else cfg


def _dataset(cfg: ExperimentConfig, seed: int, path: str | None = None):
    path = path or cfg.dataset
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"dataset not found: {p}")
        with stage("load-dataset"):
            return import_dataset(p)
    with stage("generate"):
        return generate_benchmark(cfg.sim_config(seed), cfg.stress_scenario())


def _schema(cfg: ExperimentConfig) -> FeatureSchema:
    return FeatureSchema(cfg.window_mode, cfg.simulator.window_seconds, cfg.simulator.timesteps_per_window)


def _extract(cfg: ExperimentConfig, dataset):
    return extract_dataset(dataset, cfg.window_mode, window_seconds=cfg.simulator.window_seconds,
                           timesteps=cfg.simulator.timesteps_per_window)


def _protocol(cfg: ExperimentConfig, dataset, seed: int) -> ProtocolResult:
    with stage("features"):
        fvs = _extract(cfg, dataset)
    with stage("protocol"):
        return run_protocol(
            dataset, cfg.split_spec(), cfg.scorer_settings(), cfg.calibration_settings(seed),
            cfg.correction_settings(), cfg.cost_model(), window_mode=cfg.window_mode, features=fvs,
        )


def _deployable(cfg: ExperimentConfig, result: ProtocolResult) -> TriageModel:
    modes = cfg.correction.modes
    mode = "posterior_soft" if "posterior_soft" in modes else modes[0]
    fitted = next(m for m in result.models if m.mode == mode)
    if OA_CAL in cfg.calibration.methods:
        cal_key = "oa_cal"
    else:
        cal_key = next((k for k in fitted.calibrators if k != "uncal"), "uncal")
    return TriageModel(
        scorer=fitted.scorer,
        calibrator=fitted.calibrators[cal_key],
        cost=cfg.cost_model(),
        window_mode=cfg.window_mode,
        window_seconds=cfg.simulator.window_seconds,
        timesteps=cfg.simulator.timesteps_per_window,
        config_hash=cfg.config_hash(),
        metadata={"mode": mode, "calibration": cal_key, "partition": fitted.partition},
    )


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    for seed in cfg.seeds:
        with stage("generate"):
            dataset = generate_benchmark(cfg.sim_config(seed), cfg.stress_scenario())
        suffix = "" if len(cfg.seeds) == 1 else f"_seed{seed}"
        with stage("export"):
            data_path = export_dataset(dataset, out / f"dataset{suffix}.jsonl",
                                       include_post_failure=cfg.simulator.include_post_failure,
                                       offsets=cfg.sim_config(seed).telemetry_offsets)
            manifest = write_schema_manifest(out / f"dataset{suffix}.schema.json", _schema(cfg))
            summary = benchmark_summary(dataset)
            report = {"seed": seed, "config_hash": cfg.config_hash(), "dataset": data_path.name,
                      "schema_manifest": manifest.name, "summary": summary,
                      "n_dense_features": len(_schema(cfg).names)}
            write_json(report, out / f"generation_report{suffix}.json")
        _emit(report)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    if args.dataset:
        cfg = cfg.with_overrides(dataset=args.dataset)
    out = _out_dir(cfg)
    summary = {}
    for seed in cfg.seeds:
        dataset = _dataset(cfg, seed)
        result = _protocol(cfg, dataset, seed)
        sub = out if len(cfg.seeds) == 1 else out / f"seed_{seed}"
        sub.mkdir(parents=True, exist_ok=True)
        with stage("export"):
            model = _deployable(cfg, result)
            save_model(model, sub / "model.json")
            write_schema_manifest(sub / "features.schema.json", _schema(cfg))
            report = {"config_hash": cfg.config_hash(), "seed": seed, **result.to_dict()}
            write_json(report, sub / "report.json")
            (sub / "report.txt").write_text(
                f"config {cfg.config_hash()}  seed {seed}  split {cfg.split.kind}\n\n" + format_table(result.rows)
            )
            corr = cfg.correction
            if "posterior_soft" in corr.modes and corr.R_observed is not None and corr.R_observed < corr.R_oracle:
                fitted = next(m for m in result.models if m.mode == "posterior_soft")
                examples = build_corrected_training_set(dataset, corr.R_observed, corr.R_oracle, fitted.prior)
                export_soft_targets(examples, sub / "soft_targets.jsonl", fitted.prior,
                                    corr.R_observed, corr.R_oracle)
        summary[str(seed)] = {k: v.cost_at_tau for k, v in result.rows.items()}
        sys.stdout.write(format_table(result.rows))
    write_json({"config_hash": cfg.config_hash(), "cost_at_tau": summary}, out / "summary.json")
    return EXIT_OK


def _offsets(window_seconds: float, timesteps: int) -> list[float]:
    if timesteps == 1:
        return [0.0]
    step = window_seconds / (timesteps - 1)
    return [-window_seconds + k * step for k in range(timesteps)]


def cmd_triage(args) -> int:
    path = Path(args.model)
    if not path.exists():
        raise MissingInputError(f"model not found: {path}")
    with stage("load-model"):
        model = load_model(path)
    history = HistoryIndex()
    if args.history:
        hp = Path(args.history)
        if not hp.exists():
            raise MissingInputError(f"history dataset not found: {hp}")
        with stage("load-history"):
            history = HistoryIndex.from_runs(import_dataset(hp))
    offsets = _offsets(model.window_seconds, model.timesteps)
    names = model.feature_names
    src = open(args.input, encoding="utf-8") if args.input else sys.stdin
    dst = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for k, line in enumerate(src):
            if not line.strip():
                continue
            d = None
            try:
                d = json.loads(line)
                if not isinstance(d, dict):
                    raise ValueError("record must be a JSON object")
                if "format" in d:
                    header = read_header(line)
                    offsets = header["telemetry_offsets"]
                    continue
                if "dense" in d:
                    result = model.triage(feature_from_record(d, names))
                else:
                    run = record_from_dict(d, offsets)
                    result = model.triage_run(run, history)
                    history.add(run.test_id, run.start_time, run.duration, run.failed)
                out = result.to_dict()
            except (ValueError, KeyError, TypeError, SchemaError, SchemaMismatchError, DatasetFormatError) as exc:
                run_id = d.get("run_id") if isinstance(d, dict) else None
                out = {"line": k + 1, "run_id": run_id, "error": f"{type(exc).__name__}: {exc}"}
            dst.write(json.dumps(out) + "\n")
            dst.flush()
    finally:
        if args.input:
            src.close()
        if args.output:
            dst.close()
    return EXIT_OK


def _model_and_dataset(args, cfg):
    seed = cfg.seeds[0]
    dataset = _dataset(cfg, seed, getattr(args, "dataset", None))
    if args.model:
        path = Path(args.model)
        if not path.exists():
            raise MissingInputError(f"model not found: {path}")
        with stage("load-model"):
            model = load_model(path)
    else:
        model = _deployable(cfg, _protocol(cfg, dataset, seed))
    return model, dataset


def cmd_bench(args) -> int:
    cfg = _config(args)
    model, dataset = _model_and_dataset(args, cfg)
    with stage("bench"):
        report = latency_bench(model, dataset, n_iters=args.n_iters)
    d = {"config_hash": cfg.config_hash(), **report.to_dict()}
    if args.out:
        write_json(d, _out_dir(cfg) / "latency.json")
    _emit(d)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    all_wins = {}
    for seed in cfg.seeds:
        dataset = _dataset(cfg, seed)
        result = _protocol(cfg, dataset, seed)
        with stage("sweep"):
            # uncalibrated first: it wins exact ties, which makes "never best" strict
            preds = {}
            for name, p in result.predictions.items():
                if name.endswith("/uncal"):
                    preds[name] = p
            preds.update({k: v for k, v in result.predictions.items() if k not in preds})
            dmap = cost_sweep(preds, result.y_eval, cfg.sweep.c_fn, cfg.sweep.c_auto, c_fp=cfg.cost.c_fp)
        suffix = "" if len(cfg.seeds) == 1 else f"_seed{seed}"
        write_json({"config_hash": cfg.config_hash(), "seed": seed, "wins": dmap.wins(),
                    "cells": dmap.records()}, out / f"dominance{suffix}.json")
        all_wins[str(seed)] = dmap.wins()
    _emit({"config_hash": cfg.config_hash(), "wins": all_wins})
    return EXIT_OK


def cmd_perturb(args) -> int:
    cfg = _config(args)
    model, dataset = _model_and_dataset(args, cfg)
    with stage("perturb"):
        fvs = extract_dataset(dataset, model.window_mode, window_seconds=model.window_seconds,
                              timesteps=model.timesteps)
        deltas = [float(x) for x in args.deltas.split(",")]
        curves = [perturbation_check(model.scorer, fvs, f, deltas).to_dict() for f in args.feature]
    d = {"config_hash": cfg.config_hash(), "curves": curves}
    if args.out:
        write_json(d, _out_dir(cfg) / "perturbation.json")
    _emit(d)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON or YAML)")
    common.add_argument("--seed", type=int, help="override the config's seed list with one seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--c-fp", dest="c_fp", type=float)
    common.add_argument("--c-fn", dest="c_fn", type=float)
    common.add_argument("--c-auto", dest="c_auto", type=float)

    parser = argparse.ArgumentParser(prog="scout", description="Flaky-failure triage pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate a benchmark dataset")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pipeline", parents=[common], help="train, correct, calibrate and evaluate")
    p.add_argument("--dataset", help="dataset file (overrides the config)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("triage", parents=[common], help="stream rerun/escalate decisions")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="JSONL input (default stdin)")
    p.add_argument("--output", help="JSONL output (default stdout)")
    p.add_argument("--history", help="dataset whose runs seed the history index")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("bench", parents=[common], help="latency percentiles of the triage path")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--n-iters", dest="n_iters", type=int, default=10_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", parents=[common], help="cost dominance map over (c_fn, c_auto)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("perturb", parents=[common], help="response of p to shifts of dense features")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--feature", action="append", required=True)
    p.add_argument("--deltas", default="-2,-1,0,1,2")
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scout: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"scout: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (StageError, ModelFormatError) as exc:
        print(f"scout: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
