"""Experiment orchestration: generate/train/sweep/evaluate workflows.

A run executes dataset -> partition -> train -> sweep -> hypervolume and
writes its artifacts into the output directory:

  config.echo.json   fully resolved configuration (re-runnable)
  rounds.jsonl       one per-round training log per line
  hv.csv             round,client_id,hv   (per-round tracking sweeps)
  sweep.csv          client_id,lambda_perf,lambda_fair,error_rate,dp_disparity
  global.ckpt        communicated/monolithic parameters
  client_{k}.ckpt    per-client communicated + hypernetwork parameters

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import moo
from .data import CsvSchema, TabularDataset, generate_synthetic, load_csv, partition, save_csv, standardize
from .errors import ConfigurationError, DataError, EvaluationError, TrainingDivergedError
from .federation import (
    BaselineResult,
    PraFFLResult,
    RoundLog,
    TrainConfig,
    baseline_spec,
    train_fedavg_plain,
    train_praffl,
    train_weighted_sum_baseline,
)
from .models import (
    CommunicatedModel,
    Hypernetwork,
    communicated_spec,
    hypernetwork_spec,
    load_checkpoint,
    personalized_spec,
    save_checkpoint,
)
from .moo import ReferencePoint, SolutionSet, hypervolume_2d, sweep_grid
from .objectives import ObjectivePoint, PointKind, PreferenceVector

ALGORITHMS = ("praffl", "weighted_sum", "fedavg")

SWEEP_HEADER = ["client_id", "lambda_perf", "lambda_fair", "error_rate", "dp_disparity"]
HV_HEADER = ["round", "client_id", "hv"]


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    n: int = 0
    seed: int = 0
    path: str = ""
    schema: CsvSchema = CsvSchema()


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    split: list[list[float]]
    train: TrainConfig
    algorithm: str
    sweep_count: int
    hv_ref: tuple[float, float]
    out_dir: str

    def to_dict(self) -> dict:
        dataset: dict = {"kind": self.dataset.kind}
        if self.dataset.kind == "synthetic":
            dataset.update({"n": self.dataset.n, "seed": self.dataset.seed})
        else:
            dataset.update(
                {
                    "path": self.dataset.path,
                    "schema": {
                        "feature_prefix": self.dataset.schema.feature_prefix,
                        "sensitive_column": self.dataset.schema.sensitive_column,
                        "label_column": self.dataset.schema.label_column,
                    },
                }
            )
        return {
            "dataset": dataset,
            "split": self.split,
            "train": {
                "clients": self.train.clients,
                "rounds": self.train.rounds,
                "tau_c": self.train.tau_c,
                "tau_p": self.train.tau_p,
                "local_epochs": self.train.local_epochs,
                "eta": self.train.eta,
                "n_lambda": self.train.n_lambda,
                "participation": self.train.participation,
                "lambda_check": [self.train.lambda_check.lambda1, self.train.lambda_check.lambda2],
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
            },
            "algorithm": self.algorithm,
            "sweep_count": self.sweep_count,
            "hv_ref": list(self.hv_ref),
            "out_dir": self.out_dir,
        }


def _need(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigurationError(f"missing config field: {path}.{key}" if path else f"missing config field: {key}")
    return mapping[key]


def parse_config(raw: dict, seed_override: int | None = None, out_override: str | None = None,
                 ref_override: tuple[float, float] | None = None) -> ExperimentConfig:
    dataset_raw = _need(raw, "dataset", "")
    kind = _need(dataset_raw, "kind", "dataset")
    if kind == "synthetic":
        dataset = DatasetConfig(
            kind="synthetic",
            n=int(_need(dataset_raw, "n", "dataset")),
            seed=int(seed_override if seed_override is not None else _need(dataset_raw, "seed", "dataset")),
        )
    elif kind == "csv":
        schema_raw = dataset_raw.get("schema", {})
        dataset = DatasetConfig(
            kind="csv",
            path=str(_need(dataset_raw, "path", "dataset")),
            schema=CsvSchema(
                feature_prefix=schema_raw.get("feature_prefix", "x"),
                sensitive_column=schema_raw.get("sensitive_column", "sensitive"),
                label_column=schema_raw.get("label_column", "label"),
            ),
        )
    else:
        raise ConfigurationError(f"dataset.kind must be 'synthetic' or 'csv', got {kind!r}")

    split = _need(raw, "split", "")
    train_raw = _need(raw, "train", "")
    lambda_check = train_raw.get("lambda_check", [0.5, 0.5])
    try:
        train = TrainConfig(
            clients=int(_need(train_raw, "clients", "train")),
            rounds=int(_need(train_raw, "rounds", "train")),
            tau_c=int(_need(train_raw, "tau_c", "train")),
            tau_p=int(_need(train_raw, "tau_p", "train")),
            local_epochs=int(_need(train_raw, "local_epochs", "train")),
            eta=float(_need(train_raw, "eta", "train")),
            n_lambda=int(_need(train_raw, "n_lambda", "train")),
            participation=float(train_raw.get("participation", 1.0)),
            lambda_check=PreferenceVector(float(lambda_check[0]), float(lambda_check[1])),
            batch_size=int(_need(train_raw, "batch_size", "train")),
            seed=int(seed_override if seed_override is not None else _need(train_raw, "seed", "train")),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"train: {exc}") from None

    algorithm = _need(raw, "algorithm", "")
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    sweep_count = int(raw.get("sweep_count", 1001))
    if sweep_count < 2:
        raise ConfigurationError("sweep_count must be >= 2")
    ref = ref_override if ref_override is not None else tuple(raw.get("hv_ref", (1.0, 1.0)))
    if len(ref) != 2:
        raise ConfigurationError("hv_ref must be a pair")
    out_dir = out_override if out_override is not None else _need(raw, "out_dir", "")
    return ExperimentConfig(
        dataset=dataset,
        split=[[float(v) for v in row] for row in split],
        train=train,
        algorithm=algorithm,
        sweep_count=sweep_count,
        hv_ref=(float(ref[0]), float(ref[1])),
        out_dir=str(out_dir),
    )


def load_config_file(path, args) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    ref = tuple(float(v) for v in args.ref.split(",")) if getattr(args, "ref", None) else None
    return parse_config(
        raw,
        seed_override=getattr(args, "seed", None),
        out_override=getattr(args, "out", None),
        ref_override=ref,
    )


def build_dataset(cfg: ExperimentConfig) -> TabularDataset:
    if cfg.dataset.kind == "synthetic":
        return standardize(generate_synthetic(cfg.dataset.n, cfg.dataset.seed))
    return load_csv(cfg.dataset.path, cfg.dataset.schema)


def _float_cell(value: float) -> str:
    return repr(float(value))


def write_sweep_csv(path, sweeps: list[SolutionSet]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for client_id, sweep in enumerate(sweeps):
            for point, pref in zip(sweep.points, sweep.provenance):
                writer.writerow(
                    [
                        client_id,
                        _float_cell(pref.lambda1),
                        _float_cell(pref.lambda2),
                        _float_cell(point.l1),
                        _float_cell(point.l2),
                    ]
                )


def read_sweep_csv(path) -> dict[int, SolutionSet]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"sweep file not found: {path}")
    per_client: dict[int, tuple[list, list]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SWEEP_HEADER:
            raise DataError(f"{path}: expected header {','.join(SWEEP_HEADER)}")
        for row in reader:
            client = int(row[0])
            points, prefs = per_client.setdefault(client, ([], []))
            points.append(ObjectivePoint(float(row[3]), float(row[4]), PointKind.EVAL_METRIC))
            prefs.append(PreferenceVector(float(row[1]), float(row[2])))
    return {k: SolutionSet(points, prefs) for k, (points, prefs) in per_client.items()}


def write_hv_csv(path, rounds: list[RoundLog]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HV_HEADER)
        for log in rounds:
            for client_id, hv in enumerate(log.client_hv):
                writer.writerow([log.round, client_id, _float_cell(hv)])


def write_rounds_jsonl(path, rounds: list[RoundLog]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for log in rounds:
            fh.write(json.dumps(log.to_json_dict()) + "\n")


def _train(cfg: ExperimentConfig, part) -> PraFFLResult | BaselineResult:
    ref = ReferencePoint(*cfg.hv_ref)
    if cfg.algorithm == "praffl":
        return train_praffl(part, cfg.train, hv_ref=ref)
    if cfg.algorithm == "weighted_sum":
        return train_weighted_sum_baseline(part, cfg.train, hv_ref=ref)
    return train_fedavg_plain(part, cfg.train, hv_ref=ref)


def _final_sweeps(cfg: ExperimentConfig, part, result) -> list[SolutionSet]:
    prefs = sweep_grid(cfg.sweep_count)
    sweeps = []
    for k, ds in enumerate(part.clients):
        if cfg.algorithm == "praffl":
            sweeps.append(moo.evaluate_sweep(result.communicated, result.hypernetworks[k], ds, prefs))
        else:
            model = result.model
            sweeps.append(
                moo.sweep_with_predictor(
                    lambda features, pref: model.predict(
                        features, pref if model.preference_input else None
                    ),
                    ds,
                    prefs,
                )
            )
    return sweeps


def _save_checkpoints(cfg: ExperimentConfig, out: Path, result) -> None:
    if cfg.algorithm == "praffl":
        save_checkpoint(out / "global.ckpt", result.communicated.params)
        for k, hn in enumerate(result.hypernetworks):
            save_checkpoint(out / f"client_{k}.ckpt", result.communicated.params, hn.params)
    else:
        save_checkpoint(out / "global.ckpt", result.model.params)


def _prepare_out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from None
    return out


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config.echo.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_run(args) -> int:
    cfg = load_config_file(args.config, args)
    out = _prepare_out_dir(cfg)
    _echo_config(cfg, out)
    dataset = build_dataset(cfg)
    part = partition(dataset, cfg.split, cfg.train.seed)
    result = _train(cfg, part)
    write_rounds_jsonl(out / "rounds.jsonl", result.rounds)
    write_hv_csv(out / "hv.csv", result.rounds)
    write_sweep_csv(out / "sweep.csv", _final_sweeps(cfg, part, result))
    _save_checkpoints(cfg, out, result)
    print(f"run complete: artifacts in {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config_file(args.config, args)
    out = _prepare_out_dir(cfg)
    _echo_config(cfg, out)
    dataset = build_dataset(cfg)
    part = partition(dataset, cfg.split, cfg.train.seed)
    result = _train(cfg, part)
    write_rounds_jsonl(out / "rounds.jsonl", result.rounds)
    write_hv_csv(out / "hv.csv", result.rounds)
    _save_checkpoints(cfg, out, result)
    print(f"training complete: checkpoints in {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config_file(args.config, args)
    out = _prepare_out_dir(cfg)
    dataset = build_dataset(cfg)
    part = partition(dataset, cfg.split, cfg.train.seed)
    prefs = sweep_grid(cfg.sweep_count)
    num_features = dataset.num_features
    sweeps = []
    if cfg.algorithm == "praffl":
        head = personalized_spec()
        comm_spec = communicated_spec(num_features)
        hyper_spec = hypernetwork_spec(head)
        for k, ds in enumerate(part.clients):
            ckpt = Path(cfg.out_dir) / f"client_{k}.ckpt"
            if not ckpt.exists():
                raise DataError(f"missing checkpoint: {ckpt}")
            comm_params, hyper_params = load_checkpoint(ckpt)
            if hyper_params is None:
                raise DataError(f"{ckpt}: missing hypernetwork parameters")
            cm = CommunicatedModel(comm_spec, comm_params)
            hn = Hypernetwork(hyper_spec, hyper_params, head)
            sweeps.append(moo.evaluate_sweep(cm, hn, ds, prefs))
    else:
        ckpt = Path(cfg.out_dir) / "global.ckpt"
        if not ckpt.exists():
            raise DataError(f"missing checkpoint: {ckpt}")
        params, _ = load_checkpoint(ckpt)
        preference_input = cfg.algorithm == "weighted_sum"
        from .federation import BaselineModel

        model = BaselineModel(baseline_spec(num_features, preference_input), params, preference_input)
        for ds in part.clients:
            sweeps.append(
                moo.sweep_with_predictor(
                    lambda features, pref: model.predict(features, pref if preference_input else None),
                    ds,
                    prefs,
                )
            )
    write_sweep_csv(out / "sweep.csv", sweeps)
    print(f"sweep written to {out / 'sweep.csv'}")
    return 0


def cmd_gen_data(args) -> int:
    ds = generate_synthetic(args.n, args.seed)
    save_csv(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def _client_hvs(sweeps: dict[int, SolutionSet], ref: ReferencePoint) -> dict[int, float]:
    return {client: hypervolume_2d(s, ref) for client, s in sorted(sweeps.items())}


def cmd_hv(args) -> int:
    ref = ReferencePoint(*(float(v) for v in args.ref.split(",")))
    hvs = _client_hvs(read_sweep_csv(args.sweep), ref)
    print("client_id,hv")
    for client, hv in hvs.items():
        print(f"{client},{hv}")
    print(f"mean,{float(np.mean(list(hvs.values())))}")
    return 0


def cmd_compare(args) -> int:
    ref = ReferencePoint(*(float(v) for v in args.ref.split(",")))
    print("run,mean_client_hv")
    for path in args.sweeps:
        hvs = _client_hvs(read_sweep_csv(path), ref)
        print(f"{path},{float(np.mean(list(hvs.values())))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="praffl", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--seed", type=int, help="override dataset and training seeds")
        p.add_argument("--ref", help="override the hypervolume reference point, e.g. 1.0,1.0")

    run = sub.add_parser("run", help="full dataset->train->sweep->hv pipeline")
    add_config_flags(run)
    run.set_defaults(func=cmd_run)

    train = sub.add_parser("train", help="train and write checkpoints only")
    add_config_flags(train)
    train.set_defaults(func=cmd_train)

    sweep = sub.add_parser("sweep", help="sweep existing checkpoints over the preference grid")
    add_config_flags(sweep)
    sweep.set_defaults(func=cmd_sweep)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    hv = sub.add_parser("hv", help="hypervolume table of one sweep.csv")
    hv.add_argument("--sweep", required=True)
    hv.add_argument("--ref", default="1.0,1.0")
    hv.set_defaults(func=cmd_hv)

    compare = sub.add_parser("compare", help="compare several runs' sweep.csv under one reference")
    compare.add_argument("sweeps", nargs="+")
    compare.add_argument("--ref", default="1.0,1.0")
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (DataError, EvaluationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
