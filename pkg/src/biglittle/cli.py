"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .cascade import MODES, CascadeConfig, ConfigError, write_traces
from .cost import CSV_FIELDS, load_profile
from .data import DATASET_ENV, HarDataError, Sensor, load_ucihar, rescale, resolve_root, write_cache
from .distance import MANHATTAN_THRESHOLD, METRICS
from .experiments import (CACHE_NAME, SCOPES, MissingArtifactError, load_models, load_prepared,
                          model_name, rank_sensors, sensor_study, simulate, train_quantized)
from .export import export_header
from .graph import GraphError, ModelGraph, ModelKind, total_params
from .trainer import EmptyClassError, Hyperparams, write_history_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MISSING = 3

log = logging.getLogger("biglittle")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dataset(args) -> Path:
    root = resolve_root(args.dataset)
    if root is None:
        raise UsageError(f"no dataset given: pass --dataset or set ${DATASET_ENV}")
    return root


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_prepare(args) -> int:
    root = _dataset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, rescaler = rescale(load_ucihar(root))
    write_cache(dataset, out / CACHE_NAME)
    _write_json(out / "rescaler.json", rescaler.to_dict())
    print(f"cached {len(dataset.y_train)} train / {len(dataset.y_test)} test windows in {out / CACHE_NAME}")
    return EXIT_OK


def _hyperparams(args) -> Hyperparams:
    doc = Hyperparams.from_json(args.hyperparams).to_dict() if args.hyperparams else {}
    doc["seed"] = args.seed
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    if args.learning_rate is not None:
        doc["learning_rate"] = args.learning_rate
    return Hyperparams(**doc)


def _kinds(model: str, target) -> list:
    if model == "big":
        return [ModelKind.big()]
    if model == "dual":
        return [ModelKind.dual()]
    if model == "little":
        if target is None:
            return [ModelKind.little(k) for k in range(1, 7)]
        return [ModelKind.little(target)]
    return [ModelKind.big()] + [ModelKind.little(k) for k in range(1, 7)] + [ModelKind.dual()]


def cmd_train(args) -> int:
    dataset = load_prepared(_dataset(args))
    hp = _hyperparams(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in _kinds(args.model, args.target):
        graph, history = train_quantized(kind, dataset.X_train, dataset.y_train, hp, args.sensor,
                                         args.activation_ranges)
        name = model_name(kind, args.sensor)
        graph.save(out / f"{name}.json")
        write_history_csv(history, out / f"{name}_history.csv")
        print(f"{name}: {total_params(graph)} params -> {out / (name + '.json')}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = CascadeConfig(args.config, args.metric, args.threshold)
    graphs = load_models(args.models, config)
    profile = load_profile(args.device)
    freq = profile.check_freq(args.freq)
    dataset = load_prepared(_dataset(args))
    report, traces = simulate(dataset, graphs, config, profile, freq, args.scope)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(report["row"])
    _write_json(out / "report.json", report)
    write_traces(traces, out / "trace.jsonl")
    row = report["row"]
    print(f"{row['config']} {row['scope']}: accuracy {row['accuracy']:.4f}, big_count {row['big_count']}, "
          f"latency {row['latency_ms']:.1f} ms, energy {row['energy_mJ']:.3f} mJ")
    return EXIT_OK


def cmd_sensor_study(args) -> int:
    from .estimators import CNNClassifier

    models_dir = Path(args.models)
    models = {}
    for sensor in Sensor:
        littles = {}
        for k in range(1, 7):
            path = models_dir / f"{model_name(ModelKind.little(k), sensor)}.json"
            if not path.is_file():
                raise MissingArtifactError(f"sensor study needs {path.name}; train it with "
                                           f"`train --model little --sensor {sensor.prefix}`")
            littles[k] = CNNClassifier.from_graph(ModelGraph.load(path))
        models[sensor] = littles
    dataset = load_prepared(_dataset(args))
    table = sensor_study(models, dataset.X_test, dataset.y_test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sensor_study.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sensor"] + [f"activity_{k}" for k in range(1, 7)] + ["overall"])
        for sensor, row in table.items():
            writer.writerow([sensor] + [f"{row['per_activity'][k]:.6f}" for k in range(1, 7)]
                            + [f"{row['overall']:.6f}"])
    _write_json(out / "sensor_study.json", {"table": table, "ranking": rank_sensors(table)})
    print("ranking: " + ", ".join(rank_sensors(table)))
    return EXIT_OK


def cmd_export_header(args) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise MissingArtifactError(f"no manifest at {path}")
    graph = ModelGraph.load(path)
    out = Path(args.out) if args.out else path.with_suffix(".h")
    export_header(graph, out, args.var)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biglittle", description="Big/little HAR cascade experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, models=False):
        p.add_argument("--dataset", help=f"UCI-HAR root, prepared dir or cache file (default ${DATASET_ENV})")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        if models:
            p.add_argument("--models", default="models", help="directory of model manifests")

    p = sub.add_parser("prepare", help="load, rescale and cache the dataset")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train and quantize models")
    common(p)
    p.add_argument("--model", choices=("big", "little", "dual", "all"), default="all")
    p.add_argument("--target", type=int, choices=range(1, 7), help="activity for a single little model")
    p.add_argument("--sensor", default="total_acc", type=Sensor.parse,
                   help="sensor fed to little/dual models (body_acc, body_gyro, total_acc)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hyperparams", help="JSON file of training hyperparameters")
    p.add_argument("--activation-ranges", choices=("default", "calibrated"), default="default")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run a cascade configuration and cost it")
    common(p, models=True)
    p.add_argument("--config", choices=MODES, default="big-little")
    p.add_argument("--metric", choices=METRICS, default="manhattan")
    p.add_argument("--threshold", type=float, default=MANHATTAN_THRESHOLD)
    p.add_argument("--device", default="ecm3532", help="built-in profile name or profile JSON path")
    p.add_argument("--freq", type=int, default=48, help="MHz")
    p.add_argument("--scope", choices=SCOPES, default="full-test")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensor-study", help="per-sensor accuracy of little models")
    common(p, models=True)
    p.set_defaults(func=cmd_sensor_study)

    p = sub.add_parser("export-header", help="write manifest weights as a C header")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--var", help="C array name (default <model>_weights)")
    p.set_defaults(func=cmd_export_header)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (HarDataError, EmptyClassError, GraphError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
