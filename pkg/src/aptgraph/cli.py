"""Command-line front end: generate scenarios and datasets, train classifiers, detect campaigns.

Exit codes of ``detect`` (other commands use only OK, ERROR and USAGE):

    0   EXIT_OK         ran; no campaign stage chain found
    1   EXIT_ERROR      input, model or configuration error
    2   EXIT_USAGE      bad command-line flags
    10  EXIT_APT_STOP   campaign reached the control elements (APT_DET_STOP)
    11  EXIT_APT_START  campaign stages found, chain stops short of the CEs (APT_DET_START)
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .asdc import AsdcInputs, DetStatus, export_graph, rejections_to_jsonl, run_asdc
from .config import DetectorConfig, EngineConfig, load_config
from .features import FeatureStage, read_feature_csv, write_feature_csv
from .ingest import parse_auth_log, parse_ids_alerts, read_capture, split_windows
from .ml import Dataset, ModelKind, format_metrics_csv, load_model, save_model, train_pipeline
from .model import AptError, CeProtocol, HostInventory, ScanType
from .scenario import (
    FieldbusMode,
    discovery_windows,
    fieldbus_windows,
    gen_benign_bundle,
    gen_campaign,
    load_bundle,
    write_bundle,
)
from .stages import detections_to_jsonl

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_APT_STOP = 10
EXIT_APT_START = 11

MANIFEST = "manifest.json"

MODEL_FLAGS = {"rforest": ModelKind.RANDOM_FOREST, "svm": ModelKind.LINEAR_SVM}
STAGE_FLAGS = {"discovery": FeatureStage.DISCOVERY, "fieldbus": FeatureStage.FIELDBUS}

DATASET_VARIANTS = {
    FeatureStage.DISCOVERY: {"normal": ScanType.NORMAL, "slow": ScanType.SLOW},
    FeatureStage.FIELDBUS: {
        "modbus-aggressive": (CeProtocol.MODBUS, FieldbusMode.AGGRESSIVE),
        "modbus-non-aggressive": (CeProtocol.MODBUS, FieldbusMode.NON_AGGRESSIVE),
        "s7": (CeProtocol.S7, FieldbusMode.AGGRESSIVE),
        "dnp3": (CeProtocol.DNP3, FieldbusMode.AGGRESSIVE),
        "mixed": (None, None),
    },
}


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str] = None
    inputs: list[str] = field(default_factory=list)
    models: list[str] = field(default_factory=list)
    seed: Optional[int] = None
    out: Optional[str] = None
    engine_version: str = __version__
    argv: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aptgraph", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"aptgraph {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a scenario bundle")
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--campaign", type=int, choices=(1, 2, 3))
    which.add_argument("--benign", action="store_true", help="benign traffic only")
    g.add_argument("--span", type=float, default=1200.0, help="benign bundle length in seconds")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="config whose inventory replaces the default topology")
    g.add_argument("--out", required=True)

    d = sub.add_parser("dataset", help="generate a labeled feature CSV")
    d.add_argument("--stage", choices=sorted(STAGE_FLAGS), required=True)
    d.add_argument("--variant", required=True,
                   help="discovery: normal|slow; fieldbus: modbus-aggressive|modbus-non-aggressive|s7|dnp3|mixed")
    d.add_argument("--windows", type=int, default=1000, help="windows per class")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a window classifier from labeled CSVs")
    t.add_argument("--stage", choices=sorted(STAGE_FLAGS), required=True)
    t.add_argument("--model", choices=sorted(MODEL_FLAGS), default="rforest")
    t.add_argument("--data", nargs="+", required=True, help="labeled feature CSV files")
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--metrics", help="metrics CSV (default: <out>.metrics.csv)")

    x = sub.add_parser("detect", help="detect and correlate campaign stages")
    x.add_argument("--bundle", help="scenario bundle directory")
    x.add_argument("--capture", action="append", default=[], metavar="IP=PATH",
                   help="capture file recorded at host IP (repeatable)")
    x.add_argument("--auth", help="authentication log")
    x.add_argument("--alerts", help="IDS alert log")
    x.add_argument("--config", help="engine config JSON (required without --bundle)")
    x.add_argument("--discovery-model", required=True)
    x.add_argument("--fieldbus-model", required=True)
    x.add_argument("--format", choices=("dot", "structured"), default="dot", help="graph printed to stdout")
    x.add_argument("--out", required=True)
    return p


def _engine_config(path: Optional[str], inventory: Optional[HostInventory]) -> EngineConfig:
    if path:
        return load_config(path, inventory)
    if inventory is None:
        raise AptError("BAD_CONFIG", "--config is required when no bundle inventory is available")
    return EngineConfig(inventory, DetectorConfig())


def cmd_gen(args, argv) -> int:
    inventory = _engine_config(args.config, None).inventory if args.config else None
    if args.benign:
        bundle = gen_benign_bundle(inventory, args.seed, args.span)
    else:
        bundle = gen_campaign(args.campaign, inventory, args.seed)
    out = Path(args.out)
    written = write_bundle(bundle, out)
    RunManifest("gen", args.config, [], [], args.seed, str(out), argv=list(argv)).write(out / MANIFEST)
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_dataset(args, argv) -> int:
    stage = STAGE_FLAGS[args.stage]
    variants = DATASET_VARIANTS[stage]
    if args.variant not in variants:
        raise UsageError(f"unknown {args.stage} variant {args.variant!r}; choose from {', '.join(variants)}")
    n = args.windows
    if stage is FeatureStage.DISCOVERY:
        vectors = discovery_windows(variants[args.variant], n, n, args.seed)
    else:
        protocol, mode = variants[args.variant]
        vectors = fieldbus_windows(protocol, mode, n, n, args.seed)
    write_feature_csv(args.out, stage, vectors)
    RunManifest("dataset", None, [], [], args.seed, args.out, argv=list(argv)).write(Path(f"{args.out}.{MANIFEST}"))
    print(f"wrote {len(vectors)} labeled windows to {args.out}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    stage = STAGE_FLAGS[args.stage]
    kind = MODEL_FLAGS[args.model]
    vectors = []
    for path in args.data:
        vectors += read_feature_csv(path, stage)
    if not vectors:
        raise AptError("EMPTY_DATASET", "no rows in " + ", ".join(args.data))
    data = Dataset.from_vectors(vectors, stage)
    name = ",".join(Path(p).stem for p in args.data)
    model, report = train_pipeline(data, kind, seed=args.seed, k=args.folds, dataset_name=name, stage=stage.value)
    save_model(model, args.out)
    metrics = args.metrics or f"{args.out}.metrics.csv"
    text = format_metrics_csv([report])
    Path(metrics).write_text(text)
    RunManifest("train", None, list(args.data), [], args.seed, args.out, argv=list(argv)).write(
        Path(f"{args.out}.{MANIFEST}"))
    sys.stdout.write(text)
    return EXIT_OK


def _parse_capture_flag(flag: str) -> tuple[str, str]:
    ip, sep, path = flag.partition("=")
    if not sep or not ip or not path:
        raise UsageError(f"--capture expects IP=PATH, got {flag!r}")
    return ip, path


def cmd_detect(args, argv) -> int:
    if not args.bundle and not args.capture:
        raise UsageError("detect needs --bundle or at least one --capture")
    # Models first: a missing or corrupt model fails before any input is parsed.
    models = {}
    for label, path, want in (("discovery", args.discovery_model, FeatureStage.DISCOVERY),
                              ("fieldbus", args.fieldbus_model, FeatureStage.FIELDBUS)):
        if not Path(path).is_file():
            raise AptError("MODEL_NOT_FOUND", f"{label} model {path} does not exist")
        m = load_model(path)
        if m.stage is not None and m.stage != want.value:
            raise AptError("MODEL_STAGE_MISMATCH", f"{path} was trained for {m.stage}, not {want.value}")
        models[label] = m

    inputs: list[str] = []
    if args.bundle:
        bundle = load_bundle(args.bundle)
        cfg = _engine_config(args.config, bundle.inventory)
        captures, auth, alerts = bundle.captures, bundle.auth_events, bundle.alerts
        inputs.append(args.bundle)
    else:
        cfg = _engine_config(args.config, None)
        captures = {}
        for flag in args.capture:
            ip, path = _parse_capture_flag(flag)
            captures[ip] = read_capture(path)[0]
            inputs.append(path)
        auth = parse_auth_log(args.auth).records if args.auth else []
        alerts = parse_ids_alerts(args.alerts, cfg.detector.signature_map).records if args.alerts else []
        inputs += [p for p in (args.auth, args.alerts) if p]

    det = cfg.detector
    windows = {ip: split_windows(pk, ip, det.window_s) for ip, pk in captures.items()}
    result = run_asdc(AsdcInputs(windows, auth, alerts, models["discovery"], models["fieldbus"], cfg.inventory, det))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dot = export_graph(result.graph, "dot")
    structured = export_graph(result.graph, "structured")
    (out / "graph.dot").write_text(dot)
    (out / "graph.json").write_text(structured)
    (out / "stages.jsonl").write_text(detections_to_jsonl(result.stages))
    (out / "rejections.jsonl").write_text(rejections_to_jsonl(result.rejections))
    RunManifest("detect", args.config, inputs, [args.discovery_model, args.fieldbus_model], None, str(out),
                argv=list(argv)).write(out / MANIFEST)
    sys.stdout.write(dot if args.format == "dot" else structured)

    if result.graph.is_empty():
        return EXIT_OK
    return EXIT_APT_STOP if result.det_status is DetStatus.APT_DET_STOP else EXIT_APT_START


COMMANDS = {"gen": cmd_gen, "dataset": cmd_dataset, "train": cmd_train, "detect": cmd_detect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except AptError as exc:
        print(f"aptgraph: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"aptgraph: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
