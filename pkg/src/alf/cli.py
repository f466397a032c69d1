"""Command-line entry point: ``alf {train,compress,analyze,eval,export}``.

Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import load_config, teacher_student_config
from .cost import CostReport, code_max, layer_cost
from .errors import ALFError, ConfigError
from .factorizer import pruned_count

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("alf")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--out-dir", type=Path, help="directory for every output artifact")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", choices=["cifar10", "synthetic"])
    p.add_argument("--data-path", type=Path, help="CIFAR-10 binary batch directory or file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--pr", type=float, help="pruning rate: fraction of code channels masked")
    p.add_argument("--m", type=int, help="mask update period in training steps")
    p.add_argument("--lambda-rec", type=float, help="weight of the reconstruction loss")


def build_parser():
    parser = argparse.ArgumentParser(prog="alf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a model and write metrics.csv + checkpoint.npz")
    _common(p)
    p = sub.add_parser("compress", help="checkpoint -> model.alf1 + cost.csv")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("export", help="checkpoint -> model.alf1")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("analyze", help="architecture -> cost.csv, no training")
    _common(p)
    p = sub.add_parser("eval", help="container + dataset -> accuracy")
    _common(p)
    p.add_argument("--model", type=Path, required=True, help="ALF1 container")
    return parser


def resolve_config(args, base=None):
    """Load ``--config`` (or the built-in teacher-student default) and apply flags."""
    cfg = base if base is not None else (load_config(args.config) if args.config else teacher_student_config())
    t, d = cfg.training, cfg.dataset
    if args.seed is not None:
        t.seed = args.seed
    if args.epochs is not None:
        t.epochs = args.epochs
    if args.pr is not None:
        t.pr = args.pr
    if args.m is not None:
        t.m = args.m
    if args.lambda_rec is not None:
        t.lambda_rec = args.lambda_rec
    if args.dataset is not None:
        d.kind = args.dataset
    if args.data_path is not None:
        d.path = str(args.data_path)
    if args.out_dir is not None:
        cfg.out_dir = str(args.out_dir)
    cfg.validate()
    if d.kind == "cifar10" and not d.path:
        raise ConfigError("the cifar10 dataset needs --data-path")
    return cfg


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warn_break_even(cfg):
    for shape in cfg.arch.cost_shapes():
        if shape.kind != "alf":
            continue
        kept = shape.co - pruned_count(cfg.training.pr, shape.co)
        cmax = code_max(shape.ci, shape.co, shape.k)
        if kept >= cmax:
            log.warning("%s: pr=%g keeps %d code channels, not below break-even %d",
                        shape.name, cfg.training.pr, kept, cmax)


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .data import load_dataset
    from .model import Model
    from .trainer import make_schedules, train_loop

    cfg = resolve_config(args)
    out = _out_dir(cfg)
    _warn_break_even(cfg)
    data = load_dataset(cfg.dataset, cfg.training.seed)
    model = Model.from_arch(cfg.arch, rng=[cfg.training.seed, 0])
    schedules = make_schedules(model, cfg.training)
    metrics, model = train_loop(model, data, cfg.training, schedules)
    (out / "metrics.csv").write_text(metrics.to_csv())
    save_checkpoint(out / "checkpoint.npz", model, cfg, schedules)
    if metrics.records:
        print(f"final accuracy {metrics.records[-1].accuracy:.10g}")
    return EXIT_OK


def _load(args):
    from .checkpoint import load_checkpoint

    model, cfg = load_checkpoint(args.checkpoint)
    if args.config:
        # the checkpoint is authoritative for the model; --config only places outputs
        cfg.out_dir = load_config(args.config).out_dir
    return model, resolve_config(args, cfg)


def cmd_export(args):
    from .deploy import deploy, export

    model, cfg = _load(args)
    export(deploy(model), _out_dir(cfg) / "model.alf1")
    return EXIT_OK


def cmd_compress(args):
    from .deploy import deploy, export

    model, cfg = _load(args)
    out = _out_dir(cfg)
    deployed = deploy(model)
    export(deployed, out / "model.alf1")
    report = CostReport(deployed.cost_report_layers(cfg.arch.input_dims[:2]))
    (out / "cost.csv").write_text(report.to_csv())
    print(f"params {report.params_standard} -> {report.params_alf} (gain {float(report.gain_params):.3f})")
    return EXIT_OK


def cmd_analyze(args):
    cfg = resolve_config(args)
    entries = []
    for shape in cfg.arch.cost_shapes():
        kept = shape.co - pruned_count(cfg.training.pr, shape.co) if shape.kind == "alf" else None
        entries.append(layer_cost(shape, kept))
    (_out_dir(cfg) / "cost.csv").write_text(CostReport(entries).to_csv())
    return EXIT_OK


def cmd_eval(args):
    from .data import load_dataset
    from .deploy import import_model
    from .trainer import evaluate

    cfg = resolve_config(args)
    model = import_model(args.model.read_bytes())
    data = load_dataset(cfg.dataset, cfg.training.seed)
    acc = evaluate(model, data.x_test, data.y_test)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "split", "samples", "accuracy"])
    w.writerow([args.model.name, "test", len(data.y_test), f"{acc:.10g}"])
    (_out_dir(cfg) / "eval.csv").write_text(buf.getvalue())
    print(f"accuracy {acc:.10g}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "compress": cmd_compress, "export": cmd_export,
            "analyze": cmd_analyze, "eval": cmd_eval}


def setup_logging():
    level = os.environ.get("ALF_LOG", "info").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "INFO"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, yaml.YAMLError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ALFError, OSError, ValueError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
