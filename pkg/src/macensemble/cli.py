"""Command line entry point: ``macensemble <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernel
from .combine import (CLOSED_FORMS, MacModel, closed_form_batch, combine_hierarchical_batch,
                      trace_functions)
from .data import (align, load_labels, load_predictions, parse_index_list, save_labels,
                   save_matrix, save_predictions)
from .errors import DataFormatError, MacError, ModelFormatError
from .metric import ClassWeighting, weighted_bce
from .synth import generate_preset, preset, run_paper_protocol
from .trainer import (TrainConfig, evaluate, predict, score_table_csv, score_vs_n_experiment,
                      train)

log = logging.getLogger("macensemble")

# TrainConfig fields settable from flags or --config
_TRAIN_KEYS = {
    "max_epochs": int, "patience_epochs": int, "batch_size": int, "learning_rate": float,
    "subsample_fraction": float, "latent_dim": int, "block": int, "subsample_per": str,
    "split_fractions": lambda s: tuple(float(v) for v in s.split(",")),
    "trunk": lambda s: tuple(int(v) for v in s.split(",")),
}


class UsageError(Exception):
    pass


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _load_config(args):
    if not args.config:
        return {}
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
    except ValueError as exc:
        raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _resolve(args, cfg, key, default=None):
    """CLI flag > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in cfg:
        return cfg[key]
    return default


def _train_config(args, cfg):
    values = {}
    for key, conv in _TRAIN_KEYS.items():
        v = _resolve(args, cfg, key)
        if v is None:
            continue
        values[key] = conv(v) if isinstance(v, str) and key in ("split_fractions", "trunk") else v
    values["seed"] = int(_resolve(args, cfg, "seed", 0))
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from exc


def _load_model(path):
    try:
        return MacModel.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc.strerror}") from exc


def _combiner(args):
    if bool(args.model) == bool(args.baseline):
        raise UsageError("give exactly one of --model or --baseline")
    if args.model:
        return _load_model(args.model), None
    return None, args.baseline


def _combine(model, baseline, x):
    if model is not None:
        return predict(model, x)
    return closed_form_batch(baseline, x)


def _labels(args, cfg):
    path = _resolve(args, cfg, "labels")
    if path is None:
        raise UsageError("--labels is required")
    if not Path(path).is_file():
        raise UsageError(f"label file not found: {path}")
    return load_labels(path, args.any_policy)


def _predictions(args, cfg):
    paths = _resolve(args, cfg, "predictions")
    if not paths:
        raise UsageError("--predictions is required")
    missing = [p for p in paths if not Path(p).is_file()]
    if missing:
        raise UsageError(f"prediction file not found: {missing[0]}")
    return load_predictions(paths)


def cmd_train(args, cfg, out):
    tcfg = _train_config(args, cfg)
    labels = _labels(args, cfg)
    preds = _predictions(args, cfg)
    align(preds, labels)
    weighting = ClassWeighting.for_classes(labels.class_names)
    model, report = train(preds, labels, tcfg, weighting)
    model.save(out / "model.mac")
    (out / "train_report.json").write_text(report.to_json())
    _write_json(out / "timing.json", {"train_seconds": report.wall_clock_seconds})
    log.info("best epoch %s, test score %.6f", report.best_epoch, report.test_score)
    return {"train": tcfg.to_dict(), "sub_model_ids": preds.sub_model_ids}


def _read_weights(path, ids):
    table = {}
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != ["sub_model_id", "weight"]:
            raise DataFormatError("weights header must be sub_model_id,weight", path=path, line=1)
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 2:
                raise DataFormatError("expected 2 fields", path=path, line=line_no)
            try:
                table[parts[0]] = float(parts[1])
            except ValueError:
                raise DataFormatError(f"bad weight {parts[1]!r}", path=path, line=line_no) from None
    if set(table) != set(ids):
        raise UsageError(f"weights cover {len(table)} sub-models but {len(ids)} prediction files were "
                         f"given (missing {sorted(set(ids) - set(table))[:5]}, "
                         f"extra {sorted(set(table) - set(ids))[:5]})")
    return np.array([table[i] for i in ids])


def cmd_combine(args, cfg, out):
    model, baseline = _combiner(args)
    preds = _predictions(args, cfg)
    # input order must not matter: canonicalise by sub-model id
    order = sorted(range(preds.num_sub_models), key=lambda j: preds.sub_model_ids[j])
    preds = preds.select(order)
    x = preds.values
    if args.weights and args.groups:
        raise UsageError("--weights and --groups are mutually exclusive")
    if args.weights:
        if model is None:
            raise UsageError("--weights needs --model")
        from .combine import combine_batch

        w = _read_weights(args.weights, preds.sub_model_ids)
        combined = combine_batch(model, x, weights=w)
    elif args.groups:
        if model is None:
            raise UsageError("--groups needs --model")
        try:
            manifest = json.loads(Path(args.groups).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read groups manifest {args.groups}: {exc}") from exc
        index = {mid: j for j, mid in enumerate(preds.sub_model_ids)}
        tensors = []
        for name in sorted(manifest):
            ids = manifest[name]
            unknown = [i for i in ids if i not in index]
            if unknown or not ids:
                raise UsageError(f"group {name!r} is empty or names unknown sub-models {unknown[:5]}")
            tensors.append(x[:, sorted(index[i] for i in ids), :])
        combined = combine_hierarchical_batch(model, tensors)
    else:
        combined = _combine(model, baseline, x)
    save_matrix(out / "combined.csv", combined, preds.sample_ids, preds.class_names)
    return {"model": args.model, "baseline": baseline, "sub_model_ids": preds.sub_model_ids,
            "weights": args.weights, "groups": args.groups}


def cmd_evaluate(args, cfg, out):
    model, baseline = _combiner(args)
    labels = _labels(args, cfg)
    preds = _predictions(args, cfg)
    align(preds, labels)
    subset = (parse_index_list(args.subset, preds.num_sub_models) if args.subset
              else list(range(preds.num_sub_models)))
    if not subset:
        raise UsageError("--subset selects no sub-models")
    weighting = ClassWeighting.for_classes(labels.class_names)
    if model is not None:
        score = evaluate(model, preds, labels, subset, weighting)
    else:
        score = weighted_bce(closed_form_batch(baseline, preds.values[:, subset]), labels.values,
                             weighting)
    result = {"score": score, "subset": subset, "n": len(subset),
              "combiner": args.model or baseline}
    _write_json(out / "evaluate.json", result)
    print(f"{score!r}")
    return {"subset": subset}


def cmd_sweep(args, cfg, out):
    model = _load_model(args.model)
    labels = _labels(args, cfg)
    preds = _predictions(args, cfg)
    align(preds, labels)
    n_values = [int(v) for v in args.n_values.split(",")]
    seed = int(_resolve(args, cfg, "seed", 0))
    try:
        points = score_vs_n_experiment(model, preds, labels, n_values, args.repeats, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    (out / "sweep.csv").write_text(score_table_csv(points))
    _write_json(out / "sweep.json", {
        "points": [p.__dict__ for p in points],
        "single_repeat_std_by_convention": args.repeats == 1,
    })
    return {"n_values": n_values, "repeats": args.repeats}


def cmd_trace(args, cfg, out):
    model = _load_model(args.model)
    if args.grid < 1:
        raise UsageError("--grid must be >= 1")
    tr = trace_functions(model, grid=args.grid)
    (out / "trace.csv").write_text(tr.to_csv())
    _write_json(out / "trace_summary.json", tr.summary())
    return {"grid": args.grid}


def cmd_synth(args, cfg, out):
    p = preset(args.preset)
    seed = _resolve(args, cfg, "seed")
    if seed is not None:
        p.seed = int(seed)
        p.train.seed = int(seed)
    preds, labels = generate_preset(p)
    if args.write_data:
        save_predictions(preds, out / "predictions")
        save_labels(labels, out / "labels.csv")
    if args.generate_only:
        return {"preset": p.to_dict()}
    model, report = run_paper_protocol(preds, labels, p)
    model.save(out / "model.mac")
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    (out / "trace.csv").write_text(trace_functions(model).to_csv())
    log.info("synth finished in %.1fs", report.seconds)
    return {"preset": p.to_dict()}


COMMANDS = {
    "train": cmd_train, "combine": cmd_combine, "evaluate": cmd_evaluate,
    "sweep": cmd_sweep, "trace": cmd_trace, "synth": cmd_synth,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="macensemble-out", help="output directory")
    common.add_argument("--config", help="JSON file of option overrides (flags win)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1,
                        help="worker cap (kernels are single-threaded)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="macensemble", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, labels=True):
        p.add_argument("--predictions", nargs="+", help="one CSV per sub-model")
        if labels:
            p.add_argument("--labels", help="label CSV")
            p.add_argument("--any-policy", choices=("warn", "fail", "ignore"), default="warn")

    def combiner_args(p):
        p.add_argument("--model", help="trained model file")
        p.add_argument("--baseline", choices=CLOSED_FORMS, help="closed-form combiner instead of a model")

    p = sub.add_parser("train", parents=[common], help="fit f and g on sub-model predictions")
    data_args(p)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", dest="patience_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--subsample-fraction", dest="subsample_fraction", type=float)
    p.add_argument("--subsample-per", dest="subsample_per", choices=("batch", "epoch"))
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--trunk", type=_TRAIN_KEYS["trunk"], help="trunk widths, e.g. 200,200")
    p.add_argument("--block", type=int, help="residual block width")
    p.add_argument("--split", dest="split_fractions", type=_TRAIN_KEYS["split_fractions"],
                   help="train,val,test fractions")

    p = sub.add_parser("combine", parents=[common], help="combine predictions into one CSV")
    data_args(p, labels=False)
    combiner_args(p)
    p.add_argument("--weights", help="CSV sub_model_id,weight for the weighted latent mean")
    p.add_argument("--groups", help="JSON {group: [sub_model_id, ...]} for hierarchical combination")

    p = sub.add_parser("evaluate", parents=[common], help="score a combiner")
    data_args(p)
    combiner_args(p)
    p.add_argument("--subset", help="sub-model indices, e.g. 0..9,12")

    p = sub.add_parser("sweep", parents=[common], help="score vs number of sub-models")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n-values", required=True, help="comma-separated group sizes")
    p.add_argument("--repeats", type=int, default=4)

    p = sub.add_parser("trace", parents=[common], help="sample f, g and g(f(x)) for plotting")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=101)

    p = sub.add_parser("synth", parents=[common], help="synthetic benchmark")
    p.add_argument("--preset", default="paper-analog")
    p.add_argument("--write-data", action="store_true", help="also write the generated CSVs")
    p.add_argument("--generate-only", action="store_true", help="write data and stop")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.generate_only if args.command == "synth" else False:
        args.write_data = True
    out = Path(args.out)
    try:
        cfg = _load_config(args)
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        echo = COMMANDS[args.command](args, cfg, out)
        effective = {k: v for k, v in vars(args).items() if k != "config"}
        effective.update(echo or {})
        effective["config_file"] = args.config
        effective["config_values"] = cfg
        effective["kernel_backend"] = kernel.get_backend()
        _write_json(out / f"{args.command}_config.json", effective)
        log.info("%s done in %.2fs", args.command, time.perf_counter() - start)
        return 0
    except (UsageError, DataFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"macensemble {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (MacError, ValueError) as exc:
        print(f"macensemble {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
