"""Command-line entry point: synth, train, predict, ect, eval.

Configuration layering, lowest to highest precedence: built-in defaults,
named preset (--preset), JSON config file with flat dotted keys (--config),
explicit command-line flags. Every run writes a manifest with the resolved
config, seeds, and input-file digests.
"""

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import ect as ect_mod
from . import kernels
from .dataset_io import (
    GENERATOR_NAME,
    EmptyInputError,
    ParseError,
    SplitSpec,
    SynthSpec,
    ValidationError,
    gen_synthetic,
    load_attributes,
    load_features,
    load_split,
    save_attributes,
    save_features,
    save_split,
    subset,
    validate_bundle,
)
from .evaluate import emit_report, mean_per_class_top1
from .network import (
    ModelFormatError,
    SemanticFeedbackNetwork,
    TrainConfig,
    load_model,
    predict_batch,
    save_model,
    train,
)

PRESETS = {
    "zsl-default": {"train.gamma": 0.01},
    "industrial": {"train.gamma": 0.005},
}

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class CliError(Exception):
    """User-facing validation failure; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise CliError("config file must hold a flat JSON object")
    return payload


def _resolve(dataclass_default, prefix, preset_cfg, file_cfg, cli_overrides):
    """Layer dotted-key config sources onto a dataclass instance."""
    values = asdict(dataclass_default)
    valid = {f.name for f in fields(dataclass_default)}
    for source in (preset_cfg, file_cfg):
        for key, val in source.items():
            if not key.startswith(prefix + "."):
                continue
            name = key[len(prefix) + 1:]
            if name not in valid:
                raise CliError(f"unknown config key {key!r}")
            values[name] = val
    for name, val in cli_overrides.items():
        if val is not None:
            values[name] = val
    for name in ("arch_primary", "arch_secondary"):
        if name in values and isinstance(values[name], list):
            values[name] = tuple(values[name])
    return type(dataclass_default)(**values)


def _preset_config(name):
    if name is None:
        return {}
    if name not in PRESETS:
        raise CliError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_digest(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir, name, payload):
    payload = dict(payload)
    payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    payload["generator"] = GENERATOR_NAME
    payload["kernel_backend"] = kernels.backend()
    path = Path(out_dir) / name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")
    return path


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_bundle(args, need_split=True):
    features = load_features(args.features)
    table = load_attributes(args.attributes)
    split = load_split(args.split) if need_split else None
    return features, table, split


def _check_bundle(features, table, split):
    violations = validate_bundle(features, table, split)
    if violations:
        raise CliError("bundle validation failed:\n  "
                       + "\n  ".join(violations))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    preset_cfg = _preset_config(args.preset)
    file_cfg = _load_config_file(args.config)
    overrides = {
        "seed": args.seed, "n_seen": args.n_seen, "n_unseen": args.n_unseen,
        "d": args.d, "k": args.k, "samples_per_class": args.samples_per_class,
        "noise_sigma": args.noise_sigma,
    }
    spec = _resolve(SynthSpec(), "synth", preset_cfg, file_cfg, overrides)
    dataset, table, split = gen_synthetic(spec)
    out = _out_dir(args)
    seen_set = set(split.seen)
    seen_mask = np.array([lab in seen_set for lab in dataset.labels])
    save_features(subset(dataset, seen_mask), out / "train.csv")
    save_features(subset(dataset, ~seen_mask, drop_labels=True),
                  out / "unseen.csv")
    save_features(subset(dataset, ~seen_mask), out / "unseen_labeled.csv")
    save_attributes(table, out / "attributes.csv")
    save_split(split, out / "split.json")
    outputs = ["train.csv", "unseen.csv", "unseen_labeled.csv",
               "attributes.csv", "split.json"]
    _write_manifest(out, "synth_manifest.json", {
        "command": "synth",
        "config": asdict(spec),
        "seed": spec.seed,
        "outputs": {name: _sha256(out / name) for name in outputs},
    })
    print(f"wrote synthetic bundle to {out}")
    return EXIT_OK


def _train_config_from_args(args):
    preset_cfg = _preset_config(args.preset)
    file_cfg = _load_config_file(args.config)
    overrides = {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "seed": args.seed, "lr": args.lr, "margin": args.margin,
        "attention_weight": args.beta1, "embed_weight": args.beta2,
        "gamma": args.gamma, "warmup_epochs": args.warmup,
        "hidden1": args.h1, "hidden2": args.h2,
    }
    return _resolve(TrainConfig(), "train", preset_cfg, file_cfg, overrides)


def cmd_train(args):
    config = _train_config_from_args(args)
    features, table, split = _load_bundle(args)
    _check_bundle(features, table, split)
    if any(lab is None for lab in features.labels):
        raise CliError("training features must all carry labels")
    config.validate()
    model = SemanticFeedbackNetwork(features.dim, table.dim, config)
    history = train(model, features, table, split, config)
    out = _out_dir(args)
    save_model(model, out / "model.json")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss_triplet", "loss_attention",
                         "loss_bce", "loss_total"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["loss_triplet"]),
                             repr(row["loss_attention"]), repr(row["loss_bce"]),
                             repr(row["loss_total"])])
    manifest = {
        "command": "train",
        "config": config.to_dict(),
        "seed": config.seed,
        "config_digest": _config_digest(config.to_dict()),
        "inputs": {str(p): _sha256(p) for p in
                   (args.features, args.attributes, args.split)},
        "outputs": ["model.json", "history.csv"],
        "baseline_equivalent": config.gamma == 0.0 and config.embed_weight == 0.0,
        "skipped_batches_per_epoch": [row["skipped_batches"] for row in history],
        "final_losses": {k: history[-1][k] for k in
                         ("loss_triplet", "loss_attention", "loss_bce",
                          "loss_total")},
    }
    if args.eval_features:
        eval_ds = load_features(args.eval_features)
        if any(lab is None for lab in eval_ds.labels):
            raise CliError("--eval-features must carry labels")
        names, _ = predict_batch(model, eval_ds.features, table, split,
                                 features, mode=args.mode)
        report = mean_per_class_top1(names, list(eval_ds.labels),
                                     classes=list(split.unseen))
        manifest["eval"] = {
            "features": str(args.eval_features),
            "mode": args.mode,
            "mean_per_class_top1": report.mean_per_class,
            "overall": report.overall,
        }
    _write_manifest(out, "train_manifest.json", manifest)
    print(f"trained {config.epochs} epochs; "
          f"final total loss {history[-1]['loss_total']:.6f}")
    if "eval" in manifest:
        print(f"mean per-class top-1: {manifest['eval']['mean_per_class_top1']:.4f}")
    return EXIT_OK


def cmd_predict(args):
    model = load_model(args.model)
    features = load_features(args.features)
    seen = load_features(args.seen)
    table = load_attributes(args.attributes)
    split = load_split(args.split)
    if any(lab is None for lab in seen.labels):
        raise CliError("--seen features must carry labels")
    names, scores = predict_batch(model, features.features, table, split,
                                  seen, mode=args.mode)
    out = _out_dir(args)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "predicted", "score"])
        best = scores.max(axis=1)
        for sid, name, score in zip(features.sample_ids, names, best):
            writer.writerow([sid, name, repr(float(score))])
    _write_manifest(out, "predict_manifest.json", {
        "command": "predict",
        "mode": args.mode,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "inputs": {str(p): _sha256(p) for p in
                   (args.model, args.features, args.seen, args.attributes,
                    args.split)},
        "outputs": ["predictions.csv"],
    })
    print(f"wrote predictions for {features.n} samples")
    return EXIT_OK


def cmd_eval(args):
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "predicted"]:
        raise CliError("predictions file must have header id,predicted,score")
    predicted = {row[0]: row[1] for row in rows[1:]}
    truth_ds = load_features(args.features)
    split = load_split(args.split)
    names, labels = [], []
    for sid, lab in zip(truth_ds.sample_ids, truth_ds.labels):
        if lab is None:
            raise CliError(f"sample {sid!r} in truth file has no label")
        if sid not in predicted:
            raise CliError(f"sample {sid!r} missing from predictions")
        names.append(predicted[sid])
        labels.append(lab)
    meta = {
        "seed": None,
        "config_digest": _config_digest({"predictions": str(args.predictions),
                                         "features": str(args.features)}),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    report = mean_per_class_top1(names, labels, classes=list(split.unseen),
                                 meta=meta)
    out = _out_dir(args)
    emit_report(report, out / "report.json", fmt="json")
    if args.format == "csv":
        emit_report(report, out / "report.csv", fmt="csv")
    _write_manifest(out, "eval_manifest.json", {
        "command": "eval",
        "inputs": {str(p): _sha256(p) for p in
                   (args.predictions, args.features, args.split)},
        "outputs": ["report.json"] + (["report.csv"]
                                      if args.format == "csv" else []),
        "mean_per_class_top1": report.mean_per_class,
        "overall": report.overall,
    })
    print(f"mean per-class top-1: {report.mean_per_class:.4f} "
          f"(overall {report.overall:.4f})")
    return EXIT_OK


def cmd_ect(args):
    train_config = _train_config_from_args(args)
    preset_cfg = _preset_config(args.preset)
    file_cfg = _load_config_file(args.config)
    overrides = {
        "n_virtual": args.n_virtual, "max_iterations": args.max_iterations,
        "seed": args.seed,
    }
    ect_config = _resolve(ect_mod.EctConfig(), "ect", preset_cfg, file_cfg,
                          overrides)
    seen_ds, table, split = _load_bundle(args)
    _check_bundle(seen_ds, table, split)
    unseen_ds = None
    if args.unseen:
        unseen_ds = load_features(args.unseen)
    if unseen_ds is None or unseen_ds.n == 0:
        print("warning: no unseen feature rows; running plain training",
              file=sys.stderr)
    truth = None
    if args.truth:
        truth_ds = load_features(args.truth)
        truth = {sid: lab for sid, lab in zip(truth_ds.sample_ids,
                                              truth_ds.labels)}
    result = ect_mod.run_ect(seen_ds, unseen_ds, table, split, ect_config,
                             train_config, true_unseen_labels=truth)
    out = _out_dir(args)
    save_model(result.primary, out / "model.json")
    outputs = ["model.json"]
    if result.unseen_predictions:
        with open(out / "predictions.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "predicted", "score"])
            for sid in unseen_ds.sample_ids:
                writer.writerow([sid, result.unseen_predictions[sid],
                                 repr(result.unseen_scores[sid])])
        outputs.append("predictions.csv")
    inputs = {str(args.features): _sha256(args.features),
              str(args.attributes): _sha256(args.attributes),
              str(args.split): _sha256(args.split)}
    if args.unseen:
        inputs[str(args.unseen)] = _sha256(args.unseen)
    if args.truth:
        inputs[str(args.truth)] = _sha256(args.truth)
    manifest = dict(result.manifest)
    manifest.update({
        "command": "ect",
        "inputs": inputs,
        "outputs": outputs,
        "config_digest": _config_digest({"train": train_config.to_dict(),
                                         "ect": asdict(ect_config)}),
    })
    _write_manifest(out, "ect_manifest.json", manifest)
    print(f"ect finished: {len(result.pseudo)} pseudo-labels, "
          f"primary model saved")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file with dotted keys")
    parser.add_argument("--preset", help="named preset: zsl-default | industrial")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--out", required=True, help="output directory")


def _add_train_flags(parser):
    parser.add_argument("--features", required=True)
    parser.add_argument("--attributes", required=True)
    parser.add_argument("--split", required=True)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--margin", type=float)
    parser.add_argument("--beta1", type=float,
                        help="attention loss weight")
    parser.add_argument("--beta2", type=float,
                        help="embedding BCE loss weight")
    parser.add_argument("--gamma", type=float, help="feedback degree")
    parser.add_argument("--warmup", type=int, help="feedback warmup epochs")
    parser.add_argument("--h1", type=int, help="first trunk width")
    parser.add_argument("--h2", type=int, help="second trunk width")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zslkit",
        description="zero-shot attribute classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    _add_common(p)
    p.add_argument("--n-seen", type=int, dest="n_seen")
    p.add_argument("--n-unseen", type=int, dest="n_unseen")
    p.add_argument("--d", type=int, help="feature dimension")
    p.add_argument("--k", type=int, help="attribute dimension")
    p.add_argument("--samples-per-class", type=int, dest="samples_per_class")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the semantic-feedback network")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--eval-features", dest="eval_features",
                   help="labeled unseen features to evaluate after training")
    p.add_argument("--mode", choices=["latent", "combined"], default="latent")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify unseen-class samples")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--seen", required=True,
                   help="labeled seen-class features for prototype transfer")
    p.add_argument("--attributes", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--mode", choices=["latent", "combined"], default="latent")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against labeled truth")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--features", required=True, help="labeled truth features")
    p.add_argument("--split", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ect", help="run ensemble co-training")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--unseen", help="unlabeled unseen-class features")
    p.add_argument("--truth",
                   help="labeled unseen features (pseudo-label accuracy only)")
    p.add_argument("--n-virtual", type=int, dest="n_virtual")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.set_defaults(func=cmd_ect)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValidationError, ParseError, EmptyInputError,
            ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
