"""Command-line front end.

Subcommands cover the whole pipeline: ``generate`` a synthetic dataset,
``train`` the surge network, ``gp-train`` the PCA+GP baseline, ``predict``
with a trained model, ``evaluate`` both emulators side by side, ``search``
hyperparameters, and ``gradcheck`` the differentiation engine.

Exit codes: 0 success, 1 a validation/runtime failure (one machine-parsable
``category: message`` line on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import gradcheck as gc
from .errors import (
    ConditioningError,
    ConfigError,
    ContractError,
    DataError,
    ShapeError,
    TrainingDivergedError,
    VersionError,
)
from .evaluate import evaluate_emulators, predict_record
from .gp_baseline import GpEmulator, KernelConfig
from .model import ArchitectureConfig, ModelParams, load_params, load_preprocess, save_params
from .storm_data import GeneratorConfig, generate_dataset, load_split, write_dataset
from .training import (
    PreprocessBundle,
    TrainConfig,
    random_search,
    train,
    write_loss_history,
    write_search_report,
)

CONFIG_FORMAT_VERSION = 1


def _load_config_doc(path) -> dict:
    if not os.path.exists(path):
        raise DataError(f"no config file at {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ConfigError(f"config file {path} has no format_version field")
    if doc["format_version"] != CONFIG_FORMAT_VERSION:
        raise VersionError(
            f"config file {path} has format version {doc['format_version']}, "
            f"this build reads {CONFIG_FORMAT_VERSION}"
        )
    return doc


def _generator_config(args) -> GeneratorConfig:
    cfg = GeneratorConfig.desk_scale()
    if args.config:
        doc = _load_config_doc(args.config)
        if "generator" in doc:
            cfg = GeneratorConfig.from_dict(doc["generator"])
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_generate(args) -> int:
    cfg = _generator_config(args)
    records = generate_dataset(cfg)
    write_dataset(records, args.out, cfg)
    print(f"wrote {cfg.n_storms} storms ({cfg.n_train} train / {cfg.n_test} test) to {args.out}")
    return 0


def _train_configs(args, n_sp_hint: int | None = None) -> tuple[ArchitectureConfig, TrainConfig]:
    arch = None
    tcfg = TrainConfig()
    if args.config:
        doc = _load_config_doc(args.config)
        if "architecture" in doc:
            arch = ArchitectureConfig.from_dict(doc["architecture"])
        if "train" in doc:
            tcfg = TrainConfig.from_dict(doc["train"])
    if arch is None:
        arch = ArchitectureConfig.desk_scale()
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if n_sp_hint is not None and arch.n_sp != n_sp_hint:
        raise ConfigError(
            f"architecture grid {arch.grid_h}x{arch.grid_w} ({arch.n_sp} save points) "
            f"does not match the dataset ({n_sp_hint} save points)"
        )
    return arch, tcfg


def cmd_train(args) -> int:
    train_records, _, manifest = load_split(args.data)
    arch, tcfg = _train_configs(args, n_sp_hint=int(manifest["n_sp"]))
    if arch.n_steps != int(manifest["n_steps"]):
        raise ConfigError(
            f"architecture expects {arch.n_steps} steps, dataset has {manifest['n_steps']}"
        )

    inputs = np.stack([r.inputs for r in train_records])
    labels = np.stack([r.labels for r in train_records])
    bundle = PreprocessBundle.fit(inputs, labels)
    x = bundle.transform_inputs(inputs)
    y = bundle.transform_labels(labels)

    os.makedirs(args.out, exist_ok=True)
    params = ModelParams.init(arch, seed=tcfg.seed)
    params, history = train(
        params, x, y, tcfg,
        checkpoint_dir=os.path.join(args.out, "checkpoints"),
        progress=lambda e, v: print(f"epoch {e}: loss {v:.6e}"),
    )
    model_path = os.path.join(args.out, "model.json")
    save_params(params, model_path, preprocess=bundle.to_dict())
    write_loss_history(history, os.path.join(args.out, "loss_history.csv"))
    print(f"trained {tcfg.epochs} epochs; final loss {history[-1]:.6e}" if history
          else "trained 0 epochs")
    print(f"model written to {model_path}")
    return 0


def _load_model_with_bundle(path) -> tuple[ModelParams, PreprocessBundle]:
    params = load_params(path)
    pre = load_preprocess(path)
    if pre is None:
        raise DataError(f"model file {path} carries no preprocess section; retrain with "
                        f"'surgecast train'")
    return params, PreprocessBundle.from_dict(pre)


def cmd_gp_train(args) -> int:
    train_records, _, _ = load_split(args.data)
    offsets = (10,)
    n_components = None
    variance_threshold = 0.99
    kernel = KernelConfig()
    if args.config:
        doc = _load_config_doc(args.config)
        gp_doc = doc.get("gp", {})
        offsets = tuple(int(k) for k in gp_doc.get("offsets", [10]))
        n_components = gp_doc.get("n_components")
        variance_threshold = float(gp_doc.get("variance_threshold", 0.99))
        kernel = KernelConfig(
            noise_variance=gp_doc.get("noise_variance"),
            optimize=bool(gp_doc.get("optimize", False)),
            n_restarts=int(gp_doc.get("n_restarts", 8)),
            seed=int(gp_doc.get("seed", 0)),
        )

    labels = np.stack([r.labels for r in train_records])
    bundle = PreprocessBundle.fit(np.stack([r.inputs for r in train_records]), labels)
    emulator = GpEmulator.fit(
        train_records,
        offsets=offsets,
        n_components=n_components,
        variance_threshold=variance_threshold,
        label_transform=bundle.label_transform,
        kernel=kernel,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "gp_model.json")
    emulator.save(path)
    print(f"fitted {emulator.basis.n_components}-component GP baseline; written to {path}")
    return 0


def cmd_predict(args) -> int:
    params, bundle = _load_model_with_bundle(args.model)
    train_records, test_records, _ = load_split(args.data)
    records = test_records if args.split == "test" else train_records
    os.makedirs(args.out, exist_ok=True)
    for i, rec in enumerate(records):
        pred = predict_record(params, bundle, rec)
        path = os.path.join(args.out, f"pred_{args.split}_{i:04d}.csv")
        with open(path, "w") as f:
            for t in range(pred.shape[0]):
                f.write(",".join(repr(float(v)) for v in pred[t]) + "\n")
    print(f"wrote {len(records)} prediction files to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    params, bundle = _load_model_with_bundle(args.model)
    _, test_records, manifest = load_split(args.data)
    crnn_preds = [predict_record(params, bundle, rec) for rec in test_records]
    gp_preds = None
    if args.gp_model:
        gp = GpEmulator.load(args.gp_model)
        gp_preds = [gp.predict(rec) for rec in test_records]

    report = evaluate_emulators(
        crnn_preds, gp_preds, test_records,
        grid_h=int(manifest["grid_h"]), grid_w=int(manifest["grid_w"]),
        out_dir=args.out,
    )
    report.to_csv(os.path.join(args.out, "report.csv"))
    table = report.to_table()
    with open(os.path.join(args.out, "report.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def cmd_search(args) -> int:
    train_records, _, manifest = load_split(args.data)
    doc = _load_config_doc(args.config)
    search_doc = doc.get("search")
    if not search_doc or "space" not in search_doc:
        raise ConfigError(f"config file {args.config} needs a 'search' section with a 'space'")
    arch = (ArchitectureConfig.from_dict(doc["architecture"]) if "architecture" in doc
            else ArchitectureConfig.desk_scale())
    if arch.n_sp != int(manifest["n_sp"]) or arch.n_steps != int(manifest["n_steps"]):
        raise ConfigError("architecture does not match the dataset dimensions")
    seed = args.seed if args.seed is not None else int(search_doc.get("seed", 0))

    inputs = np.stack([r.inputs for r in train_records])
    labels = np.stack([r.labels for r in train_records])
    bundle = PreprocessBundle.fit(inputs, labels)
    report = random_search(
        arch,
        bundle.transform_inputs(inputs),
        bundle.transform_labels(labels),
        search_doc["space"],
        budget=int(search_doc.get("budget", 8)),
        trial_epochs=int(search_doc.get("trial_epochs", 20)),
        seed=seed,
        progress=lambda i, t: print(f"trial {i}: {t.status}, val loss {t.val_loss:.6e}"),
    )
    os.makedirs(args.out, exist_ok=True)
    write_search_report(report, os.path.join(args.out, "search_report.csv"))
    if report.best is None:
        print("no trainable configuration found")
        return 1
    print(f"best trial: {report.best.settings} (val loss {report.best.val_loss:.6e})")
    return 0


def cmd_gradcheck(args) -> int:
    results = gc.run_all(seed=args.seed if args.seed is not None else 0)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surgecast",
        description="Storm-surge emulation: synthetic data, a convolutional recurrent "
                    "network, and a PCA+GP baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic storm dataset")
    p.add_argument("--config", help="JSON generator config (defaults to the desk benchmark)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the surge network on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON architecture + training config")
    p.add_argument("--out", required=True, help="output directory for model and logs")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gp-train", help="fit the PCA+GP baseline emulator")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON GP config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gp_train)

    p = sub.add_parser("predict", help="write surge predictions for dataset storms")
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="compare emulators on the test storms")
    p.add_argument("--model", required=True, help="trained network model JSON")
    p.add_argument("--gp-model", help="fitted GP model JSON (optional)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for the report and plots")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", required=True, help="JSON config with a 'search' section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the search seed")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, help="seed for the full-model check")
    p.set_defaults(func=cmd_gradcheck)

    return parser


_ERROR_CATEGORIES = (
    (VersionError, "version-error"),
    (ConfigError, "config-error"),
    (ShapeError, "shape-error"),
    (ContractError, "contract-error"),
    (DataError, "data-error"),
    (TrainingDivergedError, "training-error"),
    (ConditioningError, "conditioning-error"),
    (OSError, "io-error"),
)


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except tuple(cat for cat, _ in _ERROR_CATEGORIES) as e:
        for cls, category in _ERROR_CATEGORIES:
            if isinstance(e, cls):
                print(f"{category}: {e}", file=sys.stderr)
                break
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
