"""Command-line interface: train, run, generate, evaluate, plot-data."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from candies import harness
from candies.errors import DataError, InvalidParameterError, NumericalError
from candies.mixture import MixtureModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("candies")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("--alpha-region", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--min-pts", type=int)
    p.add_argument("--buffer-capacity", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--lambda", dest="lambda_", type=int)
    p.add_argument("--ma", type=int)
    p.add_argument("--significance-p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--model-seed", type=int)


def _config(args) -> harness.ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    flags = {"alpha_region": args.alpha_region, "epsilon": args.epsilon, "min_pts": args.min_pts,
             "buffer_capacity": args.buffer_capacity, "omega": args.omega, "lambda": args.lambda_,
             "ma": args.ma, "significance_p": args.significance_p, "seed": args.seed,
             "model_seed": args.model_seed}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return harness.load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="candies", description="Online novelty detection for Gaussian mixture classifiers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="fit an initial classifier from a labeled CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("run", help="replay a stream against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--detector", choices=harness.DETECTORS, default="candies")
    p.add_argument("--telemetry", required=True, help="output JSONL, one record per sample")
    p.add_argument("--events", help="output JSONL of detection events")
    p.add_argument("--train-data", help="training CSV, needed for learned cells")
    _add_config_flags(p)

    p = sub.add_parser("generate", help="write a synthetic scenario")
    p.add_argument("--scenario", help="JSON scenario config; the built-in clouds layout when omitted")
    p.add_argument("--kdd-pool", help="labeled CSV to split into background and attack pools")
    p.add_argument("--attack-label")
    p.add_argument("--columns", help="comma-separated feature columns of the pool CSV")
    p.add_argument("--label-column", default="label")
    p.add_argument("--parts", default="10000,10000,5000")
    p.add_argument("--train-size", type=int, default=5000)
    p.add_argument("--with-replacement", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="metrics from telemetry and ground truth")
    p.add_argument("--telemetry", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="metrics JSON (stdout when omitted)")

    p = sub.add_parser("plot-data", help="tidy CSV of detector curves for external plotting")
    p.add_argument("--telemetry", required=True)
    p.add_argument("--out", required=True)
    return ap


def _load_model(path) -> tuple[MixtureModel, harness.Standardizer | None]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    model = MixtureModel.from_dict(doc)
    tf = doc.get("input_transform")
    return model, (harness.Standardizer.from_dict(tf) if tf else None)


def cmd_train(args) -> int:
    cfg = _config(args)
    X, labels = harness.read_stream_csv(args.data)
    tf = harness.Standardizer.fit(X) if cfg.standardize else None
    model = harness.train_initial_model(tf.transform(X) if tf else X, labels, cfg)
    doc = model.to_dict()
    doc["input_transform"] = tf.to_dict() if tf else None
    Path(args.out).write_text(json.dumps(doc) + "\n", encoding="utf-8")
    log.info("trained %d components on %d samples", model.n_components, len(X))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    model, tf = _load_model(args.model)
    X, labels = harness.read_stream_csv(args.stream)
    if X.shape[1] != model.dim:
        raise DataError(f"stream has {X.shape[1]} dimensions, model has {model.dim}")
    train_samples = None
    if args.train_data:
        train_samples, _ = harness.read_stream_csv(args.train_data)
        train_samples = tf.transform(train_samples) if tf else train_samples
    elif cfg.cells == "learned":
        raise UsageError("learned cells need --train-data")
    det = harness.build_detector(args.detector, model, cfg, train_samples=train_samples)
    tel, events = harness.replay(det, tf.transform(X) if tf else X, labels)
    harness.write_jsonl(args.telemetry, tel)
    if args.events:
        harness.write_jsonl(args.events, events)
    log.info("processed %d samples, %d events", len(tel), len(events))
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.kdd_pool:
        if not args.attack_label:
            raise UsageError("--kdd-pool needs --attack-label")
        cols = args.columns.split(",") if args.columns else list(harness.DEFAULT_KDD_COLUMNS)
        X, labels = harness.read_stream_csv(args.kdd_pool, columns=cols, label_column=args.label_column)
        if labels is None:
            raise DataError(f"pool CSV has no {args.label_column!r} column")
        is_attack = np.array([lab == args.attack_label for lab in labels])
        try:
            parts = tuple(int(v) for v in args.parts.split(","))
        except ValueError as exc:
            raise UsageError(f"--parts: {exc}") from exc
        if len(parts) != 3:
            raise UsageError("--parts expects three sizes")
        scenario = harness.generate_kdd_style(X[~is_attack], X[is_attack], args.seed,
                                              attack_label=args.attack_label, parts=parts,
                                              train_size=args.train_size,
                                              allow_replacement=args.with_replacement)
    else:
        if args.scenario:
            try:
                doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise InvalidParameterError(f"cannot read scenario config: {exc}") from exc
            config = harness.CloudsConfig.from_dict(doc)
        else:
            config = harness.default_clouds_config()
        scenario = harness.generate_clouds_like(config, args.seed)
    paths = harness.save_scenario(scenario, args.out_dir)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tel = harness.read_jsonl(args.telemetry)
    truth = harness.load_truth(args.truth)
    metrics = harness.evaluate(tel, truth)
    text = json.dumps(metrics, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    tel = harness.read_jsonl(args.telemetry)
    harness.write_plot_csv(args.out, harness.plot_rows(tel))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "run": cmd_run, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "plot-data": cmd_plot_data}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"candies: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"candies: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"candies: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"candies: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
