"""Command-line pipeline driver.

Subcommands: synth-corpus, screen, featurize, train-svm, train-cnn,
pretrain-ssl, train-ssl-head, eval, ablate. Every run writes its
artifacts plus a run_metadata.json (config snapshot, seed, version) into
the --out directory. Errors print one machine-readable line to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from coughgate import __version__
from coughgate import cnn as cnn_mod
from coughgate import corpus
from coughgate import dataset
from coughgate import evaluate
from coughgate import features
from coughgate import ssl_model as ssl_mod
from coughgate import svm as svm_mod
from coughgate.audio_io import AudioBuffer, AudioDecodeError, load_wav_mono
from coughgate.config import (
    ConfigError,
    RunConfig,
    cnn_train_config,
    gate_thresholds,
    load_config,
    ssl_configs,
    svm_params,
)
from coughgate.dataset import ManifestError
from coughgate.quality import CoughSegment, screen


def _error(command: str, message: str) -> None:
    print("ERROR " + json.dumps({"command": command, "message": message}), file=sys.stderr)


def _base_parser(prog: str, description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=f"coughgate {prog}", description=description)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="config override (repeatable)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def _write_metadata(out_dir: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    doc = {
        "tool": "coughgate",
        "version": __version__,
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": cfg.values,
    }
    doc.update(extra or {})
    (out_dir / "run_metadata.json").write_text(json.dumps(doc, indent=2, default=str))


def _prepare_split(
    manifest_path: str, split: str, cfg: RunConfig, labeled_only: bool = True
) -> list[corpus.CoughExample]:
    manifest = dataset.parse_manifest(manifest_path)
    records = dataset.select_split(manifest, split, labeled_only=labeled_only)
    examples, failures = corpus.prepare_examples(
        records,
        thresholds=gate_thresholds(cfg),
        base_dir=Path(manifest_path).parent,
        workers=cfg.get("run", "workers"),
    )
    for record, report in failures:
        print(
            f"note: {record.id} failed quality gate ({', '.join(report.failed_checks)})",
            file=sys.stderr,
        )
    return examples


def cmd_synth_corpus(argv: list[str]) -> int:
    parser = _base_parser("synth-corpus", "Generate the synthetic labeled corpus")
    parser.add_argument("--seed", type=int, default=None)
    for flag in ("--n-train", "--n-validation", "--n-test", "--n-unlabeled"):
        parser.add_argument(flag, type=int, default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.get("run", "seed")
    counts = {
        key: getattr(args, f"n_{key}") if getattr(args, f"n_{key}") is not None
        else cfg.get("synth", f"n_{key}")
        for key in ("train", "validation", "test", "unlabeled")
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = corpus.synth_corpus_splits(
        out,
        rng_seed=seed,
        n_train=counts["train"],
        n_validation=counts["validation"],
        n_test=counts["test"],
        n_unlabeled=counts["unlabeled"],
    )
    dataset.write_manifest(manifest, out / "manifest.csv")
    _write_metadata(out, "synth-corpus", cfg, {"seed": seed, "records": len(manifest.records)})
    print(json.dumps({"manifest": str(out / "manifest.csv"), "records": len(manifest.records)}))
    return 0


def cmd_screen(argv: list[str]) -> int:
    parser = _base_parser("screen", "Run the five-check quality gate over a manifest")
    parser.add_argument("manifest")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    thresholds = gate_thresholds(cfg)
    manifest = dataset.parse_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    kept = []
    with (out / "screen_reports.jsonl").open("w") as fh:
        for record in manifest.records:
            path = base / record.audio_path
            buffer = load_wav_mono(path, target_rate=corpus.SAMPLE_RATE)
            report = screen(buffer, thresholds)
            fh.write(json.dumps({"id": record.id, **report.to_json_dict()}) + "\n")
            if report.passed:
                kept.append(record)
    dataset.write_manifest(dataset.DatasetManifest(kept), out / "filtered_manifest.csv")
    _write_metadata(
        out, "screen", cfg, {"total": len(manifest.records), "passed": len(kept)}
    )
    print(json.dumps({"total": len(manifest.records), "passed": len(kept)}))
    return 0


def cmd_featurize(argv: list[str]) -> int:
    parser = _base_parser("featurize", "Write per-record feature caches")
    parser.add_argument("manifest")
    parser.add_argument("--kind", required=True, choices=("svm", "sonograph", "spectrogram"))
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    manifest = dataset.parse_manifest(args.manifest)
    examples, failures = corpus.prepare_examples(
        manifest.records,
        thresholds=gate_thresholds(cfg),
        base_dir=Path(args.manifest).parent,
        workers=cfg.get("run", "workers"),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for ex in examples:
        buf = AudioBuffer(ex.cough, corpus.SAMPLE_RATE)
        whole = [CoughSegment(0, len(ex.cough))]
        if args.kind == "svm":
            matrix = features.svm_feature_vector(buf, whole, record_id=ex.id).values
        elif args.kind == "sonograph":
            matrix = features.build_sonograph(buf, whole, record_id=ex.id).values
        else:
            matrix = features.stft_log_spectrogram(buf, features.StftConfig()).values
        features.write_matrix(out / f"{ex.id}.bin", matrix)
        written.append(ex.id)
    index = {
        "kind": args.kind,
        "written": written,
        "skipped": [record.id for record, _ in failures],
    }
    (out / "featurize_index.json").write_text(json.dumps(index, indent=2))
    _write_metadata(out, "featurize", cfg, {"written": len(written)})
    print(json.dumps({"written": len(written), "skipped": len(index["skipped"])}))
    return 0


def _svm_vectors(examples: list[corpus.CoughExample]) -> list[features.SvmFeatureVector]:
    out = []
    for ex in examples:
        buf = AudioBuffer(ex.cough, corpus.SAMPLE_RATE)
        out.append(
            features.svm_feature_vector(buf, [CoughSegment(0, len(ex.cough))], record_id=ex.id)
        )
    return out


def cmd_train_svm(argv: list[str]) -> int:
    parser = _base_parser("train-svm", "Train the RBF-SVM baseline with Platt scaling")
    parser.add_argument("manifest")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.get("run", "seed")

    train = _prepare_split(args.manifest, "train", cfg)
    raw_vectors = _svm_vectors(train)
    vectors, stats = features.normalize_features(raw_vectors)
    x = np.stack([v.values for v in vectors])
    y = np.array([1 if ex.label == 1 else -1 for ex in train])
    model = svm_mod.train_svm(x, y, svm_params(cfg), rng_seed=seed)
    model.stats = stats
    model.platt = svm_mod.fit_platt(svm_mod.decision_values(model, x), y)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svm_mod.save_svm(out / "svm_model.json", model)
    _write_metadata(
        out,
        "train-svm",
        cfg,
        {"seed": seed, "train_records": len(train), "support_vectors": len(model.coefficients)},
    )
    print(json.dumps({"model": str(out / "svm_model.json"), "n_sv": len(model.coefficients)}))
    return 0


def cmd_train_cnn(argv: list[str]) -> int:
    parser = _base_parser("train-cnn", "Train the sonograph CNN")
    parser.add_argument("manifest")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.get("run", "seed")
    arch, train_cfg = cnn_train_config(cfg)

    train = _prepare_split(args.manifest, "train", cfg)
    val = _prepare_split(args.manifest, "validation", cfg)
    model, history = cnn_mod.train_cnn(train, val, train_cfg, rng_seed=seed, arch_name=arch)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cnn_mod.save_cnn(
        out,
        model,
        {"best_epoch": history["best_epoch"], "best_val_auc": history["best_val_auc"], "seed": seed},
    )
    (out / "history.json").write_text(evaluate.dumps_json(history))
    _write_metadata(out, "train-cnn", cfg, {"seed": seed, "best_val_auc": history["best_val_auc"]})
    print(json.dumps({"best_val_auc": history["best_val_auc"], "out": str(out)}))
    return 0


def cmd_pretrain_ssl(argv: list[str]) -> int:
    parser = _base_parser("pretrain-ssl", "Masked-spectrogram upstream pretraining")
    parser.add_argument("manifest")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.get("run", "seed")
    econfig, uconfig, _ = ssl_configs(cfg)

    train = _prepare_split(args.manifest, "train", cfg, labeled_only=False)
    encoder, history = ssl_mod.pretrain_upstream(train, uconfig, econfig, rng_seed=seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ssl_mod.save_ssl(out, encoder, sidecar={"seed": seed, "upstream_steps": uconfig.total_steps})
    (out / "upstream_history.json").write_text(evaluate.dumps_json(list(history)))
    _write_metadata(out, "pretrain-ssl", cfg, {"seed": seed, "final_loss": float(history[-1])})
    print(json.dumps({"out": str(out), "final_loss": float(history[-1])}))
    return 0


def cmd_train_ssl_head(argv: list[str]) -> int:
    parser = _base_parser("train-ssl-head", "Train the frozen-encoder downstream head")
    parser.add_argument("manifest")
    parser.add_argument("--encoder", required=True, help="directory with the pretrained encoder")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.get("run", "seed")
    _, _, dconfig = ssl_configs(cfg)

    encoder, _ = ssl_mod.load_ssl(args.encoder)
    train = _prepare_split(args.manifest, "train", cfg)
    val = _prepare_split(args.manifest, "validation", cfg)
    head, history = ssl_mod.train_downstream(train, val, encoder, dconfig, rng_seed=seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ssl_mod.save_ssl(
        out,
        encoder,
        head,
        sidecar={"seed": seed, "best_val_auc": history["best_val_auc"], "best_step": history["best_step"]},
    )
    (out / "downstream_history.json").write_text(
        evaluate.dumps_json(
            {
                "losses": list(history["losses"]),
                "evals": [[s, a] for s, a in history["evals"]],
                "best_step": history["best_step"],
                "best_val_auc": history["best_val_auc"],
            }
        )
    )
    _write_metadata(out, "train-ssl-head", cfg, {"seed": seed, "best_val_auc": history["best_val_auc"]})
    print(json.dumps({"best_val_auc": history["best_val_auc"], "out": str(out)}))
    return 0


def _detect_model(path: str):
    p = Path(path)
    if p.is_dir():
        if (p / "cnn_model.json").exists():
            return "cnn", cnn_mod.load_cnn(p)
        if (p / "ssl_model.json").exists():
            encoder, head = ssl_mod.load_ssl(p)
            if head is None:
                raise ValueError("ssl checkpoint has no downstream head; run train-ssl-head")
            return "ssl", (encoder, head)
        raise ValueError(f"no model checkpoint found in {p}")
    if p.suffix == ".json":
        return "svm", svm_mod.load_svm(p)
    raise ValueError(f"unrecognized model path {p}")


def _score_examples(kind: str, model, examples: list[corpus.CoughExample]) -> np.ndarray:
    if kind == "svm":
        raw = _svm_vectors(examples)
        vectors, _ = features.normalize_features(raw, model.stats)
        x = np.stack([v.values for v in vectors])
        return svm_mod.predict_proba(model, model.platt, x)
    if kind == "cnn":
        sonos = np.stack([cnn_mod.example_sonograph(ex).values for ex in examples])
        return cnn_mod.predict_cnn_batch(model, sonos)
    encoder, head = model
    reps = ssl_mod.encode_examples(encoder, examples)
    return np.array([head.predict(rep) for rep in reps])


def cmd_eval(argv: list[str]) -> int:
    parser = _base_parser("eval", "Evaluate a trained model on one split")
    parser.add_argument("model", help="svm_model.json or a cnn/ssl checkpoint directory")
    parser.add_argument("manifest")
    parser.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    parser.add_argument("--threshold", type=float, default=0.5)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)

    kind, model = _detect_model(args.model)
    examples = _prepare_split(args.manifest, args.split, cfg)
    if not examples:
        raise ValueError(f"no usable records in split {args.split!r}")
    probs = _score_examples(kind, model, examples)
    labels = np.array([ex.label for ex in examples])
    report = evaluate.evaluate_scores(evaluate.ScoredSet(probs, labels), args.threshold)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = evaluate.emit_report(report, out, f"eval_{kind}_{args.split}")
    _write_metadata(out, "eval", cfg, {"model": args.model, "split": args.split, "auc": report.auc})
    print(json.dumps({"auc": report.auc, "accuracy": report.accuracy, "files": [str(p) for p in paths]}))
    return 0


def cmd_ablate(argv: list[str]) -> int:
    parser = _base_parser("ablate", "Sample-size ablation over the train split")
    parser.add_argument("manifest")
    parser.add_argument("--model", required=True, choices=("svm", "cnn", "ssl"))
    parser.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    parser.add_argument("--seeds", default="0")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    fractions = [float(f) for f in args.fractions.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]

    train = _prepare_split(args.manifest, "train", cfg)
    val = _prepare_split(args.manifest, "validation", cfg)
    val_labels = np.array([ex.label for ex in val])

    def run_fn(subset: list[corpus.CoughExample], seed: int) -> evaluate.EvalReport:
        if args.model == "svm":
            raw = _svm_vectors(subset)
            vectors, stats = features.normalize_features(raw)
            x = np.stack([v.values for v in vectors])
            y = np.array([1 if ex.label == 1 else -1 for ex in subset])
            model = svm_mod.train_svm(x, y, svm_params(cfg), rng_seed=seed)
            model.stats = stats
            model.platt = svm_mod.fit_platt(svm_mod.decision_values(model, x), y)
            probs = _score_examples("svm", model, val)
        elif args.model == "cnn":
            arch, train_cfg = cnn_train_config(cfg)
            model, _ = cnn_mod.train_cnn(subset, val, train_cfg, rng_seed=seed, arch_name=arch)
            probs = _score_examples("cnn", model, val)
        else:
            econfig, uconfig, dconfig = ssl_configs(cfg)
            encoder, _ = ssl_mod.pretrain_upstream(subset, uconfig, econfig, rng_seed=seed)
            head, _ = ssl_mod.train_downstream(subset, val, encoder, dconfig, rng_seed=seed)
            probs = _score_examples("ssl", (encoder, head), val)
        return evaluate.evaluate_scores(evaluate.ScoredSet(probs, val_labels))

    table = evaluate.ablate(run_fn, train, fractions, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = evaluate.emit_report(table, out, f"ablation_{args.model}")
    _write_metadata(out, "ablate", cfg, {"model": args.model, "rows": len(table.rows)})
    print(
        json.dumps(
            {
                "rows": [[r.fraction, r.seed, r.report.auc] for r in table.rows],
                "files": [str(p) for p in paths],
            }
        )
    )
    return 0


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "screen": cmd_screen,
    "featurize": cmd_featurize,
    "train-svm": cmd_train_svm,
    "train-cnn": cmd_train_cnn,
    "pretrain-ssl": cmd_pretrain_ssl,
    "train-ssl-head": cmd_train_ssl_head,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        names = ", ".join(sorted(COMMANDS))
        print(f"coughgate {__version__} — subcommands: {names}")
        return 0 if argv else 2
    if argv[0] == "--version":
        print(__version__)
        return 0
    command = argv[0]
    if command not in COMMANDS:
        _error(command, f"unknown subcommand {command!r}")
        return 2
    try:
        return COMMANDS[command](argv[1:])
    except (
        ConfigError,
        ManifestError,
        AudioDecodeError,
        ValueError,
        OSError,
        KeyError,
    ) as exc:
        _error(command, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
