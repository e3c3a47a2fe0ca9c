"""Command-line entry point.

Verbs: generate, label-check, tokenize, train, predict, eval, sound-subset,
score-tool, sweep, remap-eval, stats, run. See README.md for a walkthrough.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, memnet, pipeline, tokenizer
from .codegen import DatasetManifest, GenConfig, derive_seed
from .memnet import HyperParams
from .tokenizer import Vocab


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bufbench",
        description="Synthetic buffer-write benchmarks: generation, labeling, "
                    "memory-network training, and analyzer scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a labeled dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-cf-nodes", type=int, default=3)
    p.add_argument("--int-max", type=int, default=99)
    p.add_argument("--max-entities", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("label-check",
                       help="brute-force cross-check of manifest labels")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--domain-max", type=int, default=200)

    p = sub.add_parser("tokenize", help="encode a dataset into token grids")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True,
                   help="vocabulary file; reused when it already exists")
    p.add_argument("--lines", type=int, default=None,
                   help="grid line count (default: corpus maximum)")
    p.add_argument("--row-tokens", type=int, default=None,
                   help="grid tokens per row (default: corpus maximum)")

    p = sub.add_parser("train", help="train a memory network")
    p.add_argument("--tensors", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hops", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--val-tensors", type=Path, default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("predict", help="run a checkpoint over a tensor file")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--tensors", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score a checkpoint against a manifest")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--tensors", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sound-subset", help="report the sound-subset filter")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("score-tool", help="score an analyzer warning report")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("sweep", help="training-set-size sweep")
    p.add_argument("--sizes", required=True,
                   help="comma-separated training set sizes")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--test-count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("remap-eval",
                       help="rerun checkpoints on an integer-remapped dataset")
    p.add_argument("--ckpt", type=Path, nargs="+", required=True)
    p.add_argument("--tensors", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("config", type=Path)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (pipeline.ConfigFileError, evaluation.EvalError,
            evaluation.ReportError, memnet.MemNetError,
            tokenizer.TokenizeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "generate":
        cfg = GenConfig(seed=args.seed, file_count=args.count,
                        max_entities=args.max_entities,
                        int_range=(0, args.int_max),
                        max_cf_nodes=args.max_cf_nodes)
        manifest = pipeline.generate_split(cfg, args.out, jobs=args.jobs)
        writes = sum(len(e.writes) for e in manifest.entries)
        print(f"generated {len(manifest.entries)} files, {writes} buffer writes "
              f"-> {args.out}")
        return 0

    if args.command == "label-check":
        result = pipeline.label_check(
            args.manifest, args.manifest.parent,
            sample=args.sample, domain=(0, args.domain_max))
        print(f"checked {result['files']} files, {result['writes']} writes")
        print(f"agreement: {100.0 * result['agreement']:.2f}%")
        for m in result["mismatches"]:
            print(f"  MISMATCH {m['file']}:{m['line']} stored={m['stored']} "
                  f"classified={m['classified']} brute={m['brute_force']}")
        return 0 if not result["mismatches"] else 1

    if args.command == "tokenize":
        data_dir = args.manifest.parent
        manifest = DatasetManifest.load(args.manifest)
        sources = pipeline.read_sources(manifest, data_dir)
        n_lines, n_tokens = tokenizer.corpus_dims(sources)
        if args.lines is not None:
            n_lines = args.lines
        if args.row_tokens is not None:
            n_tokens = args.row_tokens
        if args.vocab.exists():
            vocab = Vocab.load(args.vocab)
        else:
            vocab = tokenizer.build_vocab(sources, n_lines)
            vocab.save(args.vocab)
        ds = tokenizer.encode_dataset(manifest, data_dir / "src", vocab,
                                      n_lines, n_tokens)
        tokenizer.save_tensors(args.out, ds)
        nf, n, j = ds.shape
        print(f"encoded {nf} files (N={n}, J={j}, V={ds.vocab_size}, "
              f"{ds.n_queries} queries) -> {args.out}")
        return 0

    if args.command == "train":
        hyper = HyperParams(dim=args.dim, hops=args.hops, dropout=args.dropout,
                            lr=args.lr, epochs=args.epochs,
                            batch_size=args.batch, seed=args.seed)
        ds = tokenizer.load_tensors(args.tensors)
        val = tokenizer.load_tensors(args.val_tensors) if args.val_tensors else None
        log = None
        if not args.quiet:
            def log(epoch, history):
                val_part = ""
                if history.val_f1[-1] is not None:
                    val_part = f"  val_f1 {history.val_f1[-1]:.4f}"
                print(f"epoch {epoch + 1:3d}  loss {history.epoch_loss[-1]:.4f}"
                      f"{val_part}")
        params, _ = memnet.train(ds, hyper, val=val, log=log)
        vocab = Vocab.load(args.vocab)
        memnet.save_checkpoint(args.out, params, hyper, vocab.sha256())
        print(f"checkpoint -> {args.out}")
        return 0

    if args.command == "predict":
        params, _, _ = memnet.load_checkpoint(args.ckpt)
        ds = tokenizer.load_tensors(args.tensors)
        manifest = DatasetManifest.load(args.manifest)
        preds, probs = memnet.predict(params, ds)
        pipeline.write_predictions(args.out, manifest, preds, probs)
        print(f"{len(preds)} predictions -> {args.out}")
        return 0

    if args.command == "eval":
        params, _, _ = memnet.load_checkpoint(args.ckpt)
        ds = tokenizer.load_tensors(args.tensors)
        manifest = DatasetManifest.load(args.manifest)
        preds, probs = memnet.predict(params, ds)
        report = evaluation.evaluate_predictions(manifest, preds)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.csv").write_text(evaluation.format_metrics_csv([
            ("full", report.metrics_full), ("sound", report.metrics_sound),
        ]), encoding="utf-8")
        (args.out / "confusion.csv").write_text(
            evaluation.format_confusion_csv(report.confusion4), encoding="utf-8")
        pipeline.write_predictions(args.out / "preds.json", manifest, preds, probs)
        m = report.metrics_full
        print(f"full set: precision {m.precision:.4f}  recall {m.recall:.4f}  "
              f"f1 {m.f1:.4f}")
        m = report.metrics_sound
        print(f"sound subset: precision {m.precision:.4f}  recall {m.recall:.4f}  "
              f"f1 {m.f1:.4f}")
        return 0

    if args.command == "sound-subset":
        manifest = DatasetManifest.load(args.manifest)
        subset = evaluation.sound_subset(manifest)
        print(f"retained {subset.retained_writes} of {subset.total_writes} "
              f"writes ({100.0 * subset.retention_fraction:.1f}%)")
        return 0

    if args.command == "score-tool":
        result = pipeline.run_score_tool(args.report, args.manifest, args.out)
        for name in ("full", "sound"):
            m = result[name]
            print(f"{name}: precision {m.precision:.4f}  recall {m.recall:.4f}  "
                  f"f1 {m.f1:.4f}  (tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn})")
        print(f"off-target warnings (not scored): {result['off_target_warnings']}")
        if result["unresolved_files"]:
            print(f"unresolved files: {', '.join(result['unresolved_files'])}")
        return 0

    if args.command == "sweep":
        sizes = [int(s) for s in args.sizes.split(",") if s]
        config = pipeline.ExperimentConfig(
            kind="sweep", seed=args.seed, out=args.out,
            gen={"test_files": args.test_count},
            hyper={"epochs": args.epochs},
            runs_per_setting=args.runs, sweep_sizes=sizes,
            report=None, jobs=args.jobs)
        outcome = pipeline.run_sweep(config)
        for size, stats in sorted(outcome["by_size"].items()):
            lo, med, hi = stats["f1_full"]
            print(f"size {size}: f1 full min/median/max = "
                  f"{lo:.4f}/{med:.4f}/{hi:.4f}")
        return 0

    if args.command == "remap-eval":
        vocab = Vocab.load(args.vocab)
        ds = tokenizer.load_tensors(args.tensors)
        param_list = [memnet.load_checkpoint(c)[0] for c in args.ckpt]
        before, after, _ = evaluation.remap_experiment(param_list, ds, vocab)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "confusion_before.csv").write_text(
            evaluation.format_confusion_csv(before), encoding="utf-8")
        (args.out / "confusion_after.csv").write_text(
            evaluation.format_confusion_csv(after), encoding="utf-8")
        print(f"cross-block mass before: {evaluation.cross_block_mass(before):.4f}")
        print(f"cross-block mass after:  {evaluation.cross_block_mass(after):.4f}")
        return 0

    if args.command == "stats":
        stats = pipeline.dataset_stats(args.manifest, args.manifest.parent)
        print(f"files: {stats['files']}")
        print(f"buffer writes: {stats['buffer_writes']}")
        for name, count in stats["label_counts"].items():
            print(f"  {name}: {count}")
        print(f"grid geometry: N={stats['max_lines']} J={stats['max_tokens_per_line']} "
              f"V={stats['vocab_size']}")
        print(f"sound subset: {stats['sound_subset_retained']} retained "
              f"({100.0 * stats['sound_subset_fraction']:.1f}%; "
              f"reference corpus retained 67%)")
        return 0

    if args.command == "run":
        outcome = pipeline.run_experiment(args.config)
        print(json.dumps(_jsonable(outcome), indent=2, default=str))
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, evaluation.Metrics):
        return obj.__dict__
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


if __name__ == "__main__":
    sys.exit(main())
