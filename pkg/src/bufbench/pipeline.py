"""Experiment orchestration: wiring generation, labeling, tokenization,
training, and evaluation into reproducible runs.

Every stage seed is derived from one root seed plus a stage name, so adding
stages never perturbs earlier randomness, and every artifact can be rebuilt
from the run manifest alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, evaluation, memnet, oracle, tokenizer
from .codegen import (
    DatasetManifest,
    GENERATOR_VERSION,
    GenConfig,
    derive_seed,
    generate_dataset,
    generate_program,
)
from .evaluation import EvalReport, Metrics
from .memnet import HyperParams
from .tokenizer import LABEL4_NAMES, TensorDataset, Vocab

CONFIG_VERSION = 1
EXPERIMENT_KINDS = ("train-eval", "sweep", "remap", "score-tool")


class ConfigFileError(ValueError):
    """Experiment config missing or malformed; message names the field."""


# ---------------------------------------------------------------------------
# Dataset materialization and tokenization
# ---------------------------------------------------------------------------


def generate_split(cfg: GenConfig, out_dir: Path, jobs: int = 1) -> DatasetManifest:
    out_dir = Path(out_dir)
    if (out_dir / "manifest.json").exists():
        return DatasetManifest.load(out_dir / "manifest.json")
    return generate_dataset(cfg, out_dir, jobs=jobs)


def read_sources(manifest: DatasetManifest, data_dir: Path) -> list[str]:
    src = Path(data_dir) / "src"
    return [(src / e.file).read_text(encoding="utf-8") for e in manifest.entries]


def tokenize_splits(split_dirs: list[Path], vocab_path: Path,
                    tensor_paths: list[Path]) -> tuple[Vocab, int, int]:
    """Build one vocabulary/grid geometry for several dataset splits.

    Grid dimensions (N, J) are the maxima over all splits so every split
    shares one geometry, and the vocabulary covers the whole experiment
    corpus (one consistent token mapping, as when preprocessing all files
    into a single array). At benchmark scale the training split alone
    already covers every token; see the tested closure property.
    """
    manifests = [DatasetManifest.load(Path(d) / "manifest.json") for d in split_dirs]
    sources = [read_sources(m, d) for m, d in zip(manifests, split_dirs)]
    n_lines = 0
    n_tokens = 0
    for texts in sources:
        n, j = tokenizer.corpus_dims(texts)
        n_lines = max(n_lines, n)
        n_tokens = max(n_tokens, j)
    vocab = tokenizer.build_vocab([t for texts in sources for t in texts], n_lines)
    vocab.save(vocab_path)
    for manifest, texts_dir, tensor_path in zip(manifests, split_dirs, tensor_paths):
        ds = tokenizer.encode_dataset(manifest, Path(texts_dir) / "src", vocab,
                                      n_lines, n_tokens)
        tokenizer.save_tensors(tensor_path, ds)
    return vocab, n_lines, n_tokens


# ---------------------------------------------------------------------------
# Single training run (top-level so process pools can pickle it)
# ---------------------------------------------------------------------------


def train_eval_run(train_tensors: str, test_tensors: str, test_manifest: str,
                   vocab_path: str, hyper_dict: dict, run_dir: str) -> dict:
    """Train one network, evaluate on the test split, write run artifacts.

    Produces ckpt.bin, history.json, preds.json, metrics.csv,
    confusion.csv, and run_summary.json under run_dir; returns the summary
    row. A completed run directory (same deterministic inputs) is reused
    rather than retrained, so interrupted experiments resume per run.
    """
    rd = Path(run_dir)
    rd.mkdir(parents=True, exist_ok=True)
    hyper = HyperParams.from_dict(hyper_dict)
    summary_path = rd / "run_summary.json"
    if summary_path.exists():
        stored = json.loads(summary_path.read_text(encoding="utf-8"))
        if stored.get("seed") == hyper.seed:
            return stored
    train_ds = tokenizer.load_tensors(train_tensors)
    test_ds = tokenizer.load_tensors(test_tensors)
    manifest = DatasetManifest.load(test_manifest)
    vocab = Vocab.load(vocab_path)

    t0 = time.time()
    params, history = memnet.train(train_ds, hyper)
    train_time = time.time() - t0
    memnet.save_checkpoint(rd / "ckpt.bin", params, hyper, vocab.sha256())
    (rd / "history.json").write_text(json.dumps({
        "epoch_loss": history.epoch_loss,
        "val_f1": history.val_f1,
        "clamp_events": history.clamp_events,
    }, indent=2) + "\n", encoding="utf-8")

    preds, probs = memnet.predict(params, test_ds)
    report = evaluation.evaluate_predictions(manifest, preds)
    write_predictions(rd / "preds.json", manifest, preds, probs)
    (rd / "metrics.csv").write_text(evaluation.format_metrics_csv([
        ("full", report.metrics_full), ("sound", report.metrics_sound),
    ]), encoding="utf-8")
    (rd / "confusion.csv").write_text(
        evaluation.format_confusion_csv(report.confusion4), encoding="utf-8")
    summary = {
        "seed": hyper.seed,
        "f1_full": report.metrics_full.f1,
        "precision_full": report.metrics_full.precision,
        "recall_full": report.metrics_full.recall,
        "f1_sound": report.metrics_sound.f1,
        "precision_sound": report.metrics_sound.precision,
        "recall_sound": report.metrics_sound.recall,
        "train_seconds": train_time,
    }
    summary_path.write_text(json.dumps(summary) + "\n", encoding="utf-8")
    return summary


def write_predictions(path: Path, manifest: DatasetManifest,
                      pred_labels: np.ndarray, probs: np.ndarray) -> None:
    queries = evaluation.manifest_queries(manifest)
    rows = []
    for q, label, p in zip(queries, pred_labels, probs):
        rows.append({
            "file": q.file,
            "line": q.line,
            "predicted": LABEL4_NAMES[int(label)],
            "probabilities": [float(x) for x in p],
        })
    Path(path).write_text(json.dumps({"queries": rows}, indent=2) + "\n",
                          encoding="utf-8")


def run_many(run_args: list[tuple], jobs: int = 1) -> list[dict]:
    """Execute train_eval_run for several argument tuples, optionally in
    parallel; results come back in submission order."""
    if jobs <= 1 or len(run_args) <= 1:
        return [train_eval_run(*args) for args in run_args]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(train_eval_run, *args) for args in run_args]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    out: Path
    gen: dict
    hyper: dict
    runs_per_setting: int
    sweep_sizes: list
    report: str | None
    jobs: int

    @staticmethod
    def load(path: Path | str) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"config is not valid JSON: {exc}")
        return ExperimentConfig.from_dict(doc)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        def need(path: str):
            node = doc
            for part in path.split("."):
                if not isinstance(node, dict) or part not in node:
                    raise ConfigFileError(f"missing field: {path}")
                node = node[part]
            return node

        version = need("version")
        if version != CONFIG_VERSION:
            raise ConfigFileError(f"unsupported config version {version}")
        kind = need("kind")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigFileError(
                f"kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        cfg = ExperimentConfig(
            kind=kind,
            seed=int(need("seed")),
            out=Path(need("out")),
            gen=dict(doc.get("gen", {})),
            hyper=dict(doc.get("hyper", {})),
            runs_per_setting=int(doc.get("runs_per_setting", 1)),
            sweep_sizes=list(doc.get("sweep_sizes", [])),
            report=doc.get("report"),
            jobs=int(doc.get("jobs", 1)),
        )
        if kind in ("train-eval", "sweep"):
            need("gen.test_files")
        if kind == "train-eval":
            need("gen.train_files")
        if kind == "sweep" and not cfg.sweep_sizes:
            raise ConfigFileError("missing field: sweep_sizes")
        if kind == "score-tool" and not cfg.report:
            raise ConfigFileError("missing field: report")
        return cfg

    def gen_config(self, seed: int, file_count: int) -> GenConfig:
        g = self.gen
        return GenConfig(
            seed=seed,
            file_count=file_count,
            max_entities=int(g.get("max_entities", 10)),
            int_range=tuple(g.get("int_range", (0, 99))),
            max_cf_nodes=int(g.get("max_cf_nodes", 3)),
            max_nesting=int(g.get("max_nesting", 2)),
            writes_per_file=tuple(g.get("writes_per_file", (1, 3))),
        )

    def hyper_params(self, seed: int) -> HyperParams:
        h = dict(self.hyper)
        h.setdefault("dim", 32)
        h.setdefault("hops", 3)
        h.setdefault("classes", 4)
        h.setdefault("dropout", 0.3)
        h.setdefault("lr", 1e-3)
        h.setdefault("epochs", 30)
        h.setdefault("batch_size", 32)
        h["seed"] = seed
        return HyperParams.from_dict(h)


def _write_run_manifest(out: Path, config_echo: dict, seeds: dict,
                        artifacts: dict, wall_clock: float) -> None:
    (out / "run_manifest.json").write_text(json.dumps({
        "package_version": __version__,
        "generator_version": GENERATOR_VERSION,
        "config": config_echo,
        "derived_seeds": seeds,
        "artifacts": artifacts,
        "wall_clock_seconds": wall_clock,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_train_eval(config: ExperimentConfig) -> dict:
    """Generate train/test data, train runs_per_setting networks, evaluate."""
    t0 = time.time()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = {
        "gen_train": derive_seed(config.seed, "gen-train"),
        "gen_test": derive_seed(config.seed, "gen-test"),
        "split": derive_seed(config.seed, "split"),
    }
    train_dir = out / "data" / "train"
    test_dir = out / "data" / "test"
    generate_split(config.gen_config(seeds["gen_train"],
                                     int(config.gen["train_files"])),
                   train_dir, config.jobs)
    generate_split(config.gen_config(seeds["gen_test"],
                                     int(config.gen["test_files"])),
                   test_dir, config.jobs)
    vocab_path = out / "vocab.json"
    train_tensors = out / "train.tensors"
    test_tensors = out / "test.tensors"
    tokenize_splits([train_dir, test_dir], vocab_path,
                    [train_tensors, test_tensors])

    run_args = []
    for run in range(config.runs_per_setting):
        run_seed = derive_seed(config.seed, "train", run)
        seeds[f"train_run{run}"] = run_seed
        hyper = config.hyper_params(run_seed)
        run_args.append((str(train_tensors), str(test_tensors),
                         str(test_dir / "manifest.json"), str(vocab_path),
                         hyper.to_dict(), str(out / "runs" / f"run{run}")))
    results = run_many(run_args, config.jobs)

    rows = ["run,seed,precision_full,recall_full,f1_full,"
            "precision_sound,recall_sound,f1_sound,train_seconds"]
    for run, res in enumerate(results):
        rows.append(f"{run},{res['seed']},{res['precision_full']!r},"
                    f"{res['recall_full']!r},{res['f1_full']!r},"
                    f"{res['precision_sound']!r},{res['recall_sound']!r},"
                    f"{res['f1_sound']!r},{res['train_seconds']:.1f}")
    (out / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    f1s = [res["f1_full"] for res in results]
    outcome = {
        "runs": results,
        "median_f1_full": float(np.median(f1s)),
        "median_f1_sound": float(np.median([r["f1_sound"] for r in results])),
    }
    _write_run_manifest(out, _echo(config), seeds, {
        "summary": str(out / "summary.csv"),
        "runs": [str(out / "runs" / f"run{i}") for i in range(len(results))],
    }, time.time() - t0)
    return outcome


def run_sweep(config: ExperimentConfig) -> dict:
    """Training-set-size sweep: shared test split, fresh networks per size."""
    t0 = time.time()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds: dict = {"gen_test": derive_seed(config.seed, "gen-test")}
    test_dir = out / "data" / "test"
    generate_split(config.gen_config(seeds["gen_test"],
                                     int(config.gen["test_files"])),
                   test_dir, config.jobs)

    size_dirs = []
    for size in config.sweep_sizes:
        seeds[f"gen_train_{size}"] = derive_seed(config.seed, "gen-train", size)
        d = out / "data" / f"train_{size}"
        generate_split(config.gen_config(seeds[f"gen_train_{size}"], int(size)),
                       d, config.jobs)
        size_dirs.append(d)

    vocab_path = out / "vocab.json"
    tensor_paths = [out / f"train_{size}.tensors" for size in config.sweep_sizes]
    test_tensors = out / "test.tensors"
    tokenize_splits(size_dirs + [test_dir], vocab_path,
                    tensor_paths + [test_tensors])

    run_args = []
    keys = []
    for size, tensors in zip(config.sweep_sizes, tensor_paths):
        for run in range(config.runs_per_setting):
            run_seed = derive_seed(config.seed, "train", size, run)
            seeds[f"train_{size}_run{run}"] = run_seed
            hyper = config.hyper_params(run_seed)
            run_args.append((str(tensors), str(test_tensors),
                             str(test_dir / "manifest.json"), str(vocab_path),
                             hyper.to_dict(),
                             str(out / "runs" / f"size{size}_run{run}")))
            keys.append((int(size), run))
    results = run_many(run_args, config.jobs)

    rows = ["size,run,seed,precision_full,recall_full,f1_full,"
            "precision_sound,recall_sound,f1_sound"]
    by_size: dict[int, list[dict]] = {}
    for (size, run), res in zip(keys, results):
        by_size.setdefault(size, []).append(res)
        rows.append(f"{size},{run},{res['seed']},{res['precision_full']!r},"
                    f"{res['recall_full']!r},{res['f1_full']!r},"
                    f"{res['precision_sound']!r},{res['recall_sound']!r},"
                    f"{res['f1_sound']!r}")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    summary_rows = ["size,n_runs,f1_full_min,f1_full_median,f1_full_max,"
                    "f1_sound_min,f1_sound_median,f1_sound_max"]
    summary: dict[int, dict] = {}
    for size in sorted(by_size):
        ff = [r["f1_full"] for r in by_size[size]]
        fs = [r["f1_sound"] for r in by_size[size]]
        summary[size] = {
            "f1_full": (min(ff), float(np.median(ff)), max(ff)),
            "f1_sound": (min(fs), float(np.median(fs)), max(fs)),
        }
        summary_rows.append(
            f"{size},{len(ff)},{min(ff)!r},{float(np.median(ff))!r},{max(ff)!r},"
            f"{min(fs)!r},{float(np.median(fs))!r},{max(fs)!r}")
    (out / "sweep_summary.csv").write_text("\n".join(summary_rows) + "\n",
                                           encoding="utf-8")
    _write_run_manifest(out, _echo(config), seeds, {
        "sweep": str(out / "sweep.csv"),
        "sweep_summary": str(out / "sweep_summary.csv"),
    }, time.time() - t0)
    return {"by_size": summary}


def run_score_tool(report_path: Path | str, manifest_path: Path | str,
                   out_dir: Path | str | None = None) -> dict:
    """Score an external analyzer's warning report against a manifest."""
    manifest = DatasetManifest.load(manifest_path)
    ingest = evaluation.ingest_warnings(report_path, manifest)
    queries = evaluation.manifest_queries(manifest)
    sound = evaluation.sound_subset(manifest)
    metrics_full = evaluation.score(queries, ingest.pred_positive)
    metrics_sound = evaluation.score(queries, ingest.pred_positive, sound)
    result = {
        "tools": ingest.tools,
        "full": metrics_full,
        "sound": metrics_sound,
        "off_target_warnings": len(ingest.off_target),
        "unresolved_files": ingest.unresolved,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(evaluation.format_metrics_csv([
            ("full", metrics_full), ("sound", metrics_sound),
        ]), encoding="utf-8")
    return result


def label_check(manifest_path: Path | str, data_dir: Path | str,
                sample: int | None = None,
                domain: tuple[int, int] = (0, 200)) -> dict:
    """Cross-check manifest labels against the brute-force oracle.

    Re-derives each program from its per-file seed (verified against the
    stored content hash), reruns classify_writes, and compares both the
    stored safety labels and the exhaustive-enumeration labels.
    """
    manifest = DatasetManifest.load(manifest_path)
    cfg = manifest.gen_config
    indices = list(range(len(manifest.entries)))
    if sample is not None and sample < len(indices):
        indices = list(
            np.random.default_rng(0).choice(indices, size=sample, replace=False))
    files = 0
    writes = 0
    mismatches = []
    for index in indices:
        entry = manifest.entries[index]
        ast = _rederive_ast(cfg, index, entry.content_hash)
        stored = [w.safety for w in entry.writes]
        classified = [c.safety for c in oracle.classify_writes(ast)]
        brute = oracle.brute_force_oracle(ast, domain=domain)
        files += 1
        writes += len(stored)
        for w, (s, c, b) in zip(entry.writes, zip(stored, classified, brute)):
            if not (s == c == b):
                mismatches.append({
                    "file": entry.file, "line": w.line,
                    "stored": s, "classified": c, "brute_force": b,
                })
    return {"files": files, "writes": writes, "mismatches": mismatches,
            "agreement": 1.0 if not mismatches else 1.0 - len(mismatches) / writes}


def _rederive_ast(cfg: GenConfig, index: int, want_hash: str):
    from .codegen import content_hash, render_c

    for retry in range(64):
        ast = generate_program(derive_seed(cfg.seed, "file", index, retry), cfg)
        if content_hash(render_c(ast)) == want_hash:
            return ast
    raise ValueError(f"entry {index}: no retry reproduces hash {want_hash[:10]}")


def dataset_stats(manifest_path: Path | str, data_dir: Path | str) -> dict:
    """Corpus statistics: counts, grid geometry, vocabulary size, and
    sound-subset retention."""
    manifest = DatasetManifest.load(manifest_path)
    label_counts = {name: 0 for name in oracle.ALL_LINE_LABELS}
    writes = 0
    for entry in manifest.entries:
        for label in entry.labels:
            label_counts[label] += 1
        writes += len(entry.writes)
    sources = read_sources(manifest, Path(data_dir))
    if sources:
        n_lines, n_tokens = tokenizer.corpus_dims(sources)
        vocab = tokenizer.build_vocab(sources, n_lines)
        vocab_size = vocab.size
    else:
        n_lines = n_tokens = 0
        vocab_size = 1
    subset = evaluation.sound_subset(manifest)
    return {
        "files": len(manifest.entries),
        "buffer_writes": writes,
        "label_counts": label_counts,
        "max_lines": n_lines,
        "max_tokens_per_line": n_tokens,
        "vocab_size": vocab_size,
        "sound_subset_retained": subset.retained_writes,
        "sound_subset_fraction": subset.retention_fraction,
    }


def run_experiment(config_path: Path | str) -> dict:
    config = ExperimentConfig.load(config_path)
    if config.kind == "train-eval":
        return run_train_eval(config)
    if config.kind == "sweep":
        return run_sweep(config)
    if config.kind == "score-tool":
        manifest = Path(config.gen.get("manifest", config.out / "manifest.json"))
        return {"score": run_score_tool(config.report, manifest, config.out)}
    raise ConfigFileError(f"experiment kind {config.kind!r} needs dedicated inputs; "
                          "use the matching CLI verb")


def _echo(config: ExperimentConfig) -> dict:
    return {
        "kind": config.kind,
        "seed": config.seed,
        "out": str(config.out),
        "gen": config.gen,
        "hyper": config.hyper,
        "runs_per_setting": config.runs_per_setting,
        "sweep_sizes": config.sweep_sizes,
        "jobs": config.jobs,
    }
