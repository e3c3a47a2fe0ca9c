"""Acceptance criteria, one test per criterion.

Criteria 6-9 and 11 share one training workspace (a two-size sweep at
9,600 and 19,200 training files, five runs each) built once per session.
Set BUFBENCH_ACCEPTANCE_DIR to persist it across pytest invocations; the
workspace is keyed by a hash of the package sources, so stale caches are
never reused. Every test prints a ``[ACCEPTANCE] criterion N`` line.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import bufbench
from bufbench import codegen, evaluation, memnet, oracle, pipeline, tokenizer
from bufbench.codegen import GenConfig, derive_seed, generate_program
from bufbench.fixtures import motivating_example

from conftest import finite_difference_check, memnet_loss_fn, random_small_memnet
from test_memnet import golden_instance, straight_line_forward

pytestmark = pytest.mark.acceptance

ROOT_SEED = 20260808
TRAIN_SIZES = (9600, 19200)
RUNS_PER_SIZE = 5
TEST_FILES = 2400
EPOCHS = 30


def _ok(criterion: int, detail: str) -> None:
    print(f"\n[ACCEPTANCE] criterion {criterion}: PASS - {detail}")


def _source_hash() -> str:
    # modules that determine artifact bytes; orchestration-only changes
    # (pipeline/cli) keep the cached workspace valid
    src = Path(bufbench.__file__).parent
    h = hashlib.sha256()
    for name in ("codegen.py", "oracle.py", "tokenizer.py",
                 "memnet.py", "evaluation.py"):
        h.update(name.encode())
        h.update((src / name).read_bytes())
    return h.hexdigest()[:10]


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """The shared training workspace for criteria 6-9 and 11."""
    base = os.environ.get("BUFBENCH_ACCEPTANCE_DIR")
    if base:
        root = Path(base)
        root.mkdir(parents=True, exist_ok=True)
    else:
        root = tmp_path_factory.mktemp("acceptance")
    ws = root / f"ws_{_source_hash()}"
    marker = ws / "outcome.json"
    config = pipeline.ExperimentConfig(
        kind="sweep", seed=ROOT_SEED, out=ws,
        gen={"test_files": TEST_FILES},
        hyper={"epochs": EPOCHS},
        runs_per_setting=RUNS_PER_SIZE,
        sweep_sizes=list(TRAIN_SIZES),
        report=None, jobs=2)
    if marker.exists():
        outcome = json.loads(marker.read_text())
    else:
        t0 = time.time()
        result = pipeline.run_sweep(config)
        outcome = {
            "wall_clock": time.time() - t0,
            "by_size": {str(k): v for k, v in result["by_size"].items()},
        }
        marker.write_text(json.dumps(outcome))
    sweep_rows = (ws / "sweep.csv").read_text().splitlines()[1:]
    return {"ws": ws, "config": config, "outcome": outcome,
            "sweep_rows": sweep_rows}


def _f1s_for_size(desk, size: int) -> list[float]:
    out = []
    for row in desk["sweep_rows"]:
        cells = row.split(",")
        if int(cells[0]) == size:
            out.append(float(cells[5]))  # f1_full column
    return out


def _checkpoints_for_size(desk, size: int):
    ws = desk["ws"]
    params = []
    for run in range(RUNS_PER_SIZE):
        ckpt = ws / "runs" / f"size{size}_run{run}" / "ckpt.bin"
        params.append(memnet.load_checkpoint(ckpt)[0])
    return params


def test_criterion_01_oracle_equivalence():
    cfg = GenConfig(seed=ROOT_SEED)
    t0 = time.time()
    writes = 0
    for i in range(1000):
        ast = generate_program(derive_seed(ROOT_SEED, "accept-oracle", i), cfg)
        classified = [c.safety for c in oracle.classify_writes(ast)]
        brute = oracle.brute_force_oracle(ast, domain=(0, 200))
        assert classified == brute, f"oracle disagreement on program {i}"
        writes += len(classified)
    elapsed = time.time() - t0
    assert elapsed <= 300, f"took {elapsed:.0f}s, budget 300s"
    _ok(1, f"1000 programs, {writes} writes, 100% agreement in {elapsed:.0f}s")


def test_criterion_02_motivating_fixture():
    ast = motivating_example()
    labels = oracle.label_lines(ast)
    assert labels[19] == "BUFWRITE_COND_UNSAFE"
    assert labels[21] == "BUFWRITE_TAUT_UNSAFE"
    _ok(2, "line 20 is BUFWRITE_COND_UNSAFE, line 22 is BUFWRITE_TAUT_UNSAFE")


def test_criterion_03_gradient_check():
    rng = np.random.default_rng(1234)
    t0 = time.time()
    worst = 0.0
    for _ in range(20):
        params, grids, rows, labels, p, seed = random_small_memnet(rng)
        loss_fn = memnet_loss_fn(grids, rows, labels, p, seed)
        _, cache = memnet.forward(params, grids, rows, p, train=True,
                                  rng=np.random.default_rng(seed))
        grads = memnet.backward(params, cache, labels)
        errors = finite_difference_check(params, loss_fn, grads)
        worst = max(worst, max(errors.values()))
        assert max(errors.values()) <= 1e-3, errors
    elapsed = time.time() - t0
    assert elapsed <= 120, f"took {elapsed:.0f}s, budget 120s"
    _ok(3, f"20 configurations, worst relative error {worst:.2e} in {elapsed:.0f}s")


def test_criterion_04_forward_golden():
    params, raw, grids, rows = golden_instance()
    probs, _ = memnet.forward(params, np.array(grids, dtype=np.uint16),
                              np.array(rows), train=True)
    expected = straight_line_forward(*raw, grids, rows)
    gap = float(np.abs(probs - np.array(expected)).max())
    assert gap <= 1e-9
    _ok(4, f"tiny-instance probabilities match to {gap:.1e}")


def test_criterion_05_metric_consistency():
    f1 = evaluation.f1_score(precision= 0.954, recall=0.882)
    assert abs(f1 - 0.917) <= 0.0005
    _ok(5, f"f1(0.954, 0.882) = {f1:.4f} within 0.0005 of 0.917")


def test_criterion_06_desk_scale_training(desk):
    f1s = _f1s_for_size(desk, 9600)
    assert len(f1s) == RUNS_PER_SIZE
    median = float(np.median(f1s))
    wall = desk["outcome"]["wall_clock"]
    assert median >= 0.78, f"median collapsed F1 {median:.4f} < 0.78 ({f1s})"
    assert wall <= 7200, f"workspace build took {wall:.0f}s, target 7200s"
    _ok(6, f"median collapsed F1 at 9600 files = {median:.4f} "
           f"(runs: {', '.join(f'{x:.4f}' for x in sorted(f1s))}; "
           f"whole workspace built in {wall:.0f}s)")


def test_criterion_07_size_trend(desk):
    small = float(np.median(_f1s_for_size(desk, 9600)))
    large = float(np.median(_f1s_for_size(desk, 19200)))
    assert large >= small, f"median F1 fell from {small:.4f} to {large:.4f}"
    _ok(7, f"median F1 rises with training size: {small:.4f} -> {large:.4f}")


def test_criterion_08_block_diagonality(desk):
    ws = desk["ws"]
    test_ds = tokenizer.load_tensors(ws / "test.tensors")
    truth = test_ds.query_label.astype(np.int64)
    matrices = []
    for params in _checkpoints_for_size(desk, 9600):
        preds, _ = memnet.predict(params, test_ds)
        matrices.append(evaluation.confusion(preds, truth))
    median = evaluation.median_confusion(matrices)
    mass = evaluation.cross_block_mass(median)
    assert mass <= 0.01, f"cross-block mass {mass:.4f} > 1%"
    _ok(8, f"COND<->TAUT cross-block mass of median confusion = {100 * mass:.3f}%")


def test_criterion_09_remap_experiment(desk):
    ws = desk["ws"]
    test_ds = tokenizer.load_tensors(ws / "test.tensors")
    vocab = tokenizer.Vocab.load(ws / "vocab.json")
    truth = test_ds.query_label.astype(np.int64)
    params = _checkpoints_for_size(desk, 9600)
    before, after, pairs = evaluation.remap_experiment(params, test_ds, vocab)
    mass_after = evaluation.cross_block_mass(after)
    acc_before = float(np.median(
        [evaluation.two_class_accuracy(b, truth) for b, _ in pairs]))
    acc_after = float(np.median(
        [evaluation.two_class_accuracy(a, truth) for _, a in pairs]))
    drop = acc_before - acc_after
    assert mass_after <= 0.02, f"cross-block mass after remap {mass_after:.4f} > 2%"
    assert drop >= 0.10, (
        f"two-class accuracy dropped only {100 * drop:.1f} points "
        f"({acc_before:.4f} -> {acc_after:.4f})")
    _ok(9, f"after integer remap: cross-block mass {100 * mass_after:.3f}%, "
           f"two-class accuracy {acc_before:.4f} -> {acc_after:.4f} "
           f"({100 * drop:.1f} point drop)")


def test_criterion_10_sound_subset_properties(corpus_1000):
    _, manifest, _ = corpus_1000
    subset = evaluation.sound_subset(manifest)
    files_with_unsafe = 0
    for entry in manifest.entries:
        kept = subset.retained[entry.file]
        unsafe = [w.line for w in entry.writes if w.safety == "UNSAFE"]
        if not unsafe:
            assert kept == {w.line for w in entry.writes}
            continue
        files_with_unsafe += 1
        first = min(unsafe)
        assert sorted(l for l in kept if l in unsafe) == [first]
        assert all(line < first for line in kept - {first})
    assert files_with_unsafe > 0
    _ok(10, f"structural property holds on all {files_with_unsafe} files with "
            f"unsafe writes; retention "
            f"{100 * subset.retention_fraction:.1f}% (reference corpus: 67%)")


def test_criterion_11_bitwise_determinism(desk, tmp_path):
    ws = desk["ws"]
    run_dir = ws / "runs" / "size9600_run0"
    hyper = memnet.load_checkpoint(run_dir / "ckpt.bin")[1]
    repeat_dir = tmp_path / "repeat_run0"
    pipeline.train_eval_run(
        str(ws / "train_9600.tensors"), str(ws / "test.tensors"),
        str(ws / "data" / "test" / "manifest.json"), str(ws / "vocab.json"),
        hyper.to_dict(), str(repeat_dir))
    original = (run_dir / "metrics.csv").read_bytes()
    repeated = (repeat_dir / "metrics.csv").read_bytes()
    assert original == repeated, "metrics.csv differs between identical runs"
    _ok(11, "repeating run 0 reproduces metrics.csv byte for byte")


def test_criterion_12_scoring_harness(tmp_path, corpus_1000):
    _, manifest, _ = corpus_1000
    queries = evaluation.manifest_queries(manifest)

    exact = tmp_path / "exact.jsonl"
    exact.write_text("\n".join(
        json.dumps({"tool": "oracle", "file": q.file, "line": q.line})
        for q in queries if evaluation.collapse(q.label)) + "\n")
    ingest = evaluation.ingest_warnings(exact, manifest)
    m = evaluation.score(queries, ingest.pred_positive)
    assert m.f1 == 1.0 and m.precision == 1.0 and m.recall == 1.0

    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    ingest = evaluation.ingest_warnings(empty, manifest)
    m_empty = evaluation.score(queries, ingest.pred_positive)
    assert m_empty.recall == 0.0
    assert m_empty.precision == 0.0  # degenerate convention: fn > 0
    assert m_empty.f1 == 0.0
    _ok(12, "exact-unsafe report scores F1=1.0; empty report scores "
            "recall=0 with the degenerate precision convention (0)")
