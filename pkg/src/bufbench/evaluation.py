"""Metrics, label collapsing, sound-subset filtering, confusion matrices,
and scoring of external analyzer warning reports.

Precision and recall follow the usual true/false positive definitions over
the collapsed two-class view (unsafe = positive, safe = negative). F1 is
the factor-2 harmonic mean 2pr/(p+r). Degenerate cases: with no positive
predictions, precision is 1 when there are also no false negatives and 0
otherwise (recall symmetrically); F1 is 0 whenever precision and recall
are both 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codegen import DatasetManifest
from .tokenizer import LABEL4_FROM_LINE_LABEL, LABEL4_NAMES

N_CLASSES = 4
POSITIVE_LABELS = frozenset((1, 3))  # COND_UNSAFE, TAUT_UNSAFE


class EvalError(ValueError):
    """Scoring input is inconsistent (missing predictions, bad labels)."""


class ReportError(ValueError):
    """A warning report file could not be parsed."""


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def collapse(label: int) -> bool:
    """4-class id -> positive? (unsafe labels are positive)."""
    if label not in (0, 1, 2, 3):
        raise EvalError(f"label {label} is not a buffer-write class")
    return label in POSITIVE_LABELS


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if fn == 0 else 0.0
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 1.0 if fp == 0 else 0.0
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn,
                   precision=precision, recall=recall, f1=f1)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class QueryRecord:
    """Identity and ground truth of one scored buffer write."""

    file: str
    line: int
    label: int  # 4-class id


def manifest_queries(manifest: DatasetManifest) -> list[QueryRecord]:
    """Every buffer write of a manifest, in (file order, line order)."""
    out = []
    for entry in manifest.entries:
        for lineno, label in enumerate(entry.labels, start=1):
            if label in LABEL4_FROM_LINE_LABEL:
                out.append(QueryRecord(entry.file, lineno,
                                       LABEL4_FROM_LINE_LABEL[label]))
    return out


@dataclass(frozen=True)
class QueryFilter:
    """Per-file sets of retained buffer-write lines."""

    retained: dict          # file -> frozenset of line numbers
    total_writes: int
    retained_writes: int

    @property
    def retention_fraction(self) -> float:
        if self.total_writes == 0:
            return 1.0
        return self.retained_writes / self.total_writes

    def keeps(self, query: QueryRecord) -> bool:
        return query.line in self.retained.get(query.file, frozenset())


def sound_subset(manifest: DatasetManifest) -> QueryFilter:
    """Filter for analyzers that assume a crash at the first unsafe write.

    Per file: when any unsafe write exists, keep only the unsafe write with
    the smallest line number plus every safe write on a smaller line.
    Files without unsafe writes keep all their writes.
    """
    retained: dict[str, frozenset] = {}
    total = 0
    kept = 0
    for entry in manifest.entries:
        writes = [(w.line, w.safety) for w in entry.writes]
        total += len(writes)
        unsafe_lines = [line for line, safety in writes if safety == "UNSAFE"]
        if unsafe_lines:
            first = min(unsafe_lines)
            keep = {line for line, safety in writes
                    if line == first or (safety == "SAFE" and line < first)}
        else:
            keep = {line for line, _ in writes}
        kept += len(keep)
        retained[entry.file] = frozenset(keep)
    return QueryFilter(retained=retained, total_writes=total, retained_writes=kept)


def score(queries: list[QueryRecord], pred_positive: np.ndarray,
          query_filter: QueryFilter | None = None) -> Metrics:
    """Two-class metrics over (optionally filtered) queries.

    ``pred_positive`` aligns with ``queries``; a None entry for a retained
    query is an integrity error.
    """
    tp = fp = fn = tn = 0
    for q, pred in zip(queries, pred_positive):
        if query_filter is not None and not query_filter.keeps(q):
            continue
        if pred is None:
            raise EvalError(f"missing prediction for {q.file}:{q.line}")
        truth = collapse(q.label)
        pred = bool(pred)
        if pred and truth:
            tp += 1
        elif pred and not truth:
            fp += 1
        elif not pred and truth:
            fn += 1
        else:
            tn += 1
    return metrics_from_counts(tp, fp, fn, tn)


def score_labels(queries: list[QueryRecord], pred_labels: np.ndarray,
                 query_filter: QueryFilter | None = None) -> Metrics:
    """Collapse 4-class predictions, then score."""
    positives = [collapse(int(p)) for p in pred_labels]
    return score(queries, positives, query_filter)


def confusion(pred_labels: np.ndarray, true_labels: np.ndarray,
              n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts matrix; rows are true labels, columns predicted."""
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if pred_labels.shape != true_labels.shape:
        raise EvalError("prediction/truth length mismatch")
    mat = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(mat, (true_labels, pred_labels), 1)
    return mat


def median_confusion(matrices: list[np.ndarray]) -> np.ndarray:
    """Cell-wise median across runs; even run counts yield half-integers."""
    if not matrices:
        raise EvalError("no confusion matrices to aggregate")
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise EvalError("confusion matrices differ in shape")
    return np.median(np.stack(matrices).astype(np.float64), axis=0)


def cross_block_mass(matrix: np.ndarray) -> float:
    """Fraction of queries landing in the COND<->TAUT off-blocks.

    Classes 0-1 are the conditional block, 2-3 the tautological block.
    """
    total = float(matrix.sum())
    if total == 0:
        return 0.0
    cross = float(matrix[:2, 2:].sum() + matrix[2:, :2].sum())
    return cross / total


def two_class_accuracy(pred_labels: np.ndarray, true_labels: np.ndarray) -> float:
    """Accuracy of the collapsed safe/unsafe decision."""
    pred_pos = np.asarray(pred_labels) % 2 == 1
    true_pos = np.asarray(true_labels) % 2 == 1
    if len(pred_pos) == 0:
        return 0.0
    return float((pred_pos == true_pos).mean())


# ---------------------------------------------------------------------------
# External analyzer reports
# ---------------------------------------------------------------------------


@dataclass
class WarningIngest:
    pred_positive: list      # aligned with manifest_queries(manifest)
    tools: list
    off_target: list         # warnings on lines that hold no buffer write
    unresolved: list         # warnings whose file is not in the manifest


def ingest_warnings(report_path: Path | str,
                    manifest: DatasetManifest) -> WarningIngest:
    """Turn a JSONL warning report into per-query two-class predictions.

    Each line of the report is an object with fields ``tool``, ``file``,
    and ``line``. A buffer-write line is predicted positive when any
    warning lands on it. Warnings on non-write lines are collected as
    off-target (reported, never scored); warnings naming unknown files are
    listed and skipped.
    """
    queries = manifest_queries(manifest)
    write_lines = {}
    for q in queries:
        write_lines.setdefault(q.file, set()).add(q.line)
    known_files = {e.file for e in manifest.entries}

    flagged: set[tuple[str, int]] = set()
    off_target: list[tuple[str, str, int]] = []
    unresolved: list[str] = []
    tools: set[str] = set()
    with open(report_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                tool = str(obj["tool"])
                fname = str(obj["file"])
                warn_line = int(obj["line"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ReportError(f"{report_path}:{lineno}: malformed warning ({exc})")
            if warn_line <= 0:
                raise ReportError(f"{report_path}:{lineno}: non-positive line number")
            tools.add(tool)
            fname = Path(fname).name
            if fname not in known_files:
                unresolved.append(fname)
                continue
            if warn_line in write_lines.get(fname, set()):
                flagged.add((fname, warn_line))
            else:
                off_target.append((tool, fname, warn_line))
    preds = [(q.file, q.line) in flagged for q in queries]
    return WarningIngest(pred_positive=preds, tools=sorted(tools),
                         off_target=off_target, unresolved=sorted(set(unresolved)))


# ---------------------------------------------------------------------------
# Trained-model evaluation helpers
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    metrics_full: Metrics
    metrics_sound: Metrics
    confusion4: np.ndarray
    pred_labels: np.ndarray


def evaluate_predictions(manifest: DatasetManifest, pred_labels: np.ndarray,
                         sound: QueryFilter | None = None) -> EvalReport:
    """Full-set and sound-subset metrics plus the 4-class confusion matrix."""
    queries = manifest_queries(manifest)
    if len(queries) != len(pred_labels):
        raise EvalError(
            f"{len(pred_labels)} predictions for {len(queries)} queries")
    if sound is None:
        sound = sound_subset(manifest)
    truth = np.asarray([q.label for q in queries])
    return EvalReport(
        metrics_full=score_labels(queries, pred_labels),
        metrics_sound=score_labels(queries, pred_labels, sound),
        confusion4=confusion(np.asarray(pred_labels), truth),
        pred_labels=np.asarray(pred_labels),
    )


def remap_experiment(param_list, dataset, vocab):
    """Median confusion matrices before and after integer-literal remapping.

    Runs every trained network on the dataset and on its remapped twin
    (all integer literals collapsed onto the "0" token) and aggregates the
    per-run 4-class confusion matrices cell-wise.
    """
    from . import memnet, tokenizer

    remapped = tokenizer.remap_integers(dataset, vocab)
    truth = dataset.query_label.astype(np.int64)
    before, after = [], []
    pairs = []
    for params in param_list:
        preds_b, _ = memnet.predict(params, dataset)
        preds_a, _ = memnet.predict(params, remapped)
        before.append(confusion(preds_b, truth))
        after.append(confusion(preds_a, truth))
        pairs.append((preds_b, preds_a))
    return median_confusion(before), median_confusion(after), pairs


def format_confusion_csv(matrix: np.ndarray) -> str:
    header = "true\\pred," + ",".join(LABEL4_NAMES)
    rows = [header]
    for i, name in enumerate(LABEL4_NAMES):
        cells = ",".join(_fmt_cell(matrix[i, j]) for j in range(matrix.shape[1]))
        rows.append(f"{name},{cells}")
    return "\n".join(rows) + "\n"


def _fmt_cell(x) -> str:
    f = float(x)
    return str(int(f)) if f == int(f) else repr(f)


def format_metrics_csv(rows: list[tuple[str, Metrics]]) -> str:
    out = ["filter,tp,fp,fn,tn,precision,recall,f1"]
    for name, m in rows:
        out.append(f"{name},{m.tp},{m.fp},{m.fn},{m.tn},"
                   f"{m.precision!r},{m.recall!r},{m.f1!r}")
    return "\n".join(out) + "\n"
