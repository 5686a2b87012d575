"""Windowed macro F-measure over prediction logs, frozen baselines and reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Instance, ParseError, UsageError
from .offline import Model, atomic_write_text
from .online import OnlineState, process_stream

REPORT_SCHEMA = 1
UNDEFINED_MODES = ("zero", "exclude")


def confusion(predictions: Sequence[frozenset], truths: Sequence[frozenset], n: int):
    """Per-label true positive, false positive and false negative counts."""
    if len(predictions) != len(truths):
        raise UsageError(f"{len(predictions)} predictions but {len(truths)} truths")
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    fn = np.zeros(n, dtype=np.int64)
    for pred, truth in zip(predictions, truths):
        for c in pred:
            if c in truth:
                tp[c] += 1
            else:
                fp[c] += 1
        for c in truth:
            if c not in pred:
                fn[c] += 1
    return tp, fp, fn


def per_label_f(tp, fp, fn) -> np.ndarray:
    """F1 per label; labels with no prediction and no support score 0."""
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    f = np.zeros_like(denom)
    np.divide(2 * tp, denom, out=f, where=denom > 0)
    return f


def _macro(tp, fp, fn, undefined: str) -> float:
    f = per_label_f(tp, fp, fn)
    if undefined == "exclude":
        defined = (2 * np.asarray(tp) + fp + fn) > 0
        return float(f[defined].mean()) if defined.any() else 0.0
    return float(f.mean())


def macro_f(predictions: Sequence[frozenset], truths: Sequence[frozenset], n: int, undefined: str = "zero") -> float:
    """Mean per-label F1 over all ``n`` labels.

    ``undefined="exclude"`` drops 0/0 labels from the mean instead of scoring them 0.
    """
    if undefined not in UNDEFINED_MODES:
        raise UsageError(f"undefined must be one of {UNDEFINED_MODES}")
    return _macro(*confusion(predictions, truths, n), undefined)


@dataclass(eq=False)
class WindowReport:
    window_index: int
    n_instances: int
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    macro_f: float

    @property
    def f_per_label(self) -> np.ndarray:
        return per_label_f(self.tp, self.fp, self.fn)

    def __eq__(self, other):
        if not isinstance(other, WindowReport):
            return NotImplemented
        return (
            self.window_index == other.window_index
            and self.n_instances == other.n_instances
            and self.macro_f == other.macro_f
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in ("tp", "fp", "fn"))
        )


@dataclass(eq=True)
class RunReport:
    windows: list
    metadata: dict = field(default_factory=dict)

    @property
    def mean_macro_f(self) -> float:
        return float(np.mean([w.macro_f for w in self.windows]))

    def tail_mean(self, last: int) -> float:
        """Mean macro F over the final ``last`` windows."""
        return float(np.mean([w.macro_f for w in self.windows[-last:]]))


def window_bounds(length: int, W: int) -> list[tuple[int, int]]:
    """Contiguous ``(start, stop)`` ranges; the first ``length % W`` are one longer."""
    if W < 1:
        raise UsageError("number of windows must be positive")
    if length < W:
        raise UsageError(f"{length} instances cannot fill {W} windows; use a smaller window count")
    base, extra = divmod(length, W)
    bounds, start = [], 0
    for w in range(W):
        stop = start + base + (1 if w < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def align(log: Sequence[tuple[int, frozenset]], truths) -> list[frozenset]:
    """Truth label sets in log order, looked up by sequence id."""
    lookup = truths if isinstance(truths, dict) else dict(truths)
    out = []
    for sid, _ in log:
        if sid not in lookup:
            raise UsageError(f"prediction log id {sid} has no ground truth")
        out.append(lookup[sid])
    return out


def windowed_evaluate(log: Sequence[tuple[int, frozenset]], truths, n: int, W: int = 50,
                      undefined: str = "zero", metadata: dict | None = None) -> RunReport:
    """Score ``log`` in ``W`` equal-count windows.

    ``truths`` maps sequence ids to label sets (a dict or ``(id, labels)`` pairs).
    """
    if undefined not in UNDEFINED_MODES:
        raise UsageError(f"undefined must be one of {UNDEFINED_MODES}")
    aligned = align(log, truths)
    preds = [y for _, y in log]
    windows = []
    for w, (start, stop) in enumerate(window_bounds(len(log), W)):
        tp, fp, fn = confusion(preds[start:stop], aligned[start:stop], n)
        windows.append(WindowReport(w, stop - start, tp, fp, fn, _macro(tp, fp, fn, undefined)))
    meta = {"n_classes": n, "n_windows": W, "undefined": undefined}
    meta.update(metadata or {})
    return RunReport(windows, meta)


def run_frozen_baseline(model: Model, stream: Iterable[Instance]) -> list[tuple[int, frozenset]]:
    """Classify ``stream`` with the offline model and no adaptation at all."""
    return process_stream(OnlineState(model, adaptive=False), stream)


# -- report files ---------------------------------------------------------------


def report_table(report: RunReport) -> str:
    n = int(report.metadata["n_classes"])
    header = ["window_index", "n_instances", "macro_f"]
    header += [f"f_{j}" for j in range(n)]
    header += [f"{kind}_{j}" for j in range(n) for kind in ("tp", "fp", "fn")]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for w in report.windows:
        row = [w.window_index, w.n_instances, repr(w.macro_f)]
        row += [repr(float(f)) for f in w.f_per_label]
        row += [int(getattr(w, kind)[j]) for j in range(n) for kind in ("tp", "fp", "fn")]
        writer.writerow(row)
    return buf.getvalue()


def report_summary(report: RunReport) -> str:
    doc = {
        "schema_version": REPORT_SCHEMA,
        "metadata": report.metadata,
        "n_windows": len(report.windows),
        "mean_macro_f": report.mean_macro_f,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_report(report: RunReport, directory) -> tuple[Path, Path]:
    """Write ``windows.csv`` and ``summary.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table, summary = directory / "windows.csv", directory / "summary.json"
    atomic_write_text(table, report_table(report))
    atomic_write_text(summary, report_summary(report))
    return table, summary


def read_report(directory) -> RunReport:
    directory = Path(directory)
    try:
        doc = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{directory / 'summary.json'}:{e.lineno}:{e.colno}: {e.msg}") from None
    if doc.get("schema_version") != REPORT_SCHEMA:
        raise ParseError(f"unsupported report schema {doc.get('schema_version')!r}")
    n = int(doc["metadata"]["n_classes"])
    windows = []
    with (directory / "windows.csv").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            counts = {kind: np.array([int(row[f"{kind}_{j}"]) for j in range(n)], dtype=np.int64)
                      for kind in ("tp", "fp", "fn")}
            windows.append(WindowReport(int(row["window_index"]), int(row["n_instances"]),
                                        counts["tp"], counts["fp"], counts["fn"], float(row["macro_f"])))
    return RunReport(windows, doc["metadata"])
