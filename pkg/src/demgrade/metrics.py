"""Confusion matrices, per-class / macro / weighted scores and the comparison table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

TABLE_ORDER = ("RF", "WS+RF", "SVM", "WS+SVM", "CNN", "WS+CNN")
COLUMNS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self, class_names=None):
        names = list(class_names) if class_names else [str(i) for i in range(self.k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, self.counts.tolist()):
            w.writerow([name, *row])
        return buf.getvalue()

    def to_heatmap(self, cell=16):
        """Counts scaled linearly to 0..255, each cell ``cell`` pixels wide."""
        top = self.counts.max()
        scaled = np.zeros_like(self.counts, dtype=np.float64) if top == 0 else self.counts * (255.0 / top)
        img = np.floor(scaled + 0.5).astype(np.uint8)
        return np.kron(img, np.ones((cell, cell), dtype=np.uint8))


@dataclass(frozen=True)
class ScoreCard:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    macro: dict
    weighted: dict
    micro: dict
    undefined: dict = field(default_factory=dict)  # metric -> classes with a zero denominator

    def headline(self, average="macro"):
        agg = self.macro if average == "macro" else self.weighted
        return {"accuracy": self.accuracy, **agg}

    def to_dict(self):
        def r4(v):
            return round(float(v), 4)

        return {
            "accuracy": r4(self.accuracy),
            "per_class": {
                "precision": [r4(v) for v in self.precision],
                "recall": [r4(v) for v in self.recall],
                "f1": [r4(v) for v in self.f1],
                "support": list(self.support),
            },
            "macro": {k: r4(v) for k, v in self.macro.items()},
            "weighted": {k: r4(v) for k, v in self.weighted.items()},
            "micro": {k: r4(v) for k, v in self.micro.items()},
            "undefined": {k: list(v) for k, v in self.undefined.items()},
        }


def confusion_matrix(y_true, y_pred, k=4) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ArgumentError(f"label vectors differ in shape: {t.shape} vs {p.shape}")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= k):
        raise ArgumentError(f"labels must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def score(cm: ConfusionMatrix) -> ScoreCard:
    """Accuracy plus per-class, macro, weighted and micro precision/recall/F1.

    Any ratio with a zero denominator is reported as 0 and the offending
    classes are listed in ``undefined``.
    """
    c = np.asarray(cm.counts, dtype=np.int64)
    total = c.sum()
    if total == 0:
        raise ArgumentError("cannot score an empty confusion matrix")
    tp = np.diag(c).astype(np.float64)
    pred_tot = c.sum(axis=0).astype(np.float64)
    true_tot = c.sum(axis=1).astype(np.float64)
    precision = _safe_div(tp, pred_tot)
    recall = _safe_div(tp, true_tot)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    undefined = {}
    for name, den in (("precision", pred_tot), ("recall", true_tot), ("f1", precision + recall)):
        bad = np.flatnonzero(den == 0).tolist()
        if bad:
            undefined[name] = bad
    w = true_tot / total
    accuracy = float(tp.sum() / total)
    macro = {"precision": float(precision.mean()), "recall": float(recall.mean()), "f1": float(f1.mean())}
    weighted = {
        "precision": float(w @ precision),
        "recall": float(w @ recall),
        "f1": float(w @ f1),
    }
    micro_p = tp.sum() / pred_tot.sum()
    micro_r = tp.sum() / true_tot.sum()
    micro = {"precision": float(micro_p), "recall": float(micro_r), "f1": float(2 * micro_p * micro_r / (micro_p + micro_r)) if micro_p + micro_r else 0.0}
    return ScoreCard(
        accuracy,
        tuple(precision.tolist()),
        tuple(recall.tolist()),
        tuple(f1.tolist()),
        tuple(int(s) for s in true_tot),
        macro,
        weighted,
        micro,
        undefined,
    )


@dataclass(frozen=True)
class ComparisonTable:
    rows: list  # (name, {column: percentage})
    best: dict  # column -> set of row names

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *COLUMNS, "best"])
        for name, vals in self.rows:
            marks = ";".join(col for col in COLUMNS if name in self.best[col])
            w.writerow([name, *(f"{vals[col]:.2f}" for col in COLUMNS), marks])
        return buf.getvalue()

    def to_text(self):
        header = ["Model", "Accuracy", "Precision", "Recall", "F1-Score"]
        body = []
        for name, vals in self.rows:
            cells = [name]
            for col in COLUMNS:
                mark = "*" if name in self.best[col] else " "
                cells.append(f"{vals[col]:.2f}{mark}")
            body.append(cells)
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines = ["  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i]) for i, h in enumerate(header))]
        lines.append("  ".join("-" * wd for wd in widths))
        for cells in body:
            lines.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(cells)))
        lines.append("(* = best in column)")
        return "\n".join(lines) + "\n"


def comparison_report(runs, average="macro") -> ComparisonTable:
    """Tabulate runs as percentages (2 decimals) and mark the best per column.

    ``runs`` holds ``(name, ScoreCard)`` or ``(name, {column: fraction})``
    pairs. Names from the standard six-row layout are emitted in that order;
    any other names follow in input order. Equal best values are all marked.
    """
    if not runs:
        raise ArgumentError("comparison_report needs at least one run")
    rank = {name: i for i, name in enumerate(TABLE_ORDER)}
    indexed = list(enumerate(runs))
    indexed.sort(key=lambda item: (rank.get(item[1][0], len(rank)), item[0]))
    rows = []
    for _, (name, card) in indexed:
        vals = card.headline(average) if isinstance(card, ScoreCard) else dict(card)
        rows.append((name, {col: round(100.0 * float(vals[col]), 2) for col in COLUMNS}))
    best = {}
    for col in COLUMNS:
        top = max(v[col] for _, v in rows)
        best[col] = {name for name, v in rows if v[col] == top}
    return ComparisonTable(rows, best)
