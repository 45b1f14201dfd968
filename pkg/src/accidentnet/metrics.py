"""Evaluation metrics: confusion counts, precision/recall/F1/accuracy,
per-class average precision and their macro mean.

The decision rule for confusion counts is p_accident > 0.5; ranking
metrics are threshold-free. Average precision follows the step-sum
definition: sort by descending score (stable, ties broken by original
index), then AP = sum over positive ranks of (R_k - R_{k-1}) * P_k.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

ACCIDENT, NORMAL = 0, 1
CLASS_NAMES = ("accident", "normal")
REPORT_FIELDS = ("precision", "recall", "f1", "accuracy", "map")


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    map: float
    ap_accident: float
    ap_normal: float
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "map": self.map,
            "ap_accident": self.ap_accident,
            "ap_normal": self.ap_normal,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }


def _class_index(label):
    if isinstance(label, str):
        if label not in CLASS_NAMES:
            raise DataError(f"unknown class {label!r}")
        return CLASS_NAMES.index(label)
    return int(label)


def average_precision(scores, labels, positive_class=ACCIDENT):
    """Step-sum AP for one class over ranked scores.

    `scores` are the scores FOR the positive class; `labels` are class
    indices or names. Raises DataError when the class has no positive
    examples (AP undefined).
    """
    if len(scores) == 0 or len(scores) != len(labels):
        raise DataError(
            f"scores and labels must be same nonempty length, got {len(scores)} and {len(labels)}"
        )
    pos = _class_index(positive_class)
    truth = [1 if _class_index(lab) == pos else 0 for lab in labels]
    total_pos = sum(truth)
    if total_pos == 0:
        raise DataError(f"no examples of class {positive_class!r}: AP undefined")
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))
    ap = 0.0
    hits = 0
    prev_recall = 0.0
    for rank, idx in enumerate(order, start=1):
        if truth[idx]:
            hits += 1
            recall = hits / total_pos
            ap += (recall - prev_recall) * (hits / rank)
            prev_recall = recall
    return ap


def confusion_counts(p_accident, labels, threshold=0.5):
    """TP/FP/FN/TN with "accident" as the positive class."""
    tp = fp = fn = tn = 0
    for p, lab in zip(p_accident, labels):
        predicted_accident = float(p) > threshold
        actual_accident = _class_index(lab) == ACCIDENT
        if predicted_accident and actual_accident:
            tp += 1
        elif predicted_accident and not actual_accident:
            fp += 1
        elif not predicted_accident and actual_accident:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def from_confusion(tp, fp, fn, tn, ap_accident, ap_normal):
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    accuracy = (tp + tn) / total if total > 0 else 0.0
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        map=(ap_accident + ap_normal) / 2.0,
        ap_accident=ap_accident,
        ap_normal=ap_normal,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def evaluate_scores(p_accident, labels, threshold=0.5):
    """Full metric suite from accident probabilities and true labels.

    MAP is the macro mean of the accident-class AP (ranked by p_accident)
    and the normal-class AP (ranked by 1 - p_accident).
    """
    if len(p_accident) == 0:
        raise DataError("cannot evaluate an empty split")
    tp, fp, fn, tn = confusion_counts(p_accident, labels, threshold)
    ap_acc = average_precision(p_accident, labels, ACCIDENT)
    ap_nor = average_precision([1.0 - float(p) for p in p_accident], labels, NORMAL)
    return from_confusion(tp, fp, fn, tn, ap_acc, ap_nor)


def format_report(report, variant):
    """Machine-parseable key=value block with a variant header."""
    lines = [f"#variant={variant}"]
    for key, value in report.as_dict().items():
        if isinstance(value, int):
            lines.append(f"{key}={value}")
        else:
            lines.append(f"{key}={value!r}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of format_report: (variant, MetricsReport)."""
    variant = None
    values = {}
    for line in text.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#variant="):
            variant = line[len("#variant="):]
            continue
        if "=" not in line:
            raise DataError(f"bad report line {line!r}")
        key, value = line.split("=", 1)
        values[key] = value
    if variant is None:
        raise DataError("report missing #variant header")
    try:
        report = MetricsReport(
            accuracy=float(values["accuracy"]),
            precision=float(values["precision"]),
            recall=float(values["recall"]),
            f1=float(values["f1"]),
            map=float(values["map"]),
            ap_accident=float(values["ap_accident"]),
            ap_normal=float(values["ap_normal"]),
            tp=int(values["tp"]),
            fp=int(values["fp"]),
            fn=int(values["fn"]),
            tn=int(values["tn"]),
        )
    except KeyError as exc:
        raise DataError(f"report missing field {exc}") from None
    return variant, report


def format_table(named_reports):
    """Side-by-side rows in result-table column order."""
    header = f"{'Model':34s} {'Precision':>9s} {'Recall':>7s} {'F1':>6s} {'Acc.':>6s} {'MAP':>6s}"
    lines = [header, "-" * len(header)]
    for variant, rep in named_reports:
        lines.append(
            f"{variant:34s} {rep.precision:9.4f} {rep.recall:7.4f} "
            f"{rep.f1:6.4f} {rep.accuracy:6.4f} {rep.map:6.4f}"
        )
    return "\n".join(lines) + "\n"
