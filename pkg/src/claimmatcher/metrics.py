"""Classification metrics: confusion counts, accuracy, and support-weighted
F1/precision/recall, plus run comparison and aggregation helpers."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import MATCH, ClaimPair
from .parsing import FALLBACK_NEGATIVE, Prediction


class IdMismatchError(ValueError):
    """Prediction and gold pair ids do not line up."""


class DuplicateIdError(ValueError):
    """A pair id occurs more than once."""


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    f1_weighted: float
    precision_weighted: float
    recall_weighted: float
    n: int
    fallback_rate: float

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "f1_weighted": self.f1_weighted,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "n": self.n,
            "fallback_rate": self.fallback_rate,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "MetricsReport":
        return cls(**{key: record[key] for key in cls.__dataclass_fields__})


def _precision_recall_f1(true_pos: int, false_pos: int, false_neg: int) -> tuple[float, float, float]:
    # 0/0 cases resolve to 0 by convention.
    precision = true_pos / (true_pos + false_pos) if true_pos + false_pos else 0.0
    recall = true_pos / (true_pos + false_neg) if true_pos + false_neg else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def compute_metrics(preds: Sequence[Prediction], gold: Sequence[ClaimPair]) -> MetricsReport:
    """Score predictions against gold labels (positive class: Match)."""
    pred_ids = [p.pair_id for p in preds]
    gold_ids = [g.pair_id for g in gold]
    for name, ids in (("predictions", pred_ids), ("gold", gold_ids)):
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateIdError(f"duplicate pair ids in {name}: {dupes[:5]}")
    if set(pred_ids) != set(gold_ids):
        missing = sorted(set(gold_ids) - set(pred_ids))[:5]
        extra = sorted(set(pred_ids) - set(gold_ids))[:5]
        raise IdMismatchError(f"pair id sets differ (missing={missing}, extra={extra})")

    gold_by_id = {g.pair_id: g.label for g in gold}
    tp = fp = tn = fn = 0
    fallback = 0
    for pred in preds:
        if pred.parse_status == FALLBACK_NEGATIVE:
            fallback += 1
        gold_label = gold_by_id[pred.pair_id]
        if gold_label == MATCH:
            if pred.label == MATCH:
                tp += 1
            else:
                fn += 1
        else:
            if pred.label == MATCH:
                fp += 1
            else:
                tn += 1

    n = len(preds)
    p_pos, r_pos, f_pos = _precision_recall_f1(tp, fp, fn)
    p_neg, r_neg, f_neg = _precision_recall_f1(tn, fn, fp)
    support_pos = tp + fn
    support_neg = tn + fp

    def weighted(pos_value: float, neg_value: float) -> float:
        return (pos_value * support_pos + neg_value * support_neg) / n

    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=(tp + tn) / n,
        f1_weighted=weighted(f_pos, f_neg),
        precision_weighted=weighted(p_pos, p_neg),
        recall_weighted=weighted(r_pos, r_neg),
        n=n,
        fallback_rate=fallback / n,
    )


def compare_runs(entries: Sequence[tuple[object, MetricsReport]]) -> list[dict]:
    """Rank run reports by weighted F1 (ties: accuracy, then run id).

    Each entry pairs a run configuration (anything exposing run_id,
    provider, template_user, template_system and shot_mode) with its
    metrics report.
    """
    if not entries:
        raise ValueError("compare_runs requires at least one report")
    rows = []
    for config, report in entries:
        template = config.template_user
        if getattr(config, "template_system", None):
            template = f"{config.template_user} & {config.template_system}"
        rows.append(
            {
                "run_id": config.run_id,
                "model": config.provider,
                "template": template,
                "mode": f"{config.shot_mode}-shot",
                "f1_weighted": report.f1_weighted,
                "accuracy": report.accuracy,
            }
        )
    rows.sort(key=lambda row: (-row["f1_weighted"], -row["accuracy"], row["run_id"]))
    return rows


def format_ranking(rows: Sequence[dict], failures: Sequence[dict] = ()) -> str:
    """Render ranked rows as a fixed-width text table, percentages to one
    decimal place. Failed runs are appended with a FAILED marker."""
    header = ("model", "template", "mode", "F1, %", "Acc., %")
    body = [
        (
            row["model"],
            row["template"],
            row["mode"],
            f"{row['f1_weighted'] * 100:.1f}",
            f"{row['accuracy'] * 100:.1f}",
        )
        for row in rows
    ]
    body.extend(
        (item["model"], item["template"], item["mode"], "FAILED", "FAILED")
        for item in failures
    )
    widths = [max(len(header[i]), *(len(line[i]) for line in body)) if body else len(header[i]) for i in range(5)]
    lines = ["  ".join(header[i].ljust(widths[i]) for i in range(5))]
    lines.append("  ".join("-" * widths[i] for i in range(5)))
    for line in body:
        lines.append("  ".join(line[i].ljust(widths[i]) for i in range(5)))
    return "\n".join(lines)


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    """Mean and standard error of F1/accuracy over repeated runs."""
    if not reports:
        raise ValueError("aggregate requires at least one report")
    f1_values = [r.f1_weighted for r in reports]
    acc_values = [r.accuracy for r in reports]

    def standard_error(values: Sequence[float]) -> float:
        if len(values) < 2:
            return 0.0
        return statistics.stdev(values) / math.sqrt(len(values))

    return {
        "n_runs": len(reports),
        "f1_weighted_mean": statistics.fmean(f1_values),
        "f1_weighted_se": standard_error(f1_values),
        "accuracy_mean": statistics.fmean(acc_values),
        "accuracy_se": standard_error(acc_values),
    }


def load_report(path: str | Path) -> MetricsReport:
    with open(path, encoding="utf-8") as handle:
        return MetricsReport.from_dict(json.load(handle))


def save_report(report: MetricsReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(report.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
