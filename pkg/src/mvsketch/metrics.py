"""Detection quality scoring against oracle ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .detection import HeavyReport


@dataclass(frozen=True)
class MetricsReport:
    """Precision/recall/F1 and relative estimation error of one report.

    Conventions for empty sets: with nothing reported and nothing true,
    precision and recall are both 1.0; with nothing reported but true
    flows present, precision is 0.0. Relative error averages
    |true - estimate| / true over the correctly reported true heavy
    flows only (0.0 when there are none).
    """

    precision: float
    recall: float
    f1: float
    relative_error: float
    true_count: int
    reported_count: int
    correct_count: int


def compute_metrics(
    report: HeavyReport, truth: set[bytes], oracle_values: Mapping[bytes, int]
) -> MetricsReport:
    reported = report.as_dict()
    correct = set(reported) & truth

    if len(reported) == 0:
        precision = 1.0 if len(truth) == 0 else 0.0
    else:
        precision = len(correct) / len(reported)
    recall = 1.0 if len(truth) == 0 else len(correct) / len(truth)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

    if correct:
        rel = sum(
            abs(oracle_values[k] - reported[k]) / oracle_values[k] for k in correct
        ) / len(correct)
    else:
        rel = 0.0

    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        relative_error=rel,
        true_count=len(truth),
        reported_count=len(reported),
        correct_count=len(correct),
    )
