"""Task, fairness, and robustness metrics plus the model-selection score.

Fairness metrics follow the equality-difference convention: for a rate f
(TPR or FPR), sum |f_group - f_overall| over the groups of one protected
axis. Groups whose rate is undefined (zero eligible denominator) are
excluded from the sum and surfaced in the report instead of silently
counting as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .robustness import certify_dataset

__all__ = [
    "auc",
    "GroupRates",
    "group_rates",
    "equality_difference",
    "tpr_difference",
    "cra",
    "selection_score",
    "MetricsReport",
    "evaluate_model",
]


def auc(scores, labels) -> float:
    """Area under the ROC curve in the rank (Mann-Whitney) form; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    pos = labels == 1
    neg = labels == 0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both a positive and a negative example")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class GroupRates:
    """Per-group and overall TPR/FPR for one protected axis."""

    axis: str
    tpr: dict[str, float]
    fpr: dict[str, float]
    overall_tpr: float
    overall_fpr: float
    excluded_tpr: list[str] = field(default_factory=list)
    excluded_fpr: list[str] = field(default_factory=list)


def _rate(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def group_rates(predictions, labels, groups, axis: str = "") -> GroupRates:
    """Confusion-matrix rates per group; an example may belong to several groups."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels) or len(labels) != len(groups):
        raise ValueError("predictions, labels, and groups must be aligned")
    names = sorted({g for gs in groups for g in gs})

    def rates_for(mask) -> tuple[float | None, float | None]:
        p, y = predictions[mask], labels[mask]
        tp = int(((p == 1) & (y == 1)).sum())
        fn = int(((p != 1) & (y == 1)).sum())
        fp = int(((p == 1) & (y != 1)).sum())
        tn = int(((p != 1) & (y != 1)).sum())
        return _rate(tp, tp + fn), _rate(fp, fp + tn)

    all_mask = np.ones(len(labels), dtype=bool)
    overall_tpr, overall_fpr = rates_for(all_mask)
    if overall_tpr is None or overall_fpr is None:
        raise ValueError("overall rates undefined: need at least one positive and one negative")

    tpr: dict[str, float] = {}
    fpr: dict[str, float] = {}
    excluded_tpr: list[str] = []
    excluded_fpr: list[str] = []
    for name in names:
        mask = np.array([name in gs for gs in groups])
        t, f = rates_for(mask)
        if t is None:
            excluded_tpr.append(name)
        else:
            tpr[name] = t
        if f is None:
            excluded_fpr.append(name)
        else:
            fpr[name] = f
    return GroupRates(
        axis=axis,
        tpr=tpr,
        fpr=fpr,
        overall_tpr=overall_tpr,
        overall_fpr=overall_fpr,
        excluded_tpr=excluded_tpr,
        excluded_fpr=excluded_fpr,
    )


def equality_difference(rates: GroupRates, kind: str) -> float:
    """Sum over groups of |group rate - overall rate| for TPR or FPR."""
    if kind == "tped":
        return float(sum(abs(v - rates.overall_tpr) for v in rates.tpr.values()))
    if kind == "fped":
        return float(sum(abs(v - rates.overall_fpr) for v in rates.fpr.values()))
    raise ValueError("kind must be 'fped' or 'tped'")


def tpr_difference(rates: GroupRates) -> float:
    """Largest pairwise TPR gap across groups (0 with fewer than two groups)."""
    if len(rates.tpr) < 2:
        return 0.0
    values = list(rates.tpr.values())
    return float(max(values) - min(values))


def cra(
    model,
    dataset,
    table,
    method: str = "ibp",
    jobs: int = 1,
    n_samples: int | None = None,
    confidence: float = 0.95,
    exact_cap: int = 4096,
    seed: int = 0,
) -> float:
    """Certified robust accuracy: the fraction of examples certified."""
    results = certify_dataset(
        model,
        dataset,
        table,
        method=method,
        jobs=jobs,
        n_samples=n_samples,
        confidence=confidence,
        exact_cap=exact_cap,
        seed=seed,
    )
    if not results:
        return 0.0
    return float(np.mean([r.certified for r in results]))


def selection_score(fped: float, tped: float, cra_value: float, task_performance: float) -> float:
    """Model-selection objective: fped + tped + (1 - cra) + (1 - task performance)."""
    for name, value in (("fped", fped), ("tped", tped)):
        if value < 0:
            raise ValueError(f"{name} must be non-negative")
    for name, value in (("cra", cra_value), ("task_performance", task_performance)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    return fped + tped + (1.0 - cra_value) + (1.0 - task_performance)


@dataclass
class MetricsReport:
    """One row of the evaluation table: raw task | fairness | robustness."""

    task_metric: str
    task_score: float
    fped: float
    tped: float
    eodds: float
    tpr_diff: float
    cra: float
    selection_score: float
    axis: str = "gender"
    robustness_method: str = "ibp"
    group_tpr: dict[str, float] = field(default_factory=dict)
    group_fpr: dict[str, float] = field(default_factory=dict)
    overall_tpr: float = 0.0
    overall_fpr: float = 0.0
    excluded_groups: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.eodds != self.fped + self.tped:
            raise ValueError("eodds must equal fped + tped exactly")
        for name in ("fped", "tped", "eodds", "tpr_diff", "cra", "selection_score"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "raw_task": {"metric": self.task_metric, "score": self.task_score},
            "fairness": {
                "axis": self.axis,
                "eodds": self.eodds,
                "fped": self.fped,
                "tped": self.tped,
                "tpr_diff": self.tpr_diff,
                "group_tpr": dict(sorted(self.group_tpr.items())),
                "group_fpr": dict(sorted(self.group_fpr.items())),
                "overall_tpr": self.overall_tpr,
                "overall_fpr": self.overall_fpr,
                "excluded_groups": {k: sorted(v) for k, v in sorted(self.excluded_groups.items())},
            },
            "robustness": {"method": self.robustness_method, "cra": self.cra},
            "selection_score": self.selection_score,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        fair = payload["fairness"]
        return cls(
            task_metric=payload["raw_task"]["metric"],
            task_score=payload["raw_task"]["score"],
            fped=fair["fped"],
            tped=fair["tped"],
            eodds=fair["eodds"],
            tpr_diff=fair["tpr_diff"],
            cra=payload["robustness"]["cra"],
            selection_score=payload["selection_score"],
            axis=fair["axis"],
            robustness_method=payload["robustness"]["method"],
            group_tpr=fair["group_tpr"],
            group_fpr=fair["group_fpr"],
            overall_tpr=fair["overall_tpr"],
            overall_fpr=fair["overall_fpr"],
            excluded_groups=fair["excluded_groups"],
        )


def evaluate_model(
    model,
    dataset,
    table,
    axis: str = "gender",
    task_metric: str = "auc",
    method: str = "ibp",
    jobs: int = 1,
    n_samples: int | None = None,
    confidence: float = 0.95,
    exact_cap: int = 4096,
    seed: int = 0,
) -> MetricsReport:
    """Full evaluation of a trained model on one dataset and one protected axis."""
    sequences = [ex.tokens for ex in dataset]
    labels = np.array([ex.label for ex in dataset])
    probs = model.predict_proba_batch(sequences)
    predictions = probs.argmax(axis=1)
    if task_metric == "auc":
        if model.n_classes != 2:
            raise ValueError("AUC is defined here for binary tasks only")
        task_score = auc(probs[:, 1], labels)
    elif task_metric == "accuracy":
        task_score = float((predictions == labels).mean())
    else:
        raise ValueError("task_metric must be 'auc' or 'accuracy'")
    rates = group_rates(predictions, labels, [ex.group_names(axis) for ex in dataset], axis=axis)
    fped = equality_difference(rates, "fped")
    tped = equality_difference(rates, "tped")
    cra_value = cra(
        model,
        dataset,
        table,
        method=method,
        jobs=jobs,
        n_samples=n_samples,
        confidence=confidence,
        exact_cap=exact_cap,
        seed=seed,
    )
    return MetricsReport(
        task_metric=task_metric,
        task_score=task_score,
        fped=fped,
        tped=tped,
        eodds=fped + tped,
        tpr_diff=tpr_difference(rates),
        cra=cra_value,
        selection_score=selection_score(fped, tped, cra_value, task_score),
        axis=axis,
        robustness_method=method,
        group_tpr=rates.tpr,
        group_fpr=rates.fpr,
        overall_tpr=rates.overall_tpr,
        overall_fpr=rates.overall_fpr,
        excluded_groups={"tpr": rates.excluded_tpr, "fpr": rates.excluded_fpr},
    )
