"""Certified-robustness machinery: the IBP training loss and both certifiers.

The IBP objective blends the plain loss with the worst-case loss over the
substitution box: ``(1 - lam) * plain + lam * worst``. Certification comes in
two flavours: interval bounds (sound, possibly loose) and smoothing over
random within-cluster substitutions (exact enumeration when the support is
small, a Hoeffding-backed Monte Carlo bound otherwise).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .intervals import IntervalTensor, interval_from_substitutions, worst_case_loss
from .model import TextCnn
from .perturb import SubstitutionTable, enumerate_perturbations, sample_perturbation

__all__ = [
    "IbpLossBreakdown",
    "CertificationResult",
    "substitution_box",
    "ibp_loss",
    "certify_ibp",
    "smoothing_support_size",
    "smoothed_scores_exact",
    "smoothed_scores_mc",
    "safer_certify",
    "certify_dataset",
]


@dataclass
class IbpLossBreakdown:
    """The blended certified-robustness objective for one example."""

    plain_loss: float
    worst_case_loss: float
    lam: float
    total: float
    node: Tensor = field(repr=False, compare=False, default=None)


@dataclass
class CertificationResult:
    certified: bool
    point_correct: bool
    margin: float
    method: str
    samples_used: int | None = None

    def __post_init__(self):
        if self.certified and not self.point_correct:
            raise ValueError("certified results must also be point-correct")


def _aligned_candidates(model: TextCnn, tokens, table: SubstitutionTable | None, ids) -> list:
    if table is None:
        return [[] for _ in ids]
    tokens = list(getattr(tokens, "tokens", tokens))
    cand = table.candidate_ids(tokens[: len(ids)], model.vocab)
    return [cand[i] if i < len(cand) else [] for i in range(len(ids))]


def substitution_box(model: TextCnn, tokens, table: SubstitutionTable | None):
    """Prepared ids plus the per-position embedding bounds for an example."""
    ids = model.prep_ids(tokens)
    cands = _aligned_candidates(model, tokens, table, ids)
    box = interval_from_substitutions(model.embeddings, ids, cands)
    return ids, box.lower.data, box.upper.data


def _breakdown(
    model: TextCnn,
    ids,
    lower: np.ndarray,
    upper: np.ndarray,
    gold: int,
    lam: float,
    dropout_mask: np.ndarray | None = None,
) -> IbpLossBreakdown:
    plain = ad.cross_entropy_with_logits(
        model.logits_graph(Tensor(model.embed(ids)), dropout_mask), gold
    )
    bounds = model.interval_logits_from_box(IntervalTensor(Tensor(lower), Tensor(upper)))
    worst = worst_case_loss(bounds, gold)
    total = plain * (1.0 - lam) + worst * lam
    breakdown = IbpLossBreakdown(
        plain_loss=float(plain.data),
        worst_case_loss=float(worst.data),
        lam=lam,
        total=float(total.data),
        node=total,
    )
    if dropout_mask is None and breakdown.worst_case_loss < breakdown.plain_loss - 1e-9:
        raise RuntimeError("bound soundness violated: worst-case loss below the plain loss")
    return breakdown


def ibp_loss(model: TextCnn, example, table: SubstitutionTable | None, lam: float) -> IbpLossBreakdown:
    """Blended objective for one labeled example; differentiable via ``node``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    ids, lower, upper = substitution_box(model, example.tokens, table)
    return _breakdown(model, ids, lower, upper, example.label, lam)


def certify_ibp(model: TextCnn, example, table: SubstitutionTable | None) -> CertificationResult:
    """Sound certificate: gold-logit lower bound beats every other upper bound."""
    ids = model.prep_ids(example.tokens)
    cands = _aligned_candidates(model, example.tokens, table, ids)
    bounds = model.forward_interval(ids, cands)
    gold = example.label
    if not 0 <= gold < model.n_classes:
        raise ValueError(f"label {gold} out of range for {model.n_classes} classes")
    point = model.predict_logits(ids)
    point_correct = bool(int(point.argmax()) == gold)
    others = np.delete(bounds.upper.data, gold)
    margin = float(bounds.lower.data[gold] - others.max())
    return CertificationResult(
        certified=bool(point_correct and margin > 0.0),
        point_correct=point_correct,
        margin=margin,
        method="ibp",
    )


def smoothing_support_size(model: TextCnn, tokens, table: SubstitutionTable) -> int:
    tokens = list(getattr(tokens, "tokens", tokens))
    ids = model.prep_ids(tokens)
    pools = _aligned_candidates(model, tokens, table, ids)
    return math.prod(max(1, len(p)) for p in pools)


def smoothed_scores_exact(model: TextCnn, tokens, table: SubstitutionTable, cap: int = 4096):
    """Mean softmax scores over the full (uniform) smoothing support."""
    sequences = enumerate_perturbations(tokens, table, model.vocab, cap)
    probs = model.predict_proba_batch(sequences)
    return probs.mean(axis=0), len(sequences)


def smoothed_scores_mc(
    model: TextCnn, tokens, table: SubstitutionTable, n_samples: int, rng: np.random.Generator
):
    draws = [sample_perturbation(tokens, table, model.vocab, rng) for _ in range(n_samples)]
    probs = model.predict_proba_batch(draws)
    return probs.mean(axis=0)


def safer_certify(
    model: TextCnn,
    example,
    table: SubstitutionTable,
    n_samples: int | None = None,
    confidence: float = 0.95,
    exact_cap: int = 4096,
    rng: np.random.Generator | None = None,
) -> CertificationResult:
    """Smoothing certificate from the gold-vs-runner-up smoothed score gap.

    Exact mode enumerates the smoothing support when it has at most
    ``exact_cap`` members and certifies on a strictly positive gap. Monte
    Carlo mode needs ``n_samples`` and certifies when the gap exceeds twice
    the two-sided Hoeffding deviation at ``confidence``. ``point_correct``
    refers to the smoothed classifier's own prediction.
    """
    if table.mode != "clustered":
        raise ValueError("smoothing certification requires a clustered table")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie strictly between 0 and 1")
    gold = example.label
    if not 0 <= gold < model.n_classes:
        raise ValueError(f"label {gold} out of range for {model.n_classes} classes")
    support = smoothing_support_size(model, example.tokens, table)
    if support <= exact_cap:
        scores, used = smoothed_scores_exact(model, example.tokens, table, cap=exact_cap)
        threshold = 0.0
    else:
        if n_samples is None:
            raise ValueError(
                f"smoothing support has {support} members, above the exact cap of {exact_cap}; "
                "provide n_samples for Monte Carlo certification"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        scores = smoothed_scores_mc(model, example.tokens, table, n_samples, rng)
        used = n_samples
        threshold = 2.0 * math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n_samples))
    margin = float(scores[gold] - np.delete(scores, gold).max())
    point_correct = bool(int(scores.argmax()) == gold)
    return CertificationResult(
        certified=bool(point_correct and margin > threshold),
        point_correct=point_correct,
        margin=margin,
        method="safer",
        samples_used=used,
    )


def _certify_task(args):
    model, table, example, method, kwargs, seed_key = args
    if method == "ibp":
        return certify_ibp(model, example, table)
    rng = np.random.default_rng(seed_key)
    return safer_certify(model, example, table, rng=rng, **kwargs)


def certify_dataset(
    model: TextCnn,
    dataset,
    table: SubstitutionTable | None,
    method: str = "ibp",
    jobs: int = 1,
    n_samples: int | None = None,
    confidence: float = 0.95,
    exact_cap: int = 4096,
    seed: int = 0,
) -> list[CertificationResult]:
    """Certify every example; embarrassingly parallel over frozen parameters."""
    if method not in ("ibp", "safer"):
        raise ValueError("method must be 'ibp' or 'safer'")
    kwargs = dict(n_samples=n_samples, confidence=confidence, exact_cap=exact_cap)
    tasks = [
        (model, table, ex, method, kwargs if method == "safer" else {}, [seed, i])
        for i, ex in enumerate(dataset)
    ]
    if jobs <= 1:
        return [_certify_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunk = max(1, len(tasks) // (jobs * 4))
        return list(pool.map(_certify_task, tasks, chunksize=chunk))
