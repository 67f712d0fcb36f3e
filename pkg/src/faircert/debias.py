"""Bias mitigation: embedding debiasing, instance weighting, gradient projection.

Three independent interventions that can combine with robust training:
rewriting the embedding matrix so a learned gender direction carries no
information, reweighting examples to break label / identity-term correlation,
and projecting the task gradient away from an adversary's gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "GenderSubspace",
    "gender_direction",
    "hard_debias",
    "InstanceWeightTable",
    "instance_weights",
    "debias_gradient",
    "Adversary",
]

WEIGHT_CLIP = (0.1, 10.0)


@dataclass(frozen=True)
class GenderSubspace:
    """Unit direction spanning the gendered variation of definitional pairs."""

    direction: np.ndarray
    pairs: list[tuple[str, str]]

    def __post_init__(self):
        norm = np.linalg.norm(self.direction)
        if not math.isclose(norm, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("gender direction must be unit-norm")

    def bias_of(self, vector: np.ndarray) -> float:
        """Cosine of a word vector with the gender direction."""
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            return 0.0
        return float(np.dot(vector, self.direction) / norm)


def gender_direction(embeddings: np.ndarray, pairs, vocab) -> GenderSubspace:
    """Top principal component of pair-centered definitional difference vectors.

    The sign is fixed so that the first usable pair's difference
    (first word minus second word) has a non-negative projection.
    """
    rows = []
    usable: list[tuple[str, str]] = []
    for a, b in pairs:
        ia, ib = vocab.id_for(a), vocab.id_for(b)
        if vocab.unknown_id in (ia, ib):
            continue
        va, vb = embeddings[ia], embeddings[ib]
        center = (va + vb) / 2.0
        rows.append(va - center)
        rows.append(vb - center)
        usable.append((a, b))
    if not usable:
        raise ValueError("no definitional pair has both words in the vocabulary")
    stacked = np.vstack(rows)
    _, _, vt = np.linalg.svd(stacked, full_matrices=False)
    direction = vt[0]
    direction = direction / np.linalg.norm(direction)
    a0, b0 = usable[0]
    first_diff = embeddings[vocab.id_for(a0)] - embeddings[vocab.id_for(b0)]
    if np.dot(direction, first_diff) < 0:
        direction = -direction
    return GenderSubspace(direction=direction, pairs=usable)


def hard_debias(
    embeddings: np.ndarray,
    subspace: GenderSubspace,
    equalize_pairs,
    gendered_lexicon,
    vocab,
) -> np.ndarray:
    """Neutralize non-gendered words and equalize definitional pairs.

    All regular rows are first renormalized to unit norm. Words outside the
    gendered lexicon lose their component along the direction (and are
    renormalized); each equalize pair is rewritten as a reflection about the
    direction with equal norms. The padding row stays zero.
    """
    g = subspace.direction
    out = embeddings.astype(np.float64).copy()
    gendered = set(gendered_lexicon)
    for i in range(2, len(out)):
        norm = np.linalg.norm(out[i])
        if norm == 0.0:
            continue
        out[i] = out[i] / norm
        if vocab.id_to_token[i] in gendered:
            continue
        projected = out[i] - np.dot(out[i], g) * g
        norm = np.linalg.norm(projected)
        out[i] = projected / norm if norm > 0.0 else projected
    for a, b in equalize_pairs:
        ia, ib = vocab.id_for(a), vocab.id_for(b)
        if vocab.unknown_id in (ia, ib):
            continue
        mu = (out[ia] + out[ib]) / 2.0
        nu = mu - np.dot(mu, g) * g
        scale = math.sqrt(max(0.0, 1.0 - float(np.dot(nu, nu))))
        for idx in (ia, ib):
            sign = np.sign(np.dot(out[idx] - mu, g))
            out[idx] = nu + scale * sign * g
    return out


@dataclass
class InstanceWeightTable:
    """Per-example loss weights correcting label / identity-term correlation."""

    weights: np.ndarray
    label_prior: dict[int, float]
    term_label_freq: dict[str, dict[int, float]]
    clip: tuple[float, float] = WEIGHT_CLIP
    terms_skipped: list[str] = field(default_factory=list)

    def weight(self, index: int) -> float:
        return float(self.weights[index])


def instance_weights(
    dataset, identity_lexicon, smoothing: float = 0.0, clip: tuple[float, float] = WEIGHT_CLIP
) -> InstanceWeightTable:
    """Weights ``prior(y) / freq(y | term)`` per example, clipped to ``clip``.

    Examples mentioning several identity terms take the geometric mean of the
    per-term weights; examples mentioning none keep weight 1. ``smoothing``
    adds the usual additive count smoothing to the conditional frequencies.
    """
    lexicon = set(identity_lexicon)
    if not lexicon:
        raise ValueError("identity lexicon must be non-empty")
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    labels = [ex.label for ex in dataset]
    classes = sorted(set(labels))
    prior = {y: labels.count(y) / n for y in classes}

    term_counts: dict[str, dict[int, int]] = {}
    per_example_terms: list[list[str]] = []
    for ex in dataset:
        terms = sorted(set(ex.tokens) & lexicon)
        per_example_terms.append(terms)
        for t in terms:
            term_counts.setdefault(t, {})
            term_counts[t][ex.label] = term_counts[t].get(ex.label, 0) + 1

    freq: dict[str, dict[int, float]] = {}
    skipped = sorted(lexicon - set(term_counts))
    for t, counts in term_counts.items():
        total = sum(counts.values())
        freq[t] = {
            y: (counts.get(y, 0) + smoothing) / (total + smoothing * len(classes))
            for y in classes
        }

    lo, hi = clip
    weights = np.ones(n)
    for i, (ex, terms) in enumerate(zip(dataset, per_example_terms)):
        if not terms:
            continue
        log_w = 0.0
        for t in terms:
            log_w += math.log(prior[ex.label] / freq[t][ex.label])
        weights[i] = min(hi, max(lo, math.exp(log_w / len(terms))))
    return InstanceWeightTable(
        weights=weights,
        label_prior=prior,
        term_label_freq=freq,
        clip=clip,
        terms_skipped=skipped,
    )


def debias_gradient(grad_task: np.ndarray, grad_adv: np.ndarray, alpha: float) -> np.ndarray:
    """Task gradient minus its projection onto the adversary gradient, minus
    ``alpha`` times the adversary gradient.

    Projection onto a zero adversary gradient is defined as zero, so the task
    gradient passes through untouched in that case.
    """
    grad_task = np.asarray(grad_task, dtype=np.float64)
    grad_adv = np.asarray(grad_adv, dtype=np.float64)
    if grad_task.shape != grad_adv.shape:
        raise ValueError(f"gradient shapes differ: {grad_task.shape} vs {grad_adv.shape}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    denom = float((grad_adv * grad_adv).sum())
    if denom == 0.0:
        projection = np.zeros_like(grad_task)
    else:
        projection = (float((grad_task * grad_adv).sum()) / denom) * grad_adv
    return grad_task - projection - alpha * grad_adv


class Adversary:
    """Affine-softmax head predicting the protected group from (probs, gold).

    The input is the model's predicted class distribution concatenated with a
    one-hot of the gold label, which targets the equalized-odds notion: the
    prediction should carry no group information given the true label.
    """

    def __init__(self, protected_classes: list[str], n_model_classes: int, alpha: float = 1.0, seed: int = 0):
        if len(protected_classes) < 2:
            raise ValueError("adversary needs at least two protected classes")
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.protected_classes = list(protected_classes)
        self.n_model_classes = n_model_classes
        self.alpha = alpha
        rng = np.random.default_rng(seed)
        n_in = 2 * n_model_classes
        n_out = len(protected_classes)
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.w = ad.parameter(rng.uniform(-limit, limit, size=(n_in, n_out)), "adv_w")
        self.b = ad.parameter(np.zeros(n_out), "adv_b")

    def params(self) -> dict[str, Tensor]:
        return {"adv_w": self.w, "adv_b": self.b}

    def group_index(self, name: str) -> int:
        return self.protected_classes.index(name)

    def loss(self, logits: Tensor, gold_label: int, group_index: int) -> Tensor:
        """Cross-entropy of the adversary's group prediction for one example."""
        probs = ad.softmax(logits)
        onehot = np.zeros(self.n_model_classes)
        onehot[gold_label] = 1.0
        features = ad.concat(probs, Tensor(onehot))
        out = features @ self.w + self.b
        return ad.cross_entropy_with_logits(out, group_index)
