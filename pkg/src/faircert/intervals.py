"""Interval arithmetic over tensors for layer-wise bound propagation.

An ``IntervalTensor`` carries elementwise lower/upper bounds through the
network. Bounds are sound overapproximations: any concrete input inside the
input box produces outputs inside the propagated box. Both bound paths are
ordinary autodiff tensors, so losses computed from them backpropagate into
model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, abs_, cross_entropy_with_logits, matmul, max_along, mul, relu

__all__ = [
    "IntervalTensor",
    "interval_from_substitutions",
    "interval_affine",
    "interval_monotone",
    "elementwise_max",
    "worst_case_loss",
]


@dataclass(frozen=True)
class IntervalTensor:
    """Paired lower/upper bound tensors of identical shape, lower <= upper."""

    lower: Tensor
    upper: Tensor

    def __post_init__(self):
        if self.lower.data.shape != self.upper.data.shape:
            raise ValueError(
                f"bound shapes differ: {self.lower.data.shape} vs {self.upper.data.shape}"
            )
        if np.any(self.lower.data > self.upper.data):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def shape(self) -> tuple:
        return self.lower.data.shape

    @classmethod
    def point(cls, value: Tensor) -> "IntervalTensor":
        """Degenerate interval containing exactly one point."""
        return cls(value, value)

    def width(self) -> np.ndarray:
        return self.upper.data - self.lower.data

    def contains(self, value: np.ndarray, tol: float = 0.0) -> bool:
        value = np.asarray(value, dtype=np.float64)
        return bool(
            np.all(value >= self.lower.data - tol) and np.all(value <= self.upper.data + tol)
        )


def interval_from_substitutions(
    embeddings: np.ndarray, token_ids, candidates_per_position
) -> IntervalTensor:
    """Axis-aligned box over each position's own vector and its substitutes.

    Candidate lists are per-position token ids; the original id always
    participates, so empty lists give a degenerate (exact) interval.
    """
    vocab_size = embeddings.shape[0]
    n = len(token_ids)
    lower = np.empty((n, embeddings.shape[1]))
    upper = np.empty_like(lower)
    for pos, tid in enumerate(token_ids):
        cands = candidates_per_position[pos] if pos < len(candidates_per_position) else []
        ids = [int(tid)] + [int(c) for c in cands]
        for i in ids:
            if not 0 <= i < vocab_size:
                raise ValueError(f"candidate id {i} out of vocabulary (size {vocab_size})")
        rows = embeddings[ids]
        lower[pos] = rows.min(axis=0)
        upper[pos] = rows.max(axis=0)
    return IntervalTensor(Tensor(lower), Tensor(upper))


def interval_affine(weight: Tensor, bias: Tensor | None, x: IntervalTensor) -> IntervalTensor:
    """Affine map of an interval via the center/radius rule.

    center' = center @ W + b and radius' = radius @ |W|, which is the tightest
    axis-aligned box for an affine image of a box.
    """
    half = Tensor(0.5)
    center = mul(x.lower + x.upper, half)
    radius = mul(x.upper - x.lower, half)
    center2 = matmul(center, weight)
    if bias is not None:
        center2 = center2 + bias
    radius2 = matmul(radius, abs_(weight))
    return IntervalTensor(center2 - radius2, center2 + radius2)


def elementwise_max(a: IntervalTensor, b: IntervalTensor) -> IntervalTensor:
    """Elementwise max of two intervals: monotone in both arguments."""
    lo = np.maximum(a.lower.data, b.lower.data)
    hi = np.maximum(a.upper.data, b.upper.data)
    return IntervalTensor(Tensor(lo), Tensor(hi))


def interval_monotone(kind: str, x: IntervalTensor, axis: int = 0) -> IntervalTensor:
    """Apply a monotone nondecreasing map to both bounds independently.

    ``relu`` is elementwise; ``max_pool`` reduces over ``axis``. The result is
    tight for monotone maps.
    """
    if kind == "relu":
        return IntervalTensor(relu(x.lower), relu(x.upper))
    if kind == "max_pool":
        return IntervalTensor(max_along(x.lower, axis), max_along(x.upper, axis))
    raise ValueError(f"unknown monotone kind {kind!r}")


def worst_case_loss(logit_bounds: IntervalTensor, gold: int) -> Tensor:
    """Upper bound on cross-entropy over a logit box.

    Cross-entropy is decreasing in the gold logit and increasing in every
    other logit, so the exact maximum over the box sits at the corner with
    the gold logit at its lower bound and all others at their upper bounds.
    """
    if logit_bounds.lower.data.ndim != 1:
        raise ValueError("worst_case_loss expects 1-D logit bounds")
    n = logit_bounds.lower.data.shape[0]
    if not 0 <= gold < n:
        raise ValueError(f"gold class {gold} out of range for {n} classes")
    onehot = np.zeros(n)
    onehot[gold] = 1.0
    adversarial = mul(logit_bounds.lower, Tensor(onehot)) + mul(
        logit_bounds.upper, Tensor(1.0 - onehot)
    )
    return cross_entropy_with_logits(adversarial, gold)
