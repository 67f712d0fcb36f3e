"""Local surrogate explanations and the gender-token feature report.

Explanations come from a LIME-style fit: sample binary keep/mask vectors over
token positions (masked tokens become padding so positions stay stable for
the convolution), query the model's probability of the explained class, and
fit a proximity-weighted ridge regression. The report compares how often
gender tokens appear among two models' top-k features over the same examples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Example
from .model import TextCnn, Vocabulary

__all__ = [
    "Explanation",
    "GenderTokenReport",
    "lime_explain",
    "disagreement_set",
    "gender_token_report",
]

KERNEL_WIDTH = 0.25
RIDGE_PENALTY = 1e-3


@dataclass
class Explanation:
    """Top-k token features with signed weights, sorted by |weight| descending."""

    example_id: int | None
    features: list[tuple[int, str, float]]  # (position, token, weight)
    r_squared: float
    degenerate: bool = False


@dataclass
class GenderTokenReport:
    """Counts of lexicon tokens among top-k features, for two models."""

    a_token_count: int
    b_token_count: int
    a_example_count: int
    b_example_count: int
    n_examples: int
    k: int
    lexicon: list[str]
    example_set: str = ""

    def to_dict(self) -> dict:
        return {
            "model_a": {"gender_tokens": self.a_token_count, "examples_with_gender_token": self.a_example_count},
            "model_b": {"gender_tokens": self.b_token_count, "examples_with_gender_token": self.b_example_count},
            "n_examples": self.n_examples,
            "k": self.k,
            "lexicon_size": len(self.lexicon),
            "example_set": self.example_set,
        }

    def bar_summary(self) -> str:
        width = 40
        top = max(1, self.a_token_count, self.b_token_count)
        lines = []
        for name, count in (("model_a", self.a_token_count), ("model_b", self.b_token_count)):
            bar = "#" * round(width * count / top)
            lines.append(f"{name:8s} |{bar:<{width}}| {count} gender tokens in top-{self.k}")
        return "\n".join(lines)


def _weighted_ridge(masks: np.ndarray, targets: np.ndarray, sample_weights: np.ndarray):
    """Ridge fit with unpenalized intercept; returns (intercept, coefs, r_squared)."""
    n, d = masks.shape
    design = np.hstack([np.ones((n, 1)), masks])
    weighted = design * sample_weights[:, None]
    gram = design.T @ weighted
    penalty = np.eye(d + 1) * RIDGE_PENALTY
    penalty[0, 0] = 0.0
    beta = np.linalg.solve(gram + penalty, weighted.T @ targets)
    fitted = design @ beta
    resid = targets - fitted
    total = targets - np.average(targets, weights=sample_weights)
    ss_res = float(np.sum(sample_weights * resid**2))
    ss_tot = float(np.sum(sample_weights * total**2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(beta[0]), beta[1:], r2


def lime_explain(
    model: TextCnn,
    example,
    n_samples: int,
    k: int,
    rng: np.random.Generator,
    example_id: int | None = None,
) -> Explanation:
    """Explain the model's predicted class for one example.

    Requires ``n_samples >= 10 * k``. The first sample is always the unmasked
    input. Masked positions are replaced by the padding id; proximity weights
    are ``exp(-(masked fraction / 0.25)^2)``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_samples < 10 * k:
        raise ValueError(f"n_samples must be at least 10*k = {10 * k}")
    tokens = list(getattr(example, "tokens", example))
    ids = model.prep_ids(tokens)
    real = model.real_length(tokens)
    if real == 0:
        return Explanation(example_id, [], r_squared=1.0, degenerate=True)
    tokens = tokens[:real]

    masks = rng.random((n_samples, real)) < 0.5
    masks[0] = True  # the unmasked input anchors the fit
    sequences = []
    for mask in masks:
        seq = ids.copy()
        seq[:real][~mask] = Vocabulary.padding_id
        sequences.append(seq)
    probs = model.predict_proba_batch(sequences)
    explained = int(np.argmax(probs[0]))
    targets = probs[:, explained]

    masked_fraction = 1.0 - masks.mean(axis=1)
    proximity = np.exp(-((masked_fraction / KERNEL_WIDTH) ** 2))

    if float(targets.std()) < 1e-12:
        return Explanation(example_id, [(i, tokens[i], 0.0) for i in range(min(k, real))],
                           r_squared=1.0, degenerate=True)

    _, coefs, r2 = _weighted_ridge(masks.astype(np.float64), targets, proximity)
    order = sorted(range(real), key=lambda i: (-abs(coefs[i]), i))[:k]
    features = [(i, tokens[i], float(coefs[i])) for i in order]
    return Explanation(example_id, features, r_squared=r2)


def disagreement_set(
    model_a: TextCnn,
    model_b: TextCnn,
    dataset: Dataset,
    direction: str = "a_wrong_b_right",
) -> list[Example]:
    """Examples one model gets wrong and the other right."""
    if direction not in ("a_wrong_b_right", "b_wrong_a_right"):
        raise ValueError("direction must be 'a_wrong_b_right' or 'b_wrong_a_right'")
    sequences = [ex.tokens for ex in dataset]
    labels = np.array([ex.label for ex in dataset])
    pred_a = model_a.predict_batch(sequences)
    pred_b = model_b.predict_batch(sequences)
    if direction == "a_wrong_b_right":
        mask = (pred_a != labels) & (pred_b == labels)
    else:
        mask = (pred_b != labels) & (pred_a == labels)
    return [dataset[i] for i in np.flatnonzero(mask)]


def gender_token_report(
    model_a: TextCnn,
    model_b: TextCnn,
    examples,
    lexicon,
    k: int = 5,
    n_samples: int = 200,
    sample_cap: int = 500,
    rng: np.random.Generator | None = None,
    example_set: str = "",
) -> GenderTokenReport:
    """Count lexicon tokens among both models' top-k features.

    Subsamples to ``sample_cap`` examples when needed (seeded). Both models
    are explained with identical per-example mask draws so the comparison is
    paired.
    """
    lexicon_set = set(lexicon)
    if not lexicon_set:
        raise ValueError("lexicon must be non-empty")
    examples = list(examples)
    rng = rng if rng is not None else np.random.default_rng(0)
    base_seed = int(rng.integers(2**31))
    if len(examples) > sample_cap:
        chosen = sorted(rng.choice(len(examples), size=sample_cap, replace=False))
        examples = [examples[i] for i in chosen]

    counts = {"a": 0, "b": 0}
    with_token = {"a": 0, "b": 0}
    for idx, ex in enumerate(examples):
        for key, mdl in (("a", model_a), ("b", model_b)):
            ex_rng = np.random.default_rng([base_seed, idx])
            expl = lime_explain(mdl, ex, n_samples=n_samples, k=k, rng=ex_rng, example_id=idx)
            hits = sum(1 for _, token, _ in expl.features if token in lexicon_set)
            counts[key] += hits
            if hits:
                with_token[key] += 1
    return GenderTokenReport(
        a_token_count=counts["a"],
        b_token_count=counts["b"],
        a_example_count=with_token["a"],
        b_example_count=with_token["b"],
        n_examples=len(examples),
        k=k,
        lexicon=sorted(lexicon_set),
        example_set=example_set,
    )
