"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .data import tokenize

__all__ = ["as_token_sequences", "check_labels", "check_groups"]


def as_token_sequences(X) -> list[list[str]]:
    """Accept raw strings or pre-tokenized sequences; return token lists."""
    if isinstance(X, str):
        raise ValueError("X must be a sequence of documents, not a single string")
    sequences = []
    for i, doc in enumerate(X):
        if isinstance(doc, str):
            sequences.append(tokenize(doc))
        elif isinstance(doc, (list, tuple)) and all(isinstance(t, str) for t in doc):
            sequences.append([t.lower() for t in doc])
        else:
            raise ValueError(f"document {i} must be a string or a sequence of tokens")
    return sequences


def check_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_rows:
        raise ValueError(f"y must be 1-D with {n_rows} entries")
    return y


def check_groups(groups, n_rows: int) -> list[dict[str, list[str]]]:
    """Normalize per-example group annotations to axis -> name-list maps."""
    if groups is None:
        return [{} for _ in range(n_rows)]
    groups = list(groups)
    if len(groups) != n_rows:
        raise ValueError(f"groups must have {n_rows} entries")
    normalized = []
    for i, g in enumerate(groups):
        if g is None:
            normalized.append({})
        elif isinstance(g, dict):
            normalized.append({str(k): [str(n) for n in v] for k, v in g.items()})
        elif isinstance(g, str):
            normalized.append({"gender": [g]})
        else:
            raise ValueError(f"groups[{i}] must be None, a string, or an axis->names mapping")
    return normalized
