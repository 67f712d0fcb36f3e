"""Scikit-learn compatible facade over the training pipeline.

``RobustTextClassifier`` takes raw documents (strings or token lists), builds
the vocabulary, embeddings, and substitution table at fit time, and exposes
the usual ``fit`` / ``predict`` / ``predict_proba`` / ``get_params`` surface
so the toolkit composes with pipelines and model selection from the wider
ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import Dataset, Example
from .metrics import cra
from .model import build_vocab, load_embeddings, random_embeddings
from .perturb import build_neighbor_table, to_clusters
from .train import TrainConfig, train
from .validation import as_token_sequences, check_groups, check_labels

__all__ = ["RobustTextClassifier"]

_METHOD_FLAGS = {
    "baseline": {},
    "ibp": {"ibp": True},
    "ibp_gender": {"ibp_gender": True},
    "safer": {"safer": True},
    "safer_gender": {"safer_gender": True},
    "instance_weighting": {"instance_weighting": True},
    "hard_debias": {"hard_debias": True},
    "adversarial": {"adversarial": True},
}


def method_flags(method: str) -> dict[str, bool]:
    """Parse a method string like ``ibp+instance_weighting`` into config flags."""
    flags: dict[str, bool] = {}
    for part in method.split("+"):
        part = part.strip()
        if part not in _METHOD_FLAGS:
            raise ValueError(f"unknown method {part!r}; known: {sorted(_METHOD_FLAGS)}")
        flags.update(_METHOD_FLAGS[part])
    return flags


class RobustTextClassifier(BaseEstimator, ClassifierMixin):
    """Text CNN with optional certified-robustness and fairness training.

    Parameters mirror the training configuration; ``method`` combines flags
    with ``+``, e.g. ``"ibp+instance_weighting"``. ``embeddings`` may be a
    path to a text embedding file or ``None`` for seeded random vectors;
    ``substitutions`` may be a prebuilt table or ``None`` to build one from
    cosine neighbors at fit time.
    """

    def __init__(
        self,
        method: str = "baseline",
        learning_rate: float = 1e-2,
        dropout: float = 0.5,
        epochs: int = 20,
        batch_size: int = 32,
        optimizer: str = "sgd",
        hidden_size: int = 100,
        kernel_size: int = 3,
        embedding_dim: int = 50,
        max_len: int = 128,
        min_count: int = 1,
        top_k_neighbors: int = 100,
        ibp_ramp_epochs: int = 40,
        ibp_hold_epochs: int = 20,
        ibp_lambda_max: float = 0.8,
        adversary_alpha: float = 1.0,
        protected_axis: str = "gender",
        embeddings=None,
        substitutions=None,
        seed: int = 0,
    ):
        self.method = method
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.hidden_size = hidden_size
        self.kernel_size = kernel_size
        self.embedding_dim = embedding_dim
        self.max_len = max_len
        self.min_count = min_count
        self.top_k_neighbors = top_k_neighbors
        self.ibp_ramp_epochs = ibp_ramp_epochs
        self.ibp_hold_epochs = ibp_hold_epochs
        self.ibp_lambda_max = ibp_lambda_max
        self.adversary_alpha = adversary_alpha
        self.protected_axis = protected_axis
        self.embeddings = embeddings
        self.substitutions = substitutions
        self.seed = seed

    def _config(self, n_classes: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            dropout=self.dropout,
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            hidden_size=self.hidden_size,
            kernel_size=self.kernel_size,
            embedding_dim=self.embedding_dim,
            max_len=self.max_len,
            ibp_ramp_epochs=self.ibp_ramp_epochs,
            ibp_hold_epochs=self.ibp_hold_epochs,
            ibp_lambda_max=self.ibp_lambda_max,
            adversary_alpha=self.adversary_alpha,
            protected_axis=self.protected_axis,
            seed=self.seed,
            n_classes=n_classes,
            **method_flags(self.method),
        )

    def fit(self, X, y, groups=None):
        sequences = as_token_sequences(X)
        y = check_labels(y, len(sequences))
        annotations = check_groups(groups, len(sequences))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes in y")
        dataset = Dataset(
            [Example(toks, int(label), ann) for toks, label, ann in zip(sequences, encoded, annotations)]
        )
        vocab = build_vocab(dataset, min_count=self.min_count)
        if self.embeddings is None:
            emb = random_embeddings(vocab, self.embedding_dim, seed=self.seed)
        elif isinstance(self.embeddings, (str, bytes)) or hasattr(self.embeddings, "__fspath__"):
            emb = load_embeddings(self.embeddings, vocab, self.embedding_dim, seed=self.seed)
        else:
            emb = np.asarray(self.embeddings, dtype=np.float64)
            if emb.shape[0] != vocab.size:
                raise ValueError("embedding matrix rows must match the fitted vocabulary")
        table = self.substitutions
        if table is None:
            table = build_neighbor_table(emb, vocab, top_k=self.top_k_neighbors)
        config = self._config(len(self.classes_))
        if config.uses_safer and table.mode != "clustered":
            table = to_clusters(table)
        self.vocab_ = vocab
        self.table_ = table
        self.config_ = config
        self.model_ = train(config, dataset, table, emb, vocab)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return self.model_.predict_proba_batch(as_token_sequences(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        logits = self.model_.predict_logits_batch(as_token_sequences(X))
        return logits[:, 1] - logits[:, 0] if len(self.classes_) == 2 else logits

    def certified_accuracy(self, X, y, method: str | None = None, **kwargs) -> float:
        """Certified robust accuracy of the fitted model on the given data."""
        self._check_fitted()
        sequences = as_token_sequences(X)
        y = check_labels(y, len(sequences))
        index = {c: i for i, c in enumerate(self.classes_)}
        dataset = Dataset([Example(t, index[label], {}) for t, label in zip(sequences, y)])
        if method is None:
            method = "safer" if self.config_.uses_safer else "ibp"
        table = self.table_
        if method == "safer" and table.mode != "clustered":
            table = to_clusters(table)
        return cra(self.model_, dataset, table, method=method, **kwargs)
