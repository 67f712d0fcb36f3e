"""Vocabulary, embedding matrix, and the convolutional text classifier.

The classifier is the classic small text CNN: embed, 1-D convolution over
``kernel_size`` windows, ReLU, max over time, affine to class logits. Word
embeddings are frozen during training; only the convolution and output
parameters receive gradients, which keeps substitution sets meaningful in
embedding space.

Sequences lose trailing padding before the convolution, so conv windows only
ever cover the real span (padded up to one window for very short inputs).
That makes the forward pass, bounds, and saliency invariant to trailing
padding.
"""

from __future__ import annotations

import base64
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .intervals import IntervalTensor, interval_affine, interval_from_substitutions, interval_monotone

__all__ = [
    "PAD_TOKEN",
    "UNK_TOKEN",
    "Vocabulary",
    "build_vocab",
    "load_embeddings",
    "write_embeddings",
    "random_embeddings",
    "TextCnn",
    "save_model",
    "load_model",
]

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

CHECKPOINT_FORMAT = "faircert-textcnn/1"


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    padding_id = 0
    unknown_id = 1
    padding_token = PAD_TOKEN
    unknown_token = UNK_TOKEN

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        """Build from regular tokens in their final id order (specials prepended)."""
        id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        token_to_id = {t: i for i, t in enumerate(id_to_token)}
        if len(token_to_id) != len(id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        return cls(token_to_id, id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, self.unknown_id)

    def encode(self, tokens) -> list[int]:
        return [self.id_for(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Tokens at or above ``min_count`` get ids in frequency-then-lexicographic order."""
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    counts: Counter = Counter()
    n_examples = 0
    for ex in corpus:
        n_examples += 1
        counts.update(ex.tokens)
    if n_examples == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in (PAD_TOKEN, UNK_TOKEN)),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary.from_tokens(kept)


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> np.ndarray:
    """Read whitespace-separated 'token v1 ... vd' vectors for a vocabulary.

    Tokens absent from the file get rows drawn uniformly from [-0.1, 0.1]
    using ``seed`` (drawn in id order, so reloading reproduces them exactly).
    The padding row is all zeros.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    by_token: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected a token and {dim} values, got {len(parts)} fields"
                )
            token = parts[0]
            if token in by_token:
                continue  # first occurrence wins
            try:
                by_token[token] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-numeric embedding value") from exc
    matrix = np.zeros((vocab.size, dim), dtype=np.float64)
    rng = np.random.default_rng(seed)
    for i in range(1, vocab.size):  # row 0 stays zero for padding
        token = vocab.id_to_token[i]
        row = by_token.get(token)
        matrix[i] = rng.uniform(-0.1, 0.1, size=dim) if row is None else row
    if not np.isfinite(matrix).all():
        raise ValueError(f"{path}: embeddings contain non-finite values")
    return matrix


def write_embeddings(path, vocab: Vocabulary, matrix: np.ndarray) -> None:
    """Write regular (non-special) rows in the text embedding format."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(2, vocab.size):
            values = " ".join(repr(float(v)) for v in matrix[i])
            fh.write(f"{vocab.id_to_token[i]} {values}\n")


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> np.ndarray:
    """Uniform [-0.1, 0.1] rows for every non-padding token."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.1, 0.1, size=(vocab.size, dim))
    matrix[Vocabulary.padding_id] = 0.0
    return matrix


class TextCnn:
    """Embed -> conv windows -> ReLU -> max over time -> affine logits."""

    def __init__(
        self,
        vocab: Vocabulary,
        embeddings: np.ndarray,
        hidden_size: int = 100,
        kernel_size: int = 3,
        n_classes: int = 2,
        dropout: float = 0.5,
        max_len: int = 128,
        seed: int = 0,
    ):
        if embeddings.shape[0] != vocab.size:
            raise ValueError("embedding row count must equal the vocabulary size")
        if not np.isfinite(embeddings).all():
            raise ValueError("embeddings contain non-finite values")
        if hidden_size < 1 or kernel_size < 1:
            raise ValueError("hidden_size and kernel_size must be positive")
        if n_classes < 2:
            raise ValueError("need at least two classes")
        if max_len < kernel_size:
            raise ValueError("max_len must be at least kernel_size")
        self.vocab = vocab
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.hidden_size = hidden_size
        self.kernel_size = kernel_size
        self.n_classes = n_classes
        self.dropout = dropout
        self.max_len = max_len
        dim = self.embeddings.shape[1]
        rng = np.random.default_rng(seed)
        kd = kernel_size * dim
        conv_limit = np.sqrt(6.0 / (kd + hidden_size))
        out_limit = np.sqrt(6.0 / (hidden_size + n_classes))
        self.conv_w = ad.parameter(rng.uniform(-conv_limit, conv_limit, size=(kd, hidden_size)), "conv_w")
        self.conv_b = ad.parameter(np.zeros(hidden_size), "conv_b")
        self.out_w = ad.parameter(rng.uniform(-out_limit, out_limit, size=(hidden_size, n_classes)), "out_w")
        self.out_b = ad.parameter(np.zeros(n_classes), "out_b")

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    def params(self) -> dict[str, Tensor]:
        return {
            "conv_w": self.conv_w,
            "conv_b": self.conv_b,
            "out_w": self.out_w,
            "out_b": self.out_b,
        }

    def _encode(self, tokens_or_ids) -> list[int]:
        seq = list(getattr(tokens_or_ids, "tokens", tokens_or_ids))
        if seq and isinstance(seq[0], str):
            return self.vocab.encode(seq)
        return [int(i) for i in seq]

    def prep_ids(self, tokens_or_ids) -> np.ndarray:
        """Validate ids, drop trailing padding, truncate, pad up to one window."""
        ids = self._encode(tokens_or_ids)
        for i in ids:
            if not 0 <= i < self.vocab.size:
                raise ValueError(f"token id {i} out of range for vocabulary size {self.vocab.size}")
        while ids and ids[-1] == Vocabulary.padding_id:
            ids.pop()
        ids = ids[: self.max_len]
        if len(ids) < self.kernel_size:
            ids = ids + [Vocabulary.padding_id] * (self.kernel_size - len(ids))
        return np.array(ids, dtype=np.int64)

    def real_length(self, tokens_or_ids) -> int:
        """Number of non-padding positions after preparation."""
        ids = self._encode(tokens_or_ids)
        while ids and ids[-1] == Vocabulary.padding_id:
            ids.pop()
        return min(len(ids), self.max_len)

    def embed(self, ids: np.ndarray) -> np.ndarray:
        return self.embeddings[np.asarray(ids, dtype=np.int64)]

    def logits_graph(self, x: Tensor, dropout_mask: np.ndarray | None = None) -> Tensor:
        w = ad.windows(x, self.kernel_size)
        hidden = ad.relu(w @ self.conv_w + self.conv_b)
        pooled = ad.max_along(hidden, axis=0)
        if dropout_mask is not None:
            pooled = pooled * Tensor(dropout_mask)
        return pooled @ self.out_w + self.out_b

    def forward(self, tokens_or_ids, dropout_mask: np.ndarray | None = None) -> Tensor:
        """Differentiable logits for one sequence."""
        ids = self.prep_ids(tokens_or_ids)
        return self.logits_graph(Tensor(self.embed(ids)), dropout_mask)

    def predict_logits(self, tokens_or_ids) -> np.ndarray:
        return self.predict_logits_batch([tokens_or_ids])[0]

    def predict_logits_batch(self, sequences) -> np.ndarray:
        """Vectorized inference path; matches ``forward`` for every row."""
        preps = [self.prep_ids(s) for s in sequences]
        if not preps:
            return np.zeros((0, self.n_classes))
        n = len(preps)
        lengths = np.array([len(p) for p in preps])
        tmax = int(lengths.max())
        ids = np.zeros((n, tmax), dtype=np.int64)
        for i, p in enumerate(preps):
            ids[i, : len(p)] = p
        x = self.embeddings[ids]
        k, d = self.kernel_size, self.embedding_dim
        nw = tmax - k + 1
        win = np.stack([x[:, j : j + nw, :] for j in range(k)], axis=2).reshape(n, nw, k * d)
        hidden = np.maximum(win @ self.conv_w.data + self.conv_b.data, 0.0)
        valid = np.arange(nw)[None, :] < (lengths - k + 1)[:, None]
        hidden = np.where(valid[:, :, None], hidden, -np.inf)
        pooled = hidden.max(axis=1)
        return pooled @ self.out_w.data + self.out_b.data

    def predict_proba_batch(self, sequences) -> np.ndarray:
        logits = self.predict_logits_batch(sequences)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_batch(self, sequences) -> np.ndarray:
        return self.predict_logits_batch(sequences).argmax(axis=1)

    def forward_interval(self, tokens_or_ids, candidates_per_position) -> IntervalTensor:
        """Logit bounds over the substitution box around one sequence."""
        ids = self.prep_ids(tokens_or_ids)
        cands = [
            list(candidates_per_position[i]) if i < len(candidates_per_position) else []
            for i in range(len(ids))
        ]
        box = interval_from_substitutions(self.embeddings, ids, cands)
        return self.interval_logits_from_box(box)

    def interval_logits_from_box(self, box: IntervalTensor) -> IntervalTensor:
        """Propagate an input embedding box through the network to logit bounds."""
        k = self.kernel_size
        low = ad.windows(box.lower, k)
        high = ad.windows(box.upper, k)
        hidden = interval_monotone("relu", interval_affine(self.conv_w, self.conv_b, IntervalTensor(low, high)))
        pooled = interval_monotone("max_pool", hidden, axis=0)
        return interval_affine(self.out_w, self.out_b, pooled)

    def saliency(self, tokens_or_ids) -> np.ndarray:
        """L2 norm of the predicted-class logit gradient per input position.

        Padding positions score exactly zero. The returned array has the same
        length as the input sequence.
        """
        seq = list(getattr(tokens_or_ids, "tokens", tokens_or_ids))
        ids = self.prep_ids(seq)
        real = self.real_length(seq)
        x = Tensor(self.embed(ids), requires_grad=True, name="input")
        logits = self.logits_graph(x)
        predicted = int(np.argmax(logits.data))
        onehot = np.zeros(self.n_classes)
        onehot[predicted] = 1.0
        ad.backward(logits, onehot)
        norms = np.linalg.norm(x.grad, axis=1)
        scores = np.zeros(len(seq))
        upto = min(real, len(seq))
        scores[:upto] = norms[:upto]
        return scores


def save_model(model: TextCnn, path) -> None:
    """Single-file JSON checkpoint; identical models produce identical bytes."""

    def pack(arr: np.ndarray) -> dict:
        data = np.ascontiguousarray(arr, dtype="<f8")
        return {
            "shape": list(data.shape),
            "dtype": "<f8",
            "data": base64.b64encode(data.tobytes()).decode("ascii"),
        }

    payload = {
        "format": CHECKPOINT_FORMAT,
        "hidden_size": model.hidden_size,
        "kernel_size": model.kernel_size,
        "n_classes": model.n_classes,
        "dropout": model.dropout,
        "max_len": model.max_len,
        "vocab": model.vocab.id_to_token,
        "arrays": {
            "embeddings": pack(model.embeddings),
            **{name: pack(p.data) for name, p in model.params().items()},
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path) -> TextCnn:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")

    def unpack(entry: dict) -> np.ndarray:
        raw = base64.b64decode(entry["data"])
        return np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).astype(np.float64)

    tokens = payload["vocab"]
    if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise ValueError(f"{path}: checkpoint vocabulary is missing the special tokens")
    vocab = Vocabulary.from_tokens(tokens[2:])
    arrays = {name: unpack(entry) for name, entry in payload["arrays"].items()}
    model = TextCnn(
        vocab,
        arrays["embeddings"],
        hidden_size=payload["hidden_size"],
        kernel_size=payload["kernel_size"],
        n_classes=payload["n_classes"],
        dropout=payload["dropout"],
        max_len=payload["max_len"],
    )
    for name, param in model.params().items():
        param.data = arrays[name]
    return model
