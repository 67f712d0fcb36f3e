"""Corpus ingestion, synthetic biased-corpus generation, and report files.

Corpora are line-delimited JSON records with fields ``text``, ``label`` and
optional ``groups`` (axis name -> list of group names), mirroring the record
shape of public toxicity / occupation datasets. The synthetic generator
plants a spurious correlation between identity tokens and labels so that a
plain classifier picks it up and fairness interventions have something to
remove.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .perturb import SubstitutionTable

__all__ = [
    "Example",
    "Dataset",
    "SynthConfig",
    "tokenize",
    "read_corpus",
    "write_corpus",
    "generate_synthetic",
    "synthetic_neighbor_table",
    "write_report",
    "read_report",
]

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})

REPORT_FORMAT = "faircert-report/1"


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass
class Example:
    tokens: list[str]
    label: int
    groups: dict[str, list[str]] = field(default_factory=dict)

    def group_names(self, axis: str) -> list[str]:
        return self.groups.get(axis, [])


@dataclass
class Dataset:
    examples: list[Example]

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def n_classes(self) -> int:
        if not self.examples:
            return 2
        return max(2, max(ex.label for ex in self.examples) + 1)

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


def read_corpus(path) -> Dataset:
    """Read a line-delimited JSON corpus; malformed lines name their line number."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict) or "text" not in record or "label" not in record:
                raise ValueError(f"{path}: line {lineno}: record needs 'text' and 'label' fields")
            label = record["label"]
            if not isinstance(label, int) or label < 0:
                raise ValueError(f"{path}: line {lineno}: label must be a non-negative integer")
            groups = record.get("groups", {})
            if not isinstance(groups, dict) or not all(
                isinstance(k, str) and isinstance(v, list) for k, v in groups.items()
            ):
                raise ValueError(f"{path}: line {lineno}: groups must map axis to a name list")
            examples.append(
                Example(
                    tokens=tokenize(str(record["text"])),
                    label=label,
                    groups={k: [str(n) for n in v] for k, v in groups.items()},
                )
            )
    return Dataset(examples)


def write_corpus(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            record = {
                "text": " ".join(ex.tokens),
                "label": ex.label,
                "groups": {k: sorted(ex.groups[k]) for k in sorted(ex.groups)},
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


# Identity inventories reuse words from the shipped lexicons so that the
# default debiasing and perturbation resources apply without configuration.
DEFAULT_GROUP_TOKENS = {
    "male": ["he", "him", "his", "man", "men", "boy", "boys", "dude"],
    "female": ["she", "her", "hers", "woman", "women", "girl", "girls", "lady"],
}

DEFAULT_SIGNAL_TOKENS = [
    # class 0 signal words
    [
        "great", "kind", "lovely", "helpful", "friendly", "gentle", "decent",
        "nice", "warm", "thoughtful", "polite", "caring", "generous", "pleasant", "supportive",
    ],
    # class 1 signal words
    [
        "awful", "terrible", "horrible", "nasty", "stupid", "dumb", "trash",
        "gross", "vile", "rotten", "mean", "cruel", "toxic", "hateful", "rude",
    ],
]

DEFAULT_FILLER_TOKENS = [
    "the", "a", "this", "that", "person", "said", "was", "very", "really",
    "quite", "today", "again", "comment", "post", "reply", "thread", "user",
    "wrote", "about", "thing", "online",
]


@dataclass
class SynthConfig:
    """Knobs for the seeded synthetic corpus.

    ``rho`` is the spurious correlation strength between identity-token group
    and label: the mention's group is the label-aligned one with probability
    rho, otherwise drawn uniformly over all groups.
    """

    n_examples: int = 5000
    n_classes: int = 2
    rho: float = 0.9
    seed: int = 0
    identity_prob: float = 0.8
    second_identity_prob: float = 0.3
    no_signal_prob: float = 0.15
    label_prior: float = 0.5
    axis: str = "gender"
    group_tokens: dict[str, list[str]] = field(
        default_factory=lambda: {g: list(ts) for g, ts in DEFAULT_GROUP_TOKENS.items()}
    )
    signal_tokens: list[list[str]] = field(
        default_factory=lambda: [list(p) for p in DEFAULT_SIGNAL_TOKENS]
    )
    filler_tokens: list[str] = field(default_factory=lambda: list(DEFAULT_FILLER_TOKENS))
    signal_range: tuple[int, int] = (2, 4)
    filler_range: tuple[int, int] = (3, 6)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.n_classes < 2 or len(self.signal_tokens) != self.n_classes:
            raise ValueError("need one signal pool per class, at least two classes")
        if not self.group_tokens or any(not ts for ts in self.group_tokens.values()):
            raise ValueError("group token inventories must be non-empty")


def _pick(rng: np.random.Generator, pool: list[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Seeded corpus whose identity tokens correlate with labels at strength rho."""
    rng = np.random.default_rng(config.seed)
    group_names = sorted(config.group_tokens)
    examples = []
    for _ in range(config.n_examples):
        if config.n_classes == 2:
            label = int(rng.random() < config.label_prior)
        else:
            label = int(rng.integers(config.n_classes))
        k_sig = int(rng.integers(config.signal_range[0], config.signal_range[1] + 1))
        k_fill = int(rng.integers(config.filler_range[0], config.filler_range[1] + 1))
        tokens = [_pick(rng, config.signal_tokens[label]) for _ in range(k_sig)]
        tokens += [_pick(rng, config.filler_tokens) for _ in range(k_fill)]
        groups: dict[str, list[str]] = {}
        if rng.random() < config.identity_prob:
            aligned = group_names[label % len(group_names)]
            if rng.random() < config.rho:
                group = aligned
            else:
                group = group_names[int(rng.integers(len(group_names)))]
            mentions = [_pick(rng, config.group_tokens[group])]
            if rng.random() < config.second_identity_prob:
                mentions.append(_pick(rng, config.group_tokens[group]))
            tokens += mentions
            groups[config.axis] = [group]
        order = rng.permutation(len(tokens))
        examples.append(Example([tokens[i] for i in order], label, groups))
    return Dataset(examples)


def synthetic_neighbor_table(config: SynthConfig, cluster_size: int = 3) -> SubstitutionTable:
    """Substitution table matching the synthetic corpus vocabulary.

    Signal and filler pools are chunked into small label-preserving synonym
    groups; identity tokens start as singletons (gender swaps are added via
    pair augmentation when an experiment calls for them).
    """
    if cluster_size < 1:
        raise ValueError("cluster_size must be at least 1")
    candidates: dict[str, list[str]] = {}

    def add_chunked(pool: list[str]) -> None:
        for start in range(0, len(pool), cluster_size):
            chunk = pool[start : start + cluster_size]
            for word in chunk:
                candidates[word] = list(chunk)

    for pool in config.signal_tokens:
        add_chunked(pool)
    add_chunked(config.filler_tokens)
    for tokens in config.group_tokens.values():
        for word in tokens:
            candidates.setdefault(word, [word])
    return SubstitutionTable(candidates=candidates, provenance={"source": "synthetic-clusters"})


def synthetic_embeddings(
    config: SynthConfig,
    vocab,
    dim: int = 16,
    seed: int = 0,
    cluster_spread: float = 0.02,
) -> np.ndarray:
    """Embedding matrix aligned with the synthetic synonym clusters.

    Members of a cluster share a centroid plus small noise, mirroring how
    synonyms sit close together in distributional embeddings; identity
    tokens get their own vectors. Cluster draws depend only on the config and
    seed, not on the vocabulary, so train/test vocabularies stay consistent.
    """
    rng = np.random.default_rng(seed)
    table = synthetic_neighbor_table(config)
    word_vec: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    for word in sorted(table.candidates):
        if word in seen:
            continue
        group = sorted(table.candidates[word])
        seen.update(group)
        centroid = rng.uniform(-0.1, 0.1, size=dim)
        for member in group:
            word_vec[member] = centroid + rng.uniform(-cluster_spread, cluster_spread, size=dim)
    matrix = np.zeros((vocab.size, dim), dtype=np.float64)
    for i in range(1, vocab.size):
        token = vocab.id_to_token[i]
        vec = word_vec.get(token)
        matrix[i] = rng.uniform(-0.1, 0.1, size=dim) if vec is None else vec
    return matrix


def write_report(report, path) -> None:
    """Persist a metrics report with a stable field layout (byte-deterministic)."""
    payload = report.to_dict()
    payload["format"] = REPORT_FORMAT
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def read_report(path):
    from .metrics import MetricsReport

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: not a {REPORT_FORMAT} file")
    payload.pop("format")
    return MetricsReport.from_dict(payload)


def empirical_mutual_information(dataset: Dataset, axis: str) -> float:
    """Mutual information (nats) between identity-mention presence+group and label."""
    joint: dict[tuple[str, int], int] = {}
    n = len(dataset)
    if n == 0:
        return 0.0
    for ex in dataset:
        names = ex.group_names(axis)
        key = (names[0] if names else "<none>", ex.label)
        joint[key] = joint.get(key, 0) + 1
    pg: dict[str, float] = {}
    py: dict[int, float] = {}
    for (g, y), c in joint.items():
        pg[g] = pg.get(g, 0.0) + c / n
        py[y] = py.get(y, 0.0) + c / n
    mi = 0.0
    for (g, y), c in joint.items():
        p = c / n
        mi += p * math.log(p / (pg[g] * py[y]))
    return mi
