"""Word-substitution sets: construction, clustering, and enumeration.

A table in raw mode maps each word to its substitution candidates (nearest
neighbors by cosine, plus optional gender swaps). Clustered mode is the
smoothing-friendly variant: candidate lists are whole mutual-neighbor
clusters, so every word reachable by substitutions shares the exact same
smoothing distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

__all__ = [
    "SubstitutionTable",
    "PerturbationSpaceError",
    "load_gender_pairs",
    "build_neighbor_table",
    "read_neighbor_table",
    "write_neighbor_table",
    "to_clusters",
    "augment_gender_pairs",
    "enumerate_perturbations",
    "sample_perturbation",
]

logger = logging.getLogger(__name__)


class PerturbationSpaceError(ValueError):
    """Raised when a perturbation cross-product exceeds the enumeration cap."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"perturbation space has {size} members, above the cap of {cap}")
        self.size = size
        self.cap = cap


@dataclass
class SubstitutionTable:
    """Per-word candidate substitutions; every word is its own candidate.

    ``clusters`` maps word -> cluster id when the table is in clustered
    (smoothing) mode; ``None`` means raw-neighbor mode.
    """

    candidates: dict[str, list[str]]
    clusters: dict[str, int] | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for word, cands in self.candidates.items():
            if word not in cands:
                raise ValueError(f"table entry {word!r} is missing self-membership")

    @property
    def mode(self) -> str:
        return "clustered" if self.clusters is not None else "raw"

    def words(self) -> list[str]:
        return sorted(self.candidates)

    def candidates_for(self, word: str) -> list[str]:
        """Candidate list for a word; unknown words only map to themselves."""
        return self.candidates.get(word, [word])

    def candidate_ids(self, tokens, vocab) -> list[list[int]]:
        """Per-position in-vocabulary candidate ids, own id included, sorted.

        Out-of-vocabulary candidates are dropped (the model cannot represent
        them), and a position whose own token is out of vocabulary is not
        substitutable at all: it gets an empty list. Sorting makes the pool
        canonical, so in clustered mode every member of a cluster sees the
        exact same pool.
        """
        out = []
        for word in tokens:
            own = vocab.id_for(word)
            if own == vocab.unknown_id and word != vocab.unknown_token:
                out.append([])
                continue
            ids = {
                vocab.id_for(cand)
                for cand in self.candidates_for(word)
                if vocab.id_for(cand) != vocab.unknown_id or cand == vocab.unknown_token
            }
            ids.add(own)
            out.append(sorted(ids))
        return out


def load_gender_pairs(path) -> list[tuple[str, str]]:
    """Read definitional pairs, one tab-separated pair per line; '#' comments allowed."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValueError(f"{path}: line {lineno}: expected 'word_a<TAB>word_b'")
            a, b = parts[0].lower(), parts[1].lower()
            if a == b:
                raise ValueError(f"{path}: line {lineno}: pair words must differ")
            pairs.append((a, b))
    return pairs


def build_neighbor_table(embeddings: np.ndarray, vocab, top_k: int) -> SubstitutionTable:
    """Top-k nearest words by cosine similarity as each word's candidate set.

    Ties break by token id. Words whose embedding has zero norm (or vocab
    specials) get only themselves.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    ids = [i for i in range(vocab.size) if i not in (vocab.padding_id, vocab.unknown_id)]
    if embeddings.shape[0] != vocab.size:
        raise ValueError("embedding row count does not match the vocabulary")
    candidates: dict[str, list[str]] = {}
    if not ids:
        return SubstitutionTable(candidates, provenance={"source": "cosine", "top_k": top_k})
    vectors = embeddings[ids]
    norms = np.linalg.norm(vectors, axis=1)
    usable = norms > 0.0
    unit = np.zeros_like(vectors)
    unit[usable] = vectors[usable] / norms[usable, None]
    sims = unit @ unit.T
    for row, wid in enumerate(ids):
        word = vocab.id_to_token[wid]
        if not usable[row]:
            candidates[word] = [word]
            continue
        order = sorted(
            (j for j in range(len(ids)) if j != row and usable[j]),
            key=lambda j: (-sims[row, j], ids[j]),
        )
        neighbors = [vocab.id_to_token[ids[j]] for j in order[:top_k]]
        candidates[word] = [word] + neighbors
    return SubstitutionTable(candidates, provenance={"source": "cosine", "top_k": top_k})


def write_neighbor_table(table: SubstitutionTable, path) -> None:
    """Cache format: one 'word: cand1,cand2,...' line per word, sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for word in table.words():
            others = [c for c in table.candidates[word] if c != word]
            fh.write(f"{word}: {','.join(others)}\n")


def read_neighbor_table(path) -> SubstitutionTable:
    candidates: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'word: cand1,cand2,...'")
            word, _, rest = line.partition(":")
            word = word.strip()
            if not word:
                raise ValueError(f"{path}: line {lineno}: empty word")
            cands = [c.strip() for c in rest.split(",") if c.strip()]
            candidates[word] = [word] + [c for c in cands if c != word]
    return SubstitutionTable(candidates, provenance={"source": str(path)})


def to_clusters(table: SubstitutionTable) -> SubstitutionTable:
    """Connected components of the mutual-neighbor graph become clusters.

    Every word's candidate list becomes its full cluster, so candidate lists
    are identical within a cluster and membership is symmetric.
    """
    words = table.words()
    index = {w: i for i, w in enumerate(words)}
    parent = list(range(len(words)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    cand_sets = {w: set(table.candidates[w]) for w in words}
    for w in words:
        for c in table.candidates[w]:
            if c != w and c in cand_sets and w in cand_sets[c]:
                union(index[w], index[c])

    members: dict[int, list[str]] = {}
    for w in words:
        members.setdefault(find(index[w]), []).append(w)
    candidates: dict[str, list[str]] = {}
    clusters: dict[str, int] = {}
    for cid, root in enumerate(sorted(members)):
        group = sorted(members[root])
        for w in group:
            candidates[w] = list(group)
            clusters[w] = cid
    return SubstitutionTable(candidates, clusters=clusters, provenance=dict(table.provenance))


def augment_gender_pairs(
    table: SubstitutionTable, pairs: list[tuple[str, str]]
) -> SubstitutionTable:
    """Make each definitional pair mutually substitutable.

    In clustered mode the two words' clusters are merged; in raw mode each
    word is appended to the other's candidate list. Pairs with a word absent
    from the table are skipped and counted.
    """
    skipped = 0
    candidates = {w: list(c) for w, c in table.candidates.items()}
    usable = []
    for a, b in pairs:
        if a in candidates and b in candidates:
            usable.append((a, b))
        else:
            skipped += 1
    if skipped:
        logger.warning("gender pair augmentation skipped %d pair(s) missing from the table", skipped)

    if table.clusters is None:
        for a, b in usable:
            if b not in candidates[a]:
                candidates[a].append(b)
            if a not in candidates[b]:
                candidates[b].append(a)
        provenance = dict(table.provenance)
        provenance.update({"gender_augmented": True, "gender_pairs_skipped": skipped})
        return SubstitutionTable(candidates, provenance=provenance)

    merged = to_clusters(
        SubstitutionTable(
            {
                w: (c + [b for a, b in usable if a == w] + [a for a, b in usable if b == w])
                for w, c in candidates.items()
            },
            provenance=dict(table.provenance),
        )
    )
    merged.provenance.update({"gender_augmented": True, "gender_pairs_skipped": skipped})
    return merged


def _space_size(candidate_ids: list[list[int]]) -> int:
    return math.prod(max(1, len(c)) for c in candidate_ids)


def enumerate_perturbations(tokens, table: SubstitutionTable, vocab, cap: int) -> list[list[int]]:
    """Full cross-product of per-position substitutions, as token-id sequences.

    The original sequence is always a member. Raises
    ``PerturbationSpaceError`` instead of silently truncating when the
    cross-product exceeds ``cap``.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    tokens = list(getattr(tokens, "tokens", tokens))
    per_position = []
    for word, ids in zip(tokens, table.candidate_ids(tokens, vocab)):
        own = vocab.id_for(word)
        per_position.append([own] + [i for i in ids if i != own])
    size = _space_size(per_position)
    if size > cap:
        raise PerturbationSpaceError(size, cap)
    return [list(combo) for combo in product(*per_position)]


def sample_perturbation(tokens, table: SubstitutionTable, vocab, rng: np.random.Generator) -> list[int]:
    """One uniform independent within-cluster substitution per position."""
    if table.mode != "clustered":
        raise ValueError("sampling requires a clustered (smoothing-mode) table")
    tokens = list(getattr(tokens, "tokens", tokens))
    out = []
    for word, ids in zip(tokens, table.candidate_ids(tokens, vocab)):
        pool = ids if ids else [vocab.id_for(word)]
        out.append(int(pool[int(rng.integers(len(pool)))]))
    return out
