"""Loaders for the shipped word lists (editable: plain word-per-line files)."""

from __future__ import annotations

from importlib import resources

from .perturb import load_gender_pairs

__all__ = [
    "load_lexicon",
    "default_gender_pairs",
    "default_gendered_lexicon",
    "default_identity_lexicon",
    "resource_path",
]


def load_lexicon(path) -> set[str]:
    """One word per line, lowercased; blank lines and '#' comments ignored."""
    words = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    return words


def resource_path(name: str):
    return resources.files("faircert").joinpath("resources", name)


def default_gender_pairs() -> list[tuple[str, str]]:
    return load_gender_pairs(resource_path("gender_pairs.txt"))


def default_gendered_lexicon() -> set[str]:
    return load_lexicon(resource_path("gendered_lexicon.txt"))


def default_identity_lexicon() -> set[str]:
    return load_lexicon(resource_path("identity_lexicon.txt"))
