"""Caption normalization shared by the vocabulary, statistics and metrics."""

import string

_STRIP = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> str:
    return text.lower().translate(_STRIP)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return normalize(text).split()
