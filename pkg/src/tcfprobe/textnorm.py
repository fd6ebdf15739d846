"""Word-level normalization applied to model outputs and entity names.

All answer comparisons in the harness (metrics, candidate sets, reward
matching) go through this one rule so that "The Hybrid Theory." and
"hybrid theory" resolve to the same word sequence.
"""

from __future__ import annotations

import re

_ARTICLES = frozenset({"the", "a", "an"})
# A sentence terminator or newline ends the answer span.
_TERMINATOR = re.compile(r"[.!?\n]")


def normalize_words(text: str) -> list[str]:
    """Normalize raw text to a list of lowercase words.

    Steps: lowercase, truncate at the first sentence terminator, replace
    punctuation/special characters with spaces, collapse whitespace, and
    drop at most one leading article. The leading article is kept when the
    next word is itself an article, which keeps the function idempotent
    (normalize(join(normalize(x))) == normalize(x)).
    """
    text = _TERMINATOR.split(text.strip().lower(), maxsplit=1)[0]
    text = "".join(ch if ch.isalnum() or ch.isspace() else " " for ch in text)
    words = text.split()
    if words and words[0] in _ARTICLES:
        if len(words) == 1 or words[1] not in _ARTICLES:
            words = words[1:]
    return words


def normalize_name(text: str) -> str:
    """Single-string form of :func:`normalize_words`, used as a lookup key."""
    return " ".join(normalize_words(text))
