"""Deterministic, model-agnostic token accounting.

One token per 4 characters, rounded up. Exact model tokenizers are out of
scope; budget enforcement only needs a stable monotone count.
"""

import math

CHARS_PER_TOKEN = 4


def count_tokens(text: str | None) -> int:
    if not text:
        return 0
    return math.ceil(len(text) / CHARS_PER_TOKEN)
