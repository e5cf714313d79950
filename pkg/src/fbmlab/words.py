"""Words over the alphabet {1, ..., d}.

A word is a plain ``tuple`` of positive ints; the empty tuple is the empty
word. Every matrix in the package (Malliavin matrix, Gram matrices, the
``beta`` transport matrix) indexes its rows and columns by the order
returned from :func:`enumerate_words`: shorter words first, then
lexicographic.
"""
from __future__ import annotations

from itertools import product
from typing import Iterable, Sequence

Word = tuple

EMPTY: Word = ()


def concat(a: Sequence[int], b: Sequence[int]) -> Word:
    return tuple(a) + tuple(b)


def check_word(word: Sequence[int], d: int) -> Word:
    w = tuple(int(c) for c in word)
    for c in w:
        if not 1 <= c <= d:
            raise ValueError(f"letter {c} outside 1..{d} in word {w}")
    return w


def enumerate_words(d: int, m: int, include_empty: bool = False) -> list[Word]:
    """All words of length <= m, length-then-lexicographic.

    >>> enumerate_words(2, 2)
    [(1,), (2,), (1, 1), (1, 2), (2, 1), (2, 2)]
    """
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    out: list[Word] = [EMPTY] if include_empty else []
    for k in range(1, m + 1):
        out.extend(product(range(1, d + 1), repeat=k))
    return out


def count_words(d: int, m: int, include_empty: bool = False) -> int:
    return sum(d**k for k in range(0 if include_empty else 1, m + 1))


def word_index(words: Iterable[Word]) -> dict[Word, int]:
    return {w: i for i, w in enumerate(words)}


def format_word(word: Sequence[int]) -> str:
    return "(" + ",".join(str(c) for c in word) + ")"


def parse_word(text: str) -> Word:
    s = text.strip()
    if not (s.startswith("(") and s.endswith(")")):
        raise ValueError(f"not a word: {text!r}")
    body = s[1:-1].strip()
    if not body:
        return EMPTY
    return tuple(int(tok) for tok in body.split(","))
