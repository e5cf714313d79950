"""Iterated integrals of the piecewise-linear lift.

A linear segment with increment v has signature exp(v) in the tensor
algebra, whose word-w coefficient is prod(v[w]) / |w|!. Segments are
chained with Chen's relation

    S_{0,t}(w) = sum_{i=0}^{|w|} S_{0,s}(w[:i]) S_{s,t}(w[i:]).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import factorial
from pathlib import Path
from typing import Mapping

import numpy as np

from ._backend import kernels
from ._parallel import map_chunks
from .fbm import FbmPath
from .words import EMPTY, Word, enumerate_words, format_word, parse_word, word_index

MAX_LEVEL = 4


@lru_cache(maxsize=32)
def _tables(d: int, m: int):
    words = enumerate_words(d, m, include_empty=True)
    idx = word_index(words)
    W = len(words)
    letters = np.zeros((W, max(m, 1)), dtype=np.int64)
    prefix = np.zeros((W, max(m, 1)), dtype=np.int64)
    lengths = np.zeros(W, dtype=np.int64)
    for k, w in enumerate(words):
        lengths[k] = len(w)
        for i in range(len(w)):
            letters[k, i] = w[i] - 1
            prefix[k, i] = idx[w[:i]]
    inv_fact = np.array([1.0 / factorial(k) for k in range(m + 1)])
    return words, letters, lengths, prefix, inv_fact


def signature_batch(incr: np.ndarray, m: int, threads: int = 1, chunk: int = 256) -> np.ndarray:
    """Signatures at every grid time for increments (P, N, d); shape (P, N+1, W)."""
    if not 0 <= m <= MAX_LEVEL:
        raise ValueError(f"word length must be in 0..{MAX_LEVEL}")
    incr = np.ascontiguousarray(incr, dtype=float)
    _, letters, lengths, prefix, inv_fact = _tables(incr.shape[2], m)

    def run(a: int, b: int):
        return kernels.signature_batch(incr[a:b], letters, lengths, prefix, inv_fact)

    return np.concatenate(map_chunks(run, incr.shape[0], chunk, threads))


def signature_words(d: int, m: int) -> list[Word]:
    return list(_tables(d, m)[0])


@dataclass(frozen=True)
class SignaturePath:
    words: list
    values: np.ndarray = field(repr=False)   # (N+1, W)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0] - 1

    def index(self, word) -> int:
        return self.words.index(tuple(word))

    def __getitem__(self, word) -> np.ndarray:
        return self.values[:, self.index(word)]

    def at(self, k: int) -> dict:
        return dict(zip(self.words, self.values[k]))

    def to_csv(self, filename: str | Path) -> Path:
        filename = Path(filename)
        N = self.grid_size
        with filename.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [format_word(x) for x in self.words])
            for k in range(N + 1):
                w.writerow([repr(k / N)] + [repr(float(v)) for v in self.values[k]])
        return filename

    @classmethod
    def from_csv(cls, filename: str | Path) -> "SignaturePath":
        with Path(filename).open() as fh:
            head = next(csv.reader(fh))
        data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
        return cls([parse_word(h) for h in head[1:]], data[:, 1:])


def compute_signature(path: FbmPath | np.ndarray, m: int) -> SignaturePath:
    """Signature of the piecewise-linear interpolant at every grid time."""
    values = path.values if isinstance(path, FbmPath) else np.asarray(path, dtype=float)
    values = values[:, None] if values.ndim == 1 else values
    incr = np.diff(values, axis=0)[None]
    sig = signature_batch(incr, m)[0]
    return SignaturePath(signature_words(values.shape[1], m), sig)


def segment_signature(incr: np.ndarray, m: int) -> np.ndarray:
    """Signature over a stretch of increments (k, d) as one vector over words."""
    incr = np.asarray(incr, dtype=float)
    return signature_batch(incr[None], m)[0, -1]


def chen_product(a: np.ndarray, b: np.ndarray, d: int, m: int) -> np.ndarray:
    """Truncated tensor product of two signature vectors."""
    words = signature_words(d, m)
    idx = word_index(words)
    out = np.empty(len(words))
    for k, w in enumerate(words):
        out[k] = sum(a[idx[w[:i]]] * b[idx[w[i:]]] for i in range(len(w) + 1))
    return out


def chen_defect(incr: np.ndarray, split: int, m: int) -> float:
    """Worst relative gap between S_{0,T} and S_{0,s} (x) S_{s,T} over all words.

    Each word is measured against sum_i |a(w[:i]) b(w[i:])|, the size of
    the terms in its Chen sum (the scale its roundoff lives on).
    """
    incr = np.asarray(incr, dtype=float)
    d = incr.shape[1]
    a = segment_signature(incr[:split], m)
    b = segment_signature(incr[split:], m)
    full = segment_signature(incr, m)
    words = signature_words(d, m)
    idx = word_index(words)
    worst = 0.0
    for k, w in enumerate(words):
        terms = [a[idx[w[:i]]] * b[idx[w[i:]]] for i in range(len(w) + 1)]
        scale = sum(abs(t) for t in terms)
        if scale > 0:
            worst = max(worst, abs(sum(terms) - full[k]) / scale)
    return worst


def shuffles(u: Word, v: Word) -> list[Word]:
    """All interleavings of u and v, with multiplicity."""
    n = len(u) + len(v)
    out = []
    for pos in combinations(range(n), len(u)):
        w, iu, iv = [], 0, 0
        pset = set(pos)
        for k in range(n):
            if k in pset:
                w.append(u[iu])
                iu += 1
            else:
                w.append(v[iv])
                iv += 1
        out.append(tuple(w))
    return out


def shuffle_defect(sig: SignaturePath, u: Word, v: Word) -> float:
    """max_t |S(u) S(v) - sum over shuffles S(w)| relative to the product scale."""
    lhs = sig[u] * sig[v]
    rhs = sum(sig[w] for w in shuffles(tuple(u), tuple(v)))
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)


def linear_combination(sig_values: np.ndarray, words: list, coeffs: Mapping) -> np.ndarray:
    """sum_I a_I S(I) along the last axis of ``sig_values``."""
    idx = word_index(words)
    out = np.zeros(sig_values.shape[:-1])
    for w, a in coeffs.items():
        w = tuple(w)
        if w not in idx:
            raise KeyError(f"word {format_word(w)} not in signature")
        out = out + float(a) * sig_values[..., idx[w]]
    return out


def linear_combination_supnorm(sig: SignaturePath, coeffs: Mapping) -> float:
    return float(np.abs(linear_combination(sig.values, sig.words, coeffs)).max())


def taylor_beta(sig_values: np.ndarray, sig_words: list, frame_words: list) -> np.ndarray:
    """Truncated expansion sum_L delta^J_{I*L} (-1)^|L| S(L) as (..., m, m) arrays.

    Rows are lower words I, columns upper words J, both over ``frame_words``.
    """
    idx = word_index(sig_words)
    m = len(frame_words)
    out = np.zeros(sig_values.shape[:-1] + (m, m))
    for a, I in enumerate(frame_words):
        for b, J in enumerate(frame_words):
            if len(J) >= len(I) and J[: len(I)] == I:
                L = J[len(I):]
                out[..., a, b] = (-1) ** len(L) * sig_values[..., idx[L]]
    return out
