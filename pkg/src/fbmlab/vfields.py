"""Vector fields with exact Lie brackets.

Scalar component functions live in a class closed under products and
differentiation: finite sums of terms

    c * prod_k x_k^p_k * T_k(a_k x_k),   T_k in {1, cos, sin},

i.e. polynomials with trigonometric factors, one trig factor per
coordinate (products of trig factors in the same coordinate are reduced
with the product-to-sum identities). Polynomials are the special case
with no trig factors.

The bracket convention is [A, B] = (dB) A - (dA) B, so that
[V1, V2] = (0, 0, 1) for V1 = (1, 0, 0), V2 = (0, 1, x1).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .words import Word, enumerate_words, format_word

NONE, COS, SIN = 0, 1, 2
DEGREE_CAP = 16


class DegreeCapError(ArithmeticError):
    """Raised when a product or bracket exceeds the polynomial degree cap."""


class UFGError(RuntimeError):
    """Structure functions are unavailable or the UFG check failed."""


# one trig factor: (kind, frequency)
Factor = tuple


def _norm_factor(kind: int, freq: float) -> tuple[float, Factor | None]:
    """Canonical (sign, factor); factor None means the term vanishes."""
    freq = float(freq)
    if kind == NONE:
        return 1.0, (NONE, 0.0)
    if freq == 0.0:
        return (1.0, (NONE, 0.0)) if kind == COS else (0.0, None)
    if freq < 0.0:
        return (1.0, (COS, -freq)) if kind == COS else (-1.0, (SIN, -freq))
    return 1.0, (kind, freq)


def _factor_product(f: Factor, g: Factor) -> list[tuple[float, Factor]]:
    (k1, a), (k2, b) = f, g
    if k1 == NONE:
        return [(1.0, g)]
    if k2 == NONE:
        return [(1.0, f)]
    if k1 == COS and k2 == COS:
        raw = [(0.5, COS, a - b), (0.5, COS, a + b)]
    elif k1 == SIN and k2 == SIN:
        raw = [(0.5, COS, a - b), (-0.5, COS, a + b)]
    elif k1 == SIN and k2 == COS:
        raw = [(0.5, SIN, a + b), (0.5, SIN, a - b)]
    else:
        raw = [(0.5, SIN, a + b), (-0.5, SIN, a - b)]
    out = []
    for c, kind, fr in raw:
        sign, fac = _norm_factor(kind, fr)
        if fac is not None and sign != 0.0:
            out.append((c * sign, fac))
    return out


class TrigPoly:
    """Scalar function in the closed class; immutable, hashable by content."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping | None = None):
        self.n = int(n)
        clean = {}
        for key, c in (terms or {}).items():
            c = float(c)
            if c != 0.0:
                clean[key] = clean.get(key, 0.0) + c
        self.terms = {k: v for k, v in clean.items() if v != 0.0}

    # constructors
    @classmethod
    def constant(cls, n: int, c: float) -> "TrigPoly":
        return cls(n, {((0,) * n, ((NONE, 0.0),) * n): c})

    @classmethod
    def monomial(cls, n: int, pows: Sequence[int], c: float = 1.0) -> "TrigPoly":
        return cls(n, {(tuple(int(p) for p in pows), ((NONE, 0.0),) * n): c})

    @classmethod
    def variable(cls, n: int, k: int) -> "TrigPoly":
        pows = [0] * n
        pows[k] = 1
        return cls.monomial(n, pows)

    @classmethod
    def trig(cls, n: int, k: int, kind: int, freq: float, c: float = 1.0) -> "TrigPoly":
        sign, fac = _norm_factor(kind, freq)
        if fac is None:
            return cls(n)
        facs = [(NONE, 0.0)] * n
        facs[k] = fac
        return cls(n, {((0,) * n, tuple(facs)): c * sign})

    # algebra
    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return TrigPoly(self.n, terms)

    __radd__ = __add__

    def __neg__(self):
        return TrigPoly(self.n, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return TrigPoly(self.n, {k: v * float(other) for k, v in self.terms.items()})
        other = self._coerce(other)
        terms: dict = {}
        for (p1, f1), c1 in self.terms.items():
            for (p2, f2), c2 in other.terms.items():
                pows = tuple(a + b for a, b in zip(p1, p2))
                if sum(pows) > DEGREE_CAP:
                    raise DegreeCapError(f"product degree {sum(pows)} exceeds cap {DEGREE_CAP}")
                # expand the per-coordinate trig products
                partial = [(c1 * c2, ())]
                for fa, fb in zip(f1, f2):
                    nxt = []
                    for c, facs in partial:
                        for cc, fac in _factor_product(fa, fb):
                            nxt.append((c * cc, facs + (fac,)))
                    partial = nxt
                for c, facs in partial:
                    key = (pows, facs)
                    terms[key] = terms.get(key, 0.0) + c
        return TrigPoly(self.n, terms)

    __rmul__ = __mul__

    def _coerce(self, other) -> "TrigPoly":
        if isinstance(other, TrigPoly):
            if other.n != self.n:
                raise ValueError("dimension mismatch")
            return other
        return TrigPoly.constant(self.n, float(other))

    def diff(self, k: int) -> "TrigPoly":
        terms: dict = {}
        for (pows, facs), c in self.terms.items():
            p = pows[k]
            if p > 0:
                np_ = pows[:k] + (p - 1,) + pows[k + 1:]
                key = (np_, facs)
                terms[key] = terms.get(key, 0.0) + c * p
            kind, a = facs[k]
            if kind != NONE:
                if kind == COS:
                    nf, cc = (SIN, a), -a
                else:
                    nf, cc = (COS, a), a
                key = (pows, facs[:k] + (nf,) + facs[k + 1:])
                terms[key] = terms.get(key, 0.0) + c * cc
        return TrigPoly(self.n, terms)

    # inspection
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(p) for p, _ in self.terms), default=0)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrigPoly) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        out = np.zeros(pts.shape[0])
        for (pows, facs), c in self.terms.items():
            v = np.full(pts.shape[0], c)
            for k in range(self.n):
                if pows[k]:
                    v = v * pts[:, k] ** pows[k]
                kind, a = facs[k]
                if kind == COS:
                    v = v * np.cos(a * pts[:, k])
                elif kind == SIN:
                    v = v * np.sin(a * pts[:, k])
            out += v
        return float(out[0]) if x.ndim == 1 else out

    def __repr__(self) -> str:
        return f"TrigPoly({format_expr(self)!r})"


@dataclass(frozen=True)
class SmoothField:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        n = len(comps)
        if any(c.n != n for c in comps):
            raise ValueError("component dimension must match the number of components")
        object.__setattr__(self, "components", comps)

    @property
    def n(self) -> int:
        return len(self.components)

    @classmethod
    def zero(cls, n: int) -> "SmoothField":
        return cls(tuple(TrigPoly(n) for _ in range(n)))

    @classmethod
    def constant(cls, vec: Sequence[float]) -> "SmoothField":
        n = len(vec)
        return cls(tuple(TrigPoly.constant(n, v) for v in vec))

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def __add__(self, other: "SmoothField") -> "SmoothField":
        return SmoothField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "SmoothField") -> "SmoothField":
        return SmoothField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __neg__(self) -> "SmoothField":
        return SmoothField(tuple(-a for a in self.components))

    def scale(self, c: float) -> "SmoothField":
        return SmoothField(tuple(a * float(c) for a in self.components))

    def partials(self) -> list[list[TrigPoly]]:
        """``[a][b]`` = d(component a) / dx_b."""
        return [[c.diff(b) for b in range(self.n)] for c in self.components]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vals = np.stack([np.atleast_1d(c(x)) for c in self.components], axis=-1)
        return vals[0] if x.ndim == 1 else vals

    def jacobian(self, x) -> np.ndarray:
        return np.array([[d(x) for d in row] for row in self.partials()])

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)


def lie_bracket(a: SmoothField, b: SmoothField, degree_cap: int = DEGREE_CAP) -> SmoothField:
    """[a, b] = (db) a - (da) b, exactly."""
    if a.n != b.n:
        raise ValueError("fields live on different spaces")
    n = a.n
    comps = []
    for i in range(n):
        acc = TrigPoly(n)
        for k in range(n):
            acc = acc + b.components[i].diff(k) * a.components[k]
            acc = acc - a.components[i].diff(k) * b.components[k]
        comps.append(acc)
    out = SmoothField(tuple(comps))
    if out.degree > degree_cap:
        raise DegreeCapError(f"bracket degree {out.degree} exceeds cap {degree_cap}")
    return out


def rescale(field_: SmoothField, epsilon: float, word_length: int, H: float) -> SmoothField:
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    return field_.scale(epsilon ** (word_length * H))


def omega_scale(epsilon: float, len_I: int, len_J: int, H: float) -> float:
    """Factor eps^((|I| - |J|) H) carried by structure functions of the rescaled system."""
    return float(epsilon) ** ((len_I - len_J) * H)


@dataclass
class BracketTable:
    level: int
    d: int
    entries: dict

    def __getitem__(self, word: Word) -> SmoothField:
        return self.entries[tuple(word)]

    @property
    def words(self) -> list[Word]:
        return list(self.entries)


def build_bracket_table(fields: Sequence[SmoothField], level: int,
                        degree_cap: int = DEGREE_CAP) -> BracketTable:
    """V_[I] for every nonempty word of length <= level + 1."""
    if level < 1:
        raise ValueError("level must be >= 1")
    d = len(fields)
    entries: dict = {}
    for w in enumerate_words(d, level + 1):
        if len(w) == 1:
            entries[w] = fields[w[0] - 1]
        else:
            entries[w] = lie_bracket(entries[w[:-1]], fields[w[-1] - 1], degree_cap)
    return BracketTable(level, d, entries)


@dataclass
class UfgReport:
    points: np.ndarray
    residuals: dict          # word I -> (P,) pointwise least-squares residual
    coefficients: dict       # word I -> (P, m) pointwise coefficients
    methods: dict            # word I -> "zero" | "multiple" | "dictionary" | "none"
    violations: list         # (word, point) pairs above tolerance
    tol: float

    @property
    def certified(self) -> bool:
        return not self.violations

    @property
    def max_residual(self) -> float:
        return max((float(r.max()) for r in self.residuals.values()), default=0.0)


@dataclass
class StructureFunctions:
    level: int
    words: list              # A_1(level), frame order
    omega: dict              # (I, J) -> TrigPoly, only nonzero entries
    exact: bool
    report: UfgReport

    def get(self, I: Word, J: Word) -> TrigPoly | None:
        return self.omega.get((tuple(I), tuple(J)))

    def evaluate(self, I: Word, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([self.omega[(tuple(I), J)](x) if (tuple(I), J) in self.omega else 0.0
                         for J in self.words])


def _shapes(poly: TrigPoly) -> set:
    return set(poly.terms)


def _proportional(a: SmoothField, b: SmoothField) -> float | None:
    if b.is_zero():
        return None
    for cb in b.components:
        if cb.terms:
            key, vb = next(iter(cb.terms.items()))
            break
    ia = next(i for i, c in enumerate(b.components) if c.terms)
    va = a.components[ia].terms.get(key)
    if va is None:
        return None
    ratio = va / vb
    diff = a - b.scale(ratio)
    scale = max(abs(v) for c in a.components for v in c.terms.values())
    if all(abs(v) <= 1e-13 * scale for c in diff.components for v in c.terms.values()):
        return ratio
    return None


def fit_structure_functions(table: BracketTable, level: int, sample_points,
                            tol: float = 1e-8, seed: int = 12345) -> StructureFunctions:
    """Certify UFG pointwise and look for closed-form structure functions.

    Words with |I| <= level get the Kronecker coefficients. For |I| =
    level + 1 we (a) solve the pointwise least-squares problem at every
    sample point, flagging violations, and (b) try, in order: zero bracket,
    a constant multiple of one frame element, and a least-squares fit over
    a dictionary built from the terms of the fields involved, validated on
    fresh points. When (b) fails the structure is marked inexact and the
    flow refuses to use it.
    """
    if table.level < level:
        raise ValueError("bracket table is shallower than the requested level")
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    n = pts.shape[1]
    frame_words = enumerate_words(table.d, level)
    m = len(frame_words)
    omega: dict = {}
    for w in frame_words:
        omega[(w, w)] = TrigPoly.constant(n, 1.0)

    frames = np.stack([table[w](pts) for w in frame_words], axis=-1)  # (P, n, m)
    residuals, coefficients, methods, violations = {}, {}, {}, []
    exact = True
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    val_pts = lo + span * np.random.default_rng(seed).random((max(50, pts.shape[0]), n))

    for I in enumerate_words(table.d, level + 1):
        if len(I) <= level:
            continue
        VI = table[I]
        target = VI(pts)  # (P, n)
        coefs = np.empty((pts.shape[0], m))
        res = np.empty(pts.shape[0])
        for p in range(pts.shape[0]):
            c, *_ = np.linalg.lstsq(frames[p], target[p], rcond=None)
            coefs[p] = c
            res[p] = np.linalg.norm(frames[p] @ c - target[p])
            if res[p] > tol * (1.0 + np.linalg.norm(target[p])):
                violations.append((I, pts[p].copy()))
        residuals[I], coefficients[I] = res, coefs

        if VI.is_zero():
            methods[I] = "zero"
            continue
        found = False
        for K in frame_words:
            ratio = _proportional(VI, table[K])
            if ratio is not None:
                omega[(I, K)] = TrigPoly.constant(n, ratio)
                methods[I] = "multiple"
                found = True
                break
        if found:
            continue
        fit = _dictionary_fit(VI, [table[K] for K in frame_words], pts, val_pts, tol)
        if fit is None:
            methods[I] = "none"
            exact = False
        else:
            methods[I] = "dictionary"
            for K, poly in zip(frame_words, fit):
                if not poly.is_zero():
                    omega[(I, K)] = poly
    report = UfgReport(pts, residuals, coefficients, methods, violations, tol)
    return StructureFunctions(level, frame_words, omega, exact and not violations, report)


def _dictionary_fit(VI: SmoothField, frame: list, pts, val_pts, tol):
    n = VI.n
    shapes = {((0,) * n, ((NONE, 0.0),) * n)}
    for f in [VI] + frame:
        for c in f.components:
            shapes |= _shapes(c)
    basis = [TrigPoly(n, {s: 1.0}) for s in sorted(shapes, key=repr)]
    allpts = np.vstack([pts, val_pts])
    phi = np.stack([b(allpts) for b in basis], axis=-1)                    # (P, B)
    F = np.stack([f(allpts) for f in frame], axis=-1)                      # (P, n, m)
    A = np.einsum("pnm,pb->pnmb", F, phi).reshape(allpts.shape[0] * n, -1)
    rhs = VI(allpts).reshape(-1)
    npts = pts.shape[0] * n
    c, *_ = np.linalg.lstsq(A[:npts], rhs[:npts], rcond=None)
    c = np.where(np.abs(c) < 1e-12 * max(1.0, np.abs(c).max()), 0.0, c)
    # snap to short dyadic values when that keeps the fit; removes lstsq roundoff
    snapped = np.round(c * 2.0**20) / 2.0**20
    c = np.where(np.abs(snapped - c) <= 1e-10 * (1.0 + np.abs(c)), snapped, c)
    err = np.abs(A @ c - rhs).reshape(allpts.shape[0], n)
    scale = 1.0 + np.linalg.norm(rhs.reshape(allpts.shape[0], n), axis=1)
    if np.any(np.linalg.norm(err, axis=1) > tol * scale):
        return None
    c = c.reshape(len(frame), len(basis))
    return [sum((b * float(ck) for b, ck in zip(basis, row) if ck != 0.0), TrigPoly(n)) for row in c]


class VectorFieldSet:
    """d fields on R^n plus the UFG level used by the transport system."""

    def __init__(self, fields: Sequence[SmoothField], level: int, name: str = "system",
                 sample_points=None):
        self.fields = tuple(fields)
        if not self.fields:
            raise ValueError("need at least one field")
        self.n = self.fields[0].n
        if any(f.n != self.n for f in self.fields):
            raise ValueError("fields live on different spaces")
        self.d = len(self.fields)
        self.level = int(level)
        self.name = name
        self._sample_points = sample_points
        self._table: BracketTable | None = None
        self._structure: StructureFunctions | None = None
        self.source_text: str | None = None

    @property
    def words(self) -> list[Word]:
        return enumerate_words(self.d, self.level)

    @property
    def table(self) -> BracketTable:
        if self._table is None:
            self._table = build_bracket_table(self.fields, self.level)
        return self._table

    def default_sample_points(self, n_points: int = 100, radius: float = 2.0, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return np.vstack([np.zeros(self.n), rng.uniform(-radius, radius, (n_points - 1, self.n))])

    @property
    def structure(self) -> StructureFunctions:
        if self._structure is None:
            pts = self._sample_points if self._sample_points is not None else self.default_sample_points()
            self._structure = fit_structure_functions(self.table, self.level, pts)
        return self._structure

    def bracket(self, word: Word) -> SmoothField:
        return self.table[tuple(word)]

    def is_zero(self) -> bool:
        return all(f.is_zero() for f in self.fields)

    def __repr__(self) -> str:
        return f"VectorFieldSet({self.name!r}, n={self.n}, d={self.d}, level={self.level})"


# ---------------------------------------------------------------------------
# term bank consumed by the compiled kernels

@dataclass
class TermBank:
    fidx: np.ndarray
    coef: np.ndarray
    pows: np.ndarray
    kinds: np.ndarray
    freqs: np.ndarray
    nf: int

    def as_args(self) -> tuple:
        return (self.fidx, self.coef, self.pows, self.kinds, self.freqs, self.nf)


def compile_bank(functions: Sequence[TrigPoly | None], n: int) -> TermBank:
    """Flatten scalar functions into term arrays; ``None`` entries are zero."""
    fidx, coef, pows, kinds, freqs = [], [], [], [], []
    for i, f in enumerate(functions):
        if f is None:
            continue
        for (p, facs), c in f.terms.items():
            fidx.append(i)
            coef.append(c)
            pows.append(p)
            kinds.append([k for k, _ in facs])
            freqs.append([a for _, a in facs])
    T = len(coef)
    return TermBank(
        np.asarray(fidx, dtype=np.int64).reshape(T),
        np.asarray(coef, dtype=float).reshape(T),
        np.asarray(pows, dtype=np.int64).reshape(T, n),
        np.asarray(kinds, dtype=np.int64).reshape(T, n),
        np.asarray(freqs, dtype=float).reshape(T, n),
        len(functions),
    )


# ---------------------------------------------------------------------------
# text format

_NUM = r"[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"
_FACTOR = re.compile(
    rf"\s*(?:(?P<num>{_NUM})|x(?P<var>\d+)(?:\^(?P<pow>\d+))?"
    rf"|(?P<fn>sin|cos)\(\s*(?:(?P<freq>{_NUM})\s*\*\s*)?x(?P<tvar>\d+)\s*\))\s*"
)


def parse_expr(text: str, n: int) -> TrigPoly:
    """Parse ``c*x1^2*sin(2*x3) - x2 + 0.5`` style sums into a TrigPoly."""
    s = text.strip()
    if not s:
        raise ValueError("empty expression")
    result = TrigPoly(n)
    pos = 0
    sign = 1.0
    if s[0] in "+-":
        sign = -1.0 if s[0] == "-" else 1.0
        pos = 1
    while True:
        term = TrigPoly.constant(n, sign)
        while True:
            m = _FACTOR.match(s, pos)
            if not m or m.end() == pos:
                raise ValueError(f"cannot parse {text!r} at position {pos}")
            if m.group("num") is not None:
                term = term * float(m.group("num"))
            elif m.group("var") is not None:
                k = int(m.group("var")) - 1
                if not 0 <= k < n:
                    raise ValueError(f"variable x{k + 1} outside 1..{n}")
                p = int(m.group("pow") or 1)
                pw = [0] * n
                pw[k] = p
                term = term * TrigPoly.monomial(n, pw)
            else:
                k = int(m.group("tvar")) - 1
                if not 0 <= k < n:
                    raise ValueError(f"variable x{k + 1} outside 1..{n}")
                kind = COS if m.group("fn") == "cos" else SIN
                term = term * TrigPoly.trig(n, k, kind, float(m.group("freq") or 1.0))
            pos = m.end()
            if pos < len(s) and s[pos] == "*":
                pos += 1
                continue
            break
        result = result + term
        if pos >= len(s):
            return result
        if s[pos] not in "+-":
            raise ValueError(f"unexpected {s[pos]!r} in {text!r}")
        sign = -1.0 if s[pos] == "-" else 1.0
        pos += 1


def _fmt_num(c: float) -> str:
    return repr(float(c)).rstrip("0").rstrip(".") if float(c).is_integer() else repr(float(c))


def format_expr(poly: TrigPoly) -> str:
    if poly.is_zero():
        return "0"
    pieces = []
    for (pows, facs), c in sorted(poly.terms.items(), key=lambda kv: repr(kv[0])):
        factors = []
        for k, p in enumerate(pows):
            if p:
                factors.append(f"x{k + 1}" + (f"^{p}" if p > 1 else ""))
        for k, (kind, a) in enumerate(facs):
            if kind != NONE:
                fn = "cos" if kind == COS else "sin"
                factors.append(f"{fn}({_fmt_num(a)}*x{k + 1})" if a != 1.0 else f"{fn}(x{k + 1})")
        mag = abs(c)
        body = "*".join(([] if (mag == 1.0 and factors) else [_fmt_num(mag)]) + factors)
        pieces.append(("-" if c < 0 else "+", body))
    first_sign, first = pieces[0]
    out = ("-" if first_sign == "-" else "") + first
    for sgn, body in pieces[1:]:
        out += f" {sgn} {body}"
    return out


def parse_system(text: str, name: str | None = None) -> VectorFieldSet:
    """Read the ``.vf`` format (see ``format_system``)."""
    header: dict = {}
    fields: dict = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = re.fullmatch(r"\s*V(\d+)\s*:\s*", line)
        if m:
            current = int(m.group(1))
            fields[current] = []
            continue
        m = re.fullmatch(r"\s*(name|n|d|level)\s*:\s*(\S+)\s*", line)
        if m and current is None:
            header[m.group(1)] = m.group(2)
            continue
        if current is None:
            raise ValueError(f"component line before any field header: {raw!r}")
        fields[current].append(line.strip())
    try:
        n, d, level = int(header["n"]), int(header["d"]), int(header["level"])
    except KeyError as exc:
        raise ValueError(f"missing header key {exc}") from None
    if sorted(fields) != list(range(1, d + 1)):
        raise ValueError(f"expected fields V1..V{d}, found {sorted(fields)}")
    vfs = []
    for i in range(1, d + 1):
        lines = fields[i]
        if len(lines) != n:
            raise ValueError(f"V{i} has {len(lines)} components, expected {n}")
        vfs.append(SmoothField(tuple(parse_expr(s, n) for s in lines)))
    system = VectorFieldSet(vfs, level, name=name or header.get("name", "system"))
    system.source_text = text
    return system


def format_system(system: VectorFieldSet) -> str:
    lines = [f"name: {system.name}", f"n: {system.n}", f"d: {system.d}", f"level: {system.level}"]
    for i, f in enumerate(system.fields, start=1):
        lines.append(f"V{i}:")
        lines.extend(f"  {format_expr(c)}" for c in f.components)
    return "\n".join(lines) + "\n"


SHIPPED = ("heisenberg", "commuting", "trig_elliptic", "constant")


def load_system(name_or_path: str | Path) -> VectorFieldSet:
    """Load a ``.vf`` file, or one of the shipped systems by name."""
    p = Path(name_or_path)
    if p.exists():
        return parse_system(p.read_text(), name=p.stem)
    stem = p.name[:-3] if p.name.endswith(".vf") else p.name
    if stem in SHIPPED:
        text = resources.files("fbmlab").joinpath("data", f"{stem}.vf").read_text()
        return parse_system(text, name=stem)
    raise FileNotFoundError(f"no system file {name_or_path!r}")


def describe_table(table: BracketTable) -> str:
    return "\n".join(f"{format_word(w)}: [{', '.join(format_expr(c) for c in f.components)}]"
                     for w, f in table.entries.items())
