"""Malliavin and L2 Gram matrices, minimal eigenvalues, inverse moments and small balls."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm

from ._parallel import map_chunks
from .cm_space import gram_h, to_cells
from .fbm import check_hurst, sample_increments
from .flow import BatchBundle, FlowBundle, integrate_batch
from .signature import MAX_LEVEL, linear_combination, signature_batch, signature_words
from .vfields import VectorFieldSet
from .words import Word

EIG_FLOOR = 1e-10  # relative to the trace


@dataclass
class MalliavinMatrix:
    level: int
    epsilon: float
    words: list
    entries: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def min_eigenvalue(self) -> float:
        return min_eigenvalue(self.entries)


def beta_vectors(beta: np.ndarray, d: int) -> np.ndarray:
    """(T, m, m) beta trajectory -> (T, m, d) d-vectors beta^I_j = beta[(j), I].

    Length-one words come first in frame order, so rows 0..d-1 are (1)..(d).
    """
    return np.swapaxes(beta[..., :d, :], -1, -2)


def _malliavin_from_beta(beta: np.ndarray, d: int, H: float, t: float) -> np.ndarray:
    cells = to_cells(beta_vectors(beta, d))          # (N, m, d)
    N = cells.shape[0]
    k = int(round(t * N))
    if abs(k - t * N) > 1e-9 or not 0 < k <= N:
        raise ValueError("t must be a positive grid time in (0, 1]")
    if k < N:
        cells = cells.copy()
        cells[k:] = 0.0
    return gram_h(cells, H)


def malliavin_matrix(bundle: FlowBundle, H: float | None = None, t: float = 1.0) -> MalliavinMatrix:
    """M_{IJ} = sum_j <beta^I_j 1_[0,t], beta^J_j 1_[0,t]>_H with cell-averaged beta."""
    if bundle.beta is None:
        raise ValueError("bundle has no beta trajectory")
    H = bundle.hurst if H is None else H
    d = sum(1 for w in bundle.words if len(w) == 1)
    M = _malliavin_from_beta(bundle.beta, d, H, t)
    level = max(len(w) for w in bundle.words)
    return MalliavinMatrix(level, bundle.epsilon, list(bundle.words), M)


def malliavin_matrices(batch: BatchBundle, H: float | None = None, t: float = 1.0) -> np.ndarray:
    """(P, m, m) matrices; excluded paths give NaN."""
    H = batch.hurst if H is None else H
    d = sum(1 for w in batch.words if len(w) == 1)
    m = len(batch.words)
    out = np.full((batch.status.size, m, m), np.nan)
    for p in np.flatnonzero(batch.ok):
        out[p] = _malliavin_from_beta(batch.beta[p], d, H, t)
    return out


def check_symmetric(mat, rtol: float = 1e-12) -> np.ndarray:
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("need a square matrix")
    scale = max(float(np.abs(a).max()), 1e-300)
    if np.abs(a - a.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return a


def min_eigenvalue(mat, weights: Sequence[float] | None = None) -> float:
    """inf of a^T M a over the (optionally weighted) unit sphere."""
    a = check_symmetric(mat)
    if weights is None:
        return float(np.linalg.eigvalsh(a)[0])
    w = np.asarray(weights, dtype=float)
    if w.shape != (a.shape[0],) or np.any(w <= 0):
        raise ValueError("weights must be positive, one per row")
    return float(scipy.linalg.eigh(a, np.diag(w), eigvals_only=True)[0])


def sphere_weights(words: Sequence[Word], T: float, H: float) -> np.ndarray:
    """Diagonal weights T^(2|I|H + 1) for the weighted sphere constraint."""
    return np.array([T ** (2 * len(w) * H + 1) for w in words])


def gram_l2(values, rule: str = "trapezoid") -> np.ndarray:
    """G_{IJ} = int_0^1 <v_I(t), v_J(t)> dt from grid samples (N+1, k) or (N+1, k, c).

    ``trapezoid`` is the composite rule, ``linear`` is exact for the
    piecewise-linear interpolant, ``step`` pairs cell averages (the L2
    product of the step functions used for the Malliavin matrix).
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[:, :, None]
    h = 1.0 / (v.shape[0] - 1)
    if rule == "trapezoid":
        w = np.full(v.shape[0], h)
        w[0] = w[-1] = 0.5 * h
        G = np.einsum("t,tic,tjc->ij", w, v, v)
    elif rule == "linear":
        a, b = v[:-1], v[1:]
        G = h / 6.0 * (2 * np.einsum("tic,tjc->ij", a, a) + np.einsum("tic,tjc->ij", a, b)
                       + np.einsum("tic,tjc->ij", b, a) + 2 * np.einsum("tic,tjc->ij", b, b))
    elif rule == "step":
        c = to_cells(v)
        G = h * np.einsum("tic,tjc->ij", c, c)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# inverse moments

@dataclass
class InverseMomentRow:
    epsilon: float
    estimate: float
    stderr: float
    n_used: int
    n_excluded: int
    n_below_floor: int
    q95_inverse: float


@dataclass
class InverseMomentTable:
    p: float
    rows: list

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.estimate for r in self.rows])

    @property
    def ratio(self) -> float:
        e = self.estimates
        return float(e.max() / e.min())


def inverse_moment_estimate(system: VectorFieldSet, x, H: float, epsilons: Sequence[float],
                            p: float, n_paths: int, seed: int, N: int = 1024,
                            substeps: int = 4, method: str = "circulant", threads: int = 1,
                            chunk: int = 64) -> InverseMomentTable:
    """Monte Carlo E[lambda_min(M^eps(x))^-p] with the same paths for every eps."""
    if p < 0:
        raise ValueError("moment order must be >= 0")
    check_hurst(H)
    x = np.asarray(x, dtype=float)
    rows = []
    for eps in epsilons:
        def block(a: int, b: int):
            incr = sample_increments(H, N, system.d, seed, b - a, method, start=a)
            batch = integrate_batch(system, incr, H, x, eps, substeps, jacobian=False, beta=True)
            Ms = malliavin_matrices(batch)
            lam = np.full(b - a, np.nan)
            below = np.zeros(b - a, dtype=bool)
            for i in np.flatnonzero(batch.ok):
                lam[i] = min_eigenvalue(Ms[i])
                below[i] = lam[i] < EIG_FLOOR * np.trace(Ms[i])
            return lam, below

        parts = map_chunks(block, n_paths, chunk, threads)
        lam = np.concatenate([q[0] for q in parts])
        below = np.concatenate([q[1] for q in parts])
        ok = np.isfinite(lam) & ~below
        used = lam[ok]
        if p == 0:
            est, se = 1.0, 0.0
        else:
            vals = used ** (-p)
            est = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
        q95 = float(np.quantile(1.0 / used, 0.95)) if used.size else float("nan")
        rows.append(InverseMomentRow(float(eps), est, se, int(used.size),
                                     int((~np.isfinite(lam)).sum()), int(below.sum()), q95))
    return InverseMomentTable(float(p), rows)


# ---------------------------------------------------------------------------
# small balls

def wilson_interval(k, n, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(k, dtype=float)
    phat = k / n
    den = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / den
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / den
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def brownian_small_ball(eps, terms: int = 200) -> np.ndarray:
    """P(sup_[0,1] |W| < eps) for standard Brownian motion."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    k = np.arange(terms)[:, None]
    a = 2 * k + 1
    s = np.sum((-1.0) ** k / a * np.exp(-(a**2) * np.pi**2 / (8 * eps[None, :] ** 2)), axis=0)
    return 4.0 / np.pi * s


@dataclass
class SmallBallTable:
    eps: np.ndarray
    hits: np.ndarray
    n_paths: int
    lower: np.ndarray
    upper: np.ndarray
    slope: float | None
    slope_stderr: float | None
    intercept: float | None
    used: np.ndarray
    degenerate: bool
    sup_norms: np.ndarray = field(repr=False, default=None)
    bridge_prob: np.ndarray | None = None
    bridge_stderr: np.ndarray | None = None

    @property
    def prob(self) -> np.ndarray:
        return self.hits / self.n_paths


def fit_loglog_weighted(eps, hits, n, min_hits: int = 5):
    """WLS fit of log p on log eps, weights from the binomial delta method."""
    eps = np.asarray(eps, dtype=float)
    hits = np.asarray(hits, dtype=float)
    used = hits >= min_hits
    if used.sum() < 2:
        return None, None, None, used
    p = hits[used] / n
    x, y = np.log(eps[used]), np.log(p)
    w = hits[used] / np.maximum(1.0 - p, 1e-12)
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    if used.sum() > 2:
        resid = y - X @ coef
        s2 = float(np.sum(w * resid**2) / (used.sum() - 2))
        se = float(np.sqrt(max(s2, 1.0) * np.linalg.inv(A)[1, 1]))
    else:
        se = float(np.sqrt(np.linalg.inv(A)[1, 1]))
    return float(coef[1]), se, float(coef[0]), used


def _is_linear(d: int, coeffs: Mapping) -> bool:
    return set(coeffs) <= {(j + 1,) for j in range(d)}


def _check_unit(coeffs: Mapping) -> dict:
    coeffs = {tuple(k): float(v) for k, v in coeffs.items()}
    norm2 = sum(v * v for v in coeffs.values())
    if abs(norm2 - 1.0) > 1e-9:
        raise ValueError(f"coefficients must have unit Euclidean norm, got {math.sqrt(norm2)}")
    return coeffs


def bridge_survival(y: np.ndarray, eps: float, dt: float) -> np.ndarray:
    """P(a Brownian path through the grid values y stays inside (-eps, eps)).

    ``y`` has shape (P, N+1) with grid spacing ``dt`` and unit diffusion.
    Per cell the bridge must miss both barriers; each single-barrier miss
    is 1 - exp(-2 (eps - a)(eps - b) / dt), and treating the two barriers
    as independent errs by O(exp(-8 eps^2 / dt)).
    """
    inside = np.all(np.abs(y) < eps, axis=1)
    out = np.zeros(y.shape[0])
    if not inside.any():
        return out
    v = y[inside]
    a, b = v[:, :-1], v[:, 1:]
    up = -np.expm1(-2.0 * (eps - a) * (eps - b) / dt)
    dn = -np.expm1(-2.0 * (eps + a) * (eps + b) / dt)
    out[inside] = np.exp(np.sum(np.log(up) + np.log(dn), axis=1))
    return out


def _combination_block(d, m, coeffs, words, H, N, seed, method, a, b):
    incr = sample_increments(H, N, d, seed, b - a, method, start=a)
    if m == 1 or _is_linear(d, coeffs):
        # first level only: the combination is affine in the path
        path = np.concatenate([np.zeros((b - a, 1, d)), np.cumsum(incr, axis=1)], axis=1)
        return coeffs.get((), 0.0) + sum(coeffs.get((j + 1,), 0.0) * path[:, :, j] for j in range(d))
    return linear_combination(signature_batch(incr, m), words, coeffs)


def sup_norms(d: int, m: int, coeffs: Mapping, H: float, N: int, n_paths: int, seed: int,
              method: str = "circulant", threads: int = 1, chunk: int = 1024) -> np.ndarray:
    """sup over grid times of |sum a_I B^I_t| for each path."""
    if m > MAX_LEVEL:
        raise ValueError(f"word length must be <= {MAX_LEVEL}")
    words = signature_words(d, m)
    coeffs = _check_unit(coeffs)

    def block(a: int, b: int):
        return np.abs(_combination_block(d, m, coeffs, words, H, N, seed, method, a, b)).max(axis=1)

    return np.concatenate(map_chunks(block, n_paths, chunk, threads))


def bridge_small_ball(d: int, coeffs: Mapping, eps_grid: Sequence[float], N: int, n_paths: int,
                      seed: int, method: str = "circulant", threads: int = 1,
                      chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time P(sup |sum a_j W^j| < eps) for Brownian drivers.

    Averages the exact per-path bridge survival probability, which removes
    the bias of monitoring the supremum only at grid times. Returns the
    estimates and their standard errors, one per eps.
    """
    coeffs = _check_unit(coeffs)
    if not _is_linear(d, coeffs):
        raise ValueError("bridge correction needs a combination of first-level words only")
    eps = np.asarray(eps_grid, dtype=float)

    def block(a: int, b: int):
        y = _combination_block(d, 1, coeffs, None, 0.5, N, seed, method, a, b)
        return np.stack([bridge_survival(y, e, 1.0 / N) for e in eps], axis=1)

    q = np.concatenate(map_chunks(block, n_paths, chunk, threads))
    return q.mean(axis=0), q.std(axis=0, ddof=1) / math.sqrt(n_paths)


def small_ball_estimate(d: int, m: int, coeffs: Mapping, H: float, eps_grid: Sequence[float],
                        n_paths: int, seed: int, N: int = 2048, method: str = "circulant",
                        threads: int = 1, z: float = 1.96, min_hits: int = 5,
                        chunk: int = 1024) -> SmallBallTable:
    """Empirical P(||sum a_I B^I||_inf < eps) with Wilson intervals and a log-log slope.

    For a Brownian driver and a first-level combination the table also
    carries the bridge-corrected continuous-time probabilities.
    """
    check_hurst(H)
    if m > MAX_LEVEL:
        raise ValueError(f"word length must be <= {MAX_LEVEL}")
    coeffs = _check_unit(coeffs)
    words = signature_words(d, m)
    eps = np.asarray(sorted(eps_grid), dtype=float)
    bridge = H == 0.5 and _is_linear(d, coeffs)

    def block(a: int, b: int):
        y = _combination_block(d, m, coeffs, words, H, N, seed, method, a, b)
        sups = np.abs(y).max(axis=1)
        q = (np.stack([bridge_survival(y, e, 1.0 / N) for e in eps], axis=1)
             if bridge else np.zeros((b - a, 0)))
        return sups, q

    parts = map_chunks(block, n_paths, chunk, threads)
    sups = np.concatenate([p[0] for p in parts])
    hits = np.array([(sups < e).sum() for e in eps])
    lo, hi = wilson_interval(hits, n_paths, z)
    degenerate = bool(np.all((hits == 0) | (hits == n_paths)))
    slope = se = icpt = None
    used = np.zeros(eps.size, dtype=bool)
    if not degenerate:
        slope, se, icpt, used = fit_loglog_weighted(eps, hits, n_paths, min_hits)
    tab = SmallBallTable(eps, hits, n_paths, lo, hi, slope, se, icpt, used, degenerate, sups)
    if bridge:
        q = np.concatenate([p[1] for p in parts])
        tab.bridge_prob = q.mean(axis=0)
        tab.bridge_stderr = q.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return tab
