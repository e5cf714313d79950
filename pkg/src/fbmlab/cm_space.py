"""Cameron-Martin inner products for step functions on the simulation grid.

For step functions ``f = sum_k f[k] 1_[t_k, t_k+1)`` the inner product is the
quadratic form of the fractional-Gaussian-noise covariance,

    <f, g> = sum_j sum_{k,l} f_j[k] g_j[l] Cov(dB_k, dB_l),

which is exact for every Hurst index. The weight array is Toeplitz, so it
is applied with FFT-based Toeplitz products and only its first column is
ever stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

from .fbm import fgn_autocovariance, holder_norm, sup_norm


@dataclass(frozen=True)
class StepFunction:
    """Cell values of an R^d-valued step function; ``values[k]`` lives on [k/N, (k+1)/N)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_grid(cls, grid_values, rule: str = "average") -> "StepFunction":
        return cls(to_cells(grid_values, rule))

    @classmethod
    def indicator(cls, t: float, N: int, d: int = 1, component: int = 0) -> "StepFunction":
        """1_[0, t] in one component; t must sit on the grid."""
        k = int(round(t * N))
        if abs(k - t * N) > 1e-9:
            raise ValueError("indicator end point must be a grid time")
        v = np.zeros((N, d))
        v[:k, component] = 1.0
        return cls(v)


def to_cells(grid_values, rule: str = "average") -> np.ndarray:
    """Grid-point samples (N+1, ...) -> cell values (N, ...).

    ``average`` uses the mean of the two end points of each cell, ``left``
    the left end point.
    """
    v = np.asarray(grid_values, dtype=float)
    if rule == "average":
        return 0.5 * (v[:-1] + v[1:])
    if rule == "left":
        return v[:-1].copy()
    raise ValueError(f"unknown rule {rule!r}")


@lru_cache(maxsize=32)
def increment_covariance(H: float, N: int) -> np.ndarray:
    """First column of the N x N weight array Cov(dB_k, dB_l)."""
    g = fgn_autocovariance(H, N)[:N].copy()
    g.setflags(write=False)
    return g


def weight_matrix(H: float, N: int) -> np.ndarray:
    return scipy.linalg.toeplitz(increment_covariance(H, N))


def save_weights(filename: str | Path, H: float, N: int) -> Path:
    """Text cache: a header line ``H N`` then one Toeplitz coefficient per line."""
    filename = Path(filename)
    g = increment_covariance(H, N)
    lines = [f"# fgn-weights H={H!r} N={N}"] + [repr(float(x)) for x in g]
    filename.write_text("\n".join(lines) + "\n")
    return filename


def load_weights(filename: str | Path) -> tuple[float, int, np.ndarray]:
    text = Path(filename).read_text().splitlines()
    head = dict(tok.split("=") for tok in text[0].lstrip("# ").split()[1:])
    H, N = float(head["H"]), int(head["N"])
    g = np.array([float(x) for x in text[1:] if x.strip()])
    if g.size != N:
        raise ValueError("weight file truncated")
    return H, N, g


def apply_weights(cells: np.ndarray, H: float) -> np.ndarray:
    """W @ cells for cells of shape (N,) or (N, k)."""
    cells = np.asarray(cells, dtype=float)
    g = increment_covariance(float(H), cells.shape[0])
    return scipy.linalg.matmul_toeplitz(g, cells, check_finite=False)


def _cells(f) -> np.ndarray:
    return f.values if isinstance(f, StepFunction) else np.asarray(f, dtype=float)


def inner_h(f, g, H: float) -> float:
    fv, gv = _cells(f), _cells(g)
    fv = fv[:, None] if fv.ndim == 1 else fv
    gv = gv[:, None] if gv.ndim == 1 else gv
    if fv.shape != gv.shape:
        raise ValueError(f"grid mismatch: {fv.shape} vs {gv.shape}")
    return float(np.sum(fv * apply_weights(gv, H)))


def gram_h(cells: np.ndarray, H: float) -> np.ndarray:
    """Gram matrix of m step functions given as cells of shape (N, m, d)."""
    cells = np.asarray(cells, dtype=float)
    N, m, d = cells.shape
    flat = cells.reshape(N, m * d)
    wf = apply_weights(flat, H).reshape(N, m, d)
    G = np.einsum("kid,kjd->ij", cells, wf)
    return 0.5 * (G + G.T)


def h_norm(f, H: float) -> float:
    return float(np.sqrt(max(inner_h(f, f, H), 0.0)))


def l2_norm(f) -> float:
    v = _cells(f)
    return float(np.sqrt(np.sum(v * v) / v.shape[0]))


def l2_norm_grid(values) -> float:
    """Exact L2[0,1] norm of the piecewise-linear interpolant of grid samples."""
    v = np.asarray(values, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    a, b = v[:-1], v[1:]
    h = 1.0 / (v.shape[0] - 1)
    return float(np.sqrt(h * np.sum(a * a + a * b + b * b) / 3.0))


@dataclass
class InterpolationReport:
    h_norm: float
    sup: float
    l2: float
    holder: float
    gamma: float
    # ||f||_H / (||f||_inf^(3+1/g) / ||f||_g^(2+1/g)); an empirical constant, never asserted
    constant_ratio: float
    sup_bound: float
    sup_bound_holds: bool
    degenerate: bool


def check_interpolation(values, H: float, gamma: float) -> InterpolationReport:
    """Evaluate both interpolation inequalities on a continuous grid function."""
    v = np.asarray(values, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    hn = float(np.sqrt(max(sum(inner_h(c, c, H) for c in to_cells(v).T), 0.0)))
    sup = sup_norm(v)
    l2 = l2_norm_grid(v)
    hol = holder_norm(v, gamma)
    if sup == 0.0:
        return InterpolationReport(hn, sup, l2, hol, gamma, float("nan"), 0.0, True, True)
    ratio = hn / (sup ** (3 + 1 / gamma) / hol ** (2 + 1 / gamma))
    bound = 2.0 * max(l2, l2 ** (2 * gamma / (2 * gamma + 1)) * hol ** (1 / (2 * gamma + 1)))
    return InterpolationReport(hn, sup, l2, hol, gamma, ratio, bound, sup <= bound * (1 + 1e-12), False)
