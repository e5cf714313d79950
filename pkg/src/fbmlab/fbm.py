"""Exact sampling of d-dimensional fractional Brownian motion on [0, 1].

Paths are built by sampling stationary fractional Gaussian noise on the
uniform grid ``t_k = k / N`` and taking cumulative sums, either through a
Cholesky factor of the Toeplitz increment covariance or through circulant
embedding (Davies-Harte). Both are exact in law.

Randomness is counter based. Cholesky path ``i`` of a run with seed ``s``
draws from its own Philox stream keyed by ``(s, i)``; circulant paths
``2k`` and ``2k + 1`` are the real and imaginary parts of one draw from the
stream keyed by ``(s, k)``. Either way a path never depends on how many
other paths were requested or on how they were scheduled.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.linalg

from ._backend import kernels
from ._parallel import map_chunks

log = logging.getLogger(__name__)

METHODS = ("cholesky", "circulant")
HURST_RANGE = (0.25, 1.0)


class CirculantEmbeddingError(RuntimeError):
    pass


def check_hurst(H: float, lo: float = HURST_RANGE[0], hi: float = HURST_RANGE[1]) -> float:
    H = float(H)
    if not lo < H < hi:
        raise ValueError(f"Hurst parameter {H} outside ({lo}, {hi})")
    return H


def covariance(s, t, H: float):
    """R(s, t) = (s^2H + t^2H - |t - s|^2H) / 2 for s, t in [0, 1]."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst parameter {H} outside (0, 1)")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any((s < 0) | (s > 1) | (t < 0) | (t > 1)):
        raise ValueError("covariance is defined on [0, 1] x [0, 1]")
    out = 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(H: float, N: int) -> np.ndarray:
    """Cov(dB_0, dB_k) for k = 0..N, increments over cells of width 1/N."""
    k = np.arange(N + 1, dtype=float)
    two_h = 2.0 * H
    g = 0.5 * (np.abs(k + 1) ** two_h + np.abs(k - 1) ** two_h - 2.0 * k**two_h)
    return g * float(N) ** (-two_h)


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@lru_cache(maxsize=16)
def _cholesky_factor(H: float, N: int) -> np.ndarray:
    g = fgn_autocovariance(H, N)
    cov = scipy.linalg.toeplitz(g[:N])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"Cholesky of fGn covariance failed for H={H}, N={N}") from exc


@lru_cache(maxsize=16)
def _circulant_sqrt_eigs(H: float, N: int) -> np.ndarray:
    g = fgn_autocovariance(H, N)
    row = np.concatenate([g[: N + 1], g[N - 1: 0: -1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise CirculantEmbeddingError(f"circulant embedding not nonnegative for H={H}, N={N}")
    return np.sqrt(np.clip(lam, 0.0, None) / row.size)


def _resolve_method(H: float, N: int, method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "circulant":
        if N < 1 or N & (N - 1):
            raise ValueError("circulant sampling needs N a power of two")
        try:
            _circulant_sqrt_eigs(H, N)
        except CirculantEmbeddingError as exc:
            warnings.warn(f"{exc}; falling back to Cholesky", RuntimeWarning)
            return "cholesky"
    return method


def _increments_block(H: float, N: int, d: int, seed: int, start: int, stop: int, method: str) -> np.ndarray:
    P = stop - start
    if method == "cholesky":
        z = np.stack([path_rng(seed, i).standard_normal((d, N)) for i in range(start, stop)])
        L = _cholesky_factor(H, N)
        return np.einsum("kl,pcl->pkc", L, z)
    # real and imaginary parts of one embedding draw are independent exact
    # samples, so paths 2k and 2k + 1 share the stream keyed by k
    sq = _circulant_sqrt_eigs(H, N)
    M = sq.size
    pairs = range(start // 2, (stop - 1) // 2 + 1)
    z = np.stack([path_rng(seed, k).standard_normal((d, 2, M)) for k in pairs])
    w = sq * (z[:, :, 0, :] + 1j * z[:, :, 1, :])
    y = scipy.fft.fft(w, axis=-1)[:, :, :N]
    both = np.stack([y.real, y.imag], axis=1).reshape(-1, d, N)   # index 2k + part
    off = start - 2 * pairs.start
    y = both[off: off + P]
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(P, N, d)


def sample_increments(H: float, N: int, d: int = 1, seed: int = 0, n_paths: int = 1,
                      method: str = "circulant", start: int = 0, threads: int = 1,
                      chunk: int = 256) -> np.ndarray:
    """Grid increments of paths ``start .. start + n_paths - 1``; shape (n_paths, N, d)."""
    H = check_hurst(H)
    method = _resolve_method(H, N, method)

    def block(a: int, b: int) -> np.ndarray:
        return _increments_block(H, N, d, seed, start + a, start + b, method)

    parts = map_chunks(block, n_paths, chunk, threads)
    return np.concatenate(parts, axis=0) if parts else np.empty((0, N, d))


def increments_to_paths(incr: np.ndarray) -> np.ndarray:
    P, N, d = incr.shape
    out = np.zeros((P, N + 1, d))
    np.cumsum(incr, axis=1, out=out[:, 1:, :])
    return out


@dataclass(frozen=True)
class FbmPath:
    hurst: float
    values: np.ndarray = field(repr=False)
    seed: int | None = None
    method: str | None = None
    index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("values must have shape (N + 1, d)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size + 1)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def restrict(self, n_cells: int) -> np.ndarray:
        """Increments of the first ``n_cells`` cells (the path on [0, n_cells / N])."""
        return self.increments[:n_cells]


def sample(H: float, N: int, d: int = 1, seed: int = 0, method: str = "circulant",
           index: int = 0) -> FbmPath:
    incr = sample_increments(H, N, d, seed, 1, method, start=index)
    values = increments_to_paths(incr)[0]
    return FbmPath(H, values, seed=seed, method=_resolve_method(H, N, method), index=index)


def sup_norm(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    return float(np.linalg.norm(v, axis=1).max())


def holder_norm(path, gamma: float) -> float:
    """Discrete Hölder-gamma norm over grid pairs, plus the sup norm."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    v = path.values if isinstance(path, FbmPath) else np.asarray(path, dtype=float)
    v = np.ascontiguousarray(v[:, None] if v.ndim == 1 else v)
    h = 1.0 / (v.shape[0] - 1)
    return float(kernels.holder_seminorm(v, float(gamma), h)) + sup_norm(v)


def write_csv(path: FbmPath, filename: str | Path) -> Path:
    """Write ``t,B1..Bd`` rows plus a JSON sidecar ``<filename>.json``."""
    filename = Path(filename)
    with filename.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"B{j + 1}" for j in range(path.dim)])
        for t, row in zip(path.times, path.values):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    meta = {"H": path.hurst, "N": path.grid_size, "d": path.dim,
            "seed": path.seed, "method": path.method, "index": path.index}
    filename.with_suffix(filename.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return filename


def read_csv(filename: str | Path) -> FbmPath:
    filename = Path(filename)
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    meta_file = filename.with_suffix(filename.suffix + ".json")
    meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
    return FbmPath(meta.get("H", float("nan")), data[:, 1:], seed=meta.get("seed"),
                   method=meta.get("method"), index=meta.get("index", 0))
