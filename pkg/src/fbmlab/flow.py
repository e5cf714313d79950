"""Flow, Jacobian, inverse Jacobian and the beta transport system.

The driver is the piecewise-linear interpolation of a sampled path. On
each grid cell the coupled system

    dX    = sum_i V^e_i(X) dB^i
    dJ    = sum_i DV^e_i(X) J dB^i
    dJinv = -sum_i Jinv DV^e_i(X) dB^i
    dbeta = -sum_j W_j(X) beta dB^j,   W_j[I, K] = omega^{K, e}_{I*j}

is an ODE in the cell's linear time, solved by classical RK4 with
``substeps`` steps per cell. ``beta`` is stored row I (lower index),
column J (upper index); the transport identity reads

    Jinv(t) V^e_[I](X_t) = sum_J beta[I, J](t) V^e_[J](x0).

Here V^e_[I] = e^(|I| H) V_[I] is the rescaled system.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._backend import kernels
from ._parallel import map_chunks
from .fbm import FbmPath
from .vfields import TermBank, TrigPoly, UFGError, VectorFieldSet, compile_bank, omega_scale
from .words import Word, word_index

MAX_EXCLUSION_RATE = 1e-3


class BlowupError(FloatingPointError):
    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state after grid step {step} (t = {time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class Layout:
    n: int
    d: int
    m: int
    jac: bool
    beta: bool

    @property
    def off_j(self) -> int:
        return self.n

    @property
    def off_ji(self) -> int:
        return self.n + self.n * self.n

    @property
    def off_b(self) -> int:
        return self.n + (2 * self.n * self.n if self.jac else 0)

    @property
    def size(self) -> int:
        return self.off_b + (self.m * self.m if self.beta else 0)

    def initial(self, x0) -> np.ndarray:
        y = np.zeros(self.size)
        y[: self.n] = x0
        if self.jac:
            y[self.off_j: self.off_j + self.n * self.n] = np.eye(self.n).ravel()
            y[self.off_ji: self.off_ji + self.n * self.n] = np.eye(self.n).ravel()
        if self.beta:
            y[self.off_b:] = np.eye(self.m).ravel()
        return y

    def kernel_args(self) -> tuple:
        return (self.n, self.d, self.m, self.jac, self.beta, self.off_j, self.off_ji, self.off_b)


def build_bank(system: VectorFieldSet, epsilon: float, H: float, jac: bool = True,
               beta: bool = True) -> tuple[Layout, TermBank]:
    """Compile the right-hand side of the coupled system into a term bank."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    n, d = system.n, system.d
    words = system.words if beta else []
    m = len(words) if beta else 1
    layout = Layout(n, d, m, jac, beta)
    s1 = float(epsilon) ** H
    funcs: list = [None] * (d * n + d * n * n + d * m * m)
    for i, f in enumerate(system.fields):
        for a, comp in enumerate(f.components):
            if not comp.is_zero():
                funcs[i * n + a] = comp * s1
        if jac:
            for a, row in enumerate(f.partials()):
                for b, pa in enumerate(row):
                    if not pa.is_zero():
                        funcs[d * n + (i * n + a) * n + b] = pa * s1
    if beta:
        sf = system.structure
        if not sf.exact:
            raise UFGError(f"no exact structure functions for {system.name!r}; "
                           f"methods {sf.report.methods}, {len(sf.report.violations)} violations")
        idx = word_index(words)
        base = d * n + d * n * n
        for j in range(1, d + 1):
            for I in words:
                Ij = I + (j,)
                if Ij in idx:
                    funcs[base + ((j - 1) * m + idx[I]) * m + idx[Ij]] = TrigPoly.constant(n, 1.0)
                    continue
                for K in words:
                    w = sf.get(Ij, K)
                    if w is not None:
                        funcs[base + ((j - 1) * m + idx[I]) * m + idx[K]] = \
                            w * omega_scale(epsilon, len(Ij), len(K), H)
    return layout, compile_bank(funcs, n)


@dataclass(frozen=True)
class FlowBundle:
    times: np.ndarray
    X: np.ndarray            # (N+1, n)
    J: np.ndarray | None     # (N+1, n, n)
    Jinv: np.ndarray | None
    beta: np.ndarray | None  # (N+1, m, m)
    epsilon: float
    hurst: float
    x0: np.ndarray
    words: list = field(default_factory=list)

    @property
    def grid_size(self) -> int:
        return self.X.shape[0] - 1

    def jacobian_defect(self) -> float:
        """max_t ||J Jinv - I||_inf."""
        eye = np.eye(self.X.shape[1])
        return float(np.abs(self.J @ self.Jinv - eye).max())

    def to_csv(self, filename: str | Path) -> Path:
        filename = Path(filename)
        n = self.X.shape[1]
        head = ["t"] + [f"X{a + 1}" for a in range(n)]
        cols = [self.X.reshape(self.X.shape[0], -1)]
        if self.J is not None:
            head += [f"J{a + 1}{b + 1}" for a in range(n) for b in range(n)]
            cols.append(self.J.reshape(self.X.shape[0], -1))
        if self.beta is not None:
            m = self.beta.shape[1]
            head += [f"beta{i}_{j}" for i in range(m) for j in range(m)]
            cols.append(self.beta.reshape(self.X.shape[0], -1))
        data = np.column_stack([self.times] + cols)
        with filename.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            for row in data:
                w.writerow([repr(float(v)) for v in row])
        return filename


@dataclass
class BatchBundle:
    """Stacked trajectories of many paths; excluded paths are NaN."""
    X: np.ndarray            # (P, N+1, n)
    J: np.ndarray | None
    Jinv: np.ndarray | None
    beta: np.ndarray | None  # (P, N+1, m, m)
    status: np.ndarray       # (P,) -1 or failing step
    epsilon: float
    hurst: float
    x0: np.ndarray
    words: list

    @property
    def ok(self) -> np.ndarray:
        return self.status < 0

    @property
    def n_excluded(self) -> int:
        return int((~self.ok).sum())

    @property
    def exclusion_rate(self) -> float:
        return self.n_excluded / max(1, self.status.size)

    def bundle(self, p: int) -> FlowBundle:
        N = self.X.shape[1] - 1
        return FlowBundle(np.linspace(0.0, 1.0, N + 1), self.X[p],
                          None if self.J is None else self.J[p],
                          None if self.Jinv is None else self.Jinv[p],
                          None if self.beta is None else self.beta[p],
                          self.epsilon, self.hurst, self.x0, self.words)


def _split(traj: np.ndarray, layout: Layout):
    lead = traj.shape[:-1]
    n, m = layout.n, layout.m
    X = traj[..., :n]
    J = Jinv = beta = None
    if layout.jac:
        J = traj[..., layout.off_j: layout.off_j + n * n].reshape(lead + (n, n))
        Jinv = traj[..., layout.off_ji: layout.off_ji + n * n].reshape(lead + (n, n))
    if layout.beta:
        beta = traj[..., layout.off_b: layout.off_b + m * m].reshape(lead + (m, m))
    return X, J, Jinv, beta


def _check_incr(system: VectorFieldSet, incr: np.ndarray) -> np.ndarray:
    incr = np.ascontiguousarray(incr, dtype=float)
    if incr.ndim != 3 or incr.shape[2] != system.d:
        raise ValueError(f"increments must have shape (P, N, {system.d})")
    return incr


def integrate_batch(system: VectorFieldSet, incr: np.ndarray, H: float, x0, epsilon: float = 1.0,
                    substeps: int = 4, jacobian: bool = True, beta: bool = True,
                    threads: int = 1, chunk: int = 16) -> BatchBundle:
    """Integrate along every path in ``incr`` (shape (P, N, d)), keeping trajectories."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    incr = _check_incr(system, incr)
    x0 = np.asarray(x0, dtype=float).reshape(system.n)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    layout, bank = build_bank(system, epsilon, H, jacobian, beta)
    y0 = layout.initial(x0)

    def run(a: int, b: int):
        return kernels.integrate_traj(y0, incr[a:b], int(substeps), *layout.kernel_args(), *bank.as_args())

    parts = map_chunks(run, incr.shape[0], chunk, threads)
    traj = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    X, J, Jinv, B = _split(traj, layout)
    return BatchBundle(X, J, Jinv, B, status, float(epsilon), float(H), x0,
                       system.words if beta else [])


def integrate_terminal(system: VectorFieldSet, incr: np.ndarray, H: float, x0s, epsilon: float = 1.0,
                       substeps: int = 4, jacobian: bool = False, beta: bool = False,
                       threads: int = 1, chunk: int = 256):
    """Terminal states for several starting points along shared paths.

    Returns ``(X, J, Jinv, beta, status)`` with leading shape (Q, P).
    """
    incr = _check_incr(system, incr)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    layout, bank = build_bank(system, epsilon, H, jacobian, beta)
    y0s = np.stack([layout.initial(x) for x in x0s])

    def run(a: int, b: int):
        return kernels.integrate_terminal(y0s, incr[a:b], int(substeps), *layout.kernel_args(), *bank.as_args())

    parts = map_chunks(run, incr.shape[0], chunk, threads)
    out = np.concatenate([p[0] for p in parts], axis=1)
    status = np.concatenate([p[1] for p in parts], axis=1)
    return (*_split(out, layout), status)


def integrate(system: VectorFieldSet, path: FbmPath, x0, epsilon: float = 1.0,
              substeps: int = 4, jacobian: bool = True, beta: bool = True) -> FlowBundle:
    """Full bundle along one path; raises BlowupError on a non-finite state."""
    if path.dim != system.d:
        raise ValueError(f"path has {path.dim} components, system needs {system.d}")
    batch = integrate_batch(system, path.increments[None], path.hurst, x0, epsilon,
                            substeps, jacobian, beta)
    step = int(batch.status[0])
    if step >= 0:
        raise BlowupError(step, (step + 1) / path.grid_size)
    return batch.bundle(0)


def _frame_at_x0(system: VectorFieldSet, x0, epsilon: float, H: float) -> np.ndarray:
    """V^e_[J](x0) for J in the frame, shape (m, n)."""
    return np.stack([system.bracket(J)(x0) * epsilon ** (len(J) * H) for J in system.words])


def transport_residuals(batch: BatchBundle | FlowBundle, system: VectorFieldSet) -> np.ndarray:
    """Per-path max over grid times and frame words of the relative mismatch.

    Relative to max(|lhs|, |rhs|); entries where both sides vanish (zero
    brackets) count as exact.
    """
    X, Jinv, beta = batch.X, batch.Jinv, batch.beta
    single = X.ndim == 2
    if single:
        X, Jinv, beta = X[None], Jinv[None], beta[None]
    if Jinv is None or beta is None:
        raise ValueError("bundle lacks Jacobian or beta trajectories")
    eps, H = batch.epsilon, batch.hurst
    frame0 = _frame_at_x0(system, batch.x0, eps, H)              # (m, n)
    rhs = np.einsum("ptij,jn->ptin", beta, frame0)                # (P, T, m, n)
    P, T, n = X.shape
    flat = X.reshape(-1, n)
    vals = np.stack([system.bracket(I)(flat) * eps ** (len(I) * H) for I in system.words], axis=1)
    vals = vals.reshape(P, T, -1, n)
    lhs = np.einsum("ptab,ptib->ptia", Jinv, vals)
    num = np.linalg.norm(lhs - rhs, axis=-1)
    den = np.maximum(np.linalg.norm(lhs, axis=-1), np.linalg.norm(rhs, axis=-1))
    scale = max(float(np.nanmax(den)) if den.size else 0.0, 1.0)
    rel = np.where(den > 1e-14 * scale, num / np.where(den > 0, den, 1.0), num / scale)
    out = rel.reshape(P, -1).max(axis=1)
    return out[0] if single else out


def transport_residual(bundle: FlowBundle, system: VectorFieldSet) -> float:
    return float(transport_residuals(bundle, system))


def malliavin_kernel(bundle: FlowBundle, system: VectorFieldSet) -> np.ndarray:
    """Cell values of s -> J_{0->1} Jinv(s) V^e_j(X_s); shape (N, n, d).

    Grid values are averaged over each cell's two end points, the same rule
    used for the beta step functions, so the kernel and the transport form
    stay linearly consistent.
    """
    eps, H = bundle.epsilon, bundle.hurst
    X, Jinv = bundle.X, bundle.Jinv
    V = np.stack([f(X) for f in system.fields], axis=-1) * eps**H     # (T, n, d)
    grid = np.einsum("ab,tbc,tcj->taj", bundle.J[-1], Jinv, V)
    return 0.5 * (grid[:-1] + grid[1:])
