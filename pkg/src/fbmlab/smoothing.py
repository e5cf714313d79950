"""Monte Carlo for P_t f(x) = E f(X^x_t), its directional derivatives and the
integration-by-parts identity.

Small times are reached through the rescaled system: X^x_t has the law of
X^{t,x}_1, the solution on [0, 1] with fields t^(|I| H) V_[I]. One path
ensemble is shared by every t and every stencil point (common random
numbers), so estimates are reproducible bit for bit from the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from ._parallel import map_chunks
from .cm_space import gram_h, to_cells
from .fbm import check_hurst, sample_increments
from .flow import MAX_EXCLUSION_RATE, integrate_batch, integrate_terminal, malliavin_kernel
from .matrices import EIG_FLOOR, beta_vectors, min_eigenvalue
from .vfields import SmoothField, VectorFieldSet
from .words import Word

# ---------------------------------------------------------------------------
# test functions


class TestFunction:
    """Scalar function on R^n with gradient; rows of ``y`` are points."""

    __test__ = False  # not a pytest class
    bounded = True
    smooth = True
    sup_norm = float("inf")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Sigmoid(TestFunction):
    """f(y) = 1 / (1 + exp(-lam * u.(y - c))) with unit u; sup norm 1."""

    sup_norm = 1.0

    def __init__(self, center, direction, lam: float):
        self.center = np.asarray(center, dtype=float)
        u = np.asarray(direction, dtype=float)
        self.direction = u / np.linalg.norm(u)
        self.lam = float(lam)

    def _s(self, y):
        z = self.lam * (np.atleast_2d(y) - self.center) @ self.direction
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def __call__(self, y):
        return self._s(y)

    def grad(self, y):
        s = self._s(y)
        return (self.lam * s * (1.0 - s))[:, None] * self.direction


class Linear(TestFunction):
    bounded = False

    def __init__(self, a, b: float = 0.0):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)

    def __call__(self, y):
        return np.atleast_2d(y) @ self.a + self.b

    def grad(self, y):
        return np.broadcast_to(self.a, np.atleast_2d(y).shape).copy()


class Constant(TestFunction):
    def __init__(self, c: float = 1.0):
        self.c = float(c)
        self.sup_norm = abs(self.c)

    def __call__(self, y):
        return np.full(np.atleast_2d(y).shape[0], self.c)

    def grad(self, y):
        return np.zeros(np.atleast_2d(y).shape)


class Square(TestFunction):
    """f^2 for a bounded f; used for the (P_t f^2)^(1/2) diagnostic."""

    def __init__(self, f: TestFunction):
        self.f = f
        self.sup_norm = f.sup_norm ** 2

    def __call__(self, y):
        return self.f(y) ** 2

    def grad(self, y):
        return 2.0 * self.f(y)[:, None] * self.f.grad(y)


# ---------------------------------------------------------------------------
# quadrature oracle for additive noise


def gauss_hermite_expectation(func: Callable, mean: float, sd: float, nodes: int = 64,
                              center: float = 0.0, scale: float = 1.0) -> float:
    """E func(mean + sd Y), Y ~ N(0, 1), by Gauss-Hermite on y = center + scale * z.

    ``center`` and ``scale`` move the nodes onto the bulk of func * density
    (adaptive Gauss-Hermite); the defaults give the plain rule.
    """
    u, w = np.polynomial.hermite.hermgauss(nodes)
    y = center + scale * math.sqrt(2.0) * u
    logphi = -0.5 * y * y - 0.5 * math.log(2 * math.pi)
    vals = func(mean + sd * y)
    return float(scale * math.sqrt(2.0) * np.sum(w * np.exp(u * u + logphi) * vals))


def additive_sigmoid_oracle(lam: float, t: float, H: float, k: int = 1, offset: float = 0.0,
                            nodes: int = 64) -> float:
    """d^k/dx^k E sigmoid(lam (x + B_t - c)) at x - c = offset, for one-dimensional B."""
    s = t**H

    def sig(z):
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    if k == 0:
        # sigmoid is the logistic cdf, so E sig(lam (o + s Y)) = E Phi((o + L / lam) / s)
        # over logistic L: a smooth integrand against a bell-shaped weight
        dens = lambda l: 0.25 / np.cosh(0.5 * l) ** 2
        return float(integrate.quad(lambda l: dens(l) * ndtr((offset + l / lam) / s), -60, 60,
                                    epsabs=1e-14, epsrel=1e-12, limit=400)[0])
    if k == 1:
        func = lambda y: lam * sig(lam * (offset + y)) * (1 - sig(lam * (offset + y)))
    elif k == 2:
        def func(y):
            q = sig(lam * (offset + y))
            return lam * lam * q * (1 - q) * (1 - 2 * q)
    else:
        raise ValueError("k must be 0, 1 or 2")
    c = 1.0 / math.sqrt(1.0 + (lam * s) ** 2 / 2.0)
    return gauss_hermite_expectation(func, 0.0, s, nodes, center=-offset / s * (1 - c * c), scale=c)


# ---------------------------------------------------------------------------
# estimators


@dataclass
class Estimate:
    value: float
    stderr: float
    n_used: int
    n_excluded: int

    @property
    def exclusion_rate(self) -> float:
        return self.n_excluded / max(1, self.n_used + self.n_excluded)


class StencilFailure(RuntimeError):
    pass


def field_flow(field_: SmoothField, x, s: float, steps: int = 32) -> np.ndarray:
    """exp(s V)(x) by RK4 with ``steps`` steps."""
    y = np.asarray(x, dtype=float).copy()
    h = s / steps
    for _ in range(steps):
        k1 = field_(y)
        k2 = field_(y + 0.5 * h * k1)
        k3 = field_(y + 0.5 * h * k2)
        k4 = field_(y + h * k3)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return y


@dataclass
class Stencil:
    points: np.ndarray    # (Q, n)
    weights: np.ndarray   # (Q,)
    zero: bool = False    # derivative vanishes identically


def build_stencil(system: VectorFieldSet, x, words: Sequence[Word], h: float) -> Stencil:
    """Finite-difference stencil for V_[I1] ... V_[Ik] g(x), k <= 2."""
    x = np.asarray(x, dtype=float)
    words = [tuple(w) for w in words]
    if not words or len(words) > 2:
        raise ValueError("need one or two derivative words")
    fields = [system.bracket(w) for w in words]
    if len(words) == 1:
        v = fields[0](x)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return Stencil(x[None], np.zeros(1), zero=True)
        u = v / nv
        return Stencil(np.stack([x + h * u, x - h * u]), np.array([1.0, -1.0]) * nv / (2 * h))
    # V1 (V2 g)(x) = d/ds d/dr g(exp(r V2) exp(s V1) x) at 0: 4-point cross stencil
    if fields[0].is_zero() or fields[1].is_zero():
        return Stencil(x[None], np.zeros(1), zero=True)
    pts, wts = [], []
    for s1 in (1.0, -1.0):
        y = field_flow(fields[0], x, s1 * h)
        for s2 in (1.0, -1.0):
            pts.append(field_flow(fields[1], y, s2 * h))
            wts.append(s1 * s2 / (4 * h * h))
    return Stencil(np.stack(pts), np.array(wts))


def default_step(t: float, H: float) -> float:
    return t**H * 1e-2


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    if vals.size == 0:
        return float("nan"), float("nan")
    if vals.size == 1:
        return float(vals[0]), float("nan")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def stencil_ensemble(f: TestFunction, system: VectorFieldSet, stencils: Sequence[Stencil],
                     ts: Sequence[float], H: float, n_paths: int, seed: int, N: int = 256,
                     substeps: int = 4, method: str = "circulant", threads: int = 1,
                     chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Per-path stencil sums for every (t, stencil) on one shared path ensemble.

    Returns ``(values, excluded)`` with shapes (T, P); a path excluded at any
    stencil point of a given t is excluded for that t.
    """
    check_hurst(H)
    T = len(ts)

    def block(a: int, b: int):
        incr = sample_increments(H, N, system.d, seed, b - a, method, start=a)
        vals = np.zeros((T, b - a))
        bad = np.zeros((T, b - a), dtype=bool)
        for it, (t, st) in enumerate(zip(ts, stencils)):
            if st.zero or system.is_zero():
                vals[it] = float(np.dot(st.weights, f(st.points)))
                continue
            X, _, _, _, status = integrate_terminal(system, incr, H, st.points, t, substeps)
            fx = np.stack([f(X[q]) for q in range(X.shape[0])])        # (Q, P)
            bad[it] = np.any(status >= 0, axis=0)
            vals[it] = np.where(bad[it], np.nan, st.weights @ np.where(np.isfinite(fx), fx, 0.0))
        return vals, bad

    parts = map_chunks(block, n_paths, chunk, threads)
    return np.concatenate([p[0] for p in parts], axis=1), np.concatenate([p[1] for p in parts], axis=1)


def _summarize(vals: np.ndarray, bad: np.ndarray) -> Estimate:
    good = vals[~bad]
    m, se = _mean_se(good)
    if np.all(good == good[0]) if good.size else False:
        se = 0.0
    return Estimate(m, se, int(good.size), int(bad.sum()))


def estimate_pt(f: TestFunction, system: VectorFieldSet, x, t: float, H: float, n_paths: int,
                seed: int, N: int = 256, substeps: int = 4, method: str = "circulant",
                threads: int = 1) -> Estimate:
    """Monte Carlo P_t f(x) with standard error."""
    if not 0.0 < t <= 1.0:
        raise ValueError("t must lie in (0, 1]")
    st = Stencil(np.asarray(x, dtype=float)[None], np.ones(1))
    vals, bad = stencil_ensemble(f, system, [st], [t], H, n_paths, seed, N, substeps, method, threads)
    return _summarize(vals[0], bad[0])


def directional_derivative(f: TestFunction, system: VectorFieldSet, x, t: float, H: float,
                           words: Sequence[Word], n_paths: int, seed: int, h: float | None = None,
                           N: int = 256, substeps: int = 4, method: str = "circulant",
                           threads: int = 1) -> Estimate:
    """V_[I1] ... V_[Ik] P_t f(x) by finite differences with common random numbers."""
    if not 0.0 < t <= 1.0:
        raise ValueError("t must lie in (0, 1]")
    h = default_step(t, H) if h is None else h
    st = build_stencil(system, x, words, h)
    vals, bad = stencil_ensemble(f, system, [st], [t], H, n_paths, seed, N, substeps, method, threads)
    est = _summarize(vals[0], bad[0])
    if st.zero:
        return Estimate(0.0, 0.0, est.n_used, 0)
    if est.exclusion_rate > MAX_EXCLUSION_RATE:
        raise StencilFailure(f"exclusion rate {est.exclusion_rate:.2e} at t={t}")
    return est


@dataclass
class ExponentFit:
    t: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    n_excluded: np.ndarray
    used: np.ndarray
    slope: float | None
    slope_stderr: float | None
    intercept: float | None
    reference_slope: float
    bounded_constant: float | None       # sup_t t^(H sum|I|) |est| / ||f||_inf
    band_ratio: float | None             # max / min of t^(H sum|I|) |est| over used cells
    p2_diagnostic: np.ndarray | None = None
    degenerate: bool = False
    h: np.ndarray = field(default=None, repr=False)


def fit_loglog(t, est, se, min_ratio: float = 3.0):
    """OLS of log|est| on log t over cells with |est| > min_ratio * se."""
    t, est, se = map(np.asarray, (t, est, se))
    used = np.abs(est) > min_ratio * np.nan_to_num(se, nan=np.inf)
    used |= (se == 0) & (est != 0)
    if used.sum() < 3:
        return None, None, None, used
    x, y = np.log(t[used]), np.log(np.abs(est[used]))
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = used.sum() - 2
    s2 = float(resid @ resid / dof) if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[1]), float(np.sqrt(cov[1, 1])), float(coef[0]), used


def fit_exponent(f: TestFunction, system: VectorFieldSet, x, words: Sequence[Word],
                 t_grid: Sequence[float], H: float, n_paths: int, seed: int,
                 h: float | None = None, N: int = 256, substeps: int = 4,
                 method: str = "circulant", threads: int = 1,
                 p2_diagnostic: bool = False) -> ExponentFit:
    """Fit the log-log slope of |V_[I1]...V_[Ik] P_t f(x)| against t."""
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid.size < 5 or t_grid.min() <= 0 or t_grid.max() > 1:
        raise ValueError("need at least 5 times in (0, 1]")
    hs = np.array([default_step(t, H) if h is None else h for t in t_grid])
    stencils = [build_stencil(system, x, words, hh) for hh in hs]
    vals, bad = stencil_ensemble(f, system, stencils, t_grid, H, n_paths, seed, N, substeps,
                                 method, threads)
    ests = [_summarize(vals[i], bad[i]) for i in range(t_grid.size)]
    for e, t in zip(ests, t_grid):
        if e.exclusion_rate > MAX_EXCLUSION_RATE:
            raise StencilFailure(f"exclusion rate {e.exclusion_rate:.2e} at t={t}")
    est = np.array([0.0 if s.zero else e.value for e, s in zip(ests, stencils)])
    se = np.array([0.0 if s.zero else e.stderr for e, s in zip(ests, stencils)])
    slope, sse, icpt, used = fit_loglog(t_grid, est, se)
    order = H * sum(len(w) for w in words)
    scaled = t_grid**order * np.abs(est)
    bounded = float(scaled.max() / f.sup_norm) if f.bounded and f.sup_norm > 0 else None
    band = float(scaled[used].max() / scaled[used].min()) if used.any() and scaled[used].min() > 0 else None
    p2 = None
    if p2_diagnostic:
        sq = Square(f)
        base = [Stencil(np.asarray(x, dtype=float)[None], np.ones(1))] * t_grid.size
        v2, b2 = stencil_ensemble(sq, system, base, t_grid, H, n_paths, seed, N, substeps, method, threads)
        p2 = np.array([math.sqrt(max(_summarize(v2[i], b2[i]).value, 0.0)) for i in range(t_grid.size)])
    return ExponentFit(t_grid, est, se, np.array([e.n_excluded for e in ests]), used, slope, sse,
                       icpt, -order, bounded, band, p2, slope is None, hs)


# ---------------------------------------------------------------------------
# integration by parts


@dataclass
class IbpReport:
    residual_direct: np.ndarray      # per path, Sigma-form vs <grad f(X_1), J V_[I](x)>
    residual_transport: np.ndarray   # per path, Malliavin kernel vs sum_I beta^I g_I
    n_excluded: int
    n_singular: int
    N: int

    @property
    def median(self) -> float:
        r = self.residual_direct[np.isfinite(self.residual_direct)]
        return float(np.median(r)) if r.size else float("nan")

    @property
    def median_transport(self) -> float:
        r = self.residual_transport[np.isfinite(self.residual_transport)]
        return float(np.median(r)) if r.size else float("nan")


def ibp_path_terms(bundle, system: VectorFieldSet, f: TestFunction):
    """Pathwise pieces of the identity for one integrated path.

    Returns ``(g, kernel_defect, M, D)``: g_I = <grad f(X_1), J_{0->1} V^e_[I](x)>,
    the relative mismatch between the Malliavin derivative of f(X_1) and its
    transport form sum_I beta^I_j(s) g_I, the Malliavin matrix and the
    vector D^(J) f.
    """
    eps, H = bundle.epsilon, bundle.hurst
    words = bundle.words
    d = system.d
    gradf = f.grad(bundle.X[-1][None])[0]
    J1 = bundle.J[-1]
    frame = np.stack([system.bracket(I)(bundle.x0) * eps ** (len(I) * H) for I in words])  # (m, n)
    g = frame @ J1.T @ gradf
    kern = malliavin_kernel(bundle, system)                        # (N, n, d)
    Df = np.einsum("a,kaj->kj", gradf, kern)                      # (N, d)
    bcells = to_cells(beta_vectors(bundle.beta, d))                # (N, m, d)
    Df_transport = np.einsum("kid,i->kd", bcells, g)
    scale = max(float(np.abs(Df).max()), float(np.abs(Df_transport).max()))
    defect = float(np.abs(Df - Df_transport).max() / scale) if scale > 0 else 0.0
    G = gram_h(np.concatenate([Df[:, None, :], bcells], axis=1), H)
    return g, defect, G[1:, 1:], G[0, 1:]


def _rel(a, b, floor: float) -> float:
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den <= floor:
        return float(np.linalg.norm(a - b) / max(floor, 1e-300)) if floor > 0 else 0.0
    return float(np.linalg.norm(a - b) / den)


def ibp_identity_check(f: TestFunction, system: VectorFieldSet, x, epsilon: float, n_paths: int,
                       H: float, seed: int, N: int = 1024, substeps: int = 4,
                       method: str = "circulant", threads: int = 1, chunk: int = 16) -> IbpReport:
    """Per-path relative residual of g = M^-1 (D^(J) f)_J against the direct derivative."""
    check_hurst(H)
    x = np.asarray(x, dtype=float)

    def block(a: int, b: int):
        incr = sample_increments(H, N, system.d, seed, b - a, method, start=a)
        batch = integrate_batch(system, incr, H, x, epsilon, substeps, jacobian=True, beta=True)
        rd = np.full(b - a, np.nan)
        rt = np.full(b - a, np.nan)
        sing = np.zeros(b - a, dtype=bool)
        for i in np.flatnonzero(batch.ok):
            g_dir, rt[i], M, D = ibp_path_terms(batch.bundle(i), system, f)
            if min_eigenvalue(M) < EIG_FLOOR * np.trace(M):
                sing[i] = True
                continue
            v = np.linalg.solve(M, D)
            floor = 1e-14 * max(1.0, float(np.abs(D).max()))
            rd[i] = _rel(v, g_dir, floor)
        return rd, rt, sing, ~batch.ok

    parts = map_chunks(block, n_paths, chunk, threads)
    rd = np.concatenate([p[0] for p in parts])
    rt = np.concatenate([p[1] for p in parts])
    sing = np.concatenate([p[2] for p in parts])
    excl = np.concatenate([p[3] for p in parts])
    return IbpReport(rd, rt, int(excl.sum()), int(sing.sum()), N)
