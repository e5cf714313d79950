"""Pure-numpy twins of ``_kernels_numba``, vectorised across paths."""
from __future__ import annotations

from math import factorial

import numpy as np

NONE, COS, SIN = 0, 1, 2


def _eval_bank(X, fidx, coef, pows, kinds, freqs, nf):
    """Evaluate every bank function at the rows of ``X`` (shape (P, n))."""
    out = np.zeros((X.shape[0], nf))
    for t in range(coef.shape[0]):
        v = np.full(X.shape[0], coef[t])
        for k in range(X.shape[1]):
            if pows[t, k] > 0:
                v = v * X[:, k] ** pows[t, k]
            if kinds[t, k] == COS:
                v = v * np.cos(freqs[t, k] * X[:, k])
            elif kinds[t, k] == SIN:
                v = v * np.sin(freqs[t, k] * X[:, k])
        out[:, fidx[t]] += v
    return out


def _rhs(Y, u, n, d, m, jac, beta, off_j, off_ji, off_b,
         fidx, coef, pows, kinds, freqs, nf):
    P = Y.shape[0]
    fv = _eval_bank(Y[:, :n], fidx, coef, pows, kinds, freqs, nf)
    dY = np.zeros_like(Y)
    V = fv[:, : d * n].reshape(P, d, n)
    dY[:, :n] = np.einsum("pia,pi->pa", V, u)
    if jac:
        base = d * n
        DV = fv[:, base: base + d * n * n].reshape(P, d, n, n)
        A = np.einsum("piab,pi->pab", DV, u)
        Jm = Y[:, off_j: off_j + n * n].reshape(P, n, n)
        Ji = Y[:, off_ji: off_ji + n * n].reshape(P, n, n)
        dY[:, off_j: off_j + n * n] = (A @ Jm).reshape(P, -1)
        dY[:, off_ji: off_ji + n * n] = -(Ji @ A).reshape(P, -1)
    if beta:
        base = d * n + d * n * n
        W = fv[:, base: base + d * m * m].reshape(P, d, m, m)
        Wu = np.einsum("pjik,pj->pik", W, u)
        Bm = Y[:, off_b: off_b + m * m].reshape(P, m, m)
        dY[:, off_b: off_b + m * m] = -(Wu @ Bm).reshape(P, -1)
    return dY


def _rk4_batch(Y, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
               fidx, coef, pows, kinds, freqs, nf, traj=None):
    P, N = incr.shape[0], incr.shape[1]
    status = np.full(P, -1, dtype=np.int64)
    args = (n, d, m, jac, beta, off_j, off_ji, off_b, fidx, coef, pows, kinds, freqs, nf)
    if traj is not None:
        traj[:, 0, :] = Y
    for step in range(N):
        u = incr[:, step, :] / substeps
        for _ in range(substeps):
            k1 = _rhs(Y, u, *args)
            k2 = _rhs(Y + 0.5 * k1, u, *args)
            k3 = _rhs(Y + 0.5 * k2, u, *args)
            k4 = _rhs(Y + k3, u, *args)
            Y = Y + (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        bad = ~np.all(np.isfinite(Y), axis=1) & (status < 0)
        if bad.any():
            status[bad] = step
        dead = status >= 0
        if dead.any():
            Y[dead] = np.nan
        if traj is not None:
            traj[:, step + 1, :] = Y
    return Y, status


def integrate_traj(y0, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
                   fidx, coef, pows, kinds, freqs, nf):
    P, N = incr.shape[0], incr.shape[1]
    traj = np.empty((P, N + 1, y0.shape[0]))
    Y = np.tile(y0, (P, 1))
    _, status = _rk4_batch(Y, incr, substeps, n, d, m, jac, beta, off_j, off_ji,
                           off_b, fidx, coef, pows, kinds, freqs, nf, traj)
    return traj, status


def integrate_terminal(y0s, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
                       fidx, coef, pows, kinds, freqs, nf):
    Q, S = y0s.shape
    P = incr.shape[0]
    out = np.empty((Q, P, S))
    status = np.empty((Q, P), dtype=np.int64)
    for q in range(Q):
        Y = np.tile(y0s[q], (P, 1))
        out[q], status[q] = _rk4_batch(Y, incr, substeps, n, d, m, jac, beta,
                                       off_j, off_ji, off_b, fidx, coef, pows,
                                       kinds, freqs, nf)
    return out, status


def signature_batch(incr, letters, lengths, prefix, inv_fact):
    # level-by-level tensor form; word order equals C-order flattening
    P, N, d = incr.shape
    m = int(lengths.max()) if lengths.size else 0
    W = lengths.shape[0]
    out = np.empty((P, N + 1, W))
    levels = [np.ones((P, 1))] + [np.zeros((P, d**k)) for k in range(1, m + 1)]
    starts = np.cumsum([0] + [d**k for k in range(m + 1)])
    out[:, 0, :] = np.concatenate(levels, axis=1)
    for step in range(N):
        delta = incr[:, step, :]
        powers = [np.ones((P, 1))]
        for k in range(1, m + 1):
            powers.append((powers[-1][:, :, None] * delta[:, None, :]).reshape(P, -1))
        new = [levels[0]]
        for k in range(1, m + 1):
            acc = levels[k].copy()
            for i in range(k):
                acc += (levels[i][:, :, None] * powers[k - i][:, None, :]).reshape(P, -1) / factorial(k - i)
            new.append(acc)
        levels = new
        out[:, step + 1, :] = np.concatenate(levels, axis=1)
    assert starts[-1] == W
    return out


def holder_seminorm(values, gamma, h):
    npts = values.shape[0]
    best = 0.0
    for lag in range(1, npts):
        diff = np.linalg.norm(values[lag:] - values[:-lag], axis=1)
        best = max(best, float(diff.max()) / (lag * h) ** gamma)
    return best
