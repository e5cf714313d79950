"""numba implementations of the hot loops.

Every function here has a same-named twin in ``_kernels_numpy`` with the
same signature; ``_backend`` picks one of the two modules at import time.
Path loops are per path (numba releases the GIL, so callers may thread
over path chunks).
"""
from __future__ import annotations

import numpy as np
from numba import njit

# trig factor kinds used by the term bank
NONE, COS, SIN = 0, 1, 2


@njit(cache=True, nogil=True)
def _eval_bank(x, fidx, coef, pows, kinds, freqs, out):
    for f in range(out.shape[0]):
        out[f] = 0.0
    n = x.shape[0]
    for t in range(coef.shape[0]):
        v = coef[t]
        for k in range(n):
            p = pows[t, k]
            if p > 0:
                v *= x[k] ** p
            kd = kinds[t, k]
            if kd == COS:
                v *= np.cos(freqs[t, k] * x[k])
            elif kd == SIN:
                v *= np.sin(freqs[t, k] * x[k])
        out[fidx[t]] += v


@njit(cache=True, nogil=True)
def _rhs(y, u, n, d, m, jac, beta, off_j, off_ji, off_b,
         fidx, coef, pows, kinds, freqs, fv, A, Wu, dy):
    _eval_bank(y[:n], fidx, coef, pows, kinds, freqs, fv)
    for a in range(n):
        s = 0.0
        for i in range(d):
            s += fv[i * n + a] * u[i]
        dy[a] = s
    if jac:
        base = d * n
        for a in range(n):
            for b in range(n):
                s = 0.0
                for i in range(d):
                    s += fv[base + (i * n + a) * n + b] * u[i]
                A[a, b] = s
        for a in range(n):
            for b in range(n):
                s1 = 0.0
                s2 = 0.0
                for c in range(n):
                    s1 += A[a, c] * y[off_j + c * n + b]
                    s2 += y[off_ji + a * n + c] * A[c, b]
                dy[off_j + a * n + b] = s1
                dy[off_ji + a * n + b] = -s2
    if beta:
        base = d * n + d * n * n
        for I in range(m):
            for K in range(m):
                s = 0.0
                for j in range(d):
                    s += fv[base + (j * m + I) * m + K] * u[j]
                Wu[I, K] = s
        for I in range(m):
            for J in range(m):
                s = 0.0
                for K in range(m):
                    s += Wu[I, K] * y[off_b + K * m + J]
                dy[off_b + I * m + J] = -s


@njit(cache=True, nogil=True)
def _rk4_path(y, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
              fidx, coef, pows, kinds, freqs, nf, traj, store):
    """Advance ``y`` in place along one path; returns -1 or the failing step."""
    S = y.shape[0]
    N = incr.shape[0]
    fv = np.empty(nf)
    A = np.empty((n, n))
    Wu = np.empty((m, m))
    k1 = np.empty(S)
    k2 = np.empty(S)
    k3 = np.empty(S)
    k4 = np.empty(S)
    tmp = np.empty(S)
    u = np.empty(d)
    if store:
        traj[0, :] = y
    for step in range(N):
        for i in range(d):
            u[i] = incr[step, i] / substeps
        for _ in range(substeps):
            _rhs(y, u, n, d, m, jac, beta, off_j, off_ji, off_b,
                 fidx, coef, pows, kinds, freqs, fv, A, Wu, k1)
            for s in range(S):
                tmp[s] = y[s] + 0.5 * k1[s]
            _rhs(tmp, u, n, d, m, jac, beta, off_j, off_ji, off_b,
                 fidx, coef, pows, kinds, freqs, fv, A, Wu, k2)
            for s in range(S):
                tmp[s] = y[s] + 0.5 * k2[s]
            _rhs(tmp, u, n, d, m, jac, beta, off_j, off_ji, off_b,
                 fidx, coef, pows, kinds, freqs, fv, A, Wu, k3)
            for s in range(S):
                tmp[s] = y[s] + k3[s]
            _rhs(tmp, u, n, d, m, jac, beta, off_j, off_ji, off_b,
                 fidx, coef, pows, kinds, freqs, fv, A, Wu, k4)
            for s in range(S):
                y[s] += (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]) / 6.0
        ok = True
        for s in range(S):
            if not np.isfinite(y[s]):
                ok = False
                break
        if not ok:
            if store:
                traj[step + 1:, :] = np.nan
            return step
        if store:
            traj[step + 1, :] = y
    return -1


@njit(cache=True, nogil=True)
def integrate_traj(y0, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
                   fidx, coef, pows, kinds, freqs, nf):
    P, N = incr.shape[0], incr.shape[1]
    S = y0.shape[0]
    traj = np.empty((P, N + 1, S))
    status = np.empty(P, dtype=np.int64)
    for p in range(P):
        y = y0.copy()
        status[p] = _rk4_path(y, incr[p], substeps, n, d, m, jac, beta,
                              off_j, off_ji, off_b, fidx, coef, pows, kinds,
                              freqs, nf, traj[p], True)
    return traj, status


@njit(cache=True, nogil=True)
def integrate_terminal(y0s, incr, substeps, n, d, m, jac, beta, off_j, off_ji, off_b,
                       fidx, coef, pows, kinds, freqs, nf):
    Q, S = y0s.shape
    P = incr.shape[0]
    out = np.empty((Q, P, S))
    status = np.empty((Q, P), dtype=np.int64)
    dummy = np.empty((1, S))
    for p in range(P):
        for q in range(Q):
            y = y0s[q].copy()
            status[q, p] = _rk4_path(y, incr[p], substeps, n, d, m, jac, beta,
                                     off_j, off_ji, off_b, fidx, coef, pows,
                                     kinds, freqs, nf, dummy, False)
            out[q, p, :] = y
    return out, status


@njit(cache=True, nogil=True)
def signature_batch(incr, letters, lengths, prefix, inv_fact):
    P, N, _ = incr.shape
    W = lengths.shape[0]
    out = np.empty((P, N + 1, W))
    cur = np.empty(W)
    new = np.empty(W)
    for p in range(P):
        for w in range(W):
            cur[w] = 0.0
        cur[0] = 1.0
        out[p, 0, :] = cur
        for step in range(N):
            for w in range(W):
                L = lengths[w]
                acc = cur[w]
                prod = 1.0
                for i in range(L - 1, -1, -1):
                    prod *= incr[p, step, letters[w, i]]
                    acc += cur[prefix[w, i]] * prod * inv_fact[L - i]
                new[w] = acc
            for w in range(W):
                cur[w] = new[w]
            out[p, step + 1, :] = cur
    return out


@njit(cache=True, nogil=True)
def holder_seminorm(values, gamma, h):
    npts, d = values.shape
    best = 0.0
    for i in range(npts):
        for j in range(i + 1, npts):
            s = 0.0
            for c in range(d):
                diff = values[j, c] - values[i, c]
                s += diff * diff
            r = np.sqrt(s) / ((j - i) * h) ** gamma
            if r > best:
                best = r
    return best
