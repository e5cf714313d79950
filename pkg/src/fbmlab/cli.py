"""Command-line experiments.

Config files are flat ``key = value`` text, one experiment per file, ``#``
starts a comment. Lists are comma separated, words are written ``(1,2)``.
Keys prefixed ``assert.`` form the tolerance block used by ``--assert``.

    fbmlab fbm-sample --config sample.cfg --out runs/paths
    fbmlab verify bracket-transport --config heis.cfg --out runs/bt
    fbmlab estimate smallball --config sb.cfg --seed 3 --out runs/sb --assert

Exit codes: 0 pass, 1 tolerance failure, 2 config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND

log = logging.getLogger("fbmlab")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_TOL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config

_WORD_LIST = re.compile(r"\([0-9,\s]*\)")


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = val
    return cfg


def _float(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return float(default)
    try:
        return float(eval_number(cfg[key]))
    except ValueError:
        raise ConfigError(f"{key}: not a number: {cfg[key]!r}") from None


def _int(cfg, key, default=None):
    v = _float(cfg, key, default)
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer")
    return int(v)


def eval_number(s: str) -> float:
    """Numbers, ``2^k`` powers and ``a/b`` fractions."""
    s = s.strip()
    m = re.fullmatch(r"(-?[0-9.]+)\s*\^\s*(-?[0-9]+)", s)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    m = re.fullmatch(r"(-?[0-9.eE+-]+)\s*/\s*([0-9.eE+-]+)", s)
    if m:
        return float(m.group(1)) / float(m.group(2))
    return float(s)


def _floats(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return [float(x) for x in default]
    try:
        return [eval_number(x) for x in cfg[key].split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{key}: bad number list {cfg[key]!r}") from None


def _words(cfg, key, default=None):
    from .words import parse_word
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return [tuple(w) for w in default]
    found = _WORD_LIST.findall(cfg[key])
    if not found:
        raise ConfigError(f"{key}: expected words like (1,2)")
    return [parse_word(w) for w in found]


def _str(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    return cfg[key]


def _system(cfg, base: Path):
    from .vfields import load_system
    name = _str(cfg, "system")
    p = Path(name)
    if not p.is_absolute() and (base / p).exists():
        p = base / p
    try:
        return load_system(p if p.exists() else name)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"system file: {exc}") from None


def _hurst(cfg, default=None):
    from .fbm import check_hurst
    H = _float(cfg, "H", default)
    try:
        return check_hurst(H)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def write_table(path: Path, header: list, rows: list) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_manifest(out: Path, command: str, resolved: dict, results: dict, extra_files=()) -> Path:
    files = {}
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "code_version": __version__,
        "backend": BACKEND,
        "config": _jsonable(resolved),
        "results": _jsonable(results),
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _check_asserts(cfg: dict, results: dict) -> list[str]:
    """``assert.<name>_min`` / ``assert.<name>_max`` against ``results[name]``."""
    failures = []
    for key, val in cfg.items():
        if not key.startswith("assert."):
            continue
        name = key[len("assert."):]
        m = re.fullmatch(r"(.+)_(min|max)", name)
        if not m:
            raise ConfigError(f"{key}: assertion keys end in _min or _max")
        target, kind = m.groups()
        if target not in results:
            raise ConfigError(f"{key}: no result named {target!r}")
        got = results[target]
        bound = eval_number(val)
        ok = got is not None and not (isinstance(got, float) and math.isnan(got)) and \
            (got >= bound if kind == "min" else got <= bound)
        if not ok:
            failures.append(f"{target}={got} violates {kind} {bound}")
    return failures


# ---------------------------------------------------------------------------
# commands


def cmd_fbm_sample(cfg: dict, seed: int, threads: int, out: Path) -> tuple[dict, dict, list]:
    from . import fbm
    H = _hurst(cfg)
    N = _int(cfg, "N", 1024)
    d = _int(cfg, "d", 1)
    n_paths = _int(cfg, "n_paths", 1)
    method = _str(cfg, "method", "circulant")
    n_write = _int(cfg, "n_write", min(n_paths, 4))
    if method not in fbm.METHODS:
        raise ConfigError(f"method must be one of {fbm.METHODS}")
    if N < 1 or d < 1 or n_paths < 1:
        raise ConfigError("N, d and n_paths must be positive")
    if method == "circulant" and N & (N - 1):
        raise ConfigError("circulant sampling needs N a power of two")
    incr = fbm.sample_increments(H, N, d, seed, n_paths, method, threads=threads)
    paths = fbm.increments_to_paths(incr)
    for i in range(min(n_write, n_paths)):
        fbm.write_csv(fbm.FbmPath(H, paths[i], seed, method, i), out / f"path_{i:05d}.csv")
    # covariance validation on an 8-point subgrid
    k = np.unique(np.linspace(N // 8, N, 8).astype(int))
    rows = []
    worst = 0.0
    for a in k:
        for b in k:
            if b < a:
                continue
            s, t = a / N, b / N
            prod = (paths[:, a, :] * paths[:, b, :]).ravel()
            est = float(prod.mean())
            se = float(prod.std(ddof=1) / math.sqrt(prod.size)) if prod.size > 1 else float("nan")
            exact = fbm.covariance(s, t, H)
            z = (est - exact) / se if se > 0 else float("nan")
            worst = max(worst, abs(z)) if math.isfinite(z) else worst
            rows.append((s, t, est, exact, se, z))
    write_table(out / "covariance.csv", ["s", "t", "empirical", "exact", "stderr", "z"], rows)
    resolved = dict(H=H, N=N, d=d, n_paths=n_paths, method=method, n_write=n_write, seed=seed)
    return resolved, {"max_abs_z": worst}, []


def cmd_verify(which: str, cfg: dict, seed: int, threads: int, out: Path, base: Path):
    return {"bracket-transport": _verify_transport, "ibp": _verify_ibp,
            "chen": _verify_chen, "taylor": _verify_taylor}[which](cfg, seed, threads, out, base)


def _loglog_slope(x, y) -> float:
    with np.errstate(divide="ignore"):
        x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if not np.all(np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def _verify_transport(cfg, seed, threads, out, base):
    from . import fbm, flow
    system = _system(cfg, base)
    H = _hurst(cfg, 0.7)
    N = _int(cfg, "N", 2**12)
    substeps = _int(cfg, "substeps", 4)
    n_paths = _int(cfg, "n_paths", 64)
    eps = _float(cfg, "epsilon", 1.0)
    x0 = _floats(cfg, "x", [0.0] * system.n)
    tol = _float(cfg, "tol", 1e-2)
    jtol = _float(cfg, "jacobian_tol", 1e-6)
    refine = [int(v) for v in _floats(cfg, "refine", [])]
    method = _str(cfg, "method", "circulant")

    def run(n_grid):
        res, jd = [], []
        for a in range(0, n_paths, 16):
            b = min(a + 16, n_paths)
            incr = fbm.sample_increments(H, n_grid, system.d, seed, b - a, method, start=a)
            batch = flow.integrate_batch(system, incr, H, x0, eps, substeps, threads=threads)
            ok = batch.ok
            res.append(flow.transport_residuals(batch, system)[ok])
            jd.append(np.abs(batch.J[ok] @ batch.Jinv[ok] - np.eye(system.n)).reshape(ok.sum(), -1).max(axis=1))
        return np.concatenate(res), np.concatenate(jd)

    res, jd = run(N)
    checks = [("transport_residual", float(res.max()), tol, float(res.max()) <= tol),
              ("jacobian_defect", float(jd.max()), jtol, float(jd.max()) <= jtol)]
    write_table(out / "report.csv", ["check", "value", "tolerance", "pass"], checks)
    results = {"transport_residual": float(res.max()), "jacobian_defect": float(jd.max()),
               "n_excluded": n_paths - res.size}
    if refine:
        rows = [(n, float(run(n)[0].max())) for n in refine]
        write_table(out / "refinement.csv", ["N", "residual"], rows)
        results["refinement_slope"] = -_loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    resolved = dict(system=system.name, H=H, N=N, substeps=substeps, n_paths=n_paths, epsilon=eps,
                    x=x0, tol=tol, jacobian_tol=jtol, refine=refine, method=method, seed=seed)
    fails = [c[0] for c in checks if not c[3]]
    return resolved, results, fails


def _sigmoid_for(cfg, x):
    from .smoothing import Sigmoid
    n = len(x)
    direction = _floats(cfg, "direction", [1.0] * n)
    if len(direction) != n:
        raise ConfigError("direction must have one entry per state coordinate")
    return Sigmoid(x, direction, _float(cfg, "lam", 1.0)), direction


def _verify_ibp(cfg, seed, threads, out, base):
    from .smoothing import ibp_identity_check
    system = _system(cfg, base)
    H = _hurst(cfg, 0.7)
    N = _int(cfg, "N", 2**12)
    n_paths = _int(cfg, "n_paths", 256)
    eps = _float(cfg, "epsilon", 1.0)
    x0 = _floats(cfg, "x", [0.0] * system.n)
    tol = _float(cfg, "tol", 5e-2)
    refine = [int(v) for v in _floats(cfg, "refine", [])]
    substeps = _int(cfg, "substeps", 4)
    method = _str(cfg, "method", "circulant")
    f, direction = _sigmoid_for(cfg, np.asarray(x0))
    rep = ibp_identity_check(f, system, x0, eps, n_paths, H, seed, N, substeps, method, threads)
    checks = [("ibp_median_residual", rep.median, tol, rep.median <= tol)]
    write_table(out / "report.csv", ["check", "value", "tolerance", "pass"], checks)
    results = {"ibp_median_residual": rep.median, "kernel_transport_median": rep.median_transport,
               "n_excluded": rep.n_excluded, "n_singular": rep.n_singular}
    if refine:
        rows = []
        for n_grid in refine:
            r = ibp_identity_check(f, system, x0, eps, n_paths, H, seed, n_grid, substeps, method, threads)
            rows.append((n_grid, r.median, r.median_transport))
        write_table(out / "refinement.csv", ["N", "median_residual", "kernel_transport_median"], rows)
        med = [r[1] for r in rows]
        results["strictly_decreasing"] = bool(all(b < a for a, b in zip(med, med[1:])))
    resolved = dict(system=system.name, H=H, N=N, n_paths=n_paths, epsilon=eps, x=x0, tol=tol,
                    refine=refine, substeps=substeps, method=method, lam=f.lam, direction=direction,
                    seed=seed)
    return resolved, results, [c[0] for c in checks if not c[3]]


def _verify_chen(cfg, seed, threads, out, base):
    from . import fbm
    from .signature import chen_defect, compute_signature, shuffle_defect
    from .words import enumerate_words
    H = _hurst(cfg, 0.7)
    N = _int(cfg, "N", 256)
    d = _int(cfg, "d", 2)
    m = _int(cfg, "m", 3)
    tol = _float(cfg, "tol", 1e-10)
    n_paths = _int(cfg, "n_paths", 4)
    if not 1 <= m <= 4:
        raise ConfigError("m must lie in 1..4")
    chen_worst, shuffle_worst = 0.0, 0.0
    for i in range(n_paths):
        path = fbm.sample(H, N, d, seed, index=i)
        for k in (N // 4, N // 2, 3 * N // 4):
            chen_worst = max(chen_worst, chen_defect(path.increments, k, m))
        sig = compute_signature(path, m)
        for u in enumerate_words(d, m - 1):
            for v in enumerate_words(d, m - len(u)):
                shuffle_worst = max(shuffle_worst, shuffle_defect(sig, u, v))
    checks = [("chen", chen_worst, tol, chen_worst <= tol), ("shuffle", shuffle_worst, tol, shuffle_worst <= tol)]
    write_table(out / "report.csv", ["check", "value", "tolerance", "pass"], checks)
    resolved = dict(H=H, N=N, d=d, m=m, tol=tol, n_paths=n_paths, seed=seed)
    return resolved, {"chen": chen_worst, "shuffle": shuffle_worst}, [c[0] for c in checks if not c[3]]


def taylor_remainders(system, H, N, n_paths, seed, t_grid, x0, substeps=4, method="circulant",
                      threads=1, chunk=32):
    """E max_{|I| = k, J} |gamma^J_I(t)| per word length k and t; shape (l, T)."""
    from . import fbm, flow
    from ._parallel import map_chunks
    from .signature import signature_batch, signature_words, taylor_beta
    words = system.words
    l = system.level
    idx_t = [int(round(t * N)) for t in t_grid]
    lengths = np.array([len(w) for w in words])

    def block(a, b):
        incr = fbm.sample_increments(H, N, system.d, seed, b - a, method, start=a)
        batch = flow.integrate_batch(system, incr, H, x0, 1.0, substeps, jacobian=False, beta=True)
        sig = signature_batch(incr, l)
        tb = taylor_beta(sig[:, idx_t], signature_words(system.d, l), words)
        gam = np.abs(batch.beta[:, idx_t] - tb)                       # (P, T, m, m)
        per = np.stack([gam[:, :, lengths == k, :].reshape(b - a, len(idx_t), -1).max(axis=-1)
                        for k in range(1, l + 1)], axis=0)             # (l, P, T)
        return per, batch.ok

    parts = map_chunks(block, n_paths, chunk, threads)
    per = np.concatenate([p[0] for p in parts], axis=1)
    ok = np.concatenate([p[1] for p in parts])
    return per[:, ok].mean(axis=1), int((~ok).sum())


def _verify_taylor(cfg, seed, threads, out, base):
    system = _system(cfg, base)
    H = _hurst(cfg, 0.5)
    N = _int(cfg, "N", 2**10)
    n_paths = _int(cfg, "n_paths", 256)
    x0 = _floats(cfg, "x", [0.0] * system.n)
    t_grid = _floats(cfg, "t_grid", [2.0**-k for k in range(6, 0, -1)])
    margin = _float(cfg, "margin", 0.25)
    substeps = _int(cfg, "substeps", 4)
    method = _str(cfg, "method", "circulant")
    means, n_excl = taylor_remainders(system, H, N, n_paths, seed, t_grid, x0, substeps, method, threads)
    l = system.level
    rows, checks = [], []
    for k in range(1, l + 1):
        for t, v in zip(t_grid, means[k - 1]):
            rows.append((k, t, v))
        floor = (l + 1 - k) * H - margin
        slope = _loglog_slope(t_grid, means[k - 1])
        checks.append((f"slope_len{k}", slope, floor, bool(math.isfinite(slope) and slope >= floor)))
    write_table(out / "remainder.csv", ["word_length", "t", "mean_abs_remainder"], rows)
    write_table(out / "report.csv", ["check", "value", "tolerance", "pass"], checks)
    resolved = dict(system=system.name, H=H, N=N, n_paths=n_paths, x=x0, t_grid=t_grid,
                    margin=margin, substeps=substeps, method=method, seed=seed)
    results = {c[0]: c[1] for c in checks}
    results["max_mean_remainder"] = float(np.max(means))
    results["n_excluded"] = n_excl
    return resolved, results, [c[0] for c in checks if not c[3]]


def cmd_estimate(which: str, cfg: dict, seed: int, threads: int, out: Path, base: Path):
    return {"smoothing": _est_smoothing, "smallball": _est_smallball,
            "invmoment": _est_invmoment}[which](cfg, seed, threads, out, base)


def _est_smoothing(cfg, seed, threads, out, base):
    from .smoothing import additive_sigmoid_oracle, fit_exponent
    from .vfields import TrigPoly
    system = _system(cfg, base)
    H = _hurst(cfg, 0.5)
    x0 = _floats(cfg, "x", [0.0] * system.n)
    words = _words(cfg, "words", [(1,)])
    t_grid = _floats(cfg, "t_grid", [2.0**-k for k in range(6, 0, -1)])
    n_paths = _int(cfg, "n_paths", 2**16)
    N = _int(cfg, "N", 256)
    substeps = _int(cfg, "substeps", 4)
    method = _str(cfg, "method", "circulant")
    h = _float(cfg, "h") if "h" in cfg else None
    f, direction = _sigmoid_for(cfg, np.asarray(x0))
    fit = fit_exponent(f, system, x0, words, t_grid, H, n_paths, seed, h, N, substeps, method,
                       threads, p2_diagnostic=True)
    additive = (system.n == 1 and system.d == 1 and len(words) == 1 and words[0] == (1,)
                and system.fields[0].components[0] == TrigPoly.constant(1, 1.0))
    header = ["t", "estimate", "stderr", "n_excluded", "h", "used", "p2_diagnostic"]
    rows = []
    for i, t in enumerate(fit.t):
        rows.append([t, fit.estimates[i], fit.stderrs[i], fit.n_excluded[i], fit.h[i], fit.used[i],
                     fit.p2_diagnostic[i]])
    if additive:
        header.append("oracle")
        for r, t in zip(rows, fit.t):
            r.append(additive_sigmoid_oracle(f.lam, t, H, 1))
    write_table(out / "smoothing.csv", header, rows)
    resolved = dict(system=system.name, H=H, x=x0, words=[list(w) for w in words], t_grid=t_grid,
                    n_paths=n_paths, N=N, substeps=substeps, method=method, h=h, lam=f.lam,
                    direction=direction, seed=seed)
    results = {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "reference_slope": fit.reference_slope,
               "bounded_constant": fit.bounded_constant, "band_ratio": fit.band_ratio,
               "degenerate": fit.degenerate}
    return resolved, results, []


def _est_smallball(cfg, seed, threads, out, base):
    from .matrices import brownian_small_ball, small_ball_estimate
    d = _int(cfg, "d", 1)
    m = _int(cfg, "m", 1)
    H = _hurst(cfg, 0.5)
    eps_grid = _floats(cfg, "eps_grid", [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4])
    n_paths = _int(cfg, "n_paths", 10**5)
    N = _int(cfg, "N", 2**13)
    method = _str(cfg, "method", "circulant")
    z = _float(cfg, "z", 1.96)
    coeffs_w = _words(cfg, "coeff_words", [(1,)])
    coeffs_v = _floats(cfg, "coeff_values", [1.0] * len(coeffs_w))
    if len(coeffs_v) != len(coeffs_w):
        raise ConfigError("coeff_words and coeff_values differ in length")
    coeffs = dict(zip(coeffs_w, coeffs_v))
    try:
        tab = small_ball_estimate(d, m, coeffs, H, eps_grid, n_paths, seed, N, method, threads, z)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    header = ["eps", "estimate", "stderr", "lower", "upper", "hits", "n_excluded", "used_in_fit"]
    p = tab.prob
    se = np.sqrt(p * (1 - p) / n_paths)
    rows = [[e, pi, s, lo, hi, k, 0, u] for e, pi, s, lo, hi, k, u in
            zip(tab.eps, p, se, tab.lower, tab.upper, tab.hits, tab.used)]
    if tab.bridge_prob is not None:
        # any unit first-level combination of Brownian components is itself Brownian
        header += ["bridge_estimate", "bridge_stderr", "brownian_series"]
        for r, b, bs, s in zip(rows, tab.bridge_prob, tab.bridge_stderr, brownian_small_ball(tab.eps)):
            r += [b, bs, s]
    write_table(out / "smallball.csv", header, rows)
    resolved = dict(d=d, m=m, H=H, eps_grid=eps_grid, n_paths=n_paths, N=N, method=method, z=z,
                    coeff_words=[list(w) for w in coeffs_w], coeff_values=coeffs_v, seed=seed)
    return resolved, {"slope": tab.slope, "slope_stderr": tab.slope_stderr, "degenerate": tab.degenerate}, []


def _est_invmoment(cfg, seed, threads, out, base):
    from .matrices import inverse_moment_estimate
    system = _system(cfg, base)
    H = _hurst(cfg, 0.7)
    x0 = _floats(cfg, "x", [0.0] * system.n)
    eps_grid = _floats(cfg, "eps_grid", [2.0**-k for k in range(4, -1, -1)])
    p = _float(cfg, "p", 2.0)
    n_paths = _int(cfg, "n_paths", 2048)
    N = _int(cfg, "N", 1024)
    substeps = _int(cfg, "substeps", 4)
    method = _str(cfg, "method", "circulant")
    tab = inverse_moment_estimate(system, x0, H, eps_grid, p, n_paths, seed, N, substeps, method, threads)
    rows = [(r.epsilon, r.estimate, r.stderr, r.n_excluded, r.n_below_floor, r.q95_inverse) for r in tab.rows]
    write_table(out / "invmoment.csv",
                ["epsilon", "estimate", "stderr", "n_excluded", "n_below_floor", "q95_inverse"], rows)
    q95 = [r.q95_inverse for r in tab.rows]
    resolved = dict(system=system.name, H=H, x=x0, eps_grid=eps_grid, p=p, n_paths=n_paths, N=N,
                    substeps=substeps, method=method, seed=seed)
    results = {"ratio": tab.ratio, "q95_ratio": max(q95) / min(q95),
               "n_below_floor": sum(r.n_below_floor for r in tab.rows),
               "n_excluded": sum(r.n_excluded for r in tab.rows)}
    return resolved, results, []


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbmlab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"fbmlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--assert", dest="do_assert", action="store_true",
                       help="check assert.* bounds from the config")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("fbm-sample", help="sample fBm paths and validate the covariance"))
    pv = sub.add_parser("verify", help="run an identity suite")
    pv.add_argument("which", choices=["bracket-transport", "ibp", "chen", "taylor"])
    common(pv)
    pe = sub.add_parser("estimate", help="Monte Carlo estimation tables")
    pe.add_argument("which", choices=["smoothing", "smallball", "invmoment"])
    common(pe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config.read_text()) if args.config else {}
        base = args.config.parent if args.config else Path.cwd()
        seed = args.seed if args.seed is not None else _int(cfg, "seed", 0)
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        for stale in args.out.glob("*"):
            if stale.is_file():
                stale.unlink()
        if args.command == "fbm-sample":
            resolved, results, fails = cmd_fbm_sample(cfg, seed, args.threads, args.out)
            name = "fbm-sample"
        elif args.command == "verify":
            resolved, results, fails = cmd_verify(args.which, cfg, seed, args.threads, args.out, base)
            name = f"verify {args.which}"
        else:
            resolved, results, fails = cmd_estimate(args.which, cfg, seed, args.threads, args.out, base)
            name = f"estimate {args.which}"
        if args.do_assert:
            fails = fails + _check_asserts(cfg, results)
        results["failed_checks"] = fails
        write_manifest(args.out, name, resolved, results)
    except ConfigError as exc:
        print(f"fbmlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fbmlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"fbmlab: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for line in fails:
        print(f"FAIL {line}", file=sys.stderr)
    print(json.dumps(_jsonable({k: v for k, v in results.items() if k != "failed_checks"}), sort_keys=True))
    return EXIT_TOL if fails else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
