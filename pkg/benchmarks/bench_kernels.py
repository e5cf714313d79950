"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py --paths 64 --N 1024
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fbmlab import _kernels_numba, _kernels_numpy
from fbmlab.fbm import sample_increments
from fbmlab.flow import build_bank
from fbmlab.signature import _tables
from fbmlab.vfields import load_system


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def flow_case(mod, system, incr, H):
    layout, bank = build_bank(system, 1.0, H)
    y0 = layout.initial(np.zeros(system.n))
    return lambda: mod.integrate_traj(y0, incr, 4, *layout.kernel_args(), *bank.as_args())[0]


def signature_case(mod, incr, m):
    _, letters, lengths, prefix, inv_fact = _tables(incr.shape[2], m)
    return lambda: mod.signature_batch(incr, letters, lengths, prefix, inv_fact)


def holder_case(mod, values):
    return lambda: mod.holder_seminorm(values, 0.4, 1.0 / (values.shape[0] - 1))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--N", type=int, default=1024)
    ap.add_argument("--H", type=float, default=0.7)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    incr = sample_increments(args.H, args.N, 2, seed=0, n_paths=args.paths)
    values = np.ascontiguousarray(np.cumsum(incr[0], axis=0))
    cases = []
    for name in ("heisenberg", "trig_elliptic"):
        system = load_system(name)
        cases.append((f"flow {name}", lambda mod, s=system: flow_case(mod, s, incr, args.H)))
    cases.append(("signature m=3", lambda mod: signature_case(mod, incr, 3)))
    cases.append(("holder seminorm", lambda mod: holder_case(mod, values)))

    print(f"{'kernel':<24}{'numba s':>12}{'numpy s':>12}{'speedup':>10}{'max diff':>12}")
    for label, make in cases:
        fn_nb, fn_np = make(_kernels_numba), make(_kernels_numpy)
        fn_nb()  # compile
        t_nb, out_nb = best_of(fn_nb, args.repeat)
        t_np, out_np = best_of(fn_np, args.repeat)
        diff = float(np.nanmax(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
        print(f"{label:<24}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
