import os
import subprocess
import sys

import numpy as np
import pytest

from fbmlab import _kernels_numpy as knp
from fbmlab import fbm
from fbmlab.flow import build_bank
from fbmlab.signature import _tables
from fbmlab.vfields import load_system

knb = pytest.importorskip("fbmlab._kernels_numba")


@pytest.mark.parametrize("name", ["heisenberg", "trig_elliptic"])
def test_flow_kernels_agree(name):
    s = load_system(name)
    incr = fbm.sample_increments(0.7, 64, s.d, seed=1, n_paths=5)
    layout, bank = build_bank(s, 0.5, 0.7, True, True)
    y0 = layout.initial(np.full(s.n, 0.2))
    args = (3, *layout.kernel_args(), *bank.as_args())
    a, sa = knb.integrate_traj(y0, incr, *args)
    b, sb = knp.integrate_traj(y0, incr, *args)
    assert np.array_equal(sa, sb)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    y0s = np.stack([y0, layout.initial(np.full(s.n, -0.4))])
    a, _ = knb.integrate_terminal(y0s, incr, *args)
    b, _ = knp.integrate_terminal(y0s, incr, *args)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


def test_signature_kernels_agree():
    incr = fbm.sample_increments(0.6, 32, 3, seed=2, n_paths=4)
    _, letters, lengths, prefix, inv_fact = _tables(3, 4)
    a = knb.signature_batch(incr, letters, lengths, prefix, inv_fact)
    b = knp.signature_batch(incr, letters, lengths, prefix, inv_fact)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_holder_kernels_agree():
    v = fbm.sample(0.5, 300, 2, seed=3, method="cholesky").values
    assert knb.holder_seminorm(v, 0.4, 1 / 300) == pytest.approx(knp.holder_seminorm(v, 0.4, 1 / 300), rel=1e-13)


SCRIPT = """
import numpy as np
from fbmlab import BACKEND, fbm
from fbmlab.flow import integrate_batch
from fbmlab.signature import signature_batch
from fbmlab.vfields import load_system
incr = fbm.sample_increments(0.7, 32, 2, seed=4, n_paths=3)
b = integrate_batch(load_system('heisenberg'), incr, 0.7, [0.1, 0.0, 0.0])
np.savez(OUT, X=b.X, beta=b.beta, sig=signature_batch(incr, 3))
print(BACKEND)
"""


def test_env_flag_switches_backend_end_to_end(tmp_path):
    res = {}
    for flag in ("0", "1"):
        out = tmp_path / f"r{flag}.npz"
        env = dict(os.environ, FBMLAB_NO_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", SCRIPT.replace("OUT", repr(str(out)))],
                           env=env, capture_output=True, text=True, check=True)
        res[r.stdout.strip()] = np.load(out)
    assert set(res) == {"numba", "numpy"}
    for k in ("X", "beta", "sig"):
        assert np.allclose(res["numba"][k], res["numpy"][k], rtol=1e-12, atol=1e-13)
