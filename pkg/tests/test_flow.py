import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fbmlab import fbm
from fbmlab.flow import (BlowupError, integrate, integrate_batch, integrate_terminal,
                         transport_residuals)
from fbmlab.vfields import SmoothField, VectorFieldSet, load_system, parse_expr

HEIS = load_system("heisenberg")
TRIG = load_system("trig_elliptic")


def heisenberg_exact(incr, x0):
    """Closed form along the piecewise-linear driver: the third coordinate
    picks up x0_1 B2 plus the iterated integral of B1 against B2."""
    b = np.concatenate([np.zeros((1, 2)), np.cumsum(incr, axis=0)])
    area = np.concatenate([[0.0], np.cumsum((b[:-1, 0] + 0.5 * incr[:, 0]) * incr[:, 1])])
    return np.column_stack([x0[0] + b[:, 0], x0[1] + b[:, 1], x0[2] + x0[0] * b[:, 1] + area])


def ode_oracle(system, incr, x0, eps=1.0, H=0.5):
    """Cell by cell solve_ivp of dX/du = sum_j V_j(X) dB_j on u in [0, 1]."""
    x = np.asarray(x0, float)
    out = [x]
    for db in incr * eps**H:
        rhs = lambda u, y: sum(f(y) * db[j] for j, f in enumerate(system.fields))
        x = solve_ivp(rhs, (0, 1), x, rtol=1e-12, atol=1e-13, method="DOP853").y[:, -1]
        out.append(x)
    return np.array(out)


def test_heisenberg_matches_closed_form():
    incr = fbm.sample_increments(0.7, 256, 2, seed=1, n_paths=4)
    x0 = np.array([0.3, -0.2, 1.0])
    b = integrate_batch(HEIS, incr, 0.7, x0, substeps=1)
    for p in range(4):
        assert np.allclose(b.X[p], heisenberg_exact(incr[p], x0), atol=1e-12)


def test_commuting_is_translation():
    s = load_system("commuting")
    incr = fbm.sample_increments(0.4, 128, 2, seed=2, n_paths=3)
    b = integrate_batch(s, incr, 0.4, [1.0, 2.0])
    paths = fbm.increments_to_paths(incr)
    assert np.allclose(b.X, paths + [1.0, 2.0], atol=1e-13)
    assert np.allclose(b.J, np.eye(2), atol=0)
    assert np.allclose(b.beta, np.eye(2))


def test_trig_matches_ode_oracle():
    incr = fbm.sample_increments(0.6, 32, 2, seed=3, n_paths=1)[0]
    x0 = [0.2, 0.4]
    b = integrate_batch(TRIG, incr[None], 0.6, x0, substeps=16, beta=False)
    assert np.allclose(b.X[0], ode_oracle(TRIG, incr, x0), atol=1e-9)


def test_epsilon_rescaling_equals_scaled_driver():
    incr = fbm.sample_increments(0.7, 64, 2, seed=4, n_paths=2)
    eps = 1 / 16
    a = integrate_batch(TRIG, incr, 0.7, [0.1, 0.2], epsilon=eps, substeps=8, beta=False)
    b = integrate_batch(TRIG, incr * eps**0.7, 0.7, [0.1, 0.2], epsilon=1.0, substeps=8, beta=False)
    assert np.allclose(a.X, b.X, atol=1e-13)


def test_jacobian_against_finite_differences():
    incr = fbm.sample_increments(0.6, 64, 2, seed=5, n_paths=1)
    x0 = np.array([0.3, -0.7])
    b = integrate_batch(TRIG, incr, 0.6, x0, substeps=8, beta=False)
    h = 1e-6
    pts = [x0 + h * e for e in np.eye(2)] + [x0 - h * e for e in np.eye(2)]
    X, *_ = integrate_terminal(TRIG, incr, 0.6, pts, substeps=8)
    fd = np.column_stack([(X[k, 0] - X[k + 2, 0]) / (2 * h) for k in range(2)])
    assert np.allclose(b.J[0, -1], fd, atol=1e-7)
    assert b.bundle(0).jacobian_defect() < 1e-7  # J and Jinv carry independent RK4 error


def test_terminal_matches_trajectory():
    incr = fbm.sample_increments(0.7, 128, 2, seed=6, n_paths=5)
    x0s = [[0.0, 0.0, 0.0], [1.0, -1.0, 0.5]]
    X, J, Jinv, beta, status = integrate_terminal(HEIS, incr, 0.7, x0s, jacobian=True, beta=True)
    assert X.shape == (2, 5, 3) and beta.shape == (2, 5, 6, 6)
    assert np.all(status < 0)
    for q, x0 in enumerate(x0s):
        b = integrate_batch(HEIS, incr, 0.7, x0)
        assert np.allclose(X[q], b.X[:, -1], atol=1e-14)
        assert np.allclose(beta[q], b.beta[:, -1], atol=1e-14)


def test_transport_identity_trig_refines():
    res = []
    for N in (64, 128, 256):
        incr = fbm.sample_increments(0.7, N, 2, seed=7, n_paths=8)
        b = integrate_batch(TRIG, incr, 0.7, [0.0, 0.0], substeps=1)
        res.append(np.median(transport_residuals(b, TRIG)))
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-7


def test_transport_identity_heisenberg():
    incr = fbm.sample_increments(0.7, 256, 2, seed=8, n_paths=4)
    b = integrate_batch(HEIS, incr, 0.7, [0.5, 0.0, 0.0], epsilon=0.25)
    assert transport_residuals(b, HEIS).max() < 1e-12


def test_beta_starts_at_identity():
    incr = fbm.sample_increments(0.7, 32, 2, seed=9, n_paths=1)
    b = integrate_batch(HEIS, incr, 0.7, np.zeros(3))
    assert np.array_equal(b.beta[0, 0], np.eye(6))


def test_blowup_is_reported():
    s = VectorFieldSet([SmoothField((parse_expr("x1^2", 1),))], level=1, name="quad")
    incr = np.full((1, 16, 1), 0.5)
    b = integrate_batch(s, incr, 0.5, [1.0], beta=False)
    assert b.status[0] >= 0 and b.n_excluded == 1
    path = fbm.FbmPath(0.5, np.concatenate([[0.0], np.cumsum(incr[0, :, 0])])[:, None])
    with pytest.raises(BlowupError):
        integrate(s, path, [1.0])


def test_threads_deterministic():
    incr = fbm.sample_increments(0.7, 64, 2, seed=10, n_paths=33)
    a = integrate_batch(TRIG, incr, 0.7, [0.1, 0.1], threads=1, chunk=5)
    b = integrate_batch(TRIG, incr, 0.7, [0.1, 0.1], threads=4, chunk=5)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.beta, b.beta)


def test_input_validation():
    with pytest.raises(ValueError):
        integrate_batch(HEIS, np.zeros((1, 8, 3)), 0.7, np.zeros(3))
    with pytest.raises(ValueError):
        integrate_batch(HEIS, np.zeros((1, 8, 2)), 0.7, [np.nan, 0, 0])
    with pytest.raises(ValueError):
        integrate_batch(HEIS, np.zeros((1, 8, 2)), 0.7, np.zeros(3), substeps=0)


def test_bundle_csv(tmp_path):
    path = fbm.sample(0.7, 16, 2, seed=1)
    bd = integrate(HEIS, path, np.zeros(3))
    f = bd.to_csv(tmp_path / "flow.csv")
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    assert data.shape == (17, 1 + 3 + 9 + 36)
    assert np.allclose(data[:, 1:4], bd.X)
