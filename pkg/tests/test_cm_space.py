import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbmlab import cm_space as cm
from fbmlab import fbm


def test_indicator_inner_product_is_covariance():
    N = 64
    for H in (0.3, 0.5, 0.75):
        for a in (8, 21, 64):
            for b in (3, 40, 64):
                f = cm.StepFunction.indicator(a / N, N)
                g = cm.StepFunction.indicator(b / N, N)
                assert cm.inner_h(f, g, H) == pytest.approx(fbm.covariance(a / N, b / N, H), abs=1e-12)


def test_constant_one_has_unit_norm():
    assert cm.h_norm(np.ones(128), 0.75) == pytest.approx(1.0, abs=1e-13)
    assert cm.l2_norm(np.ones(10)) == 1.0
    assert cm.l2_norm(np.zeros(10)) == 0.0


def test_l2_norm_of_ramp():
    N = 1024
    cells = (np.arange(N) + 0.5) / N
    assert cm.l2_norm(cells) == pytest.approx(np.sqrt(1 / 3), abs=1 / N)
    assert cm.l2_norm_grid(np.linspace(0, 1, N + 1)) == pytest.approx(np.sqrt(1 / 3), rel=1e-12)


@given(st.integers(0, 2**31))
def test_brownian_isometry(seed):
    rng = np.random.default_rng(seed)
    N = 50
    f, g = rng.normal(size=(N, 2)), rng.normal(size=(N, 2))
    exact = np.sum(f * g) / N
    assert abs(cm.inner_h(f, g, 0.5) - exact) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(g)


@given(st.integers(0, 2**31), st.floats(0.26, 0.95))
def test_gram_psd(seed, H):
    rng = np.random.default_rng(seed)
    cells = rng.normal(size=(40, 5, 2))
    G = cm.gram_h(cells, H)
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G)[0] >= -1e-8 * np.trace(G)
    assert G[1, 3] == pytest.approx(cm.inner_h(cells[:, 1], cells[:, 3], H), rel=1e-10, abs=1e-12)


def test_apply_weights_matches_dense():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(33, 3))
    assert np.allclose(cm.apply_weights(v, 0.3), cm.weight_matrix(0.3, 33) @ v, atol=1e-14)


def test_grid_mismatch():
    with pytest.raises(ValueError):
        cm.inner_h(np.ones(8), np.ones(16), 0.5)


def test_weights_file_roundtrip(tmp_path):
    f = cm.save_weights(tmp_path / "w.txt", 0.7, 16)
    H, N, g = cm.load_weights(f)
    assert (H, N) == (0.7, 16)
    assert np.array_equal(g, cm.increment_covariance(0.7, 16))


def test_to_cells_rules():
    v = np.array([0.0, 1.0, 3.0])
    assert np.array_equal(cm.to_cells(v), [0.5, 2.0])
    assert np.array_equal(cm.to_cells(v, "left"), [0.0, 1.0])
    with pytest.raises(ValueError):
        cm.to_cells(v, "right")


def test_interpolation_degenerate_and_constant():
    rep = cm.check_interpolation(np.zeros(65), 0.7, 0.6)
    assert rep.degenerate
    rep = cm.check_interpolation(np.ones(65), 0.7, 0.6)
    assert rep.sup == rep.l2 == pytest.approx(1.0)
    assert rep.sup_bound_holds


def test_interpolation_sup_bound_on_fbm_paths():
    paths = fbm.increments_to_paths(fbm.sample_increments(0.7, 256, 1, seed=4, n_paths=1000))
    ratios = []
    for p in paths:
        rep = cm.check_interpolation(p, 0.7, 0.6)
        assert rep.sup_bound_holds
        ratios.append(rep.constant_ratio)
    assert np.all(np.isfinite(ratios)) and min(ratios) > 0
