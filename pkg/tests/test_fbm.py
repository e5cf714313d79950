import math
import warnings

import numpy as np
import pytest
from scipy import stats

from fbmlab import fbm


def test_covariance_examples():
    assert fbm.covariance(1.0, 1.0, 0.3) == pytest.approx(1.0)
    assert fbm.covariance(0.3, 0.8, 0.5) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        fbm.covariance(1.0, 2.0, 0.75)
    with pytest.raises(ValueError):
        fbm.covariance(0.2, 0.5, 1.2)


def test_fgn_autocovariance_sums_to_variance():
    # Var(B_1) = sum_{k,l} Cov(dB_k, dB_l) = 1
    for H in (0.3, 0.5, 0.8):
        N = 64
        g = fgn_row = fbm.fgn_autocovariance(H, N)[:N]
        total = N * g[0] + 2 * sum((N - k) * g[k] for k in range(1, N))
        assert total == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("method", fbm.METHODS)
def test_path_starts_at_zero_and_is_deterministic(method):
    p = fbm.sample(0.6, 128, 2, seed=11, method=method)
    assert np.all(p.values[0] == 0)
    q = fbm.sample(0.6, 128, 2, seed=11, method=method)
    assert np.array_equal(p.values, q.values)
    assert p.values.shape == (129, 2)
    assert not p.values.flags.writeable


@pytest.mark.parametrize("method", fbm.METHODS)
def test_paths_independent_of_batching(method):
    a = fbm.sample_increments(0.4, 64, 2, seed=5, n_paths=11, method=method, chunk=3)
    b = fbm.sample_increments(0.4, 64, 2, seed=5, n_paths=4, method=method, start=5)
    c = fbm.sample_increments(0.4, 64, 2, seed=5, n_paths=11, method=method, chunk=4, threads=4)
    assert np.array_equal(a[5:9], b)
    assert np.array_equal(a, c)


def test_brownian_terminal_variance():
    incr = fbm.sample_increments(0.5, 1024, 1, seed=7, n_paths=4096)
    b1 = incr.sum(axis=1)[:, 0]
    se = math.sqrt(2.0 / b1.size)  # stderr of the sample variance for a unit Gaussian
    assert abs(b1.var() - 1.0) < 4 * se


def test_covariance_pair_h07():
    incr = fbm.sample_increments(0.7, 512, 2, seed=1, n_paths=4096)
    paths = fbm.increments_to_paths(incr)
    prod = paths[:, 256, 0] * paths[:, 512, 0]
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean() - fbm.covariance(0.5, 1.0, 0.7)) < 4 * se


def test_components_uncorrelated():
    incr = fbm.sample_increments(0.7, 64, 2, seed=2, n_paths=4096)
    b = incr.sum(axis=1)
    prod = b[:, 0] * b[:, 1]
    assert abs(prod.mean()) < 4 * prod.std(ddof=1) / math.sqrt(prod.size)


def test_methods_agree_in_law():
    a = fbm.sample_increments(0.35, 256, 1, seed=3, n_paths=4096, method="cholesky").sum(axis=1)[:, 0]
    b = fbm.sample_increments(0.35, 256, 1, seed=4, n_paths=4096, method="circulant").sum(axis=1)[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_self_similarity_of_marginals():
    eps = 0.25
    N = 256
    a = fbm.increments_to_paths(fbm.sample_increments(0.7, N, 1, seed=8, n_paths=4096))[:, int(eps * N), 0]
    b = eps**0.7 * fbm.sample_increments(0.7, N, 1, seed=9, n_paths=4096).sum(axis=1)[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_circulant_paired_streams_are_independent():
    incr = fbm.sample_increments(0.7, 16, 1, seed=1, n_paths=8192)[:, :, 0]
    even, odd = incr[0::2].sum(axis=1), incr[1::2].sum(axis=1)
    r = np.corrcoef(even, odd)[0, 1]
    assert abs(r) < 4 / math.sqrt(even.size)


def test_circulant_requires_power_of_two():
    with pytest.raises(ValueError):
        fbm.sample_increments(0.6, 100, 1, method="circulant")
    fbm.sample_increments(0.6, 100, 1, method="cholesky")


def test_hurst_validation():
    with pytest.raises(ValueError):
        fbm.sample(0.2, 16)
    with pytest.raises(ValueError):
        fbm.sample(1.0, 16)
    with pytest.raises(ValueError):
        fbm.sample(0.5, 16, method="spectral")


def test_circulant_fallback_warns(monkeypatch):
    def boom(H, N):
        raise fbm.CirculantEmbeddingError("negative eigenvalue")
    monkeypatch.setattr(fbm, "_circulant_sqrt_eigs", boom)
    with pytest.warns(RuntimeWarning):
        assert fbm._resolve_method(0.6, 64, "circulant") == "cholesky"


def test_holder_norm_examples():
    assert fbm.holder_norm(np.zeros(33), 0.5) == 0.0
    t = np.linspace(0, 1, 257)
    assert fbm.holder_norm(t, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fbm.holder_norm(t, 1.0)


def test_holder_norm_grows_above_hurst():
    H = 0.5
    lo, hi = [], []
    for N in (256, 4096):
        p = fbm.sample(H, N, 1, seed=0)
        lo.append(fbm.holder_norm(p, 0.3))
        hi.append(fbm.holder_norm(p, 0.8))
    assert hi[1] / hi[0] > 2.0
    assert lo[1] / lo[0] < 1.5


def test_csv_roundtrip(tmp_path):
    p = fbm.sample(0.65, 32, 2, seed=9, index=3)
    f = fbm.write_csv(p, tmp_path / "p.csv")
    q = fbm.read_csv(f)
    assert np.array_equal(p.values, q.values)
    assert (q.hurst, q.seed, q.index, q.method) == (0.65, 9, 3, "circulant")
    assert f.read_text().splitlines()[0] == "t,B1,B2"
