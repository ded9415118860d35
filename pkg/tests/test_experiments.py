import numpy as np
import pytest
import scipy.sparse as sp

from msgmrf.errors import ConfigError
from msgmrf.experiments.appendix_b import AppendixBConfig, run_appendix_b
from msgmrf.experiments.appendix_c import (AppendixCConfig, gmrf_predict, kriging_oracle,
                                           run_appendix_c, simulate_replicate, trends_hold,
                                           two_scale_basis, two_scale_precision)
from msgmrf.experiments.demo2d import DemoConfig, fit_2d_demo, predict_from_saved

pytestmark = pytest.mark.filterwarnings("ignore::msgmrf.sampler.GuidelineWarning")

SMALL = dict(n_train=300, n_val=40, n_box=10, coarse_spacing=0.2, fine_spacing=0.1,
             param_spacing=0.5, tile_extent=0.5, min_data=10, min_basis=10,
             n_iterations=12, burn_in=4, thin=2)


def test_appendix_c_rejects_bad_deltas():
    with pytest.raises(ConfigError):
        AppendixCConfig(delta0=(0.01,), delta1=(0.01,)).pairs()
    with pytest.raises(ConfigError):
        AppendixCConfig(delta0=(0.01,), delta1=(0.02,)).pairs()


def test_appendix_c_gap_layout():
    c = AppendixCConfig()
    xt, zt, xv, zv, nd = simulate_replicate(c, np.random.default_rng(0))
    assert xt.size == 500 and xv.size == 600 and nd == 500
    gap = xv[nd:]
    lo, hi = gap.min(), gap.max()
    assert hi - lo <= c.gap_length
    outside = np.concatenate([xt, xv[:nd]])
    assert not np.any((outside > lo) & (outside < hi))


def test_sparse_gmrf_predictions_equal_dense():
    c = AppendixCConfig(n_outside=120, n_train=60, n_gap=20)
    xt, zt, xv, _, _ = simulate_replicate(c, np.random.default_rng(1))
    deltas = (0.05, 0.01)
    pred = gmrf_predict(c, deltas, xt, zt, xv)
    a = two_scale_basis(xt, deltas).toarray()
    av = two_scale_basis(xv, deltas).toarray()
    q = two_scale_precision(c, deltas).toarray()
    cov = np.linalg.inv(q + a.T @ a / c.noise_var)
    mean = av @ cov @ a.T @ zt / c.noise_var
    var = np.einsum("ij,jk,ik->i", av, cov, av) + c.noise_var
    np.testing.assert_allclose(pred.mean, mean, atol=1e-6)
    np.testing.assert_allclose(pred.std, np.sqrt(var), atol=1e-6)


def test_two_scale_precision_is_ar1_per_scale():
    c = AppendixCConfig()
    q = two_scale_precision(c, (0.1, 0.05))
    assert q.shape == (30, 30)
    cov0 = np.linalg.inv(q.toarray()[:10, :10])
    # stationary marginal variance equals sigma^2 of the scale
    np.testing.assert_allclose(np.diag(cov0), c.sigma_sq[0], rtol=1e-10)
    assert sp.issparse(q)


def test_oracle_has_noise_in_spread():
    c = AppendixCConfig(n_outside=50, n_train=30, n_gap=5)
    xt, zt, xv, _, _ = simulate_replicate(c, np.random.default_rng(2))
    pred = kriging_oracle(c, xt, zt, xt)
    assert np.all(pred.std ** 2 >= c.noise_var * (1 - 1e-9))


def test_small_appendix_c_run(tmp_path):
    c = AppendixCConfig(n_replicates=4, delta0=(0.05, 0.1), delta1=(0.005, 0.01), workers=2)
    rep = run_appendix_c(c, tmp_path)
    assert set(rep) == {"oracle", (0.05, 0.005), (0.05, 0.01), (0.1, 0.005), (0.1, 0.01)}
    assert rep["oracle"]["RMSPE_dense"] < rep["oracle"]["RMSPE_gap"]
    again = run_appendix_c(AppendixCConfig(**{**c.__dict__, "workers": 1}))
    assert again == rep
    assert isinstance(trends_hold(rep, c), tuple)
    lines = (tmp_path / "scores" / "appendix_c.csv").read_text().splitlines()
    assert lines[0] == "delta0,delta1,RMSPE_dense,CRPS_dense,RMSPE_gap,CRPS_gap" and len(lines) == 6


def test_small_appendix_b_run(tmp_path):
    r = run_appendix_b(AppendixBConfig(n_iterations=400, keep_last=200, thin=2), tmp_path)
    assert r["sampler1_acf"].shape == (11,) and r["sampler1_acf"][0] == pytest.approx(1.0)
    assert r["traces"]["sampler2"].size == 100
    assert (tmp_path / "diagnostics" / "appendix_b_acf.csv").read_text().startswith("x,y,series")


def test_demo_deterministic_and_saved_model(tmp_path):
    c = DemoConfig(seed=3, **SMALL)
    a = fit_2d_demo(c, tmp_path)
    b = fit_2d_demo(c)
    for k in a["chain"].samples:
        np.testing.assert_array_equal(a["chain"].samples[k], b["chain"].samples[k])
    assert a["scores"] == b["scores"]
    assert set(a["scores"]) >= {"all", "box"}
    prob = a["problem"]
    pred = predict_from_saved(tmp_path, prob.x_val)
    np.testing.assert_allclose(pred.mean, a["prediction"].mean, atol=1e-10)
    np.testing.assert_allclose(pred.std, a["prediction"].std, atol=1e-10)
    assert (tmp_path / "scores" / "demo2d.csv").exists()
