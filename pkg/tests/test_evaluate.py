import csv
import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latrom import autodiff as ad
from latrom import evaluate as ev
from latrom.datagen import generate_dataset, normalize_coords, normalize_fields
from latrom.decoder import SirenConfig, decode, init_decoder
from latrom.errors import ContractError, DimensionError
from latrom.pnode import PnodeConfig, init_ar_baseline, init_pnode
from latrom.training import Forecaster, LatentFitConfig, fit_latent


@pytest.fixture(scope="module")
def setup():
    ds = generate_dataset("gyre", n_points=40, n_traj=8, n_times=6, seed=3)
    dec = init_decoder(SirenConfig(in_dim=2, out_dim=2, width=16, depth=2, omega0=10.0, latent_dim=3), 0)
    rng = np.random.default_rng(0)
    for path, t in dec.store.items():
        if path.endswith("/mod"):
            t.data[...] = 0.2 * rng.standard_normal(t.shape)
    pcfg = PnodeConfig(latent_dim=3, param_dim=3, embed_dim=2, embed_width=4, dyn_width=8, substeps=2)
    f = Forecaster(dec, init_pnode(pcfg, 1), ds.stats, LatentFitConfig(steps=20), init_ar_baseline(pcfg, 2))
    return ds, f, ev.evaluate(f, ds, "test")


def test_mse_examples():
    assert ev.metric_mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert ev.metric_mse([1.0, 2.0], [0.0, 2.0]) == 0.5
    with pytest.raises(DimensionError):
        ev.metric_mse([1.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)), arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_mse_matches_autodiff_bitwise(a, b):
    assert ev.metric_mse(a, b) == ad.mse(a, b).item()


def test_rel_l2_examples():
    t = np.array([3.0, -1.0, 2.0])
    assert ev.metric_rel_l2(t, t) == 0.0
    assert ev.metric_rel_l2(2 * t, t) == 1.0
    assert ev.metric_rel_l2([1.0, 0.0], [0.0, 1.0]) == pytest.approx(np.sqrt(2), abs=1e-15)
    with pytest.raises(ContractError):
        ev.metric_rel_l2([1.0, 1.0], [0.0, 1e-13])
    with pytest.raises(DimensionError):
        ev.metric_rel_l2([1.0], [1.0, 2.0])


@pytest.mark.parametrize("c", [0.0, 0.5, 2.0])
@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-10, 10)).filter(lambda t: np.linalg.norm(t) > 1e-3))
def test_rel_l2_of_scaled_truth(c, truth):
    assert ev.metric_rel_l2(c * truth, truth) == pytest.approx(abs(c - 1), abs=1e-12)


def test_curve_has_horizon_plus_one_rows_per_model(setup):
    ds, _, rep = setup
    assert rep.horizon == ds.n_times - 1
    for model in ("pnode", "ar_baseline", "persistence"):
        for name in ds.field_names:
            assert rep.curve(model, name).shape == (ds.n_times,)


def test_curve_mean_equals_aggregate(setup):
    ds, _, rep = setup
    for model, per_field in rep.metrics.items():
        for name, m in per_field.items():
            assert np.mean(rep.curve(model, name)[1:]) == pytest.approx(m["mse"], abs=1e-10, rel=1e-10)
            assert m["rel_l2"] >= 0


def test_step_zero_is_auto_decoding_error(setup):
    ds, f, rep = setup
    errs = []
    for tid in ds.split("test"):
        xn = normalize_coords(ds.coords, ds.stats.bounds)
        alpha = fit_latent(f.decoder, xn, normalize_fields(ds.fields[tid, 0], ds.stats), f.fit_config)
        recon = decode(f.decoder, alpha, xn).data * ds.stats.field_std + ds.stats.field_mean
        errs.append(np.mean((recon[:, 0] - ds.fields[tid, 0, :, 0]) ** 2))
    for model in ("pnode", "ar_baseline", "persistence"):
        assert rep.curve(model, "u")[0] == pytest.approx(np.mean(errs), rel=1e-12)


def test_report_is_reproducible(setup):
    ds, f, rep = setup
    again = ev.evaluate(f, ds, "test")
    assert again.metrics == rep.metrics
    assert again.curve_csv() == rep.curve_csv()


def test_curve_csv_format(setup):
    ds, _, rep = setup
    rows = list(csv.reader(io.StringIO(rep.curve_csv())))
    assert rows[0] == ["step", "model", "field", "mse", "rel_l2"]
    assert len(rows) - 1 == 3 * ds.n_fields * ds.n_times
    d = rep.to_dict()
    assert d["units"] == "physical" and "mean over trajectories" in d["aggregation"]


def test_empty_split_is_rejected(setup):
    ds, f, _ = setup
    with pytest.raises(ContractError):
        ev.evaluate(f, ds, "nonexistent")


def fake_clock(monkeypatch, durations):
    stamps = itertools.chain.from_iterable((0.0, d) for d in durations)
    monkeypatch.setattr(ev.time, "perf_counter", lambda: next(stamps))


def test_single_repeat_is_that_measurement(monkeypatch):
    fake_clock(monkeypatch, [0.25])
    assert ev.median_seconds(lambda: None, 1, warmup=False) == 0.25


def test_median_ignores_sample_order(monkeypatch):
    samples = [0.5, 0.1, 0.9, 0.3]
    results = set()
    for perm in itertools.permutations(samples):
        fake_clock(monkeypatch, perm)
        results.add(ev.median_seconds(lambda: None, 4, warmup=False))
    assert results == {0.4}
    with pytest.raises(ContractError):
        ev.median_seconds(lambda: None, 0)


def test_warmup_is_excluded():
    calls = []
    ev.median_seconds(lambda: calls.append(1), 3)
    assert len(calls) == 4
