import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latrom.datagen import (
    DIFFUSION_BOUNDS,
    Dataset,
    DiffusionIC,
    Stats,
    denormalize,
    distance_floor,
    eval_diffusion_truth,
    eval_gyre_truth,
    gen_mesh,
    generate_dataset,
    gyre_stream,
    normalize,
    normalize_fields,
)
from latrom.errors import ContractError, FormatError


def single_mode_ic(amp=1.0):
    a = np.zeros((3, 3))
    a[0, 0] = amp
    return DiffusionIC(a, np.zeros((3, 3)), np.zeros((3, 3)))


def ic_by_hand(ic, x, y):
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            out += ic.amp[i, j] * np.sin(2 * np.pi * (i + 1) * x + ic.phase_x[i, j]) * np.sin(
                2 * np.pi * (j + 1) * y + ic.phase_y[i, j]
            )
    return out


# ---------------------------------------------------------------- mesh


def test_single_point_mesh():
    m = gen_mesh(1, DIFFUSION_BOUNDS, 0)
    assert m.points.shape == (1, 2)
    assert np.all((m.points >= 0) & (m.points <= 1))


def test_mesh_is_seeded():
    assert gen_mesh(64, DIFFUSION_BOUNDS, 3).points.tobytes() == gen_mesh(64, DIFFUSION_BOUNDS, 3).points.tobytes()
    assert gen_mesh(64, DIFFUSION_BOUNDS, 4).points.tobytes() != gen_mesh(64, DIFFUSION_BOUNDS, 3).points.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**31 - 1))
def test_mesh_distance_floor(n, seed):
    bounds = ((0.0, 2.0), (0.0, 1.0))
    pts = gen_mesh(n, bounds, seed).points
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    d[np.diag_indices(n)] = np.inf
    assert d.min() >= 0.2 * math.sqrt(2.0 / n)
    assert distance_floor(n, bounds) == pytest.approx(0.2 * math.sqrt(2.0 / n))
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] <= 2) & (pts[:, 1] >= 0) & (pts[:, 1] <= 1))


def test_mesh_rejects_bad_requests():
    with pytest.raises(ContractError):
        gen_mesh(0, DIFFUSION_BOUNDS, 0)
    with pytest.raises(ContractError):
        gen_mesh(4, ((0.0, 0.0), (0.0, 1.0)), 0)


# ---------------------------------------------------------------- oracles


def test_diffusion_initial_condition_exact():
    ic = DiffusionIC.from_seed(11)
    x = np.random.default_rng(0).uniform(0, 1, (100, 2))
    u = eval_diffusion_truth({"kappa": 3e-3, "cx": 0.2, "cy": -0.1}, 0.0, x, ic)[:, 0]
    np.testing.assert_array_equal(u, ic_by_hand(ic, x[:, 0], x[:, 1]))


def test_diffusion_strong_decay():
    x = np.random.default_rng(1).uniform(0, 1, (50, 2))
    u = eval_diffusion_truth({"kappa": 1.0, "cx": 0.0, "cy": 0.0}, 1.0, x, single_mode_ic())
    assert np.max(np.abs(u)) < 1e-30


def test_diffusion_single_mode_decay_rate():
    x = np.random.default_rng(2).uniform(0, 1, (50, 2))
    ic = single_mode_ic()
    u0 = eval_diffusion_truth([1e-3, 0, 0], 0.0, x, ic)
    u1 = eval_diffusion_truth([1e-3, 0, 0], 0.7, x, ic)
    np.testing.assert_allclose(u1, u0 * math.exp(-8 * math.pi**2 * 1e-3 * 0.7), rtol=1e-12, atol=1e-15)


def test_pure_advection_is_a_shift():
    ic = DiffusionIC.from_seed(5)
    x = np.random.default_rng(3).uniform(0, 1, (200, 2))
    for t in (0.3, 1.0, 2.7):
        u = eval_diffusion_truth({"kappa": 0.0, "cx": 0.25, "cy": 0.0}, t, x, ic)[:, 0]
        shifted = np.column_stack([np.mod(x[:, 0] - 0.25 * t, 1.0), x[:, 1]])
        u_ref = eval_diffusion_truth({"kappa": 0.0, "cx": 0.25, "cy": 0.0}, 0.0, shifted, ic)[:, 0]
        np.testing.assert_allclose(u, u_ref, rtol=0, atol=1e-12)


def test_gyre_closed_form_without_eccentricity():
    x = np.random.default_rng(4).uniform([0, 0], [2, 1], (100, 2))
    A = 0.13
    for t in (0.0, 1.3, 7.0):
        uv = eval_gyre_truth({"A": A, "eps": 0.0, "omega": 0.9}, t, x)
        np.testing.assert_allclose(uv[:, 0], -np.pi * A * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]), atol=1e-15)
        np.testing.assert_allclose(uv[:, 1], np.pi * A * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), atol=1e-15)


def test_gyre_stream_vanishes_on_boundary():
    s = np.linspace(0, 1, 41)
    edges = np.concatenate(
        [np.column_stack([2 * s, 0 * s]), np.column_stack([2 * s, 0 * s + 1]), np.column_stack([0 * s, s]), np.column_stack([0 * s + 2, s])]
    )
    for t in (0.0, 2.0, 5.5):
        psi = gyre_stream({"A": 0.2, "eps": 0.3, "omega": 1.0}, t, edges)
        assert np.max(np.abs(psi)) < 1e-15


def test_gyre_velocity_matches_stream_derivatives():
    rng = np.random.default_rng(5)
    x = rng.uniform([0.1, 0.1], [1.9, 0.9], (100, 2))
    mu = {"A": 0.1, "eps": 0.25, "omega": 0.6}
    h = 1e-6
    dx, dy = np.array([h, 0.0]), np.array([0.0, h])
    dpsi_dx = (gyre_stream(mu, 3.0, x + dx) - gyre_stream(mu, 3.0, x - dx)) / (2 * h)
    dpsi_dy = (gyre_stream(mu, 3.0, x + dy) - gyre_stream(mu, 3.0, x - dy)) / (2 * h)
    uv = eval_gyre_truth(mu, 3.0, x)
    np.testing.assert_allclose(uv[:, 0], -dpsi_dy, atol=1e-8)
    np.testing.assert_allclose(uv[:, 1], dpsi_dx, atol=1e-8)


def test_gyre_incompressible():
    rng = np.random.default_rng(6)
    pts = rng.uniform([0, 0], [2, 1], (1000, 2))
    times = rng.uniform(0, 10, 1000)
    mu = {"A": 0.2, "eps": 0.3, "omega": math.pi / 2}
    h = 1e-5
    worst = 0.0
    for p, t in zip(pts, times):
        probe = np.array([p + [h, 0], p - [h, 0], p + [0, h], p - [0, h]])
        uv = eval_gyre_truth(mu, t, probe)
        div = (uv[0, 0] - uv[1, 0]) / (2 * h) + (uv[2, 1] - uv[3, 1]) / (2 * h)
        worst = max(worst, abs(div))
    assert worst < 1e-6


def test_gyre_rejects_eccentricity_out_of_range():
    with pytest.raises(ContractError):
        eval_gyre_truth({"A": 0.1, "eps": 0.6, "omega": 1.0}, 0.0, np.zeros((1, 2)))


def test_oracle_rejects_negative_time():
    ds = generate_dataset("diffusion", n_points=8, n_traj=1, n_times=2, seed=0, splits=(1, 0, 0))
    with pytest.raises(ContractError):
        ds.oracle()(ds.mus[0], -0.1, ds.coords)


# ---------------------------------------------------------------- datasets


@pytest.mark.parametrize("generator,F", [("diffusion", 1), ("gyre", 2)])
def test_dataset_shape(generator, F):
    ds = generate_dataset(generator, n_points=20, n_traj=1, n_times=2, seed=0, splits=(1, 0, 0))
    assert ds.fields.shape == (1, 2, 20, F)
    assert ds.times.tolist() == [0.0, 1.0]


def test_same_seed_gives_identical_files(tmp_path):
    a = generate_dataset("gyre", n_points=40, n_traj=8, n_times=5, seed=9)
    b = generate_dataset("gyre", n_points=40, n_traj=8, n_times=5, seed=9)
    assert a.save(tmp_path / "a") == b.save(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


@pytest.mark.parametrize("generator", ["diffusion", "gyre"])
def test_stored_values_match_oracle(tmp_path, generator):
    ds = generate_dataset(generator, n_points=64, n_traj=8, n_times=6, seed=1)
    ds.save(tmp_path)
    back = Dataset.load(tmp_path)
    oracle = back.oracle()
    for i in range(back.n_traj):
        for j, t in enumerate(back.times):
            np.testing.assert_allclose(back.fields[i, j], oracle(back.mus[i], t, back.coords), rtol=0, atol=1e-12)


def test_mu_within_ranges_and_splits():
    ds = generate_dataset("diffusion", n_points=16, n_traj=32, n_times=2, seed=2)
    lo = np.array([5e-4, -0.3, -0.3])
    hi = np.array([5e-3, 0.3, 0.3])
    assert np.all((ds.mus >= lo) & (ds.mus <= hi))
    assert [len(ds.split(s)) for s in ("train", "val", "test")] == [24, 4, 4]
    with pytest.raises(ContractError):
        ds.split("bogus")


def test_roundtrip_is_bit_exact(tmp_path):
    ds = generate_dataset("gyre", n_points=30, n_traj=8, n_times=4, seed=3)
    digest = ds.save(tmp_path)
    back = Dataset.load(tmp_path)
    assert back.content_hash() == digest
    for name in ("coords", "times", "mus", "fields"):
        assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
    assert back.splits == ds.splits
    assert back.stats.field_std.tobytes() == ds.stats.field_std.tobytes()


def test_reader_validates_blob_lengths(tmp_path):
    ds = generate_dataset("diffusion", n_points=30, n_traj=8, n_times=4, seed=3)
    ds.save(tmp_path)
    blob = tmp_path / "fields_0003.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(FormatError):
        Dataset.load(tmp_path)


def test_reader_detects_tampering(tmp_path):
    ds = generate_dataset("diffusion", n_points=30, n_traj=8, n_times=4, seed=3)
    ds.save(tmp_path)
    blob = tmp_path / "coords.bin"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 1
    blob.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        Dataset.load(tmp_path)


# ---------------------------------------------------------------- normalization


def test_constant_field_cannot_be_normalized():
    stats = Stats(np.array([1.0]), np.array([0.0]), np.zeros(3), np.ones(3), DIFFUSION_BOUNDS)
    with pytest.raises(ContractError):
        normalize_fields(np.ones((4, 1)), stats)


def test_normalization_roundtrip():
    ds = generate_dataset("gyre", n_points=50, n_traj=8, n_times=5, seed=4)
    nd = normalize(ds)
    np.testing.assert_allclose(denormalize(nd.fields, ds.stats), ds.fields, rtol=0, atol=1e-12)


@pytest.mark.parametrize("generator", ["diffusion", "gyre"])
def test_normalized_train_moments(generator):
    ds = generate_dataset(generator, n_points=50, n_traj=16, n_times=5, seed=5)
    nd = normalize(ds)
    block = nd.fields[ds.split("train")].reshape(-1, ds.n_fields)
    np.testing.assert_allclose(block.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(block.std(axis=0), 1.0, atol=1e-10)
    assert np.all(np.abs(nd.coords) <= 1.0)
    assert np.all(np.abs(nd.mus[ds.split("train")]) <= 1.0 + 1e-15)
    assert nd.times.min() == 0.0 and nd.times.max() == 1.0
