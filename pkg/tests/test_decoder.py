import numpy as np
import pytest

from latrom import autodiff as ad
from latrom.autodiff import Adam, ParamStore, Tape, Tensor
from latrom.checks import decoder_gradcheck
from latrom.decoder import (
    SirenConfig,
    decode,
    decode_batch,
    init_decoder,
    lipschitz_bound,
    load_decoder,
    save_decoder,
)
from latrom.errors import ContractError, FormatError

CFG = SirenConfig(in_dim=2, out_dim=3, width=16, depth=3, omega0=30.0, latent_dim=4)


def randomized(cfg=CFG, seed=0):
    p = init_decoder(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for _, t in p.store.items():
        t.data += 0.05 * rng.standard_normal(t.shape)
    return p


def test_init_is_deterministic():
    a, b = init_decoder(CFG, 7), init_decoder(CFG, 7)
    assert a.store.checksum() == b.store.checksum()
    assert init_decoder(CFG, 8).store.checksum() != a.store.checksum()


def test_first_layer_init_bound():
    w = init_decoder(CFG, 0).store["layer0/weight"].data
    assert np.all(np.abs(w) < 1.0 / CFG.in_dim)


def test_hidden_layer_init_bound():
    w = init_decoder(CFG, 0).store["layer1/weight"].data
    assert np.all(np.abs(w) <= np.sqrt(6.0 / CFG.width))


def test_zero_modulation_makes_decode_latent_independent():
    p = init_decoder(CFG, 0)
    x = np.random.default_rng(0).uniform(-1, 1, (9, 2))
    a = decode(p, np.ones(4), x).data
    b = decode(p, -3 * np.ones(4), x).data
    np.testing.assert_array_equal(a, b)


def test_zero_trunk_outputs_final_bias():
    p = init_decoder(CFG, 0)
    for path, t in p.store.items():
        if path.startswith("layer"):
            t.data[...] = 0.0
    p.store["out/bias"].data[:] = [0.5, -1.0, 2.0]
    y = decode(p, np.ones(4), np.random.default_rng(1).uniform(-1, 1, (5, 2))).data
    np.testing.assert_array_equal(y, np.tile([0.5, -1.0, 2.0], (5, 1)))


def test_decode_shape():
    assert decode(init_decoder(CFG, 0), np.zeros(4), np.zeros((17, 2))).shape == (17, 3)


def test_decode_batch_single_row_matches_decode_bitwise():
    p = randomized()
    x = np.random.default_rng(2).uniform(-1, 1, (10, 2))
    z = np.random.default_rng(3).standard_normal(4)
    single = decode(p, z, x).data
    batch = decode_batch(p, z[None], x).data[0]
    assert single.tobytes() == batch.tobytes()


def test_decode_batch_permutes_with_latents():
    p = randomized()
    x = np.random.default_rng(2).uniform(-1, 1, (10, 2))
    z = np.random.default_rng(3).standard_normal((4, 4))
    perm = [2, 0, 3, 1]
    out = decode_batch(p, z, x).data
    np.testing.assert_array_equal(decode_batch(p, z[perm], x).data, out[perm])


def test_decode_batch_shape():
    cfg = SirenConfig(in_dim=2, out_dim=2, width=8, depth=2, latent_dim=3)
    assert decode_batch(init_decoder(cfg, 0), np.zeros((4, 3)), np.zeros((10, 2))).shape == (4, 10, 2)


def test_decode_contract_errors():
    p = init_decoder(CFG, 0)
    with pytest.raises(ContractError):
        decode(p, np.zeros(5), np.zeros((3, 2)))
    with pytest.raises(ContractError):
        decode(p, np.zeros(4), np.full((3, 2), 1.6))
    with pytest.raises(ContractError):
        SirenConfig(depth=0)
    with pytest.raises(ContractError):
        SirenConfig(omega0=0.0)


def test_decode_is_pure():
    p = randomized()
    x = np.random.default_rng(4).uniform(-1, 1, (7, 2))
    z = np.ones(4)
    assert decode(p, z, x).data.tobytes() == decode(p, z, x).data.tobytes()


def test_gradients_wrt_latent_and_params():
    rep = decoder_gradcheck(seed=3)
    assert rep.passed, rep.lines()
    assert "latent" in rep.max_rel_err and "layer0/mod" in rep.max_rel_err


def test_continuity_probe():
    p = randomized()
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.9, 0.9, (50, 2))
    d = rng.standard_normal((50, 2))
    d *= 1e-6 / np.linalg.norm(d, axis=1, keepdims=True)
    z = rng.standard_normal(4) * 0.1
    # modulation only shifts biases, so the bound ignores it
    diff = np.linalg.norm(decode(p, z, x + d).data - decode(p, z, x).data, axis=1).max()
    bound = lipschitz_bound(p) * 1e-6
    print(f"continuity: max change {diff:.3e}, bound {bound:.3e}")
    assert diff <= bound


def test_fit_analytic_sine():
    """SIREN reproduces sin(2 pi x) on 256 points in 2000 Adam steps at lr 1e-4."""
    cfg = SirenConfig(in_dim=1, out_dim=1, width=64, depth=3, omega0=30.0, latent_dim=1)
    p = init_decoder(cfg, 0)
    x = np.linspace(-1, 1, 256)[:, None]
    y = np.sin(2 * np.pi * x)
    trunk = ParamStore({k: v for k, v in p.store.items() if not k.endswith("/mod")})
    opt = Adam(trunk, lr=1e-4)
    z = np.zeros(1)
    for _ in range(2000):
        with Tape() as tape:
            loss = ad.mse(decode(p, z, x), y)
        tape.backward(loss)
        opt.step()
        p.store.zero_grad()
    pred = decode(p, z, x).data
    assert np.linalg.norm(pred - y) / np.linalg.norm(y) < 1e-2


def test_checkpoint_roundtrip(tmp_path):
    p = randomized()
    save_decoder(p, tmp_path / "dec")
    q = load_decoder(tmp_path / "dec")
    assert q.config == p.config
    assert q.store.checksum() == p.store.checksum()


def test_checkpoint_shape_validation(tmp_path):
    p = randomized()
    save_decoder(p, tmp_path / "dec")
    bad = ParamStore({k: Tensor(np.zeros(5)) if k == "out/bias" else v for k, v in p.store.items()})
    bad.save(tmp_path / "dec" / "decoder")
    with pytest.raises(FormatError):
        load_decoder(tmp_path / "dec")
