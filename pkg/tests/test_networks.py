import numpy as np
import numpy.testing as npt
import pytest

from drg import networks as nets
from drg.autodiff import ParamStore, Tensor, backward, no_grad, reset_tape, tape
from drg.errors import ConfigurationError

from .oracles import gradcheck, gru_step_scalar

RNG = np.random.default_rng(7)

SPEC = nets.EncoderSpec(in_shape=(3, 16, 16), channels=(4, 8), kernel=3,
                        stride=2, embed_dim=10)


def build_encoder(dtype=np.float32, zero=False):
    store = ParamStore()
    nets.init_encoder(store, "encoder.", SPEC, np.random.default_rng(3), dtype=dtype)
    if zero:
        for t in store.entries.values():
            t.data[...] = 0.0
    return store


def test_encoder_zero_params_give_zero_embedding():
    store = build_encoder(zero=True)
    obs = Tensor(np.zeros((2, 3, 16, 16), dtype=np.float32))
    z = nets.encoder_forward(store.view("encoder."), obs, SPEC)
    assert z.shape == (2, 10)
    npt.assert_array_equal(z.data, 0.0)


def test_encoder_identical_images_identical_rows():
    store = build_encoder()
    img = RNG.random((3, 16, 16)).astype(np.float32)
    obs = Tensor(np.stack([img, img, img]))
    z = nets.encoder_forward(store.view("encoder."), obs, SPEC)
    npt.assert_array_equal(z.data[0], z.data[1])
    npt.assert_array_equal(z.data[0], z.data[2])


def test_encoder_wrong_channels_is_config_error():
    store = build_encoder()
    with pytest.raises(ConfigurationError):
        nets.encoder_forward(store.view("encoder."), Tensor(np.zeros((1, 1, 16, 16))), SPEC)


def test_encoder_gradient_check():
    spec = nets.EncoderSpec(in_shape=(2, 8, 8), channels=(3,), kernel=3, stride=2, embed_dim=4)
    store = ParamStore()
    nets.init_encoder(store, "e.", spec, np.random.default_rng(5), dtype=np.float64)
    obs = RNG.random((2, 2, 8, 8))
    names = list(store.entries)
    arrays = [store.entries[n].data.copy() for n in names]

    def build(ts):
        params = {n[2:]: t for n, t in zip(names, ts)}
        import drg.autodiff as ad
        z = nets.encoder_forward(params, Tensor(np.asarray(obs, dtype=np.float64)), spec)
        return ad.sum_(ad.tanh(z))

    worst = gradcheck(build, arrays, check_subset=6, rng=np.random.default_rng(0))
    assert worst < 1e-4


def test_param_count_is_pure_function_of_config():
    a = build_encoder()
    b = build_encoder()
    assert a.num_params() == b.num_params()
    shapes_a = {n: t.shape for n, t in a.entries.items()}
    shapes_b = {n: t.shape for n, t in b.entries.items()}
    assert shapes_a == shapes_b


def test_target_encoder_forward_records_no_nodes():
    store = build_encoder()
    store.init_ema(prefix="encoder.")
    obs = Tensor(RNG.random((2, 3, 16, 16)).astype(np.float32))
    before = len(tape().nodes)
    with no_grad():
        z = nets.encoder_forward(store.shadow_view("encoder."), obs, SPEC)
    assert len(tape().nodes) == before
    assert z.node is None


# --- GRU ----------------------------------------------------------------------

def make_gru(input_dim=3, hidden_dim=4, zero=False, dtype=np.float64, seed=11):
    store = ParamStore()
    nets.init_gru(store, "g.", input_dim, hidden_dim, np.random.default_rng(seed), dtype=dtype)
    if zero:
        for t in store.entries.values():
            t.data[...] = 0.0
    return store


def test_gru_zero_params_halve_hidden():
    store = make_gru(zero=True)
    v = RNG.standard_normal((2, 4))
    h = nets.gru_step(store.view("g."), Tensor(v, dtype=np.float64),
                      Tensor(np.zeros((2, 3)), dtype=np.float64))
    npt.assert_allclose(h.data, 0.5 * v, rtol=1e-12)


def test_gru_zero_hidden_zero_candidate_weights():
    store = make_gru()
    for name in ("g.wc", "g.uc", "g.bc"):
        store.entries[name].data[...] = 0.0
    h = nets.gru_step(store.view("g."), Tensor(np.zeros((2, 4)), dtype=np.float64),
                      Tensor(RNG.standard_normal((2, 3)), dtype=np.float64))
    npt.assert_allclose(h.data, 0.0, atol=1e-12)


def test_gru_matches_scalar_loop_oracle():
    store = make_gru()
    p = {k: v.data for k, v in store.view("g.").items()}
    h_prev = RNG.standard_normal(4)
    x = RNG.standard_normal(3)
    expected = gru_step_scalar(h_prev, x, p["wz"], p["uz"], p["bz"],
                               p["wr"], p["ur"], p["br"], p["wc"], p["uc"], p["bc"])
    got = nets.gru_step(store.view("g."), Tensor(h_prev[None], dtype=np.float64),
                        Tensor(x[None], dtype=np.float64))
    npt.assert_allclose(got.data[0], expected, atol=1e-6)


def test_gru_dim_mismatch():
    store = make_gru()
    with pytest.raises(ConfigurationError):
        nets.gru_step(store.view("g."), Tensor(np.zeros((2, 5)), dtype=np.float64),
                      Tensor(np.zeros((2, 3)), dtype=np.float64))


# --- bilinear head ---------------------------------------------------------------

def test_bilinear_identity_orthonormal():
    q = np.eye(3, dtype=np.float64)
    scores = nets.bilinear_scores(Tensor(q, dtype=np.float64), Tensor(q, dtype=np.float64),
                                  Tensor(np.eye(3), dtype=np.float64))
    npt.assert_allclose(scores.data, np.eye(3), atol=1e-12)


def test_bilinear_single_pair():
    q = RNG.standard_normal((1, 3))
    k = RNG.standard_normal((1, 5))
    w = RNG.standard_normal((3, 5))
    scores = nets.bilinear_scores(Tensor(q, dtype=np.float64), Tensor(k, dtype=np.float64),
                                  Tensor(w, dtype=np.float64))
    assert scores.shape == (1, 1)
    npt.assert_allclose(scores.data[0, 0], q[0] @ w @ k[0], rtol=1e-12)


def test_bilinear_matches_triple_loop():
    q = RNG.standard_normal((4, 3))
    k = RNG.standard_normal((4, 5))
    w = RNG.standard_normal((3, 5))
    scores = nets.bilinear_scores(Tensor(q, dtype=np.float64), Tensor(k, dtype=np.float64),
                                  Tensor(w, dtype=np.float64))
    expected = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            expected[i, j] = sum(q[i, a] * w[a, b] * k[j, b]
                                 for a in range(3) for b in range(5))
    npt.assert_allclose(scores.data, expected, atol=1e-6)


# --- RSID head --------------------------------------------------------------------

def make_rsid(state_dim=6, action_dim=2, zero=False):
    store = ParamStore()
    nets.init_rsid(store, "rsid.", state_dim, 8, action_dim,
                   np.random.default_rng(13), dtype=np.float64)
    if zero:
        for t in store.entries.values():
            t.data[...] = 0.0
    return store


def test_rsid_zero_params_zero_output():
    store = make_rsid(zero=True)
    out = nets.rsid_forward(store.view("rsid."), Tensor(RNG.random((3, 6)), dtype=np.float64),
                            Tensor(RNG.random((3, 6)), dtype=np.float64))
    npt.assert_array_equal(out.data, 0.0)
    assert out.shape == (3, 2)


def test_rsid_deterministic_on_equal_states():
    store = make_rsid()
    x = Tensor(RNG.random((2, 6)), dtype=np.float64)
    a1 = nets.rsid_forward(store.view("rsid."), x, x)
    a2 = nets.rsid_forward(store.view("rsid."), x, x)
    npt.assert_array_equal(a1.data, a2.data)


def test_rsid_state_dim_mismatch():
    store = make_rsid()
    with pytest.raises(ConfigurationError):
        nets.rsid_forward(store.view("rsid."), Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 5))))


def test_rsid_gradient_check():
    store = make_rsid()
    names = list(store.entries)
    arrays = [store.entries[n].data.copy() for n in names]
    x_t = RNG.standard_normal((2, 6))
    x_n = RNG.standard_normal((2, 6))

    def build(ts):
        import drg.autodiff as ad
        params = {n[5:]: t for n, t in zip(names, ts)}
        out = nets.rsid_forward(params, Tensor(x_t, dtype=np.float64),
                                Tensor(x_n, dtype=np.float64))
        return ad.sum_(ad.tanh(out))

    worst = gradcheck(build, arrays, check_subset=5, rng=np.random.default_rng(1))
    assert worst < 1e-4


# --- decoder ----------------------------------------------------------------------

def test_decoder_output_shape_and_gradcheck():
    spec = nets.DecoderSpec(out_shape=(3, 16, 16), channels=(6, 4), state_dim=5)
    store = ParamStore()
    nets.init_decoder(store, "dec.", spec, np.random.default_rng(17), dtype=np.float64)
    state = Tensor(RNG.standard_normal((2, 5)), dtype=np.float64)
    out = nets.decoder_forward(store.view("dec."), state, spec)
    assert out.shape == (2, 3, 16, 16)
    assert np.all(np.isfinite(out.data))

    names = list(store.entries)
    arrays = [store.entries[n].data.copy() for n in names]
    sd = state.data.copy()

    def build(ts):
        import drg.autodiff as ad
        params = {n[4:]: t for n, t in zip(names, ts)}
        img = nets.decoder_forward(params, Tensor(sd, dtype=np.float64), spec)
        return ad.mean(ad.mul(img, img))

    worst = gradcheck(build, arrays, check_subset=4, rng=np.random.default_rng(2))
    assert worst < 1e-4


def test_networks_finite_after_init():
    store = build_encoder()
    obs = Tensor(RNG.random((4, 3, 16, 16)).astype(np.float32))
    z = nets.encoder_forward(store.view("encoder."), obs, SPEC)
    assert np.all(np.isfinite(z.data))
