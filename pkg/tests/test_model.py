"""Decoder checks: feature geometry, a literal gate-equation oracle for the
LSTM, direction symmetry, init statistics and the checkpoint format."""

import json

import numpy as np
import pytest

from deeplight import autodiff as ad
from deeplight import model
from deeplight.autodiff import Var
from deeplight.errors import ConfigurationError, InputError

SMALL = model.DecoderSpec(in_plane=(6, 8), hidden=8, channels=(2, 2), strides=(2, 1))


def test_feature_dim_for_the_reference_planes():
    assert model.feature_dim(74, 92) == 960         # 5 * 6 * 32
    assert model.feature_dim(24, 28) == 128         # 2 * 2 * 32
    assert SMALL.feature_dim == 3 * 4 * 2
    with pytest.raises(InputError):
        model.feature_dim(2, 10)


def test_slice_restack_roundtrip():
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(4, 5, 6))
    slices = model.slice_volume(vol)
    assert len(slices) == 6
    assert np.array_equal(slices[2], vol[:, :, 2])
    assert np.array_equal(model.restack(slices), vol)
    with pytest.raises(InputError):
        model.slice_volume(np.zeros((4, 5)))
    with pytest.raises(InputError):
        model.restack([])


def test_init_params_shapes_determinism_and_zero_biases():
    spec = model.DecoderSpec(in_plane=(24, 28))
    p1 = model.init_params(spec, seed=42)
    p2 = model.init_params(spec, seed=42)
    p3 = model.init_params(spec, seed=43)
    assert p1["conv1/kernels"].shape == (3, 3, 1, 16)
    assert p1["conv8/kernels"].shape == (3, 3, 32, 32)
    assert p1["lstm_fwd/W_f"].shape == (40 + 128, 40)
    assert p1["out/W"].shape == (80, 4)
    for name in p1:
        assert np.array_equal(p1[name], p2[name])
        if name.endswith(("bias", "b_f", "b_i", "b_c", "b_o", "/b")):
            assert np.all(p1[name] == 0)
    assert not np.array_equal(p1["conv1/kernels"], p3["conv1/kernels"])


def test_init_params_std_follows_fan_formula():
    spec = model.DecoderSpec(in_plane=(24, 28))
    params = model.init_params(spec, seed=7)
    w = params["lstm_fwd/W_f"]  # 6720 samples, sampling error ~ 1/sqrt(2n) ~ 1%
    assert abs(w.std() / model.glorot_std(w.shape, "dense") - 1.0) < 0.05
    k = params["conv5/kernels"]
    assert abs(k.std() / model.glorot_std(k.shape, "conv") - 1.0) < 0.05
    assert abs(w.mean()) < 3 * w.std() / np.sqrt(w.size)


def test_lstm_step_matches_literal_gate_equations():
    rng = np.random.default_rng(19)
    params = model.init_params(SMALL, seed=19)
    fdim = SMALL.feature_dim
    h = SMALL.hidden
    a = rng.normal(size=fdim)
    h_prev = rng.normal(size=h)
    c_prev = rng.normal(size=h)

    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))

    xcat = np.concatenate([h_prev, a])
    expect_c = np.zeros(h)
    expect_h = np.zeros(h)
    for j in range(h):
        zf = sum(xcat[k] * params["lstm_fwd/W_f"][k, j] for k in range(h + fdim))
        zi = sum(xcat[k] * params["lstm_fwd/W_i"][k, j] for k in range(h + fdim))
        zc = sum(xcat[k] * params["lstm_fwd/W_c"][k, j] for k in range(h + fdim))
        zo = sum(xcat[k] * params["lstm_fwd/W_o"][k, j] for k in range(h + fdim))
        c_j = sig(zf + params["lstm_fwd/b_f"][j]) * c_prev[j] \
            + sig(zi + params["lstm_fwd/b_i"][j]) * np.tanh(zc + params["lstm_fwd/b_c"][j])
        expect_c[j] = c_j
        expect_h[j] = sig(zo + params["lstm_fwd/b_o"][j]) * np.tanh(c_j)

    got_h, got_c = model.lstm_step(a, h_prev, c_prev, params, unit="lstm_fwd")
    assert np.allclose(got_c, expect_c, atol=1e-12)
    assert np.allclose(got_h, expect_h, atol=1e-12)


def test_decode_matches_stepwise_composition():
    # the batched decoder must equal slicing + feature extraction + explicit
    # per-slice gate updates + the dense readout, composed by hand
    rng = np.random.default_rng(4)
    params = model.init_params(SMALL, seed=4)
    # give the zero biases some life so gates are not all at 0.5
    for name in params:
        if "/b" in name:
            params[name] = rng.normal(0, 0.3, params[name].shape)
    vol = rng.normal(size=(6, 8, 5))

    feats = [model.feature_extract(s, params, SMALL) for s in model.slice_volume(vol)]
    h = c = np.zeros(SMALL.hidden)
    for a in feats:
        h, c = model.lstm_step(a, h, c, params, unit="lstm_fwd")
    h_fwd = h
    h = c = np.zeros(SMALL.hidden)
    for a in reversed(feats):
        h, c = model.lstm_step(a, h, c, params, unit="lstm_bwd")
    h_bwd = h
    logits = np.concatenate([h_fwd, h_bwd]) @ params["out/W"] + params["out/b"]
    expect = np.exp(logits - logits.max())
    expect /= expect.sum()

    got = model.bilstm_decode(model.slice_volume(vol), params, SMALL)
    assert np.allclose(got, expect, atol=1e-10)


def test_posteriors_are_distributions():
    rng = np.random.default_rng(8)
    params = model.init_params(SMALL, seed=8)
    vols = rng.normal(size=(3, 6, 8, 4))
    post, _ = model.decode_batch(params, vols, SMALL)
    assert post.shape == (3, 4)
    assert np.all(post >= 0)
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-9)


def test_palindromic_volume_gives_equal_unit_outputs():
    # when both units share weights and the slice sequence reads the same in
    # either direction, the two final outputs must coincide exactly
    rng = np.random.default_rng(21)
    params = model.init_params(SMALL, seed=21)
    for gate in ("f", "i", "c", "o"):
        params[f"lstm_bwd/W_{gate}"] = params[f"lstm_fwd/W_{gate}"].copy()
        params[f"lstm_bwd/b_{gate}"] = params[f"lstm_fwd/b_{gate}"].copy()
    half = rng.normal(size=(6, 8, 3))
    vol = np.concatenate([half, half[:, :, ::-1]], axis=2)  # palindrome, Z=6
    _, cache = model.decode_batch(params, vol[None], SMALL)
    h_fwd = cache["steps_fwd"][-1]["h"].value
    h_bwd = cache["steps_bwd"][-1]["h"].value
    assert np.array_equal(h_fwd, h_bwd)


def test_whole_net_gradient_matches_directional_difference():
    rng = np.random.default_rng(13)
    params = model.init_params(SMALL, seed=13)
    vols = rng.normal(size=(2, 6, 8, 4))
    labels = np.array([1, 3])

    def loss_of(p):
        pvars = {k: Var(v) for k, v in p.items()}
        logits, _ = model.forward_batch(pvars, vols, SMALL)
        return float(ad.softmax_cross_entropy(logits, labels).value)

    leaves = params.leaves()
    logits, _ = model.forward_batch(leaves, vols, SMALL)
    grads = ad.reverse_gradient(ad.softmax_cross_entropy(logits, labels), leaves)

    direction = {k: rng.normal(size=v.shape) for k, v in params.items()}
    scale = np.sqrt(sum(np.sum(d * d) for d in direction.values()))
    direction = {k: d / scale for k, d in direction.items()}
    step = 1e-5
    hi = loss_of({k: params[k] + step * direction[k] for k in params})
    lo = loss_of({k: params[k] - step * direction[k] for k in params})
    fd = (hi - lo) / (2 * step)
    analytic = sum(np.sum(grads[k] * direction[k]) for k in params)
    assert abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-3) < 1e-6


def test_forward_rejects_mismatched_plane():
    params = model.init_params(SMALL, seed=1)
    with pytest.raises(ConfigurationError):
        model.decode_batch(params, np.zeros((1, 10, 10, 4)), SMALL)
    with pytest.raises(InputError):
        model.decode_batch(params, np.zeros((6, 8, 4)), SMALL)


def test_spec_from_params_recovers_architecture():
    spec = model.DecoderSpec(in_plane=(24, 28))
    params = model.init_params(spec, seed=3)
    got, fdim = model.spec_from_params(params)
    assert got.channels == spec.channels
    assert got.strides == spec.strides
    assert got.hidden == 40 and got.n_states == 4
    assert fdim == 128
    model.check_params(model.DecoderSpec(in_plane=(24, 28)), params)
    bad = params.copy()
    del bad["out/W"]
    with pytest.raises(ConfigurationError):
        model.check_params(spec, bad)


def test_checkpoint_roundtrip_and_sidecar(tmp_path):
    params = model.init_params(SMALL, seed=99, dtype=np.float32)
    path = tmp_path / "weights.dlp"
    model.save_params(params, path)
    model.save_params_sidecar(path, SMALL, extra={"seed": 99})
    loaded = model.load_params(path)
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], params[name])
    meta = json.loads((tmp_path / "weights.dlp.json").read_text())
    assert meta["in_plane"] == [6, 8] and meta["hidden"] == 8 and meta["seed"] == 99
    # header check: corrupting the magic must be rejected
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    bad = tmp_path / "bad.dlp"
    bad.write_bytes(raw)
    with pytest.raises(InputError):
        model.load_params(bad)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    params = model.init_params(SMALL, seed=5, dtype=np.float32)
    a, b = tmp_path / "a.dlp", tmp_path / "b.dlp"
    model.save_params(params, a)
    model.save_params(params, b)
    assert a.read_bytes() == b.read_bytes()
