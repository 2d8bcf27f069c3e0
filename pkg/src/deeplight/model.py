"""The slice-sequence decoder: axial slicing, an 8-layer convolutional
feature extractor, a bi-directional LSTM over the slice sequence and a
softmax output layer.

A volume (X, Y, Z) is cut into Z axial images.  Each image is reduced to a
flat feature vector by the conv stack; two independent LSTM units read the
feature sequence bottom-to-top and top-to-bottom; their final outputs are
concatenated and projected onto one logit per cognitive state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Var
from .errors import ConfigurationError, InputError

STATE_NAMES = ("body", "face", "place", "tool")

# (out_channels, stride) for the eight conv layers, all 3x3 kernels.
# Odd layers (1-based) halve the extent, even layers keep it.
CONV_CHANNELS = (16, 16, 16, 16, 32, 32, 32, 32)
CONV_STRIDES = (2, 1, 2, 1, 2, 1, 2, 1)
KERNEL = 3


@dataclass(frozen=True)
class DecoderSpec:
    """Static architecture description used to build and check parameters."""

    in_plane: tuple  # (X, Y) extent of one axial slice
    n_states: int = 4
    hidden: int = 40
    channels: tuple = CONV_CHANNELS
    strides: tuple = CONV_STRIDES

    @property
    def feature_dim(self):
        return feature_dim(self.in_plane[0], self.in_plane[1], self.channels, self.strides)


def _ceil_chain(n, strides):
    for s in strides:
        n = ad.conv_output_extent(n, s)
    return n


def feature_dim(x_extent, y_extent, channels=CONV_CHANNELS, strides=CONV_STRIDES):
    """Flattened size of the final conv activations for an (X, Y) slice."""
    if x_extent < KERNEL or y_extent < KERNEL:
        raise InputError(
            f"slice extent {x_extent}x{y_extent} is smaller than the {KERNEL}x{KERNEL} kernels")
    return _ceil_chain(x_extent, strides) * _ceil_chain(y_extent, strides) * channels[-1]


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------

def slice_volume(volume):
    """Split an (X, Y, Z) grid into its Z axial planes, ascending index."""
    volume = np.asarray(volume)
    if volume.ndim != 3 or volume.shape[2] < 1:
        raise InputError(f"expected a non-empty (X, Y, Z) volume, got shape {volume.shape}")
    return [volume[:, :, k] for k in range(volume.shape[2])]


def restack(slices):
    """Inverse of slice_volume."""
    if not slices:
        raise InputError("cannot restack an empty slice sequence")
    return np.stack(slices, axis=2)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_params(spec, seed, dtype=np.float64):
    """Normal-initialized weights with fan-based (Glorot) variance, zero biases.

    Deterministic per seed: same seed gives bit-identical tensors.
    """
    rng = np.random.default_rng(seed)
    params = ParamSet()
    cin = 1
    for i, (cout, _) in enumerate(zip(spec.channels, spec.strides), start=1):
        fan_in = KERNEL * KERNEL * cin
        fan_out = KERNEL * KERNEL * cout
        std = np.sqrt(2.0 / (fan_in + fan_out))
        params[f"conv{i}/kernels"] = rng.normal(0.0, std, (KERNEL, KERNEL, cin, cout)).astype(dtype)
        params[f"conv{i}/bias"] = np.zeros(cout, dtype=dtype)
        cin = cout
    f = spec.feature_dim
    h = spec.hidden
    gate_std = np.sqrt(2.0 / ((h + f) + h))
    for unit in ("lstm_fwd", "lstm_bwd"):
        for gate in ("f", "i", "c", "o"):
            params[f"{unit}/W_{gate}"] = rng.normal(0.0, gate_std, (h + f, h)).astype(dtype)
            params[f"{unit}/b_{gate}"] = np.zeros(h, dtype=dtype)
    out_std = np.sqrt(2.0 / (2 * h + spec.n_states))
    params["out/W"] = rng.normal(0.0, out_std, (2 * h, spec.n_states)).astype(dtype)
    params["out/b"] = np.zeros(spec.n_states, dtype=dtype)
    return params


def glorot_std(shape, kind):
    """Target init standard deviation, exposed for the sampling checks."""
    if kind == "conv":
        kh, kw, cin, cout = shape
        return np.sqrt(2.0 / (kh * kw * cin + kh * kw * cout))
    rows, cols = shape
    return np.sqrt(2.0 / (rows + cols))


def spec_from_params(params):
    """Recover the architecture from a parameter set's shapes."""
    channels, strides = [], []
    i = 1
    while f"conv{i}/kernels" in params:
        channels.append(params[f"conv{i}/kernels"].shape[3])
        strides.append(CONV_STRIDES[(i - 1) % len(CONV_STRIDES)])
        i += 1
    if not channels:
        raise ConfigurationError("parameter set has no conv layers")
    h = params["lstm_fwd/b_f"].shape[0]
    f = params["lstm_fwd/W_f"].shape[0] - h
    n_states = params["out/b"].shape[0]
    # in_plane is not stored with the tensors; callers check it against data.
    return DecoderSpec(in_plane=(0, 0), n_states=n_states, hidden=h,
                       channels=tuple(channels), strides=tuple(strides)), f


def check_params(spec, params):
    needed = init_params(spec, seed=0)
    for name, ref in needed.items():
        if name not in params:
            raise ConfigurationError(f"missing parameter tensor {name!r}")
        if params[name].shape != ref.shape:
            raise ConfigurationError(
                f"parameter {name!r} has shape {params[name].shape}, expected {ref.shape}")


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def conv_stack(x, pvars, spec, masks=None):
    """Run the conv feature extractor on (B, H, W, 1) images.

    Returns the final activation Var and the per-layer cache used by the
    relevance decomposition: a list of (input Var, pre-activation Var).
    """
    cache = []
    h = x
    for i, stride in enumerate(spec.strides, start=1):
        z = ad.conv2d(h, pvars[f"conv{i}/kernels"], pvars[f"conv{i}/bias"], stride)
        cache.append((h, z))
        h = ad.relu(z)
        if masks is not None and masks.get(f"conv{i}") is not None:
            h = ad.mul(h, masks[f"conv{i}"])
    return h, cache


def lstm_unit(feats, order, pvars, unit, hidden):
    """Iterate one LSTM unit over the slice feature sequence.

    feats is a (B, Z, F) Var; `order` lists the slice indices in the order the
    unit consumes them.  Returns the final output Var and the per-step cache.
    """
    b = feats.value.shape[0]
    dtype = feats.value.dtype
    h = Var(np.zeros((b, hidden), dtype=dtype))
    c = Var(np.zeros((b, hidden), dtype=dtype))
    steps = []
    for s in order:
        a = ad.index_axis1(feats, s)
        xcat = ad.concat([h, a], axis=1)
        f = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_f"]), pvars[f"{unit}/b_f"]))
        i = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_i"]), pvars[f"{unit}/b_i"]))
        cc = ad.tanh(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_c"]), pvars[f"{unit}/b_c"]))
        o = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_o"]), pvars[f"{unit}/b_o"]))
        c_new = ad.add(ad.mul(f, c), ad.mul(i, cc))
        h_new = ad.mul(o, ad.tanh(c_new))
        steps.append({"slice": s, "xcat": xcat, "f": f, "i": i, "cc": cc, "o": o,
                      "c_prev": c, "c": c_new, "h": h_new})
        h, c = h_new, c_new
    return h, steps


def lstm_step(a, h_prev, c_prev, params, unit="lstm_fwd"):
    """Single gate update on plain vectors; used directly in tests/oracles."""
    with ad.no_grad():
        feats = Var(np.asarray(a)[None, None, :])
        pvars = {k: Var(v) for k, v in params.items()}
        hidden = params[f"{unit}/b_f"].shape[0]
        b = feats.value.shape[0]
        h = Var(np.broadcast_to(np.asarray(h_prev, dtype=feats.value.dtype), (b, hidden)).copy())
        c = Var(np.broadcast_to(np.asarray(c_prev, dtype=feats.value.dtype), (b, hidden)).copy())
        a_var = ad.index_axis1(feats, 0)
        xcat = ad.concat([h, a_var], axis=1)
        f = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_f"]), pvars[f"{unit}/b_f"]))
        i = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_i"]), pvars[f"{unit}/b_i"]))
        cc = ad.tanh(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_c"]), pvars[f"{unit}/b_c"]))
        o = ad.logistic(ad.add(ad.matmul(xcat, pvars[f"{unit}/W_o"]), pvars[f"{unit}/b_o"]))
        c_new = f.value * c.value + i.value * cc.value
        h_new = o.value * np.tanh(c_new)
    return h_new[0], c_new[0]


def forward_batch(pvars, volumes, spec, masks=None):
    """Full decoder forward on a (B, X, Y, Z) batch of volumes.

    `pvars` maps parameter names to Vars (trainable leaves during training,
    bare wrappers at inference).  Returns (logits Var, cache).
    """
    volumes = np.asarray(volumes)
    if volumes.ndim != 4:
        raise InputError(f"expected (B, X, Y, Z) volumes, got shape {volumes.shape}")
    b, x_ext, y_ext, z_ext = volumes.shape
    if z_ext < 1:
        raise InputError("cannot decode a volume with no axial slices")
    fdim = feature_dim(x_ext, y_ext, spec.channels, spec.strides)
    if pvars["lstm_fwd/W_f"].value.shape[0] != spec.hidden + fdim:
        raise ConfigurationError(
            f"parameters expect {pvars['lstm_fwd/W_f'].value.shape[0] - spec.hidden}-dim slice "
            f"features but a {x_ext}x{y_ext} plane yields {fdim}")
    # (B, X, Y, Z) -> (B*Z, X, Y, 1): the conv stack sees every slice at once.
    images = np.ascontiguousarray(np.moveaxis(volumes, 3, 1)).reshape(b * z_ext, x_ext, y_ext, 1)
    act, conv_cache = conv_stack(Var(images), pvars, spec, masks)
    feats = ad.reshape(act, (b, z_ext, fdim))
    h_fwd, steps_fwd = lstm_unit(feats, range(z_ext), pvars, "lstm_fwd", spec.hidden)
    h_bwd, steps_bwd = lstm_unit(feats, range(z_ext - 1, -1, -1), pvars, "lstm_bwd", spec.hidden)
    both = ad.concat([h_fwd, h_bwd], axis=1)
    if masks is not None and masks.get("lstm_out") is not None:
        both = ad.mul(both, masks["lstm_out"])
    logits = ad.add(ad.matmul(both, pvars["out/W"]), pvars["out/b"])
    cache = {"images": images, "conv": conv_cache, "feats": feats,
             "steps_fwd": steps_fwd, "steps_bwd": steps_bwd,
             "concat": both, "logits": logits,
             "batch": b, "z_extent": z_ext, "plane": (x_ext, y_ext)}
    return logits, cache


def feature_extract(slice2d, params, spec=None):
    """Flattened final conv activations for a single (X, Y) slice."""
    slice2d = np.asarray(slice2d)
    if slice2d.ndim != 2:
        raise InputError(f"expected a 2-d slice, got shape {slice2d.shape}")
    if spec is None:
        spec, _ = spec_from_params(params)
    fdim = feature_dim(slice2d.shape[0], slice2d.shape[1], spec.channels, spec.strides)
    with ad.no_grad():
        pvars = {k: Var(v) for k, v in params.items()}
        act, _ = conv_stack(Var(slice2d[None, :, :, None]), pvars, spec)
    return act.value.reshape(fdim)


def decode_batch(params, volumes, spec=None):
    """Posterior probabilities for a batch; (B, K) rows summing to one."""
    if spec is None:
        spec, _ = spec_from_params(params)
    with ad.no_grad():
        pvars = {k: Var(v) for k, v in params.items()}
        logits, cache = forward_batch(pvars, volumes, spec)
        post = ad.softmax(logits)
    return post.value, cache


def bilstm_decode(slices, params, spec=None):
    """Decode one slice sequence into a posterior over the states."""
    volume = restack(list(slices))
    post, _ = decode_batch(params, volume[None], spec)
    return post[0]


# ---------------------------------------------------------------------------
# checkpoint format: magic "DLP1", then per-tensor records of
# (u32 name length, name bytes, u32 rank, u32 extents..., f32 payload)
# ---------------------------------------------------------------------------

MAGIC = b"DLP1"


def save_params(params, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, tensor in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_params(path, dtype=np.float32):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InputError(f"{path}: not a DLP1 checkpoint")
        params = ParamSet()
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if payload.size != count:
                raise InputError(f"{path}: truncated record for tensor {name!r}")
            params[name] = payload.reshape(shape).astype(dtype)
    return params


def save_params_sidecar(path, spec, extra=None):
    """JSON sidecar describing the checkpoint's expected input geometry."""
    meta = {"in_plane": list(spec.in_plane), "n_states": spec.n_states,
            "hidden": spec.hidden, "channels": list(spec.channels),
            "strides": list(spec.strides)}
    if extra:
        meta.update(extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
