"""Relevance decomposition: distributes a decoder's decision score over the
input voxels by propagating it backward layer by layer.

Rules used here:
  * weighted connections (dense, conv, the candidate path inside the LSTM)
    split relevance proportionally to each input's contribution a_i * w_ij,
    with a small stabilizer on the denominator;
  * multiplicative gate interactions give the gate zero relevance and pass
    everything to the source signal;
  * the additive cell update splits proportionally to its two addends;
  * elementwise monotone activations (relu, tanh) pass relevance unchanged.

Only the pre-softmax score of the sample's true state is decomposed, and only
when the decoder actually picked that state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import Var
from .errors import ConfigurationError, NotDecomposedError


@dataclass(frozen=True)
class LrpConfig:
    """stabilizer is the ε added (sign-matched) to message denominators.

    0 disables stabilization and is only safe on nets where pre-activation
    sums cannot vanish; the exactness checks use it deliberately.
    """

    stabilizer: float = 0.001

    def __post_init__(self):
        if self.stabilizer < 0 or not np.isfinite(self.stabilizer):
            raise ConfigurationError(f"lrp stabilizer must be >= 0, got {self.stabilizer}")


@dataclass
class RelevanceVolume:
    map: np.ndarray          # (X, Y, Z) per-voxel relevance
    state: int               # decomposed (true) state
    sample_id: int
    score: float             # pre-softmax output for that state
    nonpositive_score: bool  # set when the decomposed score was <= 0


@dataclass
class GateDiagnostics:
    """Bookkeeping for the decomposition invariants.

    max_gate_relevance must stay exactly 0: gates never receive relevance.
    leftover tracks what lands on the (all-zero) initial recurrent state.
    """

    max_gate_relevance: float = 0.0
    max_leftover: float = 0.0

    def gate(self, r):
        if r.size:
            self.max_gate_relevance = max(self.max_gate_relevance, float(np.abs(r).max()))

    def leftover(self, *arrays):
        for r in arrays:
            if r.size:
                self.max_leftover = max(self.max_leftover, float(np.abs(r).max()))


def stabilize(z, eps):
    """Denominator with ε pushed away from zero; sign(0) counts as +."""
    z = np.asarray(z)
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def _share(r, z, eps):
    """r divided by the stabilized z.  With ε=0 a vanished denominator can
    only carry zero relevance (nothing activates through it), so emit 0
    instead of 0/0 there."""
    den = stabilize(z, eps)
    out = np.zeros(np.broadcast_shapes(np.shape(r), den.shape), dtype=np.float64)
    return np.divide(r, den, out=out, where=den != 0)


def lrp_linear_message(z_ij, z_j, r_j, eps=0.0):
    """Share of r_j routed to each contribution z_ij of the sum z_j."""
    return np.asarray(z_ij) * (np.asarray(r_j) / stabilize(z_j, eps))


def lrp_multiplicative(r_j, gate_value, source_value):
    """Gate/source rule for products: the gate gets nothing."""
    r_j = np.asarray(r_j)
    return np.zeros_like(r_j), r_j.copy()


def lrp_dense(r_out, a_in, weights, eps):
    """ε-rule through a dense layer; the bias is left out of the denominators."""
    s = _share(r_out, a_in @ weights, eps)
    return a_in * (s @ weights.T)


def lrp_conv(r_out, a_in, kernels, stride, eps):
    """ε-rule through a conv layer, via the adjoint of the bias-free forward."""
    s = _share(r_out, ad.conv2d_raw(a_in, kernels, stride), eps)
    return a_in * ad.conv2d_backprop_input(s, kernels, stride, a_in.shape)


def lrp_lstm_unit(steps, params, unit, r_final, feats_shape, eps, diag):
    """Backward sweep through one recurrent unit's cached steps.

    r_final is the relevance sitting on the unit's last output; the return
    value spreads it over the slice features (B, Z, F).
    """
    b, z_ext, fdim = feats_shape
    hidden = r_final.shape[1]
    w_c = params[f"{unit}/W_c"]
    r_feats = np.zeros((b, z_ext, fdim), dtype=r_final.dtype)
    r_h = r_final
    r_c = np.zeros_like(r_final)
    for step in reversed(steps):
        f = step["f"].value
        i_gate = step["i"].value
        cand = step["cc"].value
        o_gate = step["o"].value
        c_prev = step["c_prev"].value
        xcat = step["xcat"].value
        # h = o * tanh(C): gate rule, then tanh passes through
        r_o, r_c_in = lrp_multiplicative(r_h, o_gate, np.tanh(step["c"].value))
        diag.gate(r_o)
        r_c = r_c + r_c_in
        # C = f*C_prev + i*cand: split the sum over its two addends
        keep = f * c_prev
        write = i_gate * cand
        share = _share(r_c, keep + write, eps)
        r_f, r_c_prev = lrp_multiplicative(keep * share, f, c_prev)
        r_i, r_cand = lrp_multiplicative(write * share, i_gate, cand)
        diag.gate(r_f)
        diag.gate(r_i)
        # cand = tanh(xcat @ W_c + b_c): identity through tanh, ε-rule through
        # the weights (bias excluded from the denominators)
        r_xcat = lrp_dense(r_cand, xcat, w_c, eps)
        r_h = r_xcat[:, :hidden]
        r_feats[:, step["slice"]] += r_xcat[:, hidden:]
        r_c = r_c_prev
    diag.leftover(r_h, r_c)
    return r_feats


def decompose_scores(params, volumes, seed_scores, spec=None, config=LrpConfig(),
                     cache=None):
    """Propagate per-sample output relevance seeds down to input voxels.

    seed_scores is (B, K); typically one nonzero entry per row.  Returns the
    (B, X, Y, Z) relevance maps and the run's GateDiagnostics.
    """
    volumes = np.asarray(volumes)
    if spec is None:
        spec, _ = mdl.spec_from_params(params)
    if cache is None:
        with ad.no_grad():
            pvars = {k: Var(v) for k, v in params.items()}
            _, cache = mdl.forward_batch(pvars, volumes, spec)
    eps = config.stabilizer
    diag = GateDiagnostics()
    b, z_ext = cache["batch"], cache["z_extent"]
    hidden = spec.hidden

    r_concat = lrp_dense(np.asarray(seed_scores, dtype=np.float64),
                         np.asarray(cache["concat"].value, dtype=np.float64),
                         np.asarray(params["out/W"], dtype=np.float64), eps)
    feats_shape = cache["feats"].value.shape
    params64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()
                if "W_c" in k}
    r_feats = lrp_lstm_unit(cache["steps_fwd"], params64, "lstm_fwd",
                            r_concat[:, :hidden], feats_shape, eps, diag)
    r_feats += lrp_lstm_unit(cache["steps_bwd"], params64, "lstm_bwd",
                             r_concat[:, hidden:], feats_shape, eps, diag)

    # conv stack, deepest first; relu passes relevance straight through
    last_act_shape = cache["conv"][-1][1].value.shape
    r = r_feats.reshape(last_act_shape)
    for layer_index in range(len(spec.strides), 0, -1):
        a_in = np.asarray(cache["conv"][layer_index - 1][0].value, dtype=np.float64)
        kernels = np.asarray(params[f"conv{layer_index}/kernels"], dtype=np.float64)
        r = lrp_conv(r, a_in, kernels, spec.strides[layer_index - 1], eps)
    x_ext, y_ext = cache["plane"]
    maps = np.moveaxis(r.reshape(b, z_ext, x_ext, y_ext), 1, 3)
    return maps, diag


def lrp_decompose(params, volume, true_state, config=LrpConfig(), spec=None,
                  sample_id=0):
    """Decompose one correctly classified sample into a relevance volume."""
    volume = np.asarray(volume)
    if spec is None:
        spec, _ = mdl.spec_from_params(params)
    post, cache = mdl.decode_batch(params, volume[None], spec)
    pred = int(np.argmax(post[0]))
    if pred != int(true_state):
        raise NotDecomposedError(
            f"sample {sample_id}: decoder chose state {pred}, not {true_state}; "
            "relevance is only defined for correct decisions")
    score = float(cache["logits"].value[0, true_state])
    seeds = np.zeros((1, spec.n_states))
    seeds[0, true_state] = score
    maps, _ = decompose_scores(params, volume[None], seeds, spec, config, cache)
    if not np.all(np.isfinite(maps)):
        raise NotDecomposedError(f"sample {sample_id}: non-finite relevance")
    return RelevanceVolume(map=maps[0], state=int(true_state), sample_id=sample_id,
                           score=score, nonpositive_score=score <= 0)


def decompose_batch(params, volumes, true_states, config=LrpConfig(), spec=None,
                    sample_ids=None):
    """Decompose every correctly classified sample in one shared forward pass.

    Returns (results, skipped) where results are RelevanceVolumes and skipped
    lists the sample ids the decoder got wrong.
    """
    volumes = np.asarray(volumes)
    true_states = np.asarray(true_states, dtype=int)
    if spec is None:
        spec, _ = mdl.spec_from_params(params)
    if sample_ids is None:
        sample_ids = list(range(volumes.shape[0]))
    post, cache = mdl.decode_batch(params, volumes, spec)
    preds = np.argmax(post, axis=1)
    correct = preds == true_states
    skipped = [sid for sid, ok in zip(sample_ids, correct) if not ok]
    if not np.any(correct):
        return [], skipped
    logits = cache["logits"].value
    idx = np.flatnonzero(correct)
    seeds = np.zeros((idx.size, spec.n_states))
    scores = logits[idx, true_states[idx]]
    seeds[np.arange(idx.size), true_states[idx]] = scores
    maps, _ = decompose_scores(params, volumes[idx], seeds, spec, config)
    results = []
    for row, sample_pos in enumerate(idx):
        score = float(scores[row])
        results.append(RelevanceVolume(
            map=maps[row], state=int(true_states[sample_pos]),
            sample_id=sample_ids[sample_pos], score=score,
            nonpositive_score=score <= 0))
    return results, skipped


def select_window(samples, design, window=(5.0, 15.0)):
    """Keep the TR indices whose time since their block's onset is in window.

    `samples` are TR indices into the run; fixation TRs never survive.  The
    bounds are inclusive on both sides.
    """
    lo, hi = window
    if lo > hi:
        raise ConfigurationError(f"window lower bound {lo} exceeds upper bound {hi}")
    k = np.asarray(design.within_block_index)
    samples = np.asarray(samples, dtype=int)
    in_block = k[samples] >= 0
    t_rel = k[samples] * design.tr_s
    keep = in_block & (t_rel >= lo) & (t_rel <= hi)
    return samples[keep]
