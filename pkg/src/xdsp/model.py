"""Attentive sequence-to-sequence paraphrase model.

A bidirectional GRU encodes the input utterance; a GRU decoder with additive
attention scores a canonical utterance token by token. Decoding uses the
literal indexing of the model equations: ``d_0`` comes from the encoder, the
``<s>`` step only advances the state to ``d_1``, and step ``j >= 1`` predicts
``c_j`` from ``[d_j, h'_j]`` before feeding ``c_j`` to produce ``d_{j+1}``.
A canonical of ``n`` tokens therefore contributes ``n + 1`` predictions
(its tokens plus ``</s>``).

Parameters are plain ``{name: ndarray}`` dicts; the functions below take the
same dict wrapped as Tensors so that training can record them on a tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .corpus import BOS_ID, EOS_ID, PAD_ID
from .exceptions import ContractError, DimensionError, VocabularyError

GRU_PARTS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")
GRU_CELLS = ("enc_fw", "enc_bw", "dec")
MAX_LENGTH = 60


def param_shapes(vocab_size, embedding_dim, state_size):
    V, d, s = vocab_size, embedding_dim, state_size
    shapes = {"embedding": (V, d)}
    for cell, n_in in (("enc_fw", d), ("enc_bw", d), ("dec", d + 2 * s)):
        for gate in "zrh":
            shapes[f"{cell}.W_{gate}"] = (s, n_in)
            shapes[f"{cell}.U_{gate}"] = (s, s)
            shapes[f"{cell}.b_{gate}"] = (s,)
    shapes.update({
        "W0": (s, 2 * s),
        "W1": (s, 2 * s),
        "W2": (s, s),
        "v": (s,),
        "U_out": (V, 3 * s),
        "b_out": (V,),
    })
    return shapes


def dims_of(params):
    """``(vocab_size, embedding_dim, state_size)`` of a parameter dict."""
    V, d = params["embedding"].shape
    s = params["W2"].shape[0]
    return V, d, s


def check_params(params):
    V, d, s = dims_of(params)
    expected = param_shapes(V, d, s)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise DimensionError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        got = tuple(np.shape(params[name].data if isinstance(params[name], nc.Tensor) else params[name]))
        if got != shape:
            raise DimensionError(f"{name}: expected shape {shape}, got {got}")


def xavier_uniform(rng, shape):
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(vocab_size, embedding_dim, state_size, seed, embedding=None, dtype=np.float64):
    """Xavier-uniform weights, zero biases; ``embedding`` (|V| x d) or U(-sqrt3, sqrt3) rows."""
    rng = np.random.default_rng([seed, 1])
    params = {}
    for name, shape in param_shapes(vocab_size, embedding_dim, state_size).items():
        if name == "embedding":
            continue
        if name.split(".")[-1].startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = xavier_uniform(rng, shape)
    if embedding is None:
        emb_rng = np.random.default_rng([seed, 2])
        embedding = emb_rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(vocab_size, embedding_dim))
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (vocab_size, embedding_dim):
        raise DimensionError(f"embedding must be {(vocab_size, embedding_dim)}, got {embedding.shape}")
    params["embedding"] = embedding.copy()
    return {k: np.asarray(v, dtype=dtype) for k, v in sorted(params.items())}


def _tensor(x):
    return x if isinstance(x, nc.Tensor) else nc.Tensor(x)


def as_tensors(params, requires_grad=False):
    return {k: v if isinstance(v, nc.Tensor) else nc.Tensor(v, name=k, requires_grad=requires_grad)
            for k, v in params.items()}


# -- dropout --------------------------------------------------------------------


@dataclass(frozen=True)
class DropoutConfig:
    """Keep probabilities for GRU inputs and outputs; masks use inverted scaling."""

    input_keep: float = 0.7
    output_keep: float = 0.5
    enabled: bool = False

    def __post_init__(self):
        for name in ("input_keep", "output_keep"):
            p = getattr(self, name)
            if not 0 < p <= 1:
                raise ContractError(f"{name} must be in (0, 1], got {p}")


class _Dropper:
    def __init__(self, config, rng, dtype):
        self.on = config is not None and config.enabled and rng is not None
        self.config = config
        self.rng = rng
        self.dtype = dtype

    def _apply(self, x, keep):
        if not self.on or keep >= 1.0:
            return x
        mask = (self.rng.random(x.shape) < keep).astype(self.dtype) / self.dtype.type(keep)
        return x * mask

    def inputs(self, x):
        return self._apply(x, self.config.input_keep) if self.on else x

    def outputs(self, x):
        return self._apply(x, self.config.output_keep) if self.on else x


# -- GRU --------------------------------------------------------------------------


def _cell(params, prefix):
    return {part: params[f"{prefix}.{part}"] for part in GRU_PARTS}


class _GruRunner:
    """Holds the concatenated gate weights of one cell for repeated steps."""

    def __init__(self, p):
        self.s = p["U_z"].shape[0]
        self.W = nc.transpose(nc.concat([p["W_z"], p["W_r"], p["W_h"]], axis=0))
        self.b = nc.concat([p["b_z"], p["b_r"], p["b_h"]], axis=0)
        self.U_zr = nc.transpose(nc.concat([p["U_z"], p["U_r"]], axis=0))
        self.U_h = nc.transpose(p["U_h"])

    def project(self, x):
        # gate pre-activations from the input: (W x + b), shape (..., 3s)
        return nc.matmul(x, self.W) + self.b

    def step(self, gx, h_prev):
        s = self.s
        hzr = nc.matmul(h_prev, self.U_zr)
        z = nc.sigmoid(gx[..., :s] + hzr[..., :s])
        r = nc.sigmoid(gx[..., s:2 * s] + hzr[..., s:])
        cand = nc.tanh(gx[..., 2 * s:] + nc.matmul(r * h_prev, self.U_h))
        return z * h_prev + (1.0 - z) * cand


def gru_cell(x, h_prev, p):
    """One GRU step: ``h' = z * h + (1 - z) * tanh(W_h x + b_h + U_h (r * h))``.

    ``p`` maps ``W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h`` to Tensors
    (or arrays). Gate pre-activations are summed as ``(W x + b) + U h``.
    """
    p = {k: _tensor(v) for k, v in p.items()}
    x, h_prev = _tensor(x), _tensor(h_prev)
    s, n_in = p["W_z"].shape
    if x.shape[-1] != n_in or h_prev.shape[-1] != s:
        raise DimensionError(f"gru_cell: input {x.shape} / state {h_prev.shape} do not match "
                             f"weights ({s}x{n_in})")
    runner = _GruRunner(p)
    return runner.step(runner.project(x), h_prev)


# -- encoder ----------------------------------------------------------------------


@dataclass
class EncoderStates:
    states: nc.Tensor          # (B, m, 2s) concatenated [forward, backward], output dropout applied
    mask: np.ndarray           # (B, m) True on real tokens
    final_forward: nc.Tensor   # (B, s) forward state at the last real token
    first_backward: nc.Tensor  # (B, s) backward state at position 1

    @property
    def length(self):
        return self.states.shape[1]


def pad_batch(sequences, pad=PAD_ID):
    lengths = np.array([len(s) for s in sequences], dtype=np.intp)
    out = np.full((len(sequences), int(lengths.max())), pad, dtype=np.intp)
    for i, seq in enumerate(sequences):
        out[i, :len(seq)] = seq
    return out, lengths


def _check_ids(ids, vocab_size, what):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = int(ids.max()) if ids.max() >= vocab_size else int(ids.min())
        raise VocabularyError(f"{what}: token id {bad} outside vocabulary of size {vocab_size}")


def encode(u_ids, params, dropout=None, rng=None, lengths=None, max_length=MAX_LENGTH):
    """Run the bidirectional encoder over a batch of (padded) input id rows.

    ``u_ids`` is one id sequence or a (B, m) padded array with ``lengths``.
    """
    u_ids = np.asarray(u_ids, dtype=np.intp)
    if u_ids.ndim == 1:
        u_ids = u_ids[None, :]
        lengths = np.array([u_ids.shape[1]])
    if lengths is None:
        lengths = np.full(len(u_ids), u_ids.shape[1])
    if u_ids.shape[1] == 0 or lengths.min() < 1:
        raise ContractError("cannot encode an empty utterance")
    if lengths.max() > max_length:
        raise ContractError(f"utterance of {int(lengths.max())} tokens exceeds max length {max_length}")
    emb = params["embedding"]
    _check_ids(u_ids, emb.shape[0], "encode")
    B, m = u_ids.shape
    s = params["W2"].shape[0]
    dtype = emb.dtype
    drop = _Dropper(dropout, rng, dtype)
    valid = np.arange(m)[None, :] < lengths[:, None]
    x = nc.take_rows(emb, u_ids)

    fw = _GruRunner(_cell(params, "enc_fw"))
    bw = _GruRunner(_cell(params, "enc_bw"))
    gx_fw = fw.project(drop.inputs(x))
    gx_bw = bw.project(drop.inputs(x))
    zero = nc.Tensor(np.zeros((B, s), dtype=dtype))

    h = zero
    forward = []
    for t in range(m):
        h = nc.where(valid[:, t, None], fw.step(gx_fw[:, t], h), h)
        forward.append(h)
    final_forward = h

    h = zero
    backward = [None] * m
    for t in reversed(range(m)):
        h = nc.where(valid[:, t, None], bw.step(gx_bw[:, t], h), h)
        backward[t] = h

    states = nc.concat([nc.stack(forward, axis=1), nc.stack(backward, axis=1)], axis=-1)
    return EncoderStates(drop.outputs(states), valid, final_forward, backward[0])


def decoder_init(enc, params):
    """``d_0 = tanh(W0 [forward_m, backward_1])``."""
    joined = nc.concat([enc.final_forward, enc.first_backward], axis=-1)
    return nc.tanh(nc.matmul(joined, nc.transpose(params["W0"])))


# -- decoder ----------------------------------------------------------------------


class Decoder:
    """Attention, output layer and recurrence of the decoder over fixed encoder states."""

    def __init__(self, enc, params, drop=None):
        self.enc = enc
        self.params = params
        self.drop = drop if drop is not None else _Dropper(None, None, None)
        self.keys = nc.matmul(enc.states, nc.transpose(params["W1"]))
        self.W2 = nc.transpose(params["W2"])
        self.U_out = nc.transpose(params["U_out"])
        self.gru = _GruRunner(_cell(params, "dec"))

    def attend(self, d):
        B, m, s = self.keys.shape
        query = nc.reshape(nc.matmul(d, self.W2), (B, 1, s))
        scores = nc.matmul(nc.tanh(self.keys + query), self.params["v"])
        alpha = nc.softmax_rows(scores, mask=self.enc.mask)
        context = nc.seq_sum(nc.reshape(alpha, (B, m, 1)) * self.enc.states, axis=1)
        return alpha, context

    def logits(self, d, context):
        return nc.matmul(nc.concat([d, context], axis=-1), self.U_out) + self.params["b_out"]

    def advance(self, d, token_ids, context):
        x = nc.concat([nc.take_rows(self.params["embedding"], token_ids), context], axis=-1)
        return self.gru.step(self.gru.project(self.drop.inputs(x)), d)


def decoder_step(d, prev_token, enc, params, dropout=None, rng=None):
    """One decoding step from state ``d_j``.

    Returns ``(dist, d_next)``: the output distribution over the vocabulary
    computed from ``[d_j, h'_j]``, and ``d_{j+1} = GRU([phi(c_j), h'_j], d_j)``
    with ``c_j = prev_token``.
    """
    dec = Decoder(enc, params, _Dropper(dropout, rng, params["embedding"].dtype))
    token = np.atleast_1d(np.asarray(prev_token, dtype=np.intp))
    _check_ids(token, params["embedding"].shape[0], "decoder_step")
    _, context = dec.attend(d)
    dist = nc.softmax_rows(dec.logits(d, context))
    return dist, dec.advance(d, token, context)


def attention_weights(d, enc, params):
    return Decoder(enc, params).attend(d)[0]


def frame_targets(c_ids):
    """Prediction targets ``c_1 .. c_n </s>`` for a canonical id sequence."""
    return list(c_ids) + [EOS_ID]


def select_rows(enc, rows):
    """Encoder states for the batch rows ``rows`` (repeats allowed)."""
    rows = np.asarray(rows, dtype=np.intp)
    return EncoderStates(enc.states[rows], enc.mask[rows], enc.final_forward[rows],
                         enc.first_backward[rows])


def decode_log_probs(enc, c_ids, c_lengths, params, dropout=None, rng=None, trace=None,
                     max_length=MAX_LENGTH):
    """Per-row ``log p(c | u)`` given encoder states; returns a (B,) Tensor.

    ``c_ids`` holds canonical tokens without framing, padded; ``c_lengths``
    counts them. Padded steps contribute exactly zero. ``trace``, if a list,
    receives the attention weights of every step.
    """
    c_ids = np.asarray(c_ids, dtype=np.intp)
    c_lengths = np.asarray(c_lengths, dtype=np.intp)
    if c_lengths.max() > max_length:
        raise ContractError(f"canonical of {int(c_lengths.max())} tokens exceeds max length {max_length}")
    _check_ids(c_ids, params["embedding"].shape[0], "decode")
    B = c_ids.shape[0]
    steps = int(c_lengths.max()) + 1
    targets = np.full((B, steps), PAD_ID, dtype=np.intp)
    targets[:, :c_ids.shape[1]] = c_ids
    targets[np.arange(B), c_lengths] = EOS_ID
    live = np.arange(steps)[None, :] <= c_lengths[:, None]

    drop = _Dropper(dropout, rng, params["embedding"].dtype)
    dec = Decoder(enc, params, drop)
    d = decoder_init(enc, params)
    alpha, context = dec.attend(d)
    if trace is not None:
        trace.append(alpha.data)
    d = dec.advance(d, np.full(B, BOS_ID, dtype=np.intp), context)
    step_logp = []
    for j in range(steps):
        d_out = drop.outputs(d)
        alpha, context = dec.attend(d_out)
        if trace is not None:
            trace.append(alpha.data)
        logp = nc.log_softmax_rows(dec.logits(d_out, context))
        step_logp.append(nc.where(live[:, j], nc.pick(logp, targets[:, j]), 0.0))
        if j + 1 < steps:
            d = dec.advance(d, targets[:, j], context)
    return nc.seq_sum(nc.stack(step_logp, axis=1), axis=1)


def score_batch(params, u_ids, u_lengths, c_ids, c_lengths, dropout=None, rng=None,
                trace=None, max_length=MAX_LENGTH):
    """Row-aligned ``log p(c_b | u_b)`` for padded batches of inputs and canonicals."""
    enc = encode(u_ids, params, dropout, rng, lengths=np.asarray(u_lengths, dtype=np.intp),
                 max_length=max_length)
    return decode_log_probs(enc, c_ids, c_lengths, params, dropout, rng, trace, max_length)


def sequence_log_prob(u_ids, c_ids, params, max_length=MAX_LENGTH):
    """``log p(c | u)`` of one pair with dropout off (a Python float, <= 0)."""
    params = as_tensors(params)
    u_ids = np.asarray(u_ids, dtype=np.intp)
    c_ids = np.asarray(c_ids, dtype=np.intp)
    out = score_batch(params, u_ids[None, :], [len(u_ids)],
                      c_ids[None, :] if len(c_ids) else np.zeros((1, 0), dtype=np.intp),
                      [len(c_ids)], max_length=max_length)
    return float(out.data[0])


def batch_loss(pairs, params, dropout=None, rng=None, max_length=MAX_LENGTH):
    """Mean negative ``log p(c | u)`` over ``pairs`` of id sequences (a scalar Tensor)."""
    if not pairs:
        raise ContractError("batch_loss needs at least one pair")
    u_ids, u_len = pad_batch([u for u, _ in pairs])
    c_ids, c_len = pad_batch([c for _, c in pairs])
    logp = score_batch(params, u_ids, u_len, c_ids, c_len, dropout, rng, max_length=max_length)
    return nc.neg(nc.seq_sum(logp)) / float(len(pairs))
