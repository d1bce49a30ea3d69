"""Masked transformer encoder over the fused action sequence, plus output
compression down to the fixed-width vector consumed by the ranking model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ContractViolation, Tensor, concat, dropout, layer_norm,
                       softmax_masked)
from .sequence import (ConfigurationError, build_time_window_mask, early_fuse,
                       encode_sequence, sample_time_window, DEFAULT_T_MAX)

COMPRESSION_MODES = ("random_col", "first_col", "random_K", "first_K",
                     "all_cols", "max_pool", "first_K_plus_max", "all_plus_max")

POSITIONAL_ENCODINGS = ("none", "sinusoidal", "learned", "linear_projection")

_NEG_BIG = 1e30


@dataclass
class EncoderConfig:
    d_model: int
    n_layers: int = 2
    n_heads: int = 1
    d_hidden: int = 32
    dropout: float = 0.1
    positional_encoding: str = "none"
    K: int = 10

    def validate(self, seq_len=None):
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.K < 1 or (seq_len is not None and self.K > seq_len):
            raise ConfigurationError("K must lie in [1, |S|]")
        if self.positional_encoding not in POSITIONAL_ENCODINGS:
            raise ConfigurationError(
                f"unknown positional encoding: {self.positional_encoding}")


def init_encoder_params(config, n_positions, rng):
    """Fresh encoder parameters as a flat name -> Tensor dict."""
    d, h = config.d_model, config.d_hidden
    params = {}

    def mat(rows, cols):
        scale = np.sqrt(2.0 / (rows + cols))
        return Tensor(rng.normal(0.0, scale, size=(rows, cols)), requires_grad=True)

    for l in range(config.n_layers):
        p = f"enc{l}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = mat(d, d)
            params[p + name.replace("w", "b")] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ff_w1"] = mat(d, h)
        params[p + "ff_b1"] = Tensor(np.zeros(h), requires_grad=True)
        params[p + "ff_w2"] = mat(h, d)
        params[p + "ff_b2"] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ln1_g"] = Tensor(np.ones(d), requires_grad=True)
        params[p + "ln1_b"] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ln2_g"] = Tensor(np.ones(d), requires_grad=True)
        params[p + "ln2_b"] = Tensor(np.zeros(d), requires_grad=True)
    if config.positional_encoding == "learned":
        params["pos_table"] = Tensor(rng.normal(0.0, 0.02, size=(n_positions, d)),
                                     requires_grad=True)
    elif config.positional_encoding == "linear_projection":
        params["pos_scale"] = Tensor(np.ones(n_positions), requires_grad=True)
    return params


def sinusoidal_table(n_positions, d_model):
    pos = np.arange(n_positions)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _apply_positional(x, n_rows, params, config):
    pe = config.positional_encoding
    if pe == "none":
        return x
    if pe == "sinusoidal":
        return x + Tensor(sinusoidal_table(n_rows, config.d_model))
    if pe == "learned":
        return x + params["pos_table"][:n_rows]
    if pe == "linear_projection":
        return x * params["pos_scale"][:n_rows].reshape(n_rows, 1)
    raise ConfigurationError(f"unknown positional encoding: {pe}")


def transformer_encode(U, params, config, training=False, rng=None):
    """Encode an EncodedSequence (or raw Tensor + masks) into O.

    Pad and time-masked positions are excluded as attention keys and their
    output rows are zeroed, so downstream compression can never read masked
    content. Accepts 2-D (S x d) or batched 3-D (B x S x d) input.
    """
    if hasattr(U, "matrix"):
        x, excluded = U.matrix, U.excluded
    else:
        raise ContractViolation("transformer_encode expects an EncodedSequence")
    return _encode_core(x, excluded, params, config, training, rng)


def _encode_core(x, excluded, params, config, training, rng):
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
        excluded = excluded[None, :]
    B, S, d = x.shape
    if d != config.d_model:
        raise ContractViolation(f"input width {d} != d_model {config.d_model}")
    if excluded.shape != (B, S):
        raise ContractViolation("mask shape does not match input")
    nh = config.n_heads
    dh = d // nh
    if training and rng is None and config.dropout > 0:
        raise ConfigurationError("training with dropout requires an rng")

    x = _apply_positional(x, S, params, config)
    key_mask = np.broadcast_to(excluded[:, None, None, :], (B, nh, S, S))

    h = x
    for l in range(config.n_layers):
        p = f"enc{l}."

        def heads(t):
            return t.reshape(B, S, nh, dh).transpose((0, 2, 1, 3))

        q = heads(h @ params[p + "wq"] + params[p + "bq"])
        k = heads(h @ params[p + "wk"] + params[p + "bk"])
        v = heads(h @ params[p + "wv"] + params[p + "bv"])
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        attn = softmax_masked(scores, key_mask)
        attn = dropout(attn, config.dropout, rng, training)
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape(B, S, d)
        ctx = ctx @ params[p + "wo"] + params[p + "bo"]
        h = layer_norm(h + ctx, params[p + "ln1_g"], params[p + "ln1_b"])
        ff = (h @ params[p + "ff_w1"] + params[p + "ff_b1"]).relu()
        ff = ff @ params[p + "ff_w2"] + params[p + "ff_b2"]
        ff = dropout(ff, config.dropout, rng, training)
        h = layer_norm(h + ff, params[p + "ln2_g"], params[p + "ln2_b"])

    keep = Tensor((~excluded).astype(np.float64)[..., None])
    out = h * keep
    return out.reshape(S, d) if squeeze else out


def _masked_maxpool(O, pad_mask):
    """Per-dimension max over non-pad rows; all-pad collapses to zeros."""
    pad = np.asarray(pad_mask, dtype=bool)
    penalty = Tensor(np.where(pad, -_NEG_BIG, 0.0)[..., None])
    pooled = (O + penalty).max(axis=-2)
    has_real = np.asarray((~pad).any(axis=-1), dtype=np.float64)
    if has_real.ndim:
        has_real = has_real[..., None]
    return pooled * Tensor(has_real)


def compress_output(O, K, pad_mask):
    """z = flatten(first K rows) || maxpool over non-pad rows."""
    n_rows = O.shape[-2]
    if not 1 <= K <= n_rows:
        raise ConfigurationError(f"K={K} outside [1, {n_rows}]")
    d = O.shape[-1]
    if O.ndim == 2:
        first = O[:K].reshape(K * d)
        return concat([first, _masked_maxpool(O, pad_mask)], axis=-1)
    B = O.shape[0]
    first = O[:, :K, :].reshape(B, K * d)
    return concat([first, _masked_maxpool(O, pad_mask)], axis=-1)


def _sample_positions(rng, pad_mask, k):
    # uniform without replacement over non-pad positions; if the sequence has
    # fewer real rows than k, fill out with (zero) pad positions
    non_pad = np.flatnonzero(~pad_mask)
    pad = np.flatnonzero(pad_mask)
    take = min(k, non_pad.size)
    chosen = rng.choice(non_pad, size=take, replace=False) if take else np.array([], dtype=int)
    if take < k:
        extra = rng.choice(pad, size=k - take, replace=False)
        chosen = np.concatenate([chosen, extra])
    return np.sort(chosen.astype(int))


def compress_variant(O, mode, K=10, rng=None, pad_mask=None):
    """The output-compression ablation family; 2-D (S x d) input only."""
    if mode not in COMPRESSION_MODES:
        raise ConfigurationError(f"unknown compression mode: {mode}")
    if O.ndim != 2:
        raise ContractViolation("compress_variant expects a 2-D encoder output")
    S, d = O.shape
    if pad_mask is None:
        pad_mask = np.zeros(S, dtype=bool)
    if mode in ("random_col", "random_K") and rng is None:
        raise ConfigurationError(f"mode {mode} requires an rng")

    if mode == "first_col":
        return O[0]
    if mode == "random_col":
        idx = _sample_positions(rng, pad_mask, 1)
        return O[int(idx[0])]
    if mode == "first_K":
        _check_K(K, S)
        return O[:K].reshape(K * d)
    if mode == "random_K":
        _check_K(K, S)
        idx = _sample_positions(rng, pad_mask, K)
        return concat([O[int(i)] for i in idx], axis=-1)
    if mode == "all_cols":
        return O.reshape(S * d)
    if mode == "max_pool":
        return _masked_maxpool(O, pad_mask)
    if mode == "first_K_plus_max":
        _check_K(K, S)
        return compress_output(O, K, pad_mask)
    # all_plus_max
    return concat([O.reshape(S * d), _masked_maxpool(O, pad_mask)], axis=-1)


def _check_K(K, S):
    if not 1 <= K <= S:
        raise ConfigurationError(f"K={K} outside [1, {S}]")


def compressed_size(mode, S, d, K):
    sizes = {
        "random_col": d,
        "first_col": d,
        "random_K": K * d,
        "first_K": K * d,
        "all_cols": S * d,
        "max_pool": d,
        "first_K_plus_max": (K + 1) * d,
        "all_plus_max": (S + 1) * d,
    }
    return sizes[mode]


def transact_forward(seq, candidate_emb, action_table, params, config,
                     vocab, d_pinsage, fusion="concat", training=False,
                     rng=None, t_request=None, t_max=DEFAULT_T_MAX,
                     use_time_mask=True, compression="first_K_plus_max"):
    """Full sequence-encoder forward: encode, fuse, mask, transform, compress.

    Deterministic when training is False: neither dropout nor the random
    time-window mask is applied at inference.
    """
    encoded = encode_sequence(seq, action_table, vocab, d_pinsage)
    if training and use_time_mask:
        if rng is None or t_request is None:
            raise ConfigurationError("training time mask needs rng and t_request")
        T = sample_time_window(rng, t_max)
        time_mask = build_time_window_mask(seq, t_request, T, training=True)
    else:
        time_mask = np.zeros(len(seq), dtype=bool)
    fused = early_fuse(encoded, candidate_emb, fusion, seq.pad_mask, time_mask)
    O = transformer_encode(fused, params, config, training=training, rng=rng)
    if compression == "first_K_plus_max":
        return compress_output(O, config.K, fused.pad_mask)
    return compress_variant(O, compression, K=config.K, rng=rng,
                            pad_mask=fused.pad_mask)
