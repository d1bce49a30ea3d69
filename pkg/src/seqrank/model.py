"""Multi-head ranking model.

Assembles the compressed sequence-encoder vector with the batch user
embedding, miscellaneous dense features, and the candidate embedding,
crosses them with a single full-rank DCN-v2 layer, and emits one sigmoid
probability per action head. The training objective is a weighted
cross-entropy: per-head weights come from the label-weight matrix applied
to the ground-truth label vector, and the whole example is scaled by a
user weight (state x gender x location).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation, Tensor, concat, embedding_lookup
from .encoder import (EncoderConfig, _masked_maxpool, compress_output,
                      compressed_size, init_encoder_params, _encode_core)
from .sequence import (ActionVocab, ConfigurationError, DEFAULT_T_MAX,
                       batch_time_window_mask, UserSequence)

DEFAULT_HEADS = ("click", "repin", "hide")

# default label-weight matrix, rows = heads, columns = actions,
# order (click, repin, hide)
DEFAULT_LABEL_WEIGHTS = np.array([
    [100.0, 0.0, 100.0],
    [0.0, 100.0, 100.0],
    [1.0, 5.0, 10.0],
])

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class HeadSet:
    names: tuple = DEFAULT_HEADS
    utilities: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names) or not self.names:
            raise ConfigurationError("head names must be unique and non-empty")
        if len(self.utilities) != len(self.names):
            raise ConfigurationError("one utility per head required")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)


def validate_label_weights(M, n_heads):
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (n_heads, n_heads):
        raise ConfigurationError(f"label weight matrix must be {n_heads}x{n_heads}")
    if not np.isfinite(M).all() or (M < 0).any():
        raise ConfigurationError("label weights must be finite and non-negative")
    return M


@dataclass(frozen=True)
class UserAttributes:
    state: str = "default"
    gender: str = "default"
    location: str = "default"


@dataclass
class UserWeightTables:
    state: dict = field(default_factory=dict)
    gender: dict = field(default_factory=dict)
    location: dict = field(default_factory=dict)


def user_weight(attrs, tables):
    """Product of state/gender/location weights; unknown categories count 1."""
    w = tables.state.get(attrs.state, 1.0)
    w *= tables.gender.get(attrs.gender, 1.0)
    w *= tables.location.get(attrs.location, 1.0)
    return float(w)


def head_weights(y, M, neg_fallback=1.0):
    """Per-head loss weights w_h = sum_a M[h, a] * y_a.

    A pure negative (all-zero y) would be invisible to the loss under the
    matrix rule, so it gets a configurable uniform fallback weight instead
    (set neg_fallback=0 to follow the matrix rule literally).
    """
    y = np.asarray(y, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if y.shape[-1] != M.shape[1]:
        raise ContractViolation("label vector length does not match M")
    w = y @ M.T
    all_zero = ~np.any(y != 0, axis=-1)
    if y.ndim == 1:
        if all_zero:
            w = np.full(M.shape[0], float(neg_fallback))
    else:
        w[all_zero] = float(neg_fallback)
    return w


def weighted_loss(probs, y, M, w_u=1.0, neg_fallback=1.0):
    """Weighted multi-head cross-entropy for one example (scalar Tensor)."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    if np.any(probs.data <= 0.0) or np.any(probs.data >= 1.0):
        raise ContractViolation("probabilities must lie strictly in (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    w = head_weights(y, M, neg_fallback)
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log())
    return (Tensor(w) * bce).sum() * float(w_u)


def batch_weighted_loss(probs, y, M, w_u, neg_fallback=1.0):
    """Mean of the per-example weighted losses over a batch."""
    y = np.asarray(y, dtype=np.float64)
    w = head_weights(y, M, neg_fallback)
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log())
    per_example = (Tensor(w) * bce).sum(axis=-1) * Tensor(np.asarray(w_u, dtype=np.float64))
    return per_example.mean()


def dcn_cross(x0, xl, W, b):
    """Full-rank DCN-v2 cross: x0 * (W xl + b) + xl, elementwise product."""
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    xl = xl if isinstance(xl, Tensor) else Tensor(xl)
    n = x0.shape[-1]
    if W.shape != (n, n) or xl.shape[-1] != n:
        raise ContractViolation("dcn_cross requires square W matching x0/xl")
    if xl.ndim == 1:
        proj = W @ xl + b
    else:
        proj = xl @ W.transpose((1, 0)) + b
    return x0 * proj + xl


@dataclass
class ModelConfig:
    seq_len: int = 100
    d_pinsage: int = 32
    d_action: int = 32
    fusion: str = "concat"
    encoder_type: str = "transformer"       # or "avgpool" baseline
    n_layers: int = 2
    n_heads: int = 1
    d_hidden: int = 32
    dropout: float = 0.1
    positional_encoding: str = "none"
    compression: str = "first_K_plus_max"
    K: int = 10
    heads: tuple = DEFAULT_HEADS
    label_weights: np.ndarray = None
    utilities: tuple = None
    neg_fallback: float = 1.0
    head_hidden: int = 64
    batch_emb_dim: int = 32
    other_dim: int = 8
    use_transact: bool = True
    use_batch_emb: bool = True
    use_other: bool = True
    use_time_mask: bool = True
    t_max: float = DEFAULT_T_MAX
    user_weights: UserWeightTables = field(default_factory=UserWeightTables)

    def __post_init__(self):
        self.heads = tuple(self.heads)
        if self.label_weights is None:
            if self.heads == DEFAULT_HEADS:
                self.label_weights = DEFAULT_LABEL_WEIGHTS.copy()
            else:
                self.label_weights = np.eye(len(self.heads))
        self.label_weights = validate_label_weights(self.label_weights, len(self.heads))
        if self.utilities is None:
            self.utilities = tuple(1.0 for _ in self.heads)
        if self.fusion not in ("concat", "append"):
            raise ConfigurationError(f"unknown fusion mode: {self.fusion}")
        if self.encoder_type not in ("transformer", "avgpool"):
            raise ConfigurationError(f"unknown encoder type: {self.encoder_type}")
        self.encoder_config().validate(seq_len=self.n_rows)

    @property
    def d_model(self):
        return self.d_action + 2 * self.d_pinsage if self.fusion == "concat" \
            else self.d_action + self.d_pinsage

    @property
    def n_rows(self):
        return self.seq_len + (1 if self.fusion == "append" else 0)

    @property
    def n_heads_out(self):
        return len(self.heads)

    @property
    def z_dim(self):
        if self.encoder_type == "avgpool":
            return self.d_pinsage
        return compressed_size(self.compression, self.n_rows, self.d_model, self.K)

    @property
    def input_dim(self):
        return self.z_dim + self.batch_emb_dim + self.other_dim + self.d_pinsage

    def encoder_config(self):
        return EncoderConfig(d_model=self.d_model, n_layers=self.n_layers,
                             n_heads=self.n_heads, d_hidden=self.d_hidden,
                             dropout=self.dropout,
                             positional_encoding=self.positional_encoding,
                             K=self.K)

    def head_set(self):
        return HeadSet(self.heads, tuple(self.utilities))


def init_model_params(config, vocab=None, seed=0):
    """Fresh parameters for the full ranking model, name -> Tensor."""
    vocab = vocab or ActionVocab()
    rng = np.random.default_rng(seed)
    params = {}
    table = rng.normal(0.0, 0.1, size=(vocab.table_size, config.d_action))
    table[vocab.pad_id] = 0.0  # frozen zero pad embedding
    params["action_table"] = Tensor(table, requires_grad=True)
    if config.encoder_type == "transformer":
        enc = init_encoder_params(config.encoder_config(), config.n_rows, rng)
        params.update({f"encoder.{k}": v for k, v in enc.items()})
    n = config.input_dim
    params["cross_w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, n)),
                               requires_grad=True)
    params["cross_b"] = Tensor(np.zeros(n), requires_grad=True)
    h = config.head_hidden
    params["trunk_w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / (n + h)), size=(n, h)),
                               requires_grad=True)
    params["trunk_b"] = Tensor(np.zeros(h), requires_grad=True)
    k = config.n_heads_out
    params["head_w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / (h + k)), size=(h, k)),
                              requires_grad=True)
    params["head_b"] = Tensor(np.zeros(k), requires_grad=True)
    return params


@dataclass
class Batch:
    """Dense arrays for a batch of examples (B examples, S sequence slots)."""
    action_ids: np.ndarray     # (B, S) int, pad slots carry the PAD id
    pin_embs: np.ndarray       # (B, S, d_pinsage)
    timestamps: np.ndarray     # (B, S), -1 on pad slots
    pad_mask: np.ndarray       # (B, S) bool
    t_request: np.ndarray      # (B,)
    candidate: np.ndarray      # (B, d_pinsage)
    batch_user_emb: np.ndarray  # (B, batch_emb_dim)
    other: np.ndarray          # (B, other_dim)
    labels: np.ndarray         # (B, |H|) in {0, 1}
    w_u: np.ndarray            # (B,)

    def __len__(self):
        return self.action_ids.shape[0]


def _encode_batch(batch, params, config, vocab, training, rng):
    """Fused sequence matrix U plus masks for the whole batch."""
    B, S = batch.action_ids.shape
    real = Tensor((~batch.pad_mask).astype(np.float64)[..., None])
    act = embedding_lookup(params["action_table"], batch.action_ids) * real
    pins = Tensor(batch.pin_embs) * real
    encoded = concat([act, pins], axis=-1)

    if training and config.use_time_mask:
        T = rng.uniform(0.0, config.t_max, size=B)
        time_mask = batch_time_window_mask(batch.timestamps, batch.pad_mask,
                                           batch.t_request, T, training=True)
    else:
        time_mask = np.zeros_like(batch.pad_mask)

    if config.fusion == "concat":
        cand = Tensor(np.broadcast_to(batch.candidate[:, None, :],
                                      (B, S, config.d_pinsage)).copy())
        U = concat([encoded, cand], axis=-1)
        pad, tmask = batch.pad_mask, time_mask
    else:
        row = np.concatenate([np.zeros((B, 1, config.d_action)),
                              batch.candidate[:, None, :]], axis=-1)
        U = concat([encoded, Tensor(row)], axis=-2)
        pad = np.concatenate([batch.pad_mask, np.zeros((B, 1), dtype=bool)], axis=1)
        tmask = np.concatenate([time_mask, np.zeros((B, 1), dtype=bool)], axis=1)
    return U, pad, tmask


def _batch_compress(O, mode, K, rng, pad_mask):
    B, S, d = O.shape
    if mode == "first_K_plus_max":
        return compress_output(O, K, pad_mask)
    if mode == "first_col":
        return O[:, 0, :]
    if mode == "first_K":
        return O[:, :K, :].reshape(B, K * d)
    if mode == "all_cols":
        return O.reshape(B, S * d)
    if mode == "max_pool":
        return _masked_maxpool(O, pad_mask)
    if mode == "all_plus_max":
        return concat([O.reshape(B, S * d), _masked_maxpool(O, pad_mask)], axis=-1)
    if mode in ("random_col", "random_K"):
        k = 1 if mode == "random_col" else K
        idx = np.zeros((B, k), dtype=int)
        from .encoder import _sample_positions
        for b in range(B):
            idx[b] = _sample_positions(rng, pad_mask[b], k)
        picked = O[np.arange(B)[:, None], idx]
        return picked.reshape(B, d) if k == 1 else picked.reshape(B, k * d)
    raise ConfigurationError(f"unknown compression mode: {mode}")


def sequence_summary(batch, params, config, vocab, training=False, rng=None):
    """z for the whole batch: transformer path or average-pooling baseline."""
    if config.encoder_type == "avgpool":
        real = (~batch.pad_mask).astype(np.float64)[..., None]
        total = (Tensor(batch.pin_embs) * Tensor(real)).sum(axis=-2)
        count = np.maximum(real.sum(axis=-2), 1.0)
        return total * Tensor(1.0 / count)
    U, pad, tmask = _encode_batch(batch, params, config, vocab, training, rng)
    enc_params = {k[len("encoder."):]: v for k, v in params.items()
                  if k.startswith("encoder.")}
    O = _encode_core(U, pad | tmask, enc_params, config.encoder_config(),
                     training, rng)
    if rng is None and config.compression in ("random_col", "random_K"):
        rng = np.random.default_rng(0)  # fixed stream keeps inference repeatable
    return _batch_compress(O, config.compression, config.K, rng, pad)


def forward_batch(batch, params, config, vocab=None, training=False, rng=None):
    """Per-head probabilities for a batch, shape (B, |H|), strictly in (0, 1)."""
    vocab = vocab or ActionVocab()
    z = sequence_summary(batch, params, config, vocab, training, rng)
    if not config.use_transact:
        z = z * Tensor(0.0)
    pf = Tensor(batch.batch_user_emb if config.use_batch_emb
                else np.zeros_like(batch.batch_user_emb))
    other = Tensor(batch.other if config.use_other else np.zeros_like(batch.other))
    x0 = concat([z, pf, other, Tensor(batch.candidate)], axis=-1)
    x = dcn_cross(x0, x0, params["cross_w"], params["cross_b"])
    hidden = (x @ params["trunk_w"] + params["trunk_b"]).relu()
    logits = hidden @ params["head_w"] + params["head_b"]
    return logits.sigmoid()


@dataclass
class TrainingExample:
    user_sequence: UserSequence
    t_request: float
    candidate_emb: np.ndarray
    candidate_pin_id: int
    candidate_cluster: int
    batch_user_emb: np.ndarray
    other_features: np.ndarray
    labels: np.ndarray
    attrs: UserAttributes
    u_id: int
    c_id: int


def example_to_batch(example, config, vocab=None):
    vocab = vocab or ActionVocab()
    seq = example.user_sequence
    return Batch(
        action_ids=seq.action_ids(vocab)[None, :],
        pin_embs=seq.pin_embeddings(config.d_pinsage)[None, ...],
        timestamps=seq.timestamps()[None, :],
        pad_mask=seq.pad_mask[None, :],
        t_request=np.array([example.t_request], dtype=np.float64),
        candidate=np.asarray(example.candidate_emb, dtype=np.float64)[None, :],
        batch_user_emb=np.asarray(example.batch_user_emb, dtype=np.float64)[None, :],
        other=np.asarray(example.other_features, dtype=np.float64)[None, :],
        labels=np.asarray(example.labels, dtype=np.float64)[None, :],
        w_u=np.array([user_weight(example.attrs, config.user_weights)]),
    )


def forward(example, params, config, vocab=None, training=False, rng=None):
    """Single-example forward; returns a probability vector of length |H|."""
    batch = example_to_batch(example, config, vocab)
    return forward_batch(batch, params, config, vocab, training, rng).reshape(
        config.n_heads_out)
