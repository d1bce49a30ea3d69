"""Realtime user action sequence features.

Builds the fixed-length, most-recent-first action sequence, encodes it with
a trainable action-type embedding table next to the per-pin content
embeddings, fuses the ranking candidate in early (per-row concat or an
appended pseudo-row), and constructs the padding / random-time-window masks
the encoder consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding_lookup

DEFAULT_ACTION_TYPES = ("click", "repin", "hide", "view")
SECONDS_PER_HOUR = 3600
DEFAULT_T_MAX = 24 * SECONDS_PER_HOUR


class FutureEventError(ValueError):
    """An action timestamp lies after the request time."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ActionType:
    id: int
    name: str
    polarity: str  # positive / negative / neutral


@dataclass(frozen=True)
class ActionVocab:
    """Dense real action-type ids plus a reserved PAD id.

    The PAD embedding row is frozen at zero: encode_sequence multiplies pad
    rows by zero, so no gradient ever reaches the PAD row and padding cannot
    leak signal.
    """
    types: tuple = (
        ActionType(0, "click", "positive"),
        ActionType(1, "repin", "positive"),
        ActionType(2, "hide", "negative"),
        ActionType(3, "view", "neutral"),
    )

    @property
    def n_real(self):
        return len(self.types)

    @property
    def pad_id(self):
        return len(self.types)

    @property
    def table_size(self):
        return len(self.types) + 1

    def by_name(self, name):
        for t in self.types:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class UserAction:
    timestamp: int
    action_type: int
    pin_embedding: np.ndarray
    pin_id: int
    cluster_id: int = -1

    def sort_key(self):
        # descending timestamp, ties broken by descending pin_id then type
        return (-self.timestamp, -self.pin_id, -self.action_type)


@dataclass
class UserSequence:
    entries: list            # UserAction or None for pad slots
    pad_mask: np.ndarray     # bool, True = pad

    def __len__(self):
        return len(self.entries)

    @property
    def n_real(self):
        return int((~self.pad_mask).sum())

    def timestamps(self):
        return np.array([a.timestamp if a is not None else -1 for a in self.entries])

    def action_ids(self, vocab):
        return np.array([a.action_type if a is not None else vocab.pad_id
                         for a in self.entries])

    def pin_embeddings(self, d_pinsage):
        out = np.zeros((len(self.entries), d_pinsage))
        for i, a in enumerate(self.entries):
            if a is not None:
                out[i] = a.pin_embedding
        return out


@dataclass
class EncodedSequence:
    matrix: Tensor            # |S| x d (concat) or (|S|+1) x d (append)
    pad_mask: np.ndarray
    time_mask: np.ndarray
    fusion: str = "concat"

    @property
    def excluded(self):
        return self.pad_mask | self.time_mask


def build_sequence(history, t_request, max_len=100):
    """Most-recent `max_len` actions at or before t_request, newest first."""
    if max_len < 1:
        raise ConfigurationError("max_len must be >= 1")
    for a in history:
        if a.timestamp > t_request:
            raise FutureEventError(
                f"action at t={a.timestamp} is after request time {t_request}")
    kept = sorted(history, key=UserAction.sort_key)[:max_len]
    entries = list(kept) + [None] * (max_len - len(kept))
    pad = np.array([a is None for a in entries])
    return UserSequence(entries=entries, pad_mask=pad)


def encode_sequence(seq, action_table, vocab, d_pinsage):
    """Per-row concat of action-type embedding and pin embedding.

    Pad rows come out exactly zero regardless of table contents.
    """
    ids = seq.action_ids(vocab)
    if ids.max(initial=0) >= action_table.data.shape[0]:
        raise KeyError("action-type id outside embedding table")
    act = embedding_lookup(action_table, ids)
    pins = Tensor(seq.pin_embeddings(d_pinsage))
    real = Tensor((~seq.pad_mask).astype(np.float64)[:, None])
    return concat([act * real, pins * real], axis=-1)


def early_fuse(encoded, candidate_emb, mode, pad_mask, time_mask=None):
    """Inject the candidate embedding before the encoder.

    concat: every row gets the candidate appended (d = d_action + 2 d_PinSage).
    append: one extra row [zero action embedding || candidate] after the
    sequence; that row is exempt from both masks so the fusion signal
    survives any masking.
    """
    candidate_emb = np.asarray(candidate_emb, dtype=np.float64)
    n_rows = encoded.data.shape[0]
    if time_mask is None:
        time_mask = np.zeros(n_rows, dtype=bool)
    if mode == "concat":
        cand = Tensor(np.broadcast_to(candidate_emb, (n_rows, candidate_emb.size)).copy())
        matrix = concat([encoded, cand], axis=-1)
        return EncodedSequence(matrix, pad_mask.copy(), time_mask.copy(), "concat")
    if mode == "append":
        d_action = encoded.data.shape[1] - candidate_emb.size
        row = np.concatenate([np.zeros(d_action), candidate_emb])[None, :]
        matrix = concat([encoded, Tensor(row)], axis=0)
        pad = np.concatenate([pad_mask, [False]])
        tmask = np.concatenate([time_mask, [False]])
        return EncodedSequence(matrix, pad, tmask, "append")
    raise ConfigurationError(f"unknown fusion mode: {mode}")


def sample_time_window(rng, t_max=DEFAULT_T_MAX):
    """T ~ Uniform(0, t_max), drawn once per example per forward pass."""
    return float(rng.uniform(0.0, t_max))


def build_time_window_mask(seq, t_request, T, training):
    """Mask slots whose timestamp falls in the open interval
    (t_request - T, t_request). Not applied at inference."""
    if T < 0:
        raise ConfigurationError("time window T must be non-negative")
    n = len(seq)
    if not training:
        return np.zeros(n, dtype=bool)
    ts = seq.timestamps()
    return (~seq.pad_mask) & (ts > t_request - T) & (ts < t_request)


def batch_time_window_mask(timestamps, pad_mask, t_request, T, training):
    """Vectorized mask for a batch: timestamps (B,S), t_request (B,), T (B,)."""
    if not training:
        return np.zeros_like(pad_mask)
    if np.any(T < 0):
        raise ConfigurationError("time window T must be non-negative")
    lo = (t_request - T)[:, None]
    hi = t_request[:, None]
    return (~pad_mask) & (timestamps > lo) & (timestamps < hi)
