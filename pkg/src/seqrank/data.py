"""Materialize a synthetic corpus into dense training arrays and eval chunks."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .metrics import Chunk, ChunkItem, evaluate_chunks
from .model import Batch, forward_batch, user_weight
from .sequence import ActionVocab


@dataclass
class Dataset:
    """Dense arrays for one split, one row per example."""
    action_ids: np.ndarray
    pin_embs: np.ndarray
    timestamps: np.ndarray
    pad_mask: np.ndarray
    t_request: np.ndarray
    candidate: np.ndarray
    batch_user_emb: np.ndarray
    other: np.ndarray
    labels: np.ndarray
    w_u: np.ndarray
    u_id: np.ndarray
    c_id: np.ndarray
    pin_id: np.ndarray
    cluster_id: np.ndarray

    def __len__(self):
        return len(self.labels)

    def slice(self, idx):
        return Batch(self.action_ids[idx], self.pin_embs[idx],
                     self.timestamps[idx], self.pad_mask[idx],
                     self.t_request[idx], self.candidate[idx],
                     self.batch_user_emb[idx], self.other[idx],
                     self.labels[idx], self.w_u[idx])

    def batches(self, batch_size, rng=None):
        order = np.arange(len(self))
        if rng is not None:
            order = rng.permutation(order)
        for start in range(0, len(order), batch_size):
            yield self.slice(order[start:start + batch_size])


def build_dataset(corpus, records, model_config, vocab=None):
    """Point-in-time sequences plus candidate/label arrays for `records`."""
    vocab = vocab or ActionVocab()
    cfg = model_config
    world = corpus.world
    n, S = len(records), cfg.seq_len

    per_user = {}
    for u_id, history in corpus.histories.items():
        ts = np.array([a.timestamp for a in history])
        per_user[u_id] = (ts, history)

    action_ids = np.full((n, S), vocab.pad_id, dtype=np.int64)
    pin_embs = np.zeros((n, S, cfg.d_pinsage))
    timestamps = np.full((n, S), -1, dtype=np.int64)
    pad = np.ones((n, S), dtype=bool)
    for i, rec in enumerate(records):
        ts, history = per_user[rec.u_id]
        cut = np.searchsorted(ts, rec.t_request, side="right")
        recent = history[max(0, cut - S):cut][::-1]  # newest first
        for j, a in enumerate(recent):
            action_ids[i, j] = a.action_type
            pin_embs[i, j] = a.pin_embedding
            timestamps[i, j] = a.timestamp
            pad[i, j] = False

    pins = np.array([r.pin_id for r in records])
    users = np.array([r.u_id for r in records])
    return Dataset(
        action_ids=action_ids, pin_embs=pin_embs, timestamps=timestamps,
        pad_mask=pad,
        t_request=np.array([float(r.t_request) for r in records]),
        candidate=world.pin_embs[pins],
        batch_user_emb=np.array([world.users[u].batch_emb for u in users]),
        other=np.array([corpus.other_features(r.u_id, r.pin_id) for r in records]),
        labels=np.array([r.labels for r in records], dtype=np.float64),
        w_u=np.array([user_weight(world.users[u].attrs, cfg.user_weights)
                      for u in users]),
        u_id=users,
        c_id=np.array([r.c_id for r in records]),
        pin_id=pins,
        cluster_id=world.pin_clusters[pins],
    )


def predict(dataset, params, config, vocab=None, batch_size=1024):
    """Inference probabilities for a whole dataset, (N, |H|)."""
    out = np.zeros((len(dataset), config.n_heads_out))
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        probs = forward_batch(dataset.slice(idx), params, config, vocab,
                              training=False)
        out[idx] = probs.data
    return out


def eval_chunks(dataset, probs):
    """Group per-example predictions into evaluation chunks."""
    grouped = defaultdict(list)
    owner = {}
    for i in range(len(dataset)):
        key = (int(dataset.u_id[i]), int(dataset.c_id[i]))
        owner[key] = int(dataset.u_id[i])
        grouped[key].append(ChunkItem(
            pin_id=int(dataset.pin_id[i]),
            labels=dataset.labels[i],
            probs=probs[i],
            cluster_id=int(dataset.cluster_id[i])))
    return [Chunk(u_id=owner[key], c_id=key[1], items=items)
            for key, items in grouped.items()]


def evaluate_model(dataset, params, config, vocab=None, k=3):
    probs = predict(dataset, params, config, vocab)
    chunks = eval_chunks(dataset, probs)
    return evaluate_chunks(chunks, list(config.heads),
                           np.array(config.utilities), k=k)
