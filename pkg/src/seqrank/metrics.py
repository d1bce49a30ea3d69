"""Chunk-based offline evaluation: final ranking score, HIT@K per head,
and the mean-unique-clusters diversity statistic."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when an evaluation set is empty."""


@dataclass
class ChunkItem:
    pin_id: int
    labels: np.ndarray    # per-head, {0, 1}
    probs: np.ndarray     # per-head, (0, 1)
    cluster_id: int = -1


@dataclass
class Chunk:
    u_id: int
    c_id: int
    items: list

    def __post_init__(self):
        if not self.items:
            raise UndefinedMetricError("a chunk needs at least one item")


@dataclass
class EvalReport:
    hit_at_k: dict                      # head name -> HIT@K (Eq.-4 style)
    hit_per_chunk: dict                 # diagnostic: normalized per chunk
    diversity: float
    k: int
    n_users: int
    n_chunks: int
    n_items: int
    relative_to_baseline: dict = field(default_factory=dict)

    def with_baseline(self, baseline):
        rel = {}
        for head, value in self.hit_at_k.items():
            base = baseline.hit_at_k[head]
            rel[head] = (value - base) / base if base else float("nan")
        self.relative_to_baseline = rel
        return self


def final_score(probs, utilities):
    """S = sum_h u_h * f_h."""
    probs = np.asarray(probs, dtype=np.float64)
    utilities = np.asarray(utilities, dtype=np.float64)
    if probs.shape != utilities.shape:
        raise ValueError("probs and utilities must have equal length")
    return float(probs @ utilities)


def rank_items(chunk, utilities):
    """Items sorted by final score descending, ties by ascending pin id."""
    return sorted(chunk.items,
                  key=lambda it: (-final_score(it.probs, utilities), it.pin_id))


def chunk_hits(chunk, k, utilities):
    """Per-head count of label-1 items among the top-min(k, n) by score."""
    if k < 1:
        raise ValueError("K must be >= 1")
    top = rank_items(chunk, utilities)[:k]
    return np.sum([it.labels for it in top], axis=0).astype(np.float64)


def aggregate_hit(chunks, k, utilities, head_names):
    """HIT@K/h = sum over users and chunks of per-chunk hits, over |U|."""
    if not chunks:
        raise UndefinedMetricError("empty evaluation set")
    users = set()
    totals = np.zeros(len(head_names))
    for chunk in chunks:
        users.add(chunk.u_id)
        totals += chunk_hits(chunk, k, utilities)
    per_user = totals / len(users)
    per_chunk = totals / len(chunks)
    return ({h: float(per_user[i]) for i, h in enumerate(head_names)},
            {h: float(per_chunk[i]) for i, h in enumerate(head_names)})


def impression_diversity(chunks, k, utilities):
    """Mean over users of the number of unique cluster ids among the items
    each user would be shown (top-K of every chunk)."""
    if not chunks:
        raise UndefinedMetricError("empty evaluation set")
    shown = defaultdict(set)
    for chunk in chunks:
        for it in rank_items(chunk, utilities)[:k]:
            shown[chunk.u_id].add(it.cluster_id)
    return float(np.mean([len(s) for s in shown.values()]))


def evaluate_chunks(chunks, head_names, utilities, k=3):
    hit, per_chunk = aggregate_hit(chunks, k, utilities, head_names)
    diversity = impression_diversity(chunks, k, utilities)
    users = {c.u_id for c in chunks}
    return EvalReport(hit_at_k=hit, hit_per_chunk=per_chunk,
                      diversity=diversity, k=k, n_users=len(users),
                      n_chunks=len(chunks),
                      n_items=sum(len(c.items) for c in chunks))
