"""Chunked ranking evaluation against independent brute-force oracles."""

import numpy as np
import pytest

from seqrank.metrics import (Chunk, ChunkItem, UndefinedMetricError,
                             aggregate_hit, chunk_hits, evaluate_chunks,
                             final_score, impression_diversity, rank_items)

HEADS = ["click", "repin", "hide"]


def random_chunk(rng, u_id=0, c_id=0, n=None):
    n = n or int(rng.integers(1, 21))
    items = [ChunkItem(pin_id=int(rng.integers(0, 10_000)),
                       labels=(rng.random(3) < 0.3).astype(float),
                       probs=rng.uniform(0.01, 0.99, size=3),
                       cluster_id=int(rng.integers(0, 6)))
             for _ in range(n)]
    return Chunk(u_id=u_id, c_id=c_id, items=items)


def oracle_chunk_hits(chunk, k, utilities):
    """Independent reimplementation: score, stable sort, count labels."""
    scored = [(sum(u * f for u, f in zip(utilities, it.probs)), it.pin_id, it)
              for it in chunk.items]
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = [it for _, _, it in scored[:k]]
    return np.array([sum(it.labels[h] for it in top) for h in range(3)])


class TestFinalScore:
    def test_one_hot_selects_head(self):
        assert final_score([0.2, 0.7, 0.1], [0, 1, 0]) == 0.7

    def test_zero_utilities(self):
        assert final_score([0.9, 0.9, 0.9], [0, 0, 0]) == 0.0

    def test_hand_dot_product(self):
        assert abs(final_score([0.2, 0.5, 0.1], [1, 2, -1]) - 1.1) < 1e-12

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            final_score([0.5, 0.5], [1.0])


class TestChunkHits:
    def test_worked_example_repins_at_1_and_4(self):
        # pre-sorted by score: repins at ranked positions 1 and 4, K=3 -> 1
        probs = [0.9, 0.8, 0.7, 0.6, 0.5]
        labels = [[0, 1, 0], [0, 0, 0], [0, 0, 0], [0, 1, 0], [0, 0, 0]]
        items = [ChunkItem(pin_id=i, labels=np.array(l, float),
                           probs=np.array([0.0, p, 0.0]))
                 for i, (p, l) in enumerate(zip(probs, labels))]
        beta = chunk_hits(Chunk(0, 0, items), 3, np.array([0.0, 1.0, 0.0]))
        assert beta[1] == 1.0

    def test_all_zero_labels(self):
        rng = np.random.default_rng(0)
        chunk = random_chunk(rng)
        for it in chunk.items:
            it.labels = np.zeros(3)
        np.testing.assert_array_equal(
            chunk_hits(chunk, 3, np.ones(3)), np.zeros(3))

    def test_matches_brute_force_on_1000_random_chunks(self):
        rng = np.random.default_rng(1)
        for i in range(1000):
            chunk = random_chunk(rng, c_id=i)
            k = int(rng.integers(1, 8))
            u = rng.uniform(-1, 2, size=3)
            np.testing.assert_array_equal(chunk_hits(chunk, k, u),
                                          oracle_chunk_hits(chunk, k, u))

    def test_item_order_invariance(self):
        rng = np.random.default_rng(2)
        chunk = random_chunk(rng, n=12)
        shuffled = Chunk(0, 0, [chunk.items[i] for i in rng.permutation(12)])
        u = np.ones(3)
        np.testing.assert_array_equal(chunk_hits(chunk, 3, u),
                                      chunk_hits(shuffled, 3, u))

    def test_positive_utility_scaling_invariance(self):
        rng = np.random.default_rng(3)
        chunk = random_chunk(rng, n=15)
        u = rng.uniform(0.1, 2.0, size=3)
        np.testing.assert_array_equal(chunk_hits(chunk, 4, u),
                                      chunk_hits(chunk, 4, 7.5 * u))

    def test_monotone_in_K(self):
        rng = np.random.default_rng(4)
        chunk = random_chunk(rng, n=18)
        u = np.ones(3)
        prev = chunk_hits(chunk, 1, u)
        for k in range(2, 20):
            cur = chunk_hits(chunk, k, u)
            assert np.all(cur >= prev)
            prev = cur

    def test_short_chunk_uses_all_items(self):
        rng = np.random.default_rng(5)
        chunk = random_chunk(rng, n=2)
        np.testing.assert_array_equal(
            chunk_hits(chunk, 10, np.ones(3)),
            np.sum([it.labels for it in chunk.items], axis=0))

    def test_tie_break_ascending_pin_id(self):
        items = [ChunkItem(pin_id=9, labels=np.array([1.0, 0, 0]),
                           probs=np.full(3, 0.5)),
                 ChunkItem(pin_id=2, labels=np.array([0.0, 0, 0]),
                           probs=np.full(3, 0.5))]
        ranked = rank_items(Chunk(0, 0, items), np.ones(3))
        assert [it.pin_id for it in ranked] == [2, 9]

    def test_K_below_one_rejected(self):
        with pytest.raises(ValueError):
            chunk_hits(random_chunk(np.random.default_rng(6)), 0, np.ones(3))


class TestAggregateHit:
    def test_single_user_single_chunk(self):
        items = [ChunkItem(pin_id=i, labels=np.array([0, 1.0, 0]),
                           probs=np.array([0.1, 0.9, 0.1])) for i in range(2)]
        hit, _ = aggregate_hit([Chunk(7, 0, items)], 3, np.ones(3), HEADS)
        assert hit["repin"] == 2.0

    def test_two_users_mean(self):
        hit_item = ChunkItem(pin_id=0, labels=np.array([0, 1.0, 0]),
                             probs=np.full(3, 0.9))
        miss_item = ChunkItem(pin_id=0, labels=np.zeros(3),
                              probs=np.full(3, 0.9))
        chunks = [Chunk(1, 0, [hit_item]), Chunk(2, 1, [miss_item])]
        hit, _ = aggregate_hit(chunks, 3, np.ones(3), HEADS)
        assert hit["repin"] == 0.5

    def test_oracle_recomputation_100_users(self):
        rng = np.random.default_rng(7)
        chunks = []
        c = 0
        for u in range(100):
            for _ in range(int(rng.integers(1, 4))):
                chunks.append(random_chunk(rng, u_id=u, c_id=c))
                c += 1
        u_vec = np.array([1.0, 1.0, -1.0])
        hit, per_chunk = aggregate_hit(chunks, 3, u_vec, HEADS)
        totals = sum(oracle_chunk_hits(ch, 3, u_vec) for ch in chunks)
        users = {ch.u_id for ch in chunks}
        for i, h in enumerate(HEADS):
            assert hit[h] == totals[i] / len(users)
            assert per_chunk[h] == totals[i] / len(chunks)

    def test_disjoint_union_is_user_weighted_mean(self):
        rng = np.random.default_rng(8)
        part_a = [random_chunk(rng, u_id=u, c_id=u) for u in range(5)]
        part_b = [random_chunk(rng, u_id=u, c_id=u) for u in range(5, 12)]
        u_vec = np.ones(3)
        hit_a, _ = aggregate_hit(part_a, 3, u_vec, HEADS)
        hit_b, _ = aggregate_hit(part_b, 3, u_vec, HEADS)
        hit_all, _ = aggregate_hit(part_a + part_b, 3, u_vec, HEADS)
        for h in HEADS:
            blended = (5 * hit_a[h] + 7 * hit_b[h]) / 12
            assert abs(hit_all[h] - blended) < 1e-12

    def test_empty_set_rejected(self):
        with pytest.raises(UndefinedMetricError):
            aggregate_hit([], 3, np.ones(3), HEADS)

    def test_empty_chunk_rejected(self):
        with pytest.raises(UndefinedMetricError):
            Chunk(0, 0, [])


class TestImpressionDiversity:
    def _item(self, cluster, score=0.9, pin_id=0):
        return ChunkItem(pin_id=pin_id, labels=np.zeros(3),
                         probs=np.full(3, score), cluster_id=cluster)

    def test_single_cluster_everywhere(self):
        chunks = [Chunk(u, u, [self._item(4, pin_id=i) for i in range(3)])
                  for u in range(5)]
        assert impression_diversity(chunks, 3, np.ones(3)) == 1.0

    def test_user_with_clusters_3_3_7_contributes_two(self):
        items = [self._item(3, 0.9, 0), self._item(3, 0.8, 1),
                 self._item(7, 0.7, 2)]
        assert impression_diversity([Chunk(0, 0, items)], 3, np.ones(3)) == 2.0

    def test_bounded_by_K_and_cluster_count(self):
        rng = np.random.default_rng(9)
        chunks = [random_chunk(rng, u_id=u, c_id=u) for u in range(30)]
        div = impression_diversity(chunks, 3, np.ones(3))
        assert div <= 3 * max(len(c.items) for c in chunks)
        assert div <= 6  # generator uses 6 cluster ids

    def test_only_topk_items_counted(self):
        items = [self._item(1, 0.9, 0), self._item(2, 0.8, 1),
                 self._item(5, 0.1, 2)]
        assert impression_diversity([Chunk(0, 0, items)], 2, np.ones(3)) == 2.0


def test_evaluate_chunks_report_shape():
    rng = np.random.default_rng(10)
    chunks = [random_chunk(rng, u_id=u % 4, c_id=u) for u in range(10)]
    report = evaluate_chunks(chunks, HEADS, np.ones(3), k=3)
    assert set(report.hit_at_k) == set(HEADS)
    assert report.n_users == 4 and report.n_chunks == 10
    assert report.n_items == sum(len(c.items) for c in chunks)
    base = evaluate_chunks(chunks, HEADS, np.ones(3), k=3)
    rel = report.with_baseline(base).relative_to_baseline
    for h in HEADS:
        if base.hit_at_k[h]:
            assert rel[h] == 0.0
