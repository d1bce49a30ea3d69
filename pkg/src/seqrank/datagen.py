"""Synthetic corpus generator with planted short-term interest drift.

Each user carries a stable long-term interest vector plus a piecewise
constant "focus" cluster that switches at random times; engagement labels
at request time depend mostly on the focus at that moment, so recent
actions carry signal that a recency-blind summary of the history loses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import TrainingExample, UserAttributes
from .sequence import UserAction, build_sequence

SECONDS_PER_DAY = 86400

STATES = ("daily", "weekly", "monthly", "dormant")
GENDERS = ("a", "b", "unknown")
LOCATIONS = ("us", "eu", "apac", "other")


class GenerationError(ValueError):
    pass


@dataclass
class LabelModel:
    """Logistic label model on planted affinity, one threshold per head."""
    sharpness: float = 6.0
    w_short: float = 0.75
    w_long: float = 0.25
    theta_click: float = 0.7
    theta_repin: float = 0.78
    theta_hide: float = 0.4


@dataclass
class GeneratorConfig:
    n_users: int = 100
    n_pins: int = 500
    n_clusters: int = 6
    d_pinsage: int = 8
    horizon_days: float = 30.0
    actions_per_user: tuple = (60, 140)
    drift_rate: float = 0.25          # expected focus switches per day
    trend_rate: float = 0.0           # per-cluster label-bias random walk scale
    affinity_coef: float = 1.0        # action-type sensitivity to affinity
    label_model: LabelModel = field(default_factory=LabelModel)
    pos_neg_ratio: float = 1.5        # negatives kept per positive
    chunk_size: int = 12
    train_impressions: int = 6        # per user
    eval_impressions: int = 4         # per user
    train_frac: float = 0.7           # time-based split point
    focus_candidate_frac: float = 0.25
    longterm_candidate_frac: float = 0.1
    sigma_pin: float = 0.35
    sigma_batch_emb: float = 0.25
    other_dim: int = 8
    min_cluster_angle_deg: float = 40.0
    seed: int = 0

    def validate(self):
        if self.pos_neg_ratio <= 0:
            raise GenerationError("pos:neg ratio must be positive")
        if self.drift_rate < 0 or self.trend_rate < 0:
            raise GenerationError("rates must be non-negative")
        for name in ("n_users", "n_pins", "n_clusters", "d_pinsage"):
            if getattr(self, name) < 1:
                raise GenerationError(f"{name} must be >= 1")


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1.0, n)


@dataclass
class SyntheticUser:
    u_id: int
    long_term: np.ndarray
    batch_emb: np.ndarray
    focus_times: np.ndarray       # switch timestamps (seconds), starts at 0
    focus_clusters: np.ndarray    # cluster id active from each switch time
    attrs: UserAttributes
    n_actions: int

    def focus_at(self, t):
        i = np.searchsorted(self.focus_times, t, side="right") - 1
        return int(self.focus_clusters[max(i, 0)])


@dataclass
class SyntheticWorld:
    config: GeneratorConfig
    centroids: np.ndarray          # (n_clusters, d)
    pin_embs: np.ndarray           # (n_pins, d), unit norm
    pin_clusters: np.ndarray       # nearest-centroid assignment
    users: list
    cluster_bias: np.ndarray       # (n_days + 1, n_clusters) label-bias walk

    def interest_at(self, user, t):
        mix = 0.75 * self.centroids[user.focus_at(t)] + 0.25 * user.long_term
        return _unit(mix)

    def bias_at(self, cluster, t):
        day = min(int(t / SECONDS_PER_DAY), self.cluster_bias.shape[0] - 1)
        return float(self.cluster_bias[day, cluster])


def _make_centroids(cfg, rng):
    min_cos = np.cos(np.deg2rad(cfg.min_cluster_angle_deg))
    centroids = []
    for _ in range(20000):
        c = _unit(rng.normal(size=cfg.d_pinsage))
        if all(abs(np.dot(c, o)) < min_cos for o in centroids):
            centroids.append(c)
        if len(centroids) == cfg.n_clusters:
            return np.array(centroids)
    raise GenerationError(
        f"cannot separate {cfg.n_clusters} clusters by "
        f"{cfg.min_cluster_angle_deg} degrees in {cfg.d_pinsage} dimensions")


def generate_world(cfg):
    """Deterministic world (pins, users, focus schedules) from cfg.seed."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(root)
    horizon = cfg.horizon_days * SECONDS_PER_DAY

    centroids = _make_centroids(cfg, rng)
    parent = rng.integers(0, cfg.n_clusters, size=cfg.n_pins)
    pin_embs = _unit(centroids[parent] +
                     cfg.sigma_pin * rng.normal(size=(cfg.n_pins, cfg.d_pinsage)))
    pin_clusters = np.argmax(pin_embs @ centroids.T, axis=1)

    n_days = int(np.ceil(cfg.horizon_days))
    walk = rng.normal(size=(n_days + 1, cfg.n_clusters)).cumsum(axis=0)
    cluster_bias = cfg.trend_rate * walk

    lo, hi = cfg.actions_per_user
    users = []
    for u in range(cfg.n_users):
        urng = np.random.default_rng(root.spawn(1)[0])
        home = int(urng.integers(0, cfg.n_clusters))
        long_term = _unit(centroids[home] + 0.5 * urng.normal(size=cfg.d_pinsage))
        batch_emb = _unit(long_term +
                          cfg.sigma_batch_emb * urng.normal(size=cfg.d_pinsage))
        # piecewise-constant focus: Poisson(drift_rate per day) switch times
        n_switches = urng.poisson(cfg.drift_rate * cfg.horizon_days)
        times = np.concatenate([[0.0], np.sort(urng.uniform(0, horizon, n_switches))])
        clusters = np.empty(len(times), dtype=int)
        clusters[0] = home
        for i in range(1, len(times)):
            choices = [c for c in range(cfg.n_clusters) if c != clusters[i - 1]]
            clusters[i] = choices[urng.integers(0, len(choices))] if choices \
                else clusters[i - 1]
        attrs = UserAttributes(
            state=STATES[urng.integers(0, len(STATES))],
            gender=GENDERS[urng.integers(0, len(GENDERS))],
            location=LOCATIONS[urng.integers(0, len(LOCATIONS))])
        users.append(SyntheticUser(
            u_id=u, long_term=long_term, batch_emb=batch_emb,
            focus_times=times, focus_clusters=clusters, attrs=attrs,
            n_actions=int(urng.integers(lo, hi + 1))))
    return SyntheticWorld(cfg, centroids, pin_embs, pin_clusters, users,
                          cluster_bias)


def _action_type_probs(affinity, coef):
    # click/repin favored at high affinity, hide at low, view is the floor
    logits = np.array([
        2.0 * coef * affinity - 0.5,    # click
        2.5 * coef * affinity - 1.2,    # repin
        -2.5 * coef * affinity - 1.0,   # hide
        0.0,                            # view
    ])
    e = np.exp(logits - logits.max())
    return e / e.sum()


def generate_history(world, user, rng):
    """Timestamped engagement events driven by the user's focus trajectory."""
    cfg = world.config
    horizon = cfg.horizon_days * SECONDS_PER_DAY
    ts = np.sort(rng.uniform(0, horizon, size=user.n_actions))
    ts = np.floor(ts).astype(np.int64) + np.arange(user.n_actions)  # strict increase
    actions = []
    for t in ts:
        s = world.interest_at(user, t)
        pool = rng.integers(0, cfg.n_pins, size=30)
        logits = 6.0 * (world.pin_embs[pool] @ s)
        p = np.exp(logits - logits.max())
        pin = int(pool[rng.choice(len(pool), p=p / p.sum())])
        affinity = float(world.pin_embs[pin] @ s)
        a_type = int(rng.choice(4, p=_action_type_probs(affinity, cfg.affinity_coef)))
        actions.append(UserAction(timestamp=int(t), action_type=a_type,
                                  pin_embedding=world.pin_embs[pin],
                                  pin_id=pin, cluster_id=int(world.pin_clusters[pin])))
    return actions


def label_probs(world, user, pin, t):
    """Per-head Bernoulli means (click, repin, hide) for a candidate at t."""
    cfg = world.config
    lm = cfg.label_model
    s = world.interest_at(user, t)
    emb = world.pin_embs[pin]
    g = (lm.w_short * float(emb @ s) + lm.w_long * float(emb @ user.long_term)
         + world.bias_at(int(world.pin_clusters[pin]), t))
    return np.array([
        1.0 / (1.0 + np.exp(-lm.sharpness * (g - lm.theta_click))),
        1.0 / (1.0 + np.exp(-lm.sharpness * (g - lm.theta_repin))),
        1.0 / (1.0 + np.exp(-lm.sharpness * (-g - lm.theta_hide))),
    ])


def _sample_candidates(world, user, t, rng):
    cfg = world.config
    n = cfg.chunk_size
    n_focus = int(round(cfg.focus_candidate_frac * n))
    n_long = int(round(cfg.longterm_candidate_frac * n))
    focus = user.focus_at(t)
    focus_pins = np.flatnonzero(world.pin_clusters == focus)
    home_pins = np.flatnonzero(world.pin_clusters == user.focus_clusters[0])
    picks = []
    if focus_pins.size:
        picks.extend(rng.choice(focus_pins, size=n_focus, replace=True))
    if home_pins.size:
        picks.extend(rng.choice(home_pins, size=n_long, replace=True))
    while len(picks) < n:
        picks.append(int(rng.integers(0, cfg.n_pins)))
    picks = np.array(picks[:n])
    return rng.permutation(picks)  # randomized within-chunk order


@dataclass
class ExampleRecord:
    """One labeled (user, candidate, request-time) impression."""
    u_id: int
    c_id: int
    t_request: int
    pin_id: int
    labels: tuple


@dataclass
class Corpus:
    config: GeneratorConfig
    world: SyntheticWorld
    histories: dict                # u_id -> list[UserAction]
    train: list                    # ExampleRecord, downsampled
    eval: list                     # ExampleRecord, unsampled
    stats: dict

    def other_features(self, u_id, pin_id):
        """Weakly informative stand-in for the production dense features."""
        user = self.world.users[u_id]
        rng = np.random.default_rng((u_id * 1000003 + pin_id * 7919) % (2 ** 31))
        vec = rng.normal(size=self.config.other_dim)
        vec[0] = np.log1p(user.n_actions) / 5.0
        vec[1] = 0.25 * float(self.world.pin_embs[pin_id] @ user.long_term)
        return vec


def generate_examples(world, train_span=None, eval_span=None):
    """Labeled impressions: downsampled train split plus unsampled eval chunks.

    Spans are (start_frac, end_frac) of the horizon; defaults come from
    config.train_frac with eval occupying the remainder, so every eval
    request time strictly exceeds every train request time.
    """
    cfg = world.config
    horizon = cfg.horizon_days * SECONDS_PER_DAY
    if train_span is None:
        train_span = (0.0, cfg.train_frac)
    if eval_span is None:
        eval_span = (cfg.train_frac, 1.0)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2024]))

    histories = {}
    train_pool, eval_records = [], []
    c_id = 0
    for user in world.users:
        urng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, user.u_id]))
        histories[user.u_id] = generate_history(world, user, urng)
        for split, span, n_impr in (("train", train_span, cfg.train_impressions),
                                    ("eval", eval_span, cfg.eval_impressions)):
            times = np.sort(urng.uniform(span[0] * horizon, span[1] * horizon,
                                         size=n_impr)).astype(np.int64)
            for t in times:
                pins = _sample_candidates(world, user, t, urng)
                for pin in pins:
                    p = label_probs(world, user, int(pin), t)
                    y = (urng.random(3) < p).astype(int)
                    rec = ExampleRecord(user.u_id, c_id, int(t), int(pin),
                                        tuple(int(v) for v in y))
                    (train_pool if split == "train" else eval_records).append(rec)
                c_id += 1

    positives = [r for r in train_pool if any(r.labels)]
    negatives = [r for r in train_pool if not any(r.labels)]
    want_neg = int(round(len(positives) * cfg.pos_neg_ratio))
    if want_neg > len(negatives):
        raise GenerationError(
            f"pos:neg ratio 1:{cfg.pos_neg_ratio} unattainable: "
            f"{len(positives)} positives but only {len(negatives)} negatives")
    keep_idx = rng.choice(len(negatives), size=want_neg, replace=False)
    train = positives + [negatives[i] for i in sorted(keep_idx)]
    order = rng.permutation(len(train))
    train = [train[i] for i in order]

    stats = {
        "train_pool": len(train_pool),
        "train_pool_positive_rate": len(positives) / max(len(train_pool), 1),
        "train_kept": len(train),
        "train_positives": len(positives),
        "train_negatives": want_neg,
        "eval_examples": len(eval_records),
        "eval_positive_rate":
            float(np.mean([1.0 if any(r.labels) else 0.0 for r in eval_records])),
        "n_chunks": c_id,
    }
    return Corpus(cfg, world, histories, train, eval_records, stats)


def generate_corpus(cfg, train_span=None, eval_span=None):
    return generate_examples(generate_world(cfg), train_span, eval_span)


def make_training_example(corpus, record, max_len):
    """Materialize one ExampleRecord into a full TrainingExample."""
    world = corpus.world
    user = world.users[record.u_id]
    history = [a for a in corpus.histories[record.u_id]
               if a.timestamp <= record.t_request]
    seq = build_sequence(history, record.t_request, max_len)
    return TrainingExample(
        user_sequence=seq,
        t_request=float(record.t_request),
        candidate_emb=world.pin_embs[record.pin_id],
        candidate_pin_id=record.pin_id,
        candidate_cluster=int(world.pin_clusters[record.pin_id]),
        batch_user_emb=user.batch_emb,
        other_features=corpus.other_features(record.u_id, record.pin_id),
        labels=np.array(record.labels, dtype=np.float64),
        attrs=user.attrs,
        u_id=record.u_id,
        c_id=record.c_id,
    )
