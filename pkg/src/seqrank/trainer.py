"""Mini-batch training: Adam with linear warmup and cosine annealing,
bitwise-resumable checkpoints, and retrain-from-scratch support."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor
from .data import evaluate_model
from .model import batch_weighted_loss, forward_batch, init_model_params
from .sequence import ActionVocab, ConfigurationError

CHECKPOINT_SCHEMA = "seqrank-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    peak_lr: float = 0.0048
    warmup_steps: int = 200
    total_steps: int = 1000
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0       # 0 disables clipping
    eval_every: int = 0          # 0 disables periodic eval

    def validate(self):
        if self.peak_lr <= 0:
            raise ConfigurationError("peak_lr must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigurationError("need 0 <= warmup_steps <= total_steps")


def lr_schedule(step, cfg):
    """Linear 0 -> peak over warmup, then cosine annealing to min_lr."""
    if step < 0:
        raise ConfigurationError("step must be non-negative")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return cfg.min_lr
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    frac = (step - cfg.warmup_steps) / span
    return cfg.min_lr + (cfg.peak_lr - cfg.min_lr) * 0.5 * (1.0 + np.cos(np.pi * frac))


class Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, params, lr):
        c = self.cfg
        self.t += 1
        if c.grad_clip > 0:
            norm = np.sqrt(sum(float((p.grad ** 2).sum())
                               for p in params.values() if p.grad is not None))
            scale = min(1.0, c.grad_clip / max(norm, 1e-12))
        else:
            scale = 1.0
        for k, p in params.items():
            g = (p.grad if p.grad is not None else np.zeros_like(p.data)) * scale
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / (1 - c.beta1 ** self.t)
            v_hat = self.v[k] / (1 - c.beta2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + c.eps)


@dataclass
class TrainResult:
    params: dict
    trace: list
    step: int
    rng_state: dict
    optimizer: Adam


def save_checkpoint(path, result, model_config_dict, train_config):
    arrays = {}
    for k, p in result.params.items():
        arrays[f"param::{k}"] = p.data
        arrays[f"m::{k}"] = result.optimizer.m[k]
        arrays[f"v::{k}"] = result.optimizer.v[k]
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "step": result.step,
        "adam_t": result.optimizer.t,
        "rng_state": result.rng_state,
        "model_config": model_config_dict,
        "train_config": asdict(train_config),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(bytes(npz["meta"].tobytes()).decode())
        if (meta.get("schema") != CHECKPOINT_SCHEMA
                or meta.get("version") != CHECKPOINT_VERSION):
            raise TrainingError(f"checkpoint schema mismatch: {meta.get('schema')}")
        params, m, v = {}, {}, {}
        for key in npz.files:
            if key.startswith("param::"):
                params[key[7:]] = Tensor(npz[key].copy(), requires_grad=True)
            elif key.startswith("m::"):
                m[key[3:]] = npz[key].copy()
            elif key.startswith("v::"):
                v[key[3:]] = npz[key].copy()
    return {"meta": meta, "params": params, "m": m, "v": v}


def train(model_config, train_config, train_data, eval_data=None, seed=0,
          resume=None, vocab=None, stop_step=None):
    """Run (or resume) the training loop; deterministic under a fixed seed.

    Batches are sampled per step (without replacement within a step) from a
    single RNG stream whose state is checkpointed, so resuming mid-run
    reproduces the uninterrupted trace bitwise at 64-bit. stop_step cuts the
    run short (simulating an interruption) without altering the schedule.
    """
    train_config.validate()
    vocab = vocab or ActionVocab()
    if len(train_data) == 0:
        raise TrainingError("empty training dataset")

    if resume is not None:
        ckpt = load_checkpoint(resume)
        params = ckpt["params"]
        opt = Adam(params, train_config)
        opt.m, opt.v, opt.t = ckpt["m"], ckpt["v"], ckpt["meta"]["adam_t"]
        start = ckpt["meta"]["step"]
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt["meta"]["rng_state"]
    else:
        params = init_model_params(model_config, vocab, seed=seed)
        opt = Adam(params, train_config)
        start = 0
        rng = np.random.default_rng(np.random.SeedSequence([seed, 31337]))

    M = model_config.label_weights
    trace = []
    n = len(train_data)
    end = train_config.total_steps if stop_step is None \
        else min(stop_step, train_config.total_steps)
    for step in range(start, end):
        idx = rng.choice(n, size=min(train_config.batch_size, n), replace=False)
        batch = train_data.slice(idx)
        for p in params.values():
            p.zero_grad()
        probs = forward_batch(batch, params, model_config, vocab,
                              training=True, rng=rng)
        loss = batch_weighted_loss(probs, batch.labels, M, batch.w_u,
                                   model_config.neg_fallback)
        if not np.isfinite(loss.data):
            raise TrainingError(
                f"non-finite loss at step {step}; "
                f"batch indices {idx[:8].tolist()}...")
        loss.backward()
        lr = lr_schedule(step + 1, train_config)
        opt.step(params, lr)

        entry = {"step": step + 1, "lr": lr, "loss": float(loss.data)}
        if (eval_data is not None and train_config.eval_every
                and (step + 1) % train_config.eval_every == 0):
            report = evaluate_model(eval_data, params, model_config, vocab)
            entry.update({f"hit3_{h}": v for h, v in report.hit_at_k.items()})
        trace.append(entry)

    return TrainResult(params=params, trace=trace, step=end,
                       rng_state=rng.bit_generator.state, optimizer=opt)


def retrain_from_scratch(model_config, train_config, fresh_data, eval_data=None,
                         seed=0, vocab=None):
    """Full rerun on fresh data with a fresh init; no parameter carryover."""
    return train(model_config, train_config, fresh_data, eval_data,
                 seed=seed, vocab=vocab)


def write_trace(path, trace):
    """Delimited text trace: one row per step, header names every column."""
    cols = []
    for entry in trace:
        for k in entry:
            if k not in cols:
                cols.append(k)
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for entry in trace:
            fh.write("\t".join(repr(entry.get(c, "")) for c in cols) + "\n")
