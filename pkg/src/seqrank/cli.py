"""Command-line harness: data generation, ingestion replay, training,
evaluation, inference, and ablation sweeps."""

from __future__ import annotations

import json
import os
import sys
import time

import click
import numpy as np
import yaml

from .config import (ConfigError, apply_overrides, model_config_from_dict,
                     model_config_to_dict, run_config_from_dict)
from .corpus_io import read_corpus, write_corpus
from .data import build_dataset, evaluate_model
from .datagen import GenerationError, generate_corpus
from .metrics import final_score
from .model import forward_batch, Batch, user_weight, UserAttributes
from .sequence import ActionVocab, ConfigurationError, UserAction, build_sequence
from .store import SequenceStore, replay
from .trainer import (TrainingError, load_checkpoint, retrain_from_scratch,
                      save_checkpoint, train, write_trace)

# spec'd exit codes: 0 success, 1 usage, 2 validation, 3 runtime
click.exceptions.UsageError.exit_code = 1

COMPRESSION_PRESET = ("random_col", "first_col", "random_K", "first_K",
                      "all_cols", "max_pool", "first_K_plus_max", "all_plus_max")


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ConfigurationError, GenerationError) as err:
            _fail(2, type(err).__name__, str(err))
        except (TrainingError, OSError, ValueError) as err:
            _fail(3, type(err).__name__, str(err))
    wrapper.__name__ = fn.__name__
    return wrapper


def _load_config(path, seed, overrides):
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    cfg = run_config_from_dict(raw)
    if seed is not None:
        cfg.seed = seed
        cfg.generator.seed = seed
    return cfg


def write_report(out_dir, name, rows, meta=None):
    """Human-readable TSV plus machine-readable JSONL; metadata separate."""
    os.makedirs(out_dir, exist_ok=True)
    cols = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    with open(os.path.join(out_dir, f"{name}.tsv"), "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c, "")) for c in cols) + "\n")
    with open(os.path.join(out_dir, f"{name}.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    if meta is not None:
        with open(os.path.join(out_dir, f"{name}.meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _common(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True))(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", "out_dir", default="out", show_default=True)(fn)
    fn = click.option("--override", "overrides", multiple=True,
                      help="dotted key=value config override")(fn)
    return fn


@click.group()
def main():
    """Desk-scale realtime-sequence ranking experiments."""


@main.command()
@_common
@_guarded
def generate(config_path, seed, out_dir, overrides):
    """Generate a synthetic corpus into OUT/corpus."""
    cfg = _load_config(config_path, seed, overrides)
    corpus = generate_corpus(cfg.generator)
    corpus_dir = os.path.join(out_dir, "corpus")
    write_corpus(corpus, corpus_dir)
    click.echo(json.dumps({"corpus": corpus_dir, **corpus.stats}))


@main.command("ingest-replay")
@_common
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@_guarded
def ingest_replay(config_path, seed, out_dir, overrides, events_path):
    """Replay an event file into a sequence store and snapshot it."""
    cfg = _load_config(config_path, seed, overrides)
    store = SequenceStore(capacity=2 * cfg.model.seq_len,
                          d_pinsage=cfg.model.d_pinsage)
    counts = replay(events_path, store)
    os.makedirs(out_dir, exist_ok=True)
    snap = os.path.join(out_dir, "store.snapshot")
    store.snapshot(snap)
    click.echo(json.dumps({"snapshot": snap, **counts}))


def _datasets(cfg, corpus_dir):
    corpus = read_corpus(corpus_dir)
    train_ds = build_dataset(corpus, corpus.train, cfg.model)
    eval_ds = build_dataset(corpus, corpus.eval, cfg.model)
    return corpus, train_ds, eval_ds


@main.command("train")
@_common
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--resume", "resume_path", default=None, type=click.Path(exists=True))
@click.option("--from-scratch", is_flag=True,
              help="fresh random init even when a checkpoint exists in OUT")
@_guarded
def train_cmd(config_path, seed, out_dir, overrides, corpus_dir, resume_path,
              from_scratch):
    """Train a ranking model on a generated corpus."""
    cfg = _load_config(config_path, seed, overrides)
    _, train_ds, eval_ds = _datasets(cfg, corpus_dir)
    runner = retrain_from_scratch if from_scratch else train
    kwargs = {} if from_scratch else {"resume": resume_path}
    result = runner(cfg.model, cfg.train, train_ds, eval_ds,
                    seed=cfg.seed, **kwargs)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt.npz")
    save_checkpoint(ckpt, result, model_config_to_dict(cfg.model), cfg.train)
    write_trace(os.path.join(out_dir, "trace.tsv"), result.trace)
    click.echo(json.dumps({"checkpoint": ckpt, "steps": result.step,
                           "final_loss": result.trace[-1]["loss"]}))


@main.command()
@_common
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@_guarded
def evaluate(config_path, seed, out_dir, overrides, corpus_dir, ckpt_path):
    """HIT@K evaluation of a checkpoint on the corpus eval split."""
    cfg = _load_config(config_path, seed, overrides)
    ckpt = load_checkpoint(ckpt_path)
    model_cfg = model_config_from_dict(ckpt["meta"]["model_config"])
    corpus = read_corpus(corpus_dir)
    eval_ds = build_dataset(corpus, corpus.eval, model_cfg)
    report = evaluate_model(eval_ds, ckpt["params"], model_cfg, k=cfg.eval_k)
    row = {"variant": "base",
           **{f"hit{cfg.eval_k}_{h}": v for h, v in report.hit_at_k.items()},
           "diversity": report.diversity, "n_users": report.n_users,
           "n_chunks": report.n_chunks, "n_items": report.n_items}
    write_report(out_dir, "eval_report", [row])
    click.echo(json.dumps(row))


@main.command()
@_common
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--request", "request_path", required=True, type=click.Path(exists=True))
@_guarded
def infer(config_path, seed, out_dir, overrides, ckpt_path, request_path):
    """Score a (user, candidates) request file; deterministic output."""
    cfg = _load_config(config_path, seed, overrides)
    ckpt = load_checkpoint(ckpt_path)
    model_cfg = model_config_from_dict(ckpt["meta"]["model_config"])
    with open(request_path) as fh:
        req = json.load(fh)
    vocab = ActionVocab()
    history = [UserAction(timestamp=a["t"], action_type=a["a"],
                          pin_embedding=np.array(a["emb"]),
                          pin_id=a.get("p", -1), cluster_id=a.get("c", -1))
               for a in req["history"]]
    seq = build_sequence(history, req["t_request"], model_cfg.seq_len)
    n = len(req["candidates"])
    attrs = UserAttributes(*req.get("attrs", ["default"] * 3))
    batch = Batch(
        action_ids=np.tile(seq.action_ids(vocab), (n, 1)),
        pin_embs=np.tile(seq.pin_embeddings(model_cfg.d_pinsage), (n, 1, 1)),
        timestamps=np.tile(seq.timestamps(), (n, 1)),
        pad_mask=np.tile(seq.pad_mask, (n, 1)),
        t_request=np.full(n, float(req["t_request"])),
        candidate=np.array([c["emb"] for c in req["candidates"]]),
        batch_user_emb=np.tile(np.array(req["batch_user_emb"]), (n, 1)),
        other=np.tile(np.array(req["other_features"]), (n, 1)),
        labels=np.zeros((n, model_cfg.n_heads_out)),
        w_u=np.full(n, user_weight(attrs, model_cfg.user_weights)),
    )
    probs = forward_batch(batch, ckpt["params"], model_cfg, training=False).data
    rows = []
    for i, cand in enumerate(req["candidates"]):
        row = {"pin_id": cand.get("pin_id", i)}
        row.update({f"p_{h}": float(probs[i, j])
                    for j, h in enumerate(model_cfg.heads)})
        row["final_score"] = final_score(probs[i], np.array(model_cfg.utilities))
        rows.append(row)
    write_report(out_dir, "infer", rows)
    click.echo(json.dumps(rows))


def _train_and_eval(cfg, corpus, k):
    train_ds = build_dataset(corpus, corpus.train, cfg.model)
    eval_ds = build_dataset(corpus, corpus.eval, cfg.model)
    started = time.time()
    result = train(cfg.model, cfg.train, train_ds, seed=cfg.seed)
    report = evaluate_model(eval_ds, result.params, cfg.model, k=k)
    return report, time.time() - started


def _variant_rows(base_raw, variants, seed, k):
    base_cfg = run_config_from_dict(base_raw)
    if seed is not None:
        base_cfg.seed = seed
        base_cfg.generator.seed = seed
    corpus = generate_corpus(base_cfg.generator)
    rows, meta = [], {"wall_clock_seconds": {}}
    base_report, elapsed = _train_and_eval(base_cfg, corpus, k)
    meta["wall_clock_seconds"]["base"] = elapsed

    def row_for(name, report, cfg):
        model = cfg.model
        row = {"variant": name}
        for h, v in report.hit_at_k.items():
            row[f"hit{k}_{h}"] = v
            base = base_report.hit_at_k[h]
            row[f"delta_{h}_pct"] = 100.0 * (v - base) / base if base else float("nan")
        row["diversity"] = report.diversity
        row["diversity_delta_pct"] = (100.0 * (report.diversity - base_report.diversity)
                                      / base_report.diversity)
        row["z_size"] = model.z_dim
        return row

    rows.append(row_for("base", base_report, base_cfg))
    for name, overrides in variants:
        raw = apply_overrides(json.loads(json.dumps(base_raw)), overrides)
        cfg = run_config_from_dict(raw)
        if seed is not None:
            cfg.seed = seed
            cfg.generator.seed = seed
        report, elapsed = _train_and_eval(cfg, corpus, k)
        meta["wall_clock_seconds"][name] = elapsed
        rows.append(row_for(name, report, cfg))
    return rows, meta


@main.command()
@_common
@click.option("--spec", "spec_path", default=None, type=click.Path(exists=True),
              help="YAML ablation spec: {variants: [{name, overrides: {k: v}}]}")
@click.option("--preset", type=click.Choice(["compression", "features", "pe"]),
              default=None)
@_guarded
def ablate(config_path, seed, out_dir, overrides, spec_path, preset):
    """Train and evaluate named config variants against the base config."""
    with open(config_path) as fh:
        raw = yaml.safe_load(fh) or {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    variants = []
    if spec_path:
        with open(spec_path) as fh:
            spec = yaml.safe_load(fh) or {}
        for v in spec.get("variants", []):
            variants.append((v["name"], [f"{kk}={vv}" for kk, vv in
                             v.get("overrides", {}).items()]))
    if preset == "compression":
        variants += [(m, [f"model.compression={m}"]) for m in COMPRESSION_PRESET]
    elif preset == "features":
        variants += [("drop_transact", ["model.use_transact=false"]),
                     ("drop_batch_emb", ["model.use_batch_emb=false"]),
                     ("drop_other", ["model.use_other=false"])]
    elif preset == "pe":
        variants += [(pe, [f"model.positional_encoding={pe}"])
                     for pe in ("sinusoidal", "learned", "linear_projection")]
    if not variants:
        raise ConfigError("ablate needs --spec or --preset")
    cfg = run_config_from_dict(raw)
    rows, meta = _variant_rows(raw, variants, seed, cfg.eval_k)
    write_report(out_dir, "ablation", rows, meta=meta)
    click.echo(json.dumps(rows))


@main.command("seqlen-sweep")
@_common
@click.option("--lengths", default="10,25,50,100", show_default=True)
@click.option("--fusions", default="concat,append", show_default=True)
@_guarded
def seqlen_sweep(config_path, seed, out_dir, overrides, lengths, fusions):
    """HIT@K across sequence lengths and early-fusion modes."""
    from scipy.stats import spearmanr

    with open(config_path) as fh:
        raw = yaml.safe_load(fh) or {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    base_cfg = run_config_from_dict(raw)
    if seed is not None:
        base_cfg.seed = seed
        base_cfg.generator.seed = seed
    lengths = [int(x) for x in lengths.split(",")]
    fusions = [f.strip() for f in fusions.split(",")]
    corpus = generate_corpus(base_cfg.generator)
    rows, meta = [], {"wall_clock_seconds": {}}
    repin_by_fusion = {f: [] for f in fusions}
    for fusion in fusions:
        for length in lengths:
            raw_v = apply_overrides(json.loads(json.dumps(raw)),
                                    [f"model.seq_len={length}",
                                     f"model.fusion={fusion}",
                                     f"model.K={min(base_cfg.model.K, length)}"])
            cfg = run_config_from_dict(raw_v)
            if seed is not None:
                cfg.seed = seed
                cfg.generator.seed = seed
            report, elapsed = _train_and_eval(cfg, corpus, base_cfg.eval_k)
            meta["wall_clock_seconds"][f"{fusion}@{length}"] = elapsed
            row = {"fusion": fusion, "seq_len": length}
            row.update({f"hit{base_cfg.eval_k}_{h}": v
                        for h, v in report.hit_at_k.items()})
            rows.append(row)
            if "repin" in report.hit_at_k:
                repin_by_fusion[fusion].append(report.hit_at_k["repin"])
    for fusion in fusions:
        vals = repin_by_fusion[fusion]
        corr = (float(spearmanr(lengths, vals).statistic)
                if len(set(vals)) > 1 else float("nan"))
        rows.append({"fusion": fusion, "seq_len": "spearman_repin", "trend": corr})
    write_report(out_dir, "seqlen_sweep", rows, meta=meta)
    click.echo(json.dumps(rows))


if __name__ == "__main__":
    main()
