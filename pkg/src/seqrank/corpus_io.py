"""Corpus persistence: line-delimited record files with version headers."""

from __future__ import annotations

import json
import os

import numpy as np

from .config import ConfigError, _build, _plain
from .datagen import (Corpus, ExampleRecord, GeneratorConfig, LabelModel,
                      SyntheticUser, SyntheticWorld)
from .model import UserAttributes
from .sequence import UserAction

CORPUS_SCHEMA = "seqrank-corpus"
CORPUS_VERSION = 1


def _header():
    return json.dumps({"schema": CORPUS_SCHEMA, "version": CORPUS_VERSION})


def _check_header(line, path):
    head = json.loads(line)
    if head.get("schema") != CORPUS_SCHEMA or head.get("version") != CORPUS_VERSION:
        raise ConfigError(f"corpus schema mismatch in {path}: {head}")


def write_corpus(corpus, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    world = corpus.world
    with open(os.path.join(out_dir, "world.json"), "w") as fh:
        json.dump({
            "schema": CORPUS_SCHEMA, "version": CORPUS_VERSION,
            "config": _plain(corpus.config),
            "centroids": world.centroids.tolist(),
            "pin_embs": world.pin_embs.tolist(),
            "pin_clusters": world.pin_clusters.tolist(),
            "cluster_bias": world.cluster_bias.tolist(),
            "stats": corpus.stats,
            "users": [{
                "u_id": u.u_id,
                "long_term": u.long_term.tolist(),
                "batch_emb": u.batch_emb.tolist(),
                "focus_times": u.focus_times.tolist(),
                "focus_clusters": u.focus_clusters.tolist(),
                "attrs": [u.attrs.state, u.attrs.gender, u.attrs.location],
                "n_actions": u.n_actions,
            } for u in world.users],
        }, fh)

    with open(os.path.join(out_dir, "actions.jsonl"), "w") as fh:
        fh.write(_header() + "\n")
        for u_id in sorted(corpus.histories):
            for a in corpus.histories[u_id]:
                fh.write(json.dumps({
                    "u": u_id, "t": a.timestamp, "a": a.action_type,
                    "p": a.pin_id, "c": a.cluster_id}) + "\n")

    for split in ("train", "eval"):
        records = getattr(corpus, split)
        with open(os.path.join(out_dir, f"{split}.jsonl"), "w") as fh:
            fh.write(_header() + "\n")
            for r in records:
                fh.write(json.dumps({
                    "u": r.u_id, "c": r.c_id, "t": r.t_request,
                    "p": r.pin_id, "y": list(r.labels)}) + "\n")


def read_corpus(corpus_dir):
    with open(os.path.join(corpus_dir, "world.json")) as fh:
        blob = json.load(fh)
    if blob.get("schema") != CORPUS_SCHEMA or blob.get("version") != CORPUS_VERSION:
        raise ConfigError(f"corpus schema mismatch in world.json: "
                          f"{blob.get('schema')} v{blob.get('version')}")
    raw_cfg = dict(blob["config"])
    raw_cfg["actions_per_user"] = tuple(raw_cfg["actions_per_user"])
    raw_cfg["label_model"] = _build(LabelModel, raw_cfg["label_model"],
                                    "generator.label_model")
    cfg = _build(GeneratorConfig, raw_cfg, "generator")
    users = [SyntheticUser(
        u_id=u["u_id"],
        long_term=np.array(u["long_term"]),
        batch_emb=np.array(u["batch_emb"]),
        focus_times=np.array(u["focus_times"]),
        focus_clusters=np.array(u["focus_clusters"], dtype=int),
        attrs=UserAttributes(*u["attrs"]),
        n_actions=u["n_actions"]) for u in blob["users"]]
    world = SyntheticWorld(
        config=cfg,
        centroids=np.array(blob["centroids"]),
        pin_embs=np.array(blob["pin_embs"]),
        pin_clusters=np.array(blob["pin_clusters"], dtype=int),
        users=users,
        cluster_bias=np.array(blob["cluster_bias"]))

    histories = {u.u_id: [] for u in users}
    path = os.path.join(corpus_dir, "actions.jsonl")
    with open(path) as fh:
        _check_header(fh.readline(), path)
        for line in fh:
            rec = json.loads(line)
            histories[rec["u"]].append(UserAction(
                timestamp=rec["t"], action_type=rec["a"],
                pin_embedding=world.pin_embs[rec["p"]],
                pin_id=rec["p"], cluster_id=rec["c"]))

    splits = {}
    for split in ("train", "eval"):
        path = os.path.join(corpus_dir, f"{split}.jsonl")
        with open(path) as fh:
            _check_header(fh.readline(), path)
            splits[split] = [
                ExampleRecord(rec["u"], rec["c"], rec["t"], rec["p"],
                              tuple(rec["y"]))
                for rec in map(json.loads, fh)]

    return Corpus(config=cfg, world=world, histories=histories,
                  train=splits["train"], eval=splits["eval"],
                  stats=blob.get("stats", {}))
