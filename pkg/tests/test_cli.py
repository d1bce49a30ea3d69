"""End-to-end command-line harness tests on a miniature corpus."""

import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from seqrank.cli import main
from seqrank.store import ActionEvent, write_events

TINY_CONFIG = {
    "seed": 0,
    "model": {"seq_len": 8, "d_pinsage": 4, "d_action": 4, "n_layers": 1,
              "d_hidden": 8, "dropout": 0.1, "K": 2, "head_hidden": 8,
              "batch_emb_dim": 4, "other_dim": 4},
    "train": {"batch_size": 32, "peak_lr": 0.01, "warmup_steps": 2,
              "total_steps": 8},
    "generator": {"n_users": 12, "n_pins": 80, "n_clusters": 3,
                  "d_pinsage": 4, "horizon_days": 8.0,
                  "actions_per_user": [15, 25], "train_impressions": 3,
                  "eval_impressions": 2, "chunk_size": 6, "other_dim": 4,
                  "pos_neg_ratio": 0.8, "seed": 0},
    "eval_k": 3,
}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG))
    return str(path)


@pytest.fixture()
def trained(runner, config_path, tmp_path):
    """Generate a corpus and train once; shared by the downstream commands."""
    out = str(tmp_path / "run")
    res = runner.invoke(main, ["generate", "--config", config_path, "--out", out])
    assert res.exit_code == 0, res.output
    corpus = json.loads(res.output)["corpus"]
    res = runner.invoke(main, ["train", "--config", config_path, "--out", out,
                               "--corpus", corpus])
    assert res.exit_code == 0, res.output
    ckpt = json.loads(res.output)["checkpoint"]
    return {"out": out, "corpus": corpus, "ckpt": ckpt}


class TestGenerate:
    def test_writes_corpus_files(self, runner, config_path, tmp_path):
        out = str(tmp_path / "g")
        res = runner.invoke(main, ["generate", "--config", config_path,
                                   "--out", out])
        assert res.exit_code == 0, res.output
        for name in ("world.json", "actions.jsonl", "train.jsonl", "eval.jsonl"):
            assert (tmp_path / "g" / "corpus" / name).exists()

    def test_reproducible_byte_identical(self, runner, config_path, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            res = runner.invoke(main, ["generate", "--config", config_path,
                                       "--out", out])
            assert res.exit_code == 0
            outs.append(tmp_path / sub / "corpus")
        for name in ("world.json", "actions.jsonl", "train.jsonl", "eval.jsonl"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_unknown_config_key_exit_2(self, runner, tmp_path):
        bad = dict(TINY_CONFIG)
        bad["model"] = {**TINY_CONFIG["model"], "bogus_knob": 1}
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(bad))
        res = runner.invoke(main, ["generate", "--config", str(path),
                                   "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_missing_config_exit_1(self, runner, tmp_path):
        res = runner.invoke(main, ["generate", "--config",
                                   str(tmp_path / "absent.yaml")])
        assert res.exit_code == 1


class TestIngestReplay:
    def test_replay_and_snapshot(self, runner, config_path, tmp_path):
        events = [ActionEvent(user_id=1, pin_id=p, action_type=0, timestamp=t,
                              pin_embedding=(0.1, 0.2, 0.3, 0.4))
                  for p, t in ((1, 10), (2, 20), (1, 10), (3, -5))]
        path = tmp_path / "events.jsonl"
        write_events(path, events)
        out = str(tmp_path / "ing")
        res = runner.invoke(main, ["ingest-replay", "--config", config_path,
                                   "--out", out, "--events", str(path)])
        assert res.exit_code == 0, res.output
        payload = json.loads(res.output)
        assert payload["accept"] == 2
        assert payload["duplicate"] == 1
        assert payload["rejected"] == 1
        assert (tmp_path / "ing" / "store.snapshot").exists()


class TestTrainEvaluate:
    def test_train_writes_checkpoint_and_trace(self, trained, tmp_path):
        assert (tmp_path / "run" / "model.ckpt.npz").exists()
        trace = (tmp_path / "run" / "trace.tsv").read_text().splitlines()
        assert trace[0].split("\t")[:3] == ["step", "lr", "loss"]
        assert len(trace) == 1 + TINY_CONFIG["train"]["total_steps"]

    def test_evaluate_report(self, runner, config_path, trained, tmp_path):
        out = str(tmp_path / "ev")
        res = runner.invoke(main, ["evaluate", "--config", config_path,
                                   "--out", out, "--corpus", trained["corpus"],
                                   "--checkpoint", trained["ckpt"]])
        assert res.exit_code == 0, res.output
        row = json.loads(res.output)
        for key in ("hit3_click", "hit3_repin", "hit3_hide", "diversity"):
            assert key in row
        assert (tmp_path / "ev" / "eval_report.tsv").exists()
        assert (tmp_path / "ev" / "eval_report.jsonl").exists()

    def test_evaluate_reproducible(self, runner, config_path, trained, tmp_path):
        blobs = []
        for sub in ("e1", "e2"):
            out = tmp_path / sub
            res = runner.invoke(main, ["evaluate", "--config", config_path,
                                       "--out", str(out),
                                       "--corpus", trained["corpus"],
                                       "--checkpoint", trained["ckpt"]])
            assert res.exit_code == 0
            blobs.append((out / "eval_report.tsv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_resume_matches_full_run(self, runner, config_path, trained,
                                     tmp_path):
        # a fresh full run from the same seed reproduces the trained loss tail
        out = str(tmp_path / "full")
        res = runner.invoke(main, ["train", "--config", config_path,
                                   "--out", out, "--corpus", trained["corpus"],
                                   "--from-scratch"])
        assert res.exit_code == 0, res.output
        a = (tmp_path / "run" / "trace.tsv").read_text()
        b = (tmp_path / "full" / "trace.tsv").read_text()
        assert a == b

    def test_bad_checkpoint_exit_3(self, runner, config_path, trained,
                                   tmp_path):
        bad = tmp_path / "bad.npz"
        np.savez_compressed(bad, meta=np.frombuffer(
            b'{"schema": "other", "version": 1}', dtype=np.uint8))
        res = runner.invoke(main, ["evaluate", "--config", config_path,
                                   "--out", str(tmp_path / "x"),
                                   "--corpus", trained["corpus"],
                                   "--checkpoint", str(bad)])
        assert res.exit_code == 3


class TestInfer:
    def _request(self, tmp_path, rng):
        req = {
            "t_request": 500_000,
            "history": [{"t": 500_000 - k * 3600, "a": int(rng.integers(0, 4)),
                         "emb": rng.normal(size=4).tolist(), "p": k}
                        for k in range(1, 6)],
            "candidates": [{"pin_id": 11, "emb": rng.normal(size=4).tolist()},
                           {"pin_id": 12, "emb": rng.normal(size=4).tolist()}],
            "batch_user_emb": rng.normal(size=4).tolist(),
            "other_features": rng.normal(size=4).tolist(),
        }
        path = tmp_path / "request.json"
        path.write_text(json.dumps(req))
        return str(path)

    def test_infer_deterministic(self, runner, config_path, trained, tmp_path):
        req = self._request(tmp_path, np.random.default_rng(0))
        blobs = []
        for sub in ("i1", "i2"):
            out = tmp_path / sub
            res = runner.invoke(main, ["infer", "--config", config_path,
                                       "--out", str(out),
                                       "--checkpoint", trained["ckpt"],
                                       "--request", req])
            assert res.exit_code == 0, res.output
            blobs.append((out / "infer.tsv").read_bytes())
            rows = json.loads(res.output)
            assert len(rows) == 2
            for row in rows:
                assert 0.0 < row["p_repin"] < 1.0
                assert "final_score" in row
        assert blobs[0] == blobs[1]


class TestAblate:
    def test_compression_preset_sizes(self, runner, config_path, tmp_path):
        out = str(tmp_path / "ab")
        res = runner.invoke(main, ["ablate", "--config", config_path,
                                   "--out", out, "--preset", "compression"])
        assert res.exit_code == 0, res.output
        rows = json.loads(res.output)
        assert len(rows) == 9  # base + the 8 compression modes
        S, d, K = 8, 12, 2
        expected = {"random_col": d, "first_col": d, "random_K": K * d,
                    "first_K": K * d, "all_cols": S * d, "max_pool": d,
                    "first_K_plus_max": (K + 1) * d, "all_plus_max": (S + 1) * d}
        by_name = {r["variant"]: r for r in rows}
        for mode, size in expected.items():
            assert by_name[mode]["z_size"] == size
        assert by_name["base"]["delta_repin_pct"] == 0.0
        meta = json.loads((tmp_path / "ab" / "ablation.meta.json").read_text())
        assert set(meta["wall_clock_seconds"]) == set(by_name)

    def test_feature_preset_has_drop_rows(self, runner, config_path, tmp_path):
        out = str(tmp_path / "feat")
        res = runner.invoke(main, ["ablate", "--config", config_path,
                                   "--out", out, "--preset", "features"])
        assert res.exit_code == 0, res.output
        names = {r["variant"] for r in json.loads(res.output)}
        assert names == {"base", "drop_transact", "drop_batch_emb", "drop_other"}

    def test_spec_file_variants(self, runner, config_path, tmp_path):
        spec = tmp_path / "ablation.yaml"
        spec.write_text(yaml.safe_dump({"variants": [
            {"name": "append", "overrides": {"model.fusion": "append"}}]}))
        res = runner.invoke(main, ["ablate", "--config", config_path,
                                   "--out", str(tmp_path / "sp"),
                                   "--spec", str(spec)])
        assert res.exit_code == 0, res.output
        assert {r["variant"] for r in json.loads(res.output)} == {"base", "append"}

    def test_no_variants_exit_2(self, runner, config_path, tmp_path):
        res = runner.invoke(main, ["ablate", "--config", config_path,
                                   "--out", str(tmp_path / "nv")])
        assert res.exit_code == 2


class TestSeqlenSweep:
    def test_degenerate_sweep_matches_evaluate_shape(self, runner, config_path,
                                                     tmp_path):
        out = str(tmp_path / "sw")
        res = runner.invoke(main, ["seqlen-sweep", "--config", config_path,
                                   "--out", out, "--lengths", "4,8",
                                   "--fusions", "concat"])
        assert res.exit_code == 0, res.output
        rows = json.loads(res.output)
        data_rows = [r for r in rows if isinstance(r["seq_len"], int)]
        trend_rows = [r for r in rows if r["seq_len"] == "spearman_repin"]
        assert len(data_rows) == 2 and len(trend_rows) == 1
        assert {r["seq_len"] for r in data_rows} == {4, 8}
        assert (tmp_path / "sw" / "seqlen_sweep.tsv").exists()
