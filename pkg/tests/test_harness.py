import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svgrounding import corpus
from svgrounding.harness import cli, metrics as M, report
from svgrounding.harness.config import ConfigError, RunConfig
from svgrounding.harness.experiment import run_experiment
from svgrounding.numerics import checkpoint


# iou and metrics

def test_iou_examples():
    assert M.iou((3, 9), (3, 9)) == 1.0
    assert M.iou((5, 15), (10, 20)) == pytest.approx(6 / 16)
    assert M.iou((0, 3), (10, 12)) == 0.0
    assert M.iou((4, 4), (4, 4)) == 1.0


def test_iou_rejects_reversed_span():
    with pytest.raises(ValueError):
        M.iou((5, 2), (0, 1))
    with pytest.raises(ValueError):
        M.iou_many(np.array([[5, 2]]), np.array([[0, 1]]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=4, max_size=4))
def test_iou_vectorized_matches_scalar(v):
    a, b = sorted(v[:2]), sorted(v[2:])
    assert M.iou_many(np.array([a]), np.array([b]))[0] == pytest.approx(M.iou(a, b))
    assert 0.0 <= M.iou(a, b) <= 1.0 and M.iou(a, b) == M.iou(b, a)


def test_oracle_predictor_scores_100():
    gt = np.array([[0, 3], [5, 9], [2, 2]])
    rep = M.evaluate_spans(gt, gt)
    assert rep.mean_iou == 100.0 and set(rep.recall.values()) == {100.0}


def test_fixed_span_hand_count():
    gt = np.array([[0, 9], [5, 14], [10, 19], [20, 29]])
    pred = np.tile([5, 14], (4, 1))
    # ious: 5/15, 1, 5/15, 0
    rep = M.evaluate_spans(pred, gt)
    assert rep.recall == {"0.3": 75.0, "0.5": 25.0, "0.7": 25.0}
    assert rep.mean_iou == pytest.approx(100 * (1 / 3 + 1 + 1 / 3) / 4)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        M.evaluate_spans(np.zeros((0, 2)), np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recall_monotone_in_threshold(seed):
    r = np.random.default_rng(seed)
    gt = np.sort(r.integers(0, 32, size=(20, 2)), axis=1)
    pred = np.sort(r.integers(0, 32, size=(20, 2)), axis=1)
    rep = M.evaluate_spans(pred, gt)
    assert rep.recall["0.7"] <= rep.recall["0.5"] <= rep.recall["0.3"]
    assert all(0 <= v <= 100 for v in [*rep.recall.values(), rep.mean_iou])


def test_random_span_monte_carlo_agrees_with_enumeration():
    r = np.random.default_rng(0)
    gt = np.sort(r.integers(0, 32, size=(50, 2)), axis=1)
    exact = M.random_span_miou(gt, 32)
    sim = M.random_span_report(gt, 32, np.random.default_rng(1)).mean_iou
    assert abs(exact - sim) < 2.0


def test_report_dict_round_trip():
    rep = M.evaluate_spans(np.array([[1, 4]]), np.array([[2, 4]]), "cpc", 3)
    assert M.EvalReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep


# config

def test_config_round_trip():
    cfg = RunConfig(seed=4, pacing="exp", lr=0.002, no_curriculum=True)
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_json('{"seed": 1, "bogus": 2}')


def test_config_type_checked():
    with pytest.raises(ConfigError):
        RunConfig(seed="zero")
    with pytest.raises(ConfigError):
        RunConfig(epochs=True)
    assert RunConfig(lr=1).lr == 1.0


def test_config_defaults():
    cfg = RunConfig()
    assert cfg.lr == 0.001 and cfg.iou_thresholds == [0.3, 0.5, 0.7]


# experiment and report

TINY = dict(n_train=12, n_val=2, n_test=6, d=8, n_v=8, n_a=32, cpc_k=2, cpc_n=4, cpc_steps=4,
            cpc_batch=4, vgcl_steps=4, kappa=2, epochs=2, batch_size=4, warmup_steps=1,
            n_chunks=2, pretrain_warmup=1)


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    reps = run_experiment(RunConfig(**TINY), ["baseline", "cpc", "vgcl", "vgcl_no_cl"], out)
    return out, reps


def test_experiment_writes_artifacts(tiny_runs):
    out, reps = tiny_runs
    assert [r.variant for r in reps] == ["baseline", "cpc", "vgcl", "vgcl_no_cl"]
    seed_dir = out / "seed_0"
    for name in ("baseline", "cpc", "vgcl"):
        assert (seed_dir / name / "grounder.ckpt").exists()
        assert (seed_dir / name / "report.json").exists()
    with open(seed_dir / "vgcl" / "curriculum.csv") as fh:
        assert next(csv.reader(fh)) == ["stage", "step", "loss", "acc"]
    with open(seed_dir / "cpc" / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and set(rows[0]) == {"sample_id", "s_pred", "e_pred", "tau_s", "tau_e",
                                               "iou"}
    ck = checkpoint.load(seed_dir / "vgcl" / "pretrain.ckpt")
    assert all(k.startswith("vgcl.") for k in ck)
    assert all(k.startswith("grounder.") for k in checkpoint.load(seed_dir / "cpc" / "grounder.ckpt"))


def test_experiment_is_deterministic(tiny_runs, tmp_path):
    out, reps = tiny_runs
    again = run_experiment(RunConfig(**TINY), ["baseline", "cpc", "vgcl", "vgcl_no_cl"], tmp_path)
    assert again == reps
    for name in ("cpc", "vgcl"):
        for f in ("grounder.ckpt", "pretrain.ckpt", "report.json", "predictions.csv"):
            a = (out / "seed_0" / name / f).read_bytes()
            assert a == (tmp_path / "seed_0" / name / f).read_bytes(), (name, f)


def test_transplant_changes_only_stage_one(tiny_runs):
    out, _ = tiny_runs
    base = checkpoint.load(out / "seed_0" / "baseline" / "grounder.ckpt")
    assert set(base) == set(checkpoint.load(out / "seed_0" / "cpc" / "grounder.ckpt"))


def test_report_round_trip(tiny_runs, tmp_path):
    out, reps = tiny_runs
    paths = report.write_report(out, tmp_path, reference=12.5)
    rows = report.read_metrics(paths["metrics"])
    assert rows == sorted((r.row() for r in reps), key=lambda x: (x["variant"], x["seed"]))
    assert paths["miou_png"].stat().st_size > 0 and "curriculum_png" in paths
    with open(paths["long"]) as fh:
        assert len(list(csv.DictReader(fh))) == 4 * len(reps)


# cli

def _tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    RunConfig(**TINY).save(path)
    return str(path)


def test_cli_synth_is_reproducible(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    assert cli.main(["synth", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["synth", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    for split in corpus.SPLITS:
        a = (tmp_path / "a" / f"{split}.vgcd").read_bytes()
        assert a == (tmp_path / "b" / f"{split}.vgcd").read_bytes()


def test_cli_pretrain_stage_log(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    code = cli.main(["pretrain", "--config", cfg, "--mode", "vgcl", "--pacing", "exp", "--kappa",
                     "3", "--steps", "14", "--out", str(tmp_path / "p")])
    assert code == 0
    out = capsys.readouterr().out
    budgets = [int(line.split("\t")[1].split()[0]) for line in out.splitlines()
               if line.startswith("stage")]
    assert budgets == [2, 4, 8]
    assert json.loads((tmp_path / "p" / "config.json").read_text())["kappa"] == 3


def test_cli_train_eval_round(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    assert cli.main(["pretrain", "--config", cfg, "--mode", "cpc", "--out", str(tmp_path / "p")]) == 0
    assert cli.main(["train", "--config", cfg, "--init", str(tmp_path / "p" / "cpc.ckpt"),
                     "--out", str(tmp_path / "t")]) == 0
    assert "transplanted\tcpc" in capsys.readouterr().out
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "t" / "grounder.ckpt"),
                     "--out", str(tmp_path / "e")]) == 0
    assert "miou" in capsys.readouterr().out


def test_cli_eval_without_checkpoint_is_usage_error(tmp_path, capsys):
    assert cli.main(["eval", "--out", str(tmp_path)]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_unknown_flag(capsys):
    assert cli.main(["synth", "--out", "x", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_no_command(capsys):
    assert cli.main([]) == 1


def test_cli_bad_config_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "nope" in capsys.readouterr().err


def test_cli_corrupt_checkpoint_is_data_error(tmp_path, capsys):
    cfg = _tiny_config(tmp_path)
    (tmp_path / "junk.ckpt").write_bytes(b"nothing here")
    assert cli.main(["train", "--config", cfg, "--init", str(tmp_path / "junk.ckpt"),
                     "--out", str(tmp_path / "t")]) == 2


def test_cli_report(tiny_runs, tmp_path, capsys):
    out, _ = tiny_runs
    assert cli.main(["report", "--runs", str(out), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "metrics.csv").exists() and (tmp_path / "r" / "miou.png").exists()
