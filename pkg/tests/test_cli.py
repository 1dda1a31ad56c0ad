import functools
import json

import numpy as np
import pytest

from strucgrad import checkpoint, cli, gradcheck
from strucgrad.data import MLCDataset, SynthSpec, gen_synth, load_mlc, save_mlc
from strucgrad.losses import micro_f1
from strucgrad.tasks import MLCTask
from strucgrad.tensor import ParamVector


def write_config(path, **over):
    cfg = {"version": 1, "task": "mlc",
           "model": {"infer_hidden": [8], "feature_dim": 4, "global_hidden": 4},
           "train": {"t_outer": 6, "t_inner": 2, "eval_every": 2, "patience": None},
           "data": {"synth": {"n_labels": 4, "n_features": 5, "n_examples": 120, "seed": 2}}}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


# synth

def test_synth_writes_header_and_records(tmp_path):
    out = tmp_path / "s.txt"
    assert run("synth", "--L", 8, "--d", 16, "--N", 2000, "--seed", 7, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "2000 16 8" and len(lines) == 2001


def test_synth_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        assert run("synth", "--L", 3, "--d", 4, "--N", 50, "--seed", 1, "--out", p) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_invalid_spec(tmp_path):
    assert run("synth", "--L", 0, "--d", 4, "--N", 5, "--out", tmp_path / "x.txt") == 2
    assert not (tmp_path / "x.txt").exists()


def test_synth_refuses_to_overwrite(tmp_path):
    out = tmp_path / "s.txt"
    out.write_text("keep")
    assert run("synth", "--L", 2, "--d", 2, "--N", 3, "--out", out) == 2
    assert out.read_text() == "keep"


# train

def test_train_writes_checkpoint_metrics_and_summary(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert run("train", cfg, "--out", out) == 0
    rows = cli.read_metrics(out / "metrics.csv")
    assert len(rows) == 6 and [r["phi_updates"] for r in rows] == [1, 2, 3, 4, 5, 6]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["regime"] == "implicit" and summary["seed"] == 0
    assert set(summary["scores"]) == {"valid", "test"} and "wall_seconds" in summary
    desc, theta, phi, extra = checkpoint.load(out / "model.ckpt")
    assert desc["task"] == "mlc" and extra["config_sha256"] == summary["config_sha256"]
    first = (out / "metrics.csv").read_text().splitlines()[0]
    assert summary["config_sha256"] in first


def test_mbce_metrics_share_the_schema(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg, "--out", tmp_path / "a") == 0
    assert run("train", cfg, "--out", tmp_path / "b", "--regime", "mbce") == 0
    ha = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[1]
    hb = (tmp_path / "b" / "metrics.csv").read_text().splitlines()[1]
    assert ha == hb
    rows = cli.read_metrics(tmp_path / "b" / "metrics.csv")
    assert all(r["hypergrad_norm"] == 0.0 and r["phi_updates"] == 0 for r in rows)


@pytest.mark.parametrize("regime", ["implicit", "alternating", "mbce"])
def test_rerun_reproduces_metrics_bytes(tmp_path, regime):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg, "--out", tmp_path / "a", "--regime", regime) == 0
    assert run("train", cfg, "--out", tmp_path / "b", "--regime", regime) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_seed_flag_changes_the_run(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg, "--out", tmp_path / "a") == 0
    assert run("train", cfg, "--out", tmp_path / "b", "--seed", 5) == 0
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 5
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_malformed_config_exits_2_without_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", bogus=1)
    assert run("train", cfg, "--out", tmp_path / "run") == 2
    assert not (tmp_path / "run").exists()
    assert "bogus" in capsys.readouterr().err


def test_missing_config_and_missing_output(tmp_path):
    assert run("train", tmp_path / "none.json", "--out", tmp_path / "r") == 2
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg) == 2


def test_output_directory_needs_force(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    assert run("train", cfg, "--out", out) == 0
    before = (out / "metrics.csv").read_bytes()
    assert run("train", cfg, "--out", out, "--seed", 3) == 2
    assert (out / "metrics.csv").read_bytes() == before
    assert run("train", cfg, "--out", out, "--seed", 3, "--force") == 0
    assert (out / "metrics.csv").read_bytes() != before


def test_numeric_abort_exits_3_with_diagnostics(tmp_path):
    cfg = write_config(tmp_path / "c.json", train={"eta_outer": 1e300})
    out = tmp_path / "run"
    with np.errstate(all="ignore"):
        assert run("train", cfg, "--out", out) == 3
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "error" in diag and diag["diagnostics"]
    assert not (out / "model.ckpt").exists()


def test_sequence_training_from_conll_files(tmp_path):
    text = "the D\ncat N\nsat V\n\na D\ndog N\nran V\n\nthe D\ndog N\nsat V\n"
    (tmp_path / "tr.conll").write_text(text, encoding="utf-8")
    (tmp_path / "te.conll").write_text("a D\ncat N\nbarked V\n", encoding="utf-8")
    cfg = tmp_path / "seq.json"
    cfg.write_text(json.dumps({
        "version": 1, "task": "seq", "model": {"embed_dim": 4, "infer_hidden": [6], "feature_dim": 4},
        "train": {"t_outer": 30, "batch_size": 3, "eta_inner": 0.5},
        "data": {"train": "tr.conll", "test": "te.conll"}}), encoding="utf-8")
    assert run("train", cfg, "--out", tmp_path / "run") == 0
    assert run("eval", tmp_path / "run" / "model.ckpt", tmp_path / "te.conll") == 0
    assert run("analyze-hessian", tmp_path / "run" / "model.ckpt", tmp_path / "te.conll") == 2


# eval

def _toy(tmp_path):
    X = np.eye(10)
    Y = (np.random.default_rng(0).random((10, 3)) < 0.5).astype(float)
    Y[0] = 0.0
    path = tmp_path / "toy.txt"
    save_mlc(MLCDataset.from_arrays(X, Y), path)
    return path


def test_eval_of_overfit_checkpoint_is_perfect(tmp_path, capsys):
    data = _toy(tmp_path)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "version": 1, "task": "mlc", "model": {"infer_hidden": []},
        "train": {"t_outer": 300, "batch_size": 10, "eta_inner": 2.0},
        "data": {"train": "toy.txt"}}), encoding="utf-8")
    assert run("train", cfg, "--out", tmp_path / "run", "--regime", "mbce") == 0
    capsys.readouterr()
    assert run("eval", tmp_path / "run" / "model.ckpt", data) == 0
    scores = json.loads(capsys.readouterr().out)
    assert scores == {"example_f1": 1.0, "micro_f1": 1.0, "macro_f1": 1.0}


def test_constant_half_predictor_hits_the_analytic_baseline(tmp_path, capsys):
    data_path = tmp_path / "s.txt"
    assert run("synth", "--L", 6, "--d", 5, "--N", 400, "--seed", 3, "--out", data_path) == 0
    data = load_mlc(data_path)
    task = MLCTask.build(5, 6, infer_hidden=(4,))
    theta = ParamVector(task.theta_layout)
    _, phi = task.init_params(np.random.default_rng(0), np.random.default_rng(1))
    checkpoint.save(tmp_path / "m.ckpt", task.describe(), theta, phi)
    capsys.readouterr()
    assert run("eval", tmp_path / "m.ckpt", data_path) == 0
    got = json.loads(capsys.readouterr().out)["micro_f1"]
    p = data.Y.mean()
    assert got == pytest.approx(2 * p / (1 + p), abs=1e-12)
    assert got == pytest.approx(micro_f1(np.ones_like(data.Y), data.Y))


def test_eval_errors_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg, "--out", tmp_path / "run") == 0
    ckpt = tmp_path / "run" / "model.ckpt"
    assert run("eval", ckpt, tmp_path / "missing.txt") == 2
    assert run("eval", tmp_path / "missing.ckpt", _toy(tmp_path)) == 2
    assert run("eval", ckpt, _toy(tmp_path)) == 2


# analyze-hessian

def test_analyze_hessian_writes_matrices(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", cfg, "--out", tmp_path / "run") == 0
    data = tmp_path / "s.txt"
    save_mlc(gen_synth(SynthSpec.planted(4, 5, 60, seed=2)), data)
    capsys.readouterr()
    assert run("analyze-hessian", tmp_path / "run" / "model.ckpt", data, "--out", tmp_path / "h") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fd_max_abs_error"] < 1e-4 and isinstance(report["correlation"], float)
    H = np.loadtxt(tmp_path / "h" / "neg_hessian.csv", delimiter=",")
    C = np.loadtxt(tmp_path / "h" / "cooccurrence.csv", delimiter=",")
    assert H.shape == C.shape == (4, 4) and not np.diag(H).any() and not np.diag(C).any()


def test_analyze_hessian_zero_energy_reports_na(tmp_path, capsys):
    task = MLCTask.build(3, 4, infer_hidden=())
    checkpoint.save(tmp_path / "m.ckpt", task.describe(), ParamVector(task.theta_layout),
                    ParamVector(task.phi_layout))
    data = tmp_path / "s.txt"
    save_mlc(gen_synth(SynthSpec.planted(4, 3, 30)), data)
    capsys.readouterr()
    assert run("analyze-hessian", tmp_path / "m.ckpt", data) == 0
    assert json.loads(capsys.readouterr().out)["correlation"] == "n/a"


# gradcheck

def _flip_sign(monkeypatch):
    real = gradcheck.implicit_grad_phi

    def flipped(*args, **kwargs):
        kwargs["implicit_sign"] = -1.0
        return real(*args, **kwargs)
    monkeypatch.setattr(gradcheck, "implicit_grad_phi", flipped)


@pytest.fixture
def fast_gradients(monkeypatch):
    fast = functools.partial(gradcheck.check_gradients, points=1)
    monkeypatch.setattr(gradcheck, "check_gradients", lambda rng, tolerance: fast(rng, tolerance=tolerance))


def test_gradcheck_passes_on_fresh_build(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 15


def test_sign_flip_fails_the_bilevel_check(monkeypatch, fast_gradients, capsys):
    _flip_sign(monkeypatch)
    assert run("gradcheck") == 1
    out = capsys.readouterr().out
    assert "FAIL  bilevel/quadratic_24_34" in out and "bilevel/quadratic_24_34" in out.splitlines()[-1]


def test_tolerance_flag_tightens_and_loosens(monkeypatch, fast_gradients):
    assert run("gradcheck", "--tolerance", 1e-30) == 1
    _flip_sign(monkeypatch)
    assert run("gradcheck", "--tolerance", 10.0) == 0


# global behaviour

def test_bad_usage_exits_2():
    assert run() == 2
    assert run("frobnicate") == 2
    assert run("train") == 2


def test_thread_cap_env(monkeypatch, tmp_path):
    monkeypatch.setenv("STRUCGRAD_THREADS", "zero")
    assert run("synth", "--L", 2, "--d", 2, "--N", 3, "--out", tmp_path / "a.txt") == 2
    monkeypatch.setenv("STRUCGRAD_THREADS", "1")
    assert run("synth", "--L", 2, "--d", 2, "--N", 3, "--out", tmp_path / "b.txt") == 0
