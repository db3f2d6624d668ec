import csv
import math

import numpy as np
import pytest

import ivae.train as train_mod
from ivae import autodiff as ad
from ivae.bounds import BoundTerms
from ivae.cli import main
from ivae.gradcheck import check_gradients, default_bounds, run_suite, toy_config
from ivae.model import init_params, save_checkpoint
from ivae.optim import AdamState
from ivae.pgm import read_pgm
from ivae.train import METRIC_COLUMNS, RunConfig

TINY = [
    "--hidden", "8", "--latent-dim", "2", "--mc-samples", "2",
    "--synthetic-count", "60", "--synthetic-test-count", "20", "--batch-size", "20",
]


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def run_train(out, *extra):
    return main(["train", *TINY, "--epochs", "2", "--seed", "7", "--out", str(out), *extra])


def test_train_is_byte_reproducible(tmp_path):
    assert run_train(tmp_path / "a") == 0
    assert run_train(tmp_path / "b") == 0
    for name in ("metrics.csv", "checkpoint.ivae", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = (tmp_path / "a" / "metrics.csv").read_text()
    assert text.splitlines()[0] == ",".join(METRIC_COLUMNS)
    assert "\r" not in text


def test_config_echo_is_complete_and_reloadable(tmp_path):
    run_train(tmp_path / "a")
    text = (tmp_path / "a" / "config.txt").read_text()
    keys = [line.split("=", 1)[0] for line in text.splitlines()]
    for key in ("bound", "epsilon", "alpha", "latent_dim", "hidden", "activation", "lr", "seed", "batch_size", "epochs"):
        assert key in keys
    assert "epsilon_convention=half-width" in text
    cfg = RunConfig.from_echo(text)
    assert cfg.model.hidden == (8,) and cfg.model.bound.mc_samples == 2 and cfg.seed == 7
    assert cfg.echo() == text.splitlines()


def test_ielbo_reconstruction_terms_nonpositive(tmp_path):
    run_train(tmp_path / "a")
    rows = read_rows(tmp_path / "a" / "metrics.csv")
    assert len(rows) == 2
    assert all(float(r["train_recon"]) <= 0 for r in rows)
    assert all(r["nonfinite_flag"] == "0" for r in rows)
    assert all(r["wall_seconds"] == "" for r in rows)
    assert len(read_rows(tmp_path / "a" / "timing.csv")) == 2


def test_wall_clock_flag_fills_column(tmp_path):
    run_train(tmp_path / "a", "--wall-clock")
    rows = read_rows(tmp_path / "a" / "metrics.csv")
    assert all(float(r["wall_seconds"]) > 0 for r in rows)


def test_eval_reproduces_final_train_bound(tmp_path, capsys):
    run_train(tmp_path / "a")
    capsys.readouterr()
    assert main(["eval", "--out", str(tmp_path / "a"), "--on", "train"]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    final = read_rows(tmp_path / "a" / "metrics.csv")[-1]
    assert abs(float(out["bound"]) - float(final["train_bound"])) <= 1e-9
    assert out["checkpoint_epoch"] == "2"


def test_eval_checkpoint_errors(tmp_path, capsys):
    run_train(tmp_path / "a")
    assert main(["eval", "--out", str(tmp_path / "a"), "--checkpoint", str(tmp_path / "nope.ivae")]) == 4
    ck = tmp_path / "a" / "checkpoint.ivae"
    ck.write_bytes(b"JUNK!" + ck.read_bytes()[5:])
    assert main(["eval", "--out", str(tmp_path / "a")]) == 4
    assert "not an IVAE1 checkpoint" in capsys.readouterr().err


def test_eval_config_mismatch(tmp_path, capsys):
    run_train(tmp_path / "a")
    assert main(["eval", "--out", str(tmp_path / "a"), "--latent-dim", "3"]) == 4
    assert "different model configuration" in capsys.readouterr().err


def test_reconstruct_zero_model_is_gray(tmp_path):
    run_train(tmp_path / "a")
    cfg = RunConfig.from_echo((tmp_path / "a" / "config.txt").read_text())
    params = init_params(cfg.model, 0)
    for t in params.values():
        t.data[...] = 0.0
    ck = tmp_path / "zero.ivae"
    save_checkpoint(ck, cfg.model, params, AdamState.create(params.tensors(), 0.1), 0)
    img = tmp_path / "grid.pgm"
    args = ["reconstruct", "--out", str(tmp_path / "a"), "--checkpoint", str(ck), "--count", "7", "--columns", "3"]
    assert main([*args, "--image", str(img)]) == 0
    blob = img.read_bytes()
    assert blob.startswith(b"P5\n84 252\n255\n")
    grid = read_pgm(img)
    assert grid.shape == (3 * 3 * 28, 3 * 28)
    # rows 2 and 3 of each group are reconstructions of a zero model
    for g in range(3):
        cells = 3 if g < 2 else 1
        recon = grid[(3 * g + 1) * 28 : (3 * g + 3) * 28, : cells * 28]
        assert np.all(recon == 128)


def test_nonfinite_bound_aborts_with_dump(tmp_path, monkeypatch, capsys):
    real = train_mod._forward
    calls = {"n": 0}

    def poisoned(params, model, x, noise):
        calls["n"] += 1
        terms = real(params, model, x, noise)
        if calls["n"] == 2:
            nan = ad.add(terms.total, math.nan)
            return BoundTerms(terms.reconstruction, terms.divergence, nan, terms.per_example)
        return terms

    monkeypatch.setattr(train_mod, "_forward", poisoned)
    assert run_train(tmp_path / "a") == 3
    dump = (tmp_path / "a" / "diagnostic_dump.txt").read_text()
    assert "reason=non-finite bound" in dump and "batch=1" in dump
    rows = read_rows(tmp_path / "a" / "metrics.csv")
    assert rows[-1]["nonfinite_flag"] == "1"
    assert "training aborted" in capsys.readouterr().err


def test_epsilon_flag_is_half_width(tmp_path):
    run_train(tmp_path / "a", "--epsilon", "0.25")
    assert "epsilon=0.25" in (tmp_path / "a" / "config.txt").read_text().splitlines()


def test_presets_resolve(tmp_path):
    from ivae.cli import build_parser, resolve_config

    cfg = resolve_config(build_parser().parse_args(["train", "--preset", "paper-irelbo"]))
    assert (cfg.lr, cfg.batch_size, cfg.model.bound.epsilon) == (5e-4, 100, 0.5)
    cfg = resolve_config(build_parser().parse_args(["train"]))
    assert (cfg.preset, cfg.lr, cfg.model.bound.mc_samples) == ("paper-ielbo", 1e-4, 10)
    cfg = resolve_config(build_parser().parse_args(["train", "--bound", "elbo"]))
    assert cfg.preset == "custom" and cfg.model.bound.kind.value == "elbo"
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--hidden", "a,b"])


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    # 12 blocks per bound: one hidden layer plus two heads, on each side
    assert out.count(" ok") == 3 * 12 and "gradcheck passed" in out


def test_gradcheck_detects_corruption():
    cfg = toy_config(default_bounds()[1])

    def corrupt(grads):
        grads[3] = grads[3] * 1.01
        return grads

    reports = check_gradients(cfg, corrupt=corrupt)
    assert reports[3].max_rel_err > 1e-3
    assert max(r.max_rel_err for i, r in enumerate(reports) if i != 3) <= 1e-4


def test_gradcheck_report_is_deterministic():
    assert run_suite(seed=1) == run_suite(seed=1)
