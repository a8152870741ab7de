"""Command-line contract: exit codes, CSV layouts, config handling."""

import json

import numpy as np
import pytest

from daefusion import cli
from daefusion.architecture import ConfigError, Model, ModelConfig
from daefusion.numerics import ops
from daefusion.training import TrainConfig


def _config_file(tmp_path, **kwargs):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(kwargs))
    return str(path)


TINY = dict(image_size=16, embed_dims=[8, 16, 32], steps=2, batch_size=2,
            eval_images=2)


# ---------------------------------------------------------------------------
# config loading and seed resolution
# ---------------------------------------------------------------------------

def test_unknown_config_key_is_rejected(tmp_path):
    path = _config_file(tmp_path, steps=3, frobnicate=1, lerning_rate=0.1)
    with pytest.raises(ConfigError) as err:
        cli.load_run_config(path)
    assert "frobnicate" in str(err.value)
    assert "lerning_rate" in str(err.value)
    assert "lr" in str(err.value)  # the known keys are listed back


def test_config_must_be_a_json_object(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        cli.load_run_config(str(path))
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        cli.load_run_config(str(path))
    with pytest.raises(ConfigError):
        cli.load_run_config(str(tmp_path / "missing.json"))


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("DAEFUSION_SEED", "7")
    assert cli.resolve_seed(5, {"seed": 3}) == 5
    assert cli.resolve_seed(None, {"seed": 3}) == 3
    assert cli.resolve_seed(None, {}) == 7
    monkeypatch.delenv("DAEFUSION_SEED")
    assert cli.resolve_seed(None, {}) == 0


def test_seed_validation(monkeypatch):
    with pytest.raises(ConfigError):
        cli.resolve_seed(None, {"seed": "three"})
    monkeypatch.setenv("DAEFUSION_SEED", "many")
    with pytest.raises(ConfigError):
        cli.resolve_seed(None, {})


def test_train_config_reports_every_problem():
    with pytest.raises(ConfigError) as err:
        cli.train_config_from({"steps": 0, "lr": -1.0, "momentum": 2.0}, 0)
    msg = str(err.value)
    assert "steps" in msg and "lr" in msg and "momentum" in msg


def test_model_config_from_rejects_bad_strategy():
    with pytest.raises(ConfigError) as err:
        cli.model_config_from({"strategy": "fancy"}, 0)
    assert "sequential" in str(err.value)


# ---------------------------------------------------------------------------
# exit codes through main()
# ---------------------------------------------------------------------------

def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == 2


def test_config_error_exit_code(tmp_path, capsys):
    path = _config_file(tmp_path, bogus_key=1)
    assert cli.main(["param-count", "--config", path]) == 2
    assert "config error" in capsys.readouterr().err


def test_bench_validation_errors(tmp_path):
    bad_sweep = _config_file(tmp_path, n_sweep=[64, 32])
    assert cli.main(["bench-attn", "--config", bad_sweep]) == 2
    single = tmp_path / "single.json"
    single.write_text(json.dumps({"n_sweep": [64]}))
    assert cli.main(["bench-attn", "--config", str(single)]) == 2
    kern = tmp_path / "kern.json"
    kern.write_text(json.dumps({"kernels": ["standard", "quantum"]}))
    assert cli.main(["bench-attn", "--config", str(kern)]) == 2


# ---------------------------------------------------------------------------
# param-count
# ---------------------------------------------------------------------------

def test_param_count_stdout_layout(capsys):
    assert cli.main(["param-count"]) == 0
    lines = capsys.readouterr().out.splitlines()
    total = int(lines[0])  # first line is the bare count
    assert total == Model(ModelConfig()).store.total_count()
    parts = [int(line.split()[-1]) for line in lines[2:]]
    assert sum(parts) == total


def test_param_count_honors_config(tmp_path, capsys):
    path = _config_file(tmp_path, image_size=16, embed_dims=[8, 16, 32])
    assert cli.main(["param-count", "--config", path]) == 0
    total = int(capsys.readouterr().out.splitlines()[0])
    want = Model(ModelConfig(image_size=16, embed_dims=(8, 16, 32)))
    assert total == want.store.total_count()


# ---------------------------------------------------------------------------
# bench-attn
# ---------------------------------------------------------------------------

def test_bench_csv_and_slope_rows(tmp_path, capsys):
    path = _config_file(tmp_path, n_sweep=[16, 32], d=8, reps=3)
    out = tmp_path / "bench.csv"
    assert cli.main(["bench-attn", "--config", path,
                     "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(cli.BENCH_HEADER)
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 6  # 2 kernels x (2 sweep points + 1 slope row)
    slope_rows = [r for r in rows if r[1] == "-1"]
    assert [r[0] for r in slope_rows] == ["standard:slope",
                                          "efficient:slope"]
    assert all(r[4] == "0" for r in slope_rows)
    assert "standard:slope" in capsys.readouterr().out


def test_fit_loglog_slope_recovers_exponent():
    ns = [256, 512, 1024, 2048]
    assert cli.fit_loglog_slope(ns, [n ** 2 * 1e-9 for n in ns]) == \
        pytest.approx(2.0, abs=1e-9)
    assert cli.fit_loglog_slope(ns, [n * 1e-9 for n in ns]) == \
        pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_op_scope_passes(tmp_path, capsys):
    out = tmp_path / "gradcheck.csv"
    assert cli.main(["gradcheck", "--scope", "op", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "worst:" in text
    assert "FAIL" not in text
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(cli.GRADCHECK_HEADER)
    assert all(line.endswith(",pass") for line in lines[1:])


def test_gradcheck_detects_corrupted_backward(monkeypatch, capsys):
    # wrong analytic gradient, correct forward: the differences are honest
    monkeypatch.setattr(ops, "gelu_grad",
                        lambda x: np.ones_like(x) * 0.123)
    assert cli.main(["gradcheck", "--scope", "op"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out
    assert "op:gelu" in out


def test_gradcheck_scope_is_required():
    with pytest.raises(SystemExit) as err:
        cli.main(["gradcheck", "--scope", "universe"])
    assert err.value.code == 2


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------

def test_train_toy_writes_artifacts(tmp_path, capsys):
    path = _config_file(tmp_path, **TINY)
    out = tmp_path / "run"
    assert cli.main(["train-toy", "--config", path, "--out", str(out)]) == 0
    assert (out / "train_log.csv").exists()
    assert (out / "eval_report.csv").exists()
    assert (out / "checkpoint.dfc").exists()
    text = capsys.readouterr().out
    assert "held-out dsc" in text
    log = (out / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,loss_total,loss_dice,loss_ce,lr"
    assert len(log) == 1 + TINY["steps"]


def test_train_toy_seed_determines_checkpoint(tmp_path):
    path = _config_file(tmp_path, **TINY)

    def checkpoint_bytes(seed, tag):
        out = tmp_path / f"run_{tag}"
        rc = cli.main(["train-toy", "--config", path, "--seed", str(seed),
                       "--out", str(out)])
        assert rc == 0
        return (out / "checkpoint.dfc").read_bytes()

    assert checkpoint_bytes(3, "a") == checkpoint_bytes(3, "b")
    assert checkpoint_bytes(3, "c") != checkpoint_bytes(4, "d")


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _tiny_base(seed=0):
    return TrainConfig(
        model=ModelConfig(image_size=16, embed_dims=(8, 16, 32), seed=seed),
        steps=1, batch_size=1, eval_images=1)


def test_ablation_skip_axis_rows():
    rows = cli.run_ablation("skip_count", _tiny_base())
    assert [r["variant"] for r in rows] == ["skip_0", "skip_1", "skip_2"]
    counts = [r["param_count"] for r in rows]
    assert counts[0] < counts[1] < counts[2]


def test_ablation_threaded_matches_serial():
    assert cli.run_ablation("image_size", _tiny_base(), threads=2) == \
        cli.run_ablation("image_size", _tiny_base(), threads=1)


def test_ablate_command_writes_csv(tmp_path, capsys):
    path = _config_file(tmp_path, image_size=16, embed_dims=[8, 16, 32],
                        steps=1, batch_size=1, eval_images=1)
    out = tmp_path / "ablate.csv"
    assert cli.main(["ablate", "--axis", "dual_strategy", "--config", path,
                     "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(cli.ABLATE_HEADER)
    variants = [line.split(",")[0] for line in lines[1:]]
    assert variants == ["sequential", "simple_additive", "complex_additive",
                        "concatenation"]
    assert "wrote" in capsys.readouterr().out


def test_ablation_unknown_axis():
    with pytest.raises(ConfigError):
        cli.ablation_cells("optimizer", _tiny_base())
