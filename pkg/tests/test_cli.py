import json

import pytest

import cli

SMALL_CONFIG = """
gen.n_train = 3000
gen.n_validation = 600
gen.n_test = 600
gen.feature_dim = 8
gen.k = 6
gen.rule_count = 12
gen.train_prevalence = 0.05
gen.validation_prevalence = 0.05
gen.test_prevalence = 0.05
gen.golden_subset_size = 200
gen.golden_train_size = 130
gen.miss_rate = 0.3
gen.false_fire_rate = 0.03

strategy.hidden_dims = 8
strategy.learning_rate = 0.05
strategy.epochs = 1
strategy.batch_size = 20

finetune.epochs = 1
finetune.batch_size = 20

grid.layers = 4
grid.learning_rates = 0.05
grid.alphas = 0.5
grid.strategies = fully-supervised, two-stage
grid.ft_epochs = 1
grid.ft_batch_sizes = 20
grid.ft_learning_rates = 0.05
grid.ft_modes = pure-golden

eval.fpr_target = 0.05
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture
def data_dir(tmp_path, config_path):
    out = tmp_path / "data"
    assert cli.main(["gen-data", "--config", str(config_path), "--seed", "1", "--out", str(out)]) == 0
    return out


def _last_json(capsys):
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    return json.loads(lines[-1])


def test_gen_data_is_reproducible(tmp_path, config_path, capsys):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--config", str(config_path), "--seed", "1", "--out", str(tmp_path / name)]) == 0
    summary = _last_json(capsys)
    assert summary["command"] == "gen-data"
    assert summary["records"] == 4200
    assert summary["golden_train"] == 130
    for name in ("records.jsonl", "provenance.json", "rule_map.txt", "taxonomy.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_annotate_rewrites_noisy_labels(tmp_path, config_path, data_dir, capsys):
    out = tmp_path / "annotated"
    assert cli.main(["annotate", "--config", str(config_path), "--data", str(data_dir), "--out", str(out)]) == 0
    summary = _last_json(capsys)
    assert summary["records"] == 4200
    assert summary["golden_kept"] == 1400  # golden subset plus validation and test
    assert summary["unknown_rules"] == 0
    assert (out / "records.jsonl").read_bytes() == (data_dir / "records.jsonl").read_bytes()


def test_train_two_stage_then_evaluate(tmp_path, config_path, data_dir, capsys):
    run_dir = tmp_path / "run"
    code = cli.main([
        "train", "--config", str(config_path), "--data", str(data_dir),
        "--strategy", "two-stage", "--seed", "0", "--run-dir", str(run_dir),
    ])
    assert code == 0
    summary = _last_json(capsys)
    assert summary["strategy"] == "two-stage"
    assert (run_dir / "model.pretrain.ckpt").exists()
    assert (run_dir / "model.final.ckpt").exists()
    assert (run_dir / "trace.csv").exists()
    assert (run_dir / "pretrain.trace.csv").exists()

    code = cli.main([
        "evaluate", "--config", str(config_path), "--data", str(data_dir),
        "--checkpoint", str(run_dir / "model.final.ckpt"),
    ])
    assert code == 0
    report = _last_json(capsys)
    assert report["recall_at_fpr"] == pytest.approx(summary["recall_at_fpr"])
    assert report["map"] == pytest.approx(summary["map"])


def test_grid_pareto_plot(tmp_path, config_path, data_dir, capsys):
    grid_dir = tmp_path / "grid"
    args = ["--config", str(config_path), "--grid-dir", str(grid_dir)]
    assert cli.main(["grid", *args, "--data", str(data_dir), "--workers", "1", "--seed", "0"]) == 0
    assert _last_json(capsys)["runs"] == 3  # fully-supervised, pretrain, one fine-tuned model
    assert cli.main(["pareto", *args]) == 0
    assert _last_json(capsys)["runs"] == 3
    assert cli.main(["plot", *args]) == 0
    plot = _last_json(capsys)
    assert plot["points"] == 3
    assert plot["overall_pareto_points"] >= 1
    assert (grid_dir / "tradeoff.svg").exists()


def test_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("strategy.alpha = 3\n")
    assert cli.main(["train", "--config", str(bad), "--data", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "strategy.alpha" in err
    assert len(err.strip().splitlines()) == 1


def test_unknown_section_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.depth = 3\n")
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "model.depth" in capsys.readouterr().err


def test_missing_dataset_exits_1(tmp_path, config_path, capsys):
    code = cli.main(["train", "--config", str(config_path), "--data", str(tmp_path / "none")])
    assert code == 1
    assert "records.jsonl" in capsys.readouterr().err


def test_plot_without_grid_exits_1(tmp_path, config_path, capsys):
    assert cli.main(["plot", "--config", str(config_path), "--grid-dir", str(tmp_path)]) == 1
