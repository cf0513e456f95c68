"""End-to-end command-line tests on tiny runs in temporary directories."""

import os

import numpy as np
import pytest

from mixrl import net
from mixrl.cli import main

TINY_TRAIN = [
    "--set", "total_steps=300", "--set", "workers=2",
    "--set", "episode_max_steps=120", "--set", "checkpoint_interval=200",
]


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny regime-1 and regime-2 checkpoint pair, shared by cli tests."""
    out1 = tmp_path_factory.mktemp("train1")
    out2 = tmp_path_factory.mktemp("train2")
    assert run_cli("train", "--out", str(out1), "--seed", "3",
                   "--regime", "1", *TINY_TRAIN) == 0
    assert run_cli("train", "--out", str(out2), "--seed", "4",
                   "--regime", "2", *TINY_TRAIN) == 0
    return (str(out1 / "policy_regime1_final.mxp"),
            str(out2 / "policy_regime2_final.mxp"))


class TestTrain:
    def test_outputs_and_config_echo(self, trained, tmp_path):
        pi1, _ = trained
        assert os.path.exists(pi1)
        out_dir = os.path.dirname(pi1)
        assert os.path.exists(os.path.join(out_dir, "config.resolved"))
        log = os.path.join(out_dir, "policy_regime1_train_log.csv")
        with open(log) as fh:
            header = fh.readline().strip()
        assert header == "step,worker,episode_reward,episode_length,regime"
        params, _, step = net.load_checkpoint(pi1)
        assert step >= 300

    def test_periodic_checkpoints_written(self, trained):
        out_dir = os.path.dirname(trained[0])
        names = sorted(os.listdir(out_dir))
        assert "policy_regime1_0000000200.mxp" in names

    def test_echoed_config_reparses(self, trained):
        from mixrl.config import parse_config
        out_dir = os.path.dirname(trained[0])
        resolved = os.path.join(out_dir, "config.resolved")
        run = parse_config(resolved)
        assert run.trainer.total_steps == 300
        assert run.regime_id == 1

    def test_bad_config_key_is_reported(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_key = 5\n")
        code = run_cli("train", "--config", str(cfg), "--out", str(tmp_path))
        assert code == 1
        err = capsys.readouterr().err
        assert "bad.cfg:1" in err and "not_a_key" in err


class TestEval:
    def test_eval_checkpoint(self, trained, tmp_path):
        pi1, _ = trained
        out = tmp_path / "eval"
        code = run_cli("eval", "--out", str(out), "--checkpoint", pi1,
                       "--regime", "1", "--episodes", "4", "--seed", "8",
                       "--set", "episode_max_steps=120")
        assert code == 0
        lines = (out / "episodes.csv").read_text().splitlines()
        assert lines[0] == ("episode,shaped_reward,raw_score,steps,"
                            "lives_lost,stuck,cycle_period")
        assert len(lines) == 5

    def test_eval_missing_checkpoint_fails_cleanly(self, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run_cli("eval", "--out", str(out), "--checkpoint",
                       str(tmp_path / "missing.mxp"), "--episodes", "2")
        assert code == 1
        assert "missing.mxp" in capsys.readouterr().err
        assert not (out / "episodes.csv").exists()  # no partial output

    def test_eval_mixture_spec(self, trained, tmp_path):
        pi1, pi2 = trained
        spec = tmp_path / "mix.spec"
        spec.write_text(f"component={pi1}, alpha=0.125, regime=1\n"
                        f"component={pi2}, alpha=0.875, regime=2\n"
                        "epsilon=0.01\n")
        out = tmp_path / "evalmix"
        code = run_cli("eval", "--out", str(out), "--mixture", str(spec),
                       "--episodes", "3", "--seed", "1",
                       "--set", "episode_max_steps=100")
        assert code == 0
        assert (out / "episodes.csv").exists()

    def test_eval_requires_exactly_one_source(self, trained, tmp_path, capsys):
        code = run_cli("eval", "--out", str(tmp_path / "x"), "--episodes", "2")
        assert code == 1
        assert "exactly one" in capsys.readouterr().err


class TestSweep:
    def test_sweep_writes_stats_table(self, trained, tmp_path):
        pi1, pi2 = trained
        out = tmp_path / "sweep"
        code = run_cli("sweep", "--out", str(out), "--pi1", pi1, "--pi2", pi2,
                       "--alphas", "0,0.125,0.25,0.5,1", "--epsilon", "0.01",
                       "--episodes", "2", "--seed", "5",
                       "--set", "episode_max_steps=80")
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == ("alpha,epsilon,checkpoint_step,episodes,"
                            "min,max,median,mean,mean_steps,stuck_fraction")
        assert len(lines) == 6
        alphas = [float(line.split(",")[0]) for line in lines[1:]]
        assert alphas == [0.0, 0.125, 0.25, 0.5, 1.0]

    def test_sweep_missing_checkpoint(self, trained, tmp_path, capsys):
        code = run_cli("sweep", "--out", str(tmp_path / "s"), "--pi1",
                       str(tmp_path / "gone.mxp"), "--pi2", trained[1],
                       "--episodes", "2")
        assert code == 1
        assert "gone.mxp" in capsys.readouterr().err


class TestExport:
    def test_export_sweep_long_format(self, trained, tmp_path):
        pi1, pi2 = trained
        sweep_out = tmp_path / "sweep"
        run_cli("sweep", "--out", str(sweep_out), "--pi1", pi1, "--pi2", pi2,
                "--alphas", "0,1", "--episodes", "2", "--seed", "5",
                "--set", "episode_max_steps=80")
        out = tmp_path / "export"
        code = run_cli("export", "--out", str(out), "--table",
                       str(sweep_out / "sweep.csv"))
        assert code == 0
        lines = (out / "sweep_long.csv").read_text().splitlines()
        assert lines[0] == "x,metric,value"
        # 2 alphas x 6 metrics
        assert len(lines) == 13

    def test_export_train_log(self, trained, tmp_path):
        out_dir = os.path.dirname(trained[0])
        out = tmp_path / "export"
        code = run_cli("export", "--out", str(out), "--table",
                       os.path.join(out_dir, "policy_regime1_train_log.csv"))
        assert code == 0
        lines = (out / "policy_regime1_train_log_long.csv").read_text().splitlines()
        assert lines[0] == "x,metric,value"
        metrics = {line.split(",")[1] for line in lines[1:]}
        assert metrics == {"episode_reward", "episode_length"}

    def test_export_unknown_table(self, tmp_path, capsys):
        bad = tmp_path / "junk.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        code = run_cli("export", "--out", str(tmp_path / "o"), "--table", str(bad))
        assert code == 1
        assert "unrecognized" in capsys.readouterr().err


class TestSeedPropagation:
    def test_same_seed_same_training(self, tmp_path):
        args = ["--set", "total_steps=200", "--set", "workers=1",
                "--set", "episode_max_steps=100"]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("train", "--out", str(out_a), "--seed", "11", *args) == 0
        assert run_cli("train", "--out", str(out_b), "--seed", "11", *args) == 0
        a = (out_a / "policy_regime1_final.mxp").read_bytes()
        b = (out_b / "policy_regime1_final.mxp").read_bytes()
        assert a == b
