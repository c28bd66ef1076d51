import json
import re

import numpy as np
import pytest

from mpbonus import config as config_mod
from mpbonus import experiment
from mpbonus.agent import Run
from mpbonus.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from mpbonus.encoder import EncoderHandle
from mpbonus.envs import PixelChain, read_pgm
from mpbonus.metrics import LearningCurve
from mpbonus.nn import Network

SMALL = ["env.length=5", "agent.epoch_length=50", "agent.test_steps=40",
         "agent.total_epochs=10", "agent.capacity=500", "agent.replay_updates_per_epoch=5",
         "encoder.n_frames=110", "encoder.epochs=1"]


def small_args(*extra):
    out = []
    for pair in SMALL + list(extra):
        out += ["--set", pair]
    return out


def small_cfg(**overrides):
    values = dict(p.split("=", 1) for p in SMALL)
    values.update(overrides)
    return config_mod.from_flat(values)


@pytest.fixture(scope="module")
def bonus_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bonus")
    code = main(["run", *small_args("strategy.kind=model_bonus"), "--seeds", "3",
                 "--log-bonuses", "-o", str(out)])
    assert code == EXIT_OK
    return out


class TestRun:
    def test_layout(self, bonus_run):
        run_dir = bonus_run / "seed_3"
        for name in ("manifest.json", "curve.csv", "bonuses.csv"):
            assert (run_dir / name).exists()
        assert (bonus_run / "aggregate.csv").exists() and (bonus_run / "auc.csv").exists()
        ckpt = run_dir / "checkpoints" / "epoch_0010"
        assert sorted(p.name for p in ckpt.iterdir()) == [
            "dynamics.bin", "encoder.bin", "encoder.bin.json", "qnet.bin"]

    def test_manifest(self, bonus_run):
        manifest = json.loads((bonus_run / "seed_3" / "manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["strategy"] == "model_bonus"
        assert manifest["config"]["strategy.beta"] == 50.0
        assert manifest["config"]["strategy.decay"] == 1 / 50
        assert {"mpbonus", "numpy", "python"} <= set(manifest["versions"])

    def test_curve_columns(self, bonus_run):
        cols = experiment.read_curve(bonus_run / "seed_3" / "curve.csv")
        assert tuple(cols) == experiment.CURVE_COLUMNS
        np.testing.assert_array_equal(cols["epoch"], np.arange(1, 11))

    def test_bonus_log_consistent(self, bonus_run):
        cols = experiment.read_curve(bonus_run / "seed_3" / "bonuses.csv")
        assert tuple(cols) == experiment.BONUS_COLUMNS
        assert len(cols["t"]) == 500
        np.testing.assert_array_equal(cols["t"], np.arange(1, 501))
        np.testing.assert_allclose(cols["e_bar"], cols["e"] / cols["max_e"], rtol=1e-12)
        np.testing.assert_allclose(
            cols["r_bonus"], cols["r"] + 50.0 * cols["e_bar"] / (cols["t"] / 50), rtol=1e-12)
        # the normaliser is the running max of the errors before each step
        prior = np.maximum.accumulate(np.concatenate([[1.0], cols["e"][:-1]]))
        np.testing.assert_array_equal(cols["max_e"], prior)

    def test_checkpoints_reload(self, bonus_run):
        ckpt = bonus_run / "seed_3" / "checkpoints" / "epoch_0010"
        q = Network.load(ckpt / "qnet.bin")
        assert q.layers[0].input_width == 40
        enc = EncoderHandle.load(ckpt / "encoder.bin")
        assert enc.version == 2 and enc.tap_width == enc.net.output_width
        assert Network.load(ckpt / "dynamics.bin").output_width == enc.tap_width

    def test_rerun_from_manifest_is_identical(self, bonus_run, tmp_path):
        code = main(["run", str(bonus_run / "seed_3" / "manifest.json"), "--seeds", "3",
                     "-o", str(tmp_path)])
        assert code == EXIT_OK
        assert ((tmp_path / "seed_3" / "curve.csv").read_bytes()
                == (bonus_run / "seed_3" / "curve.csv").read_bytes())

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        assert main(["run", "--set", "agent.bogus=1", "-o", str(tmp_path)]) == EXIT_CONFIG
        assert "agent.bogus" in capsys.readouterr().err
        assert not any(tmp_path.iterdir())

    def test_malformed_set_exit_2(self, tmp_path):
        assert main(["run", "--set", "agent.gamma", "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_file_exit_2(self, tmp_path):
        assert main(["run", str(tmp_path / "none.cfg")]) == EXIT_CONFIG

    def test_runtime_failure_exit_1(self, tmp_path, monkeypatch, capsys):
        def explode(self, *a, **kw):
            raise FloatingPointError("diverged")

        monkeypatch.setattr(Run, "run", explode)
        assert main(["run", *small_args(), "--seeds", "2", "-o", str(tmp_path)]) == EXIT_RUNTIME
        assert "seed 2" in capsys.readouterr().err

    def test_jobs_runs_seeds_in_parallel(self, tmp_path):
        args = ["run", *small_args("agent.total_epochs=2"), "--seeds", "0,1", "--jobs", "2"]
        assert main(args + ["-o", str(tmp_path / "par")]) == EXIT_OK
        assert main(args[:-2] + ["--jobs", "1", "-o", str(tmp_path / "seq")]) == EXIT_OK
        for s in (0, 1):
            assert ((tmp_path / "par" / f"seed_{s}" / "curve.csv").read_bytes()
                    == (tmp_path / "seq" / f"seed_{s}" / "curve.csv").read_bytes())


def fake_experiment(root, strategy, scores_by_seed, length=5):
    """Write run directories by hand so report tests control the curves exactly."""
    cfg = small_cfg(**{"strategy.kind": strategy, "env.length": length})
    for seed, scores in scores_by_seed.items():
        run_dir = root / f"seed_{seed}"
        run_dir.mkdir(parents=True)
        experiment.write_manifest(run_dir, cfg, seed)
        rows = [(k + 1, s, 0.0, 0.0, 0) for k, s in enumerate(scores)]
        (run_dir / "curve.csv").write_text(experiment.format_csv(experiment.CURVE_COLUMNS, rows))
    return root


class TestCompare:
    def test_winner_and_plot(self, tmp_path, capsys):
        a = fake_experiment(tmp_path / "a", "epsilon_greedy", {0: [0, 0, 1], 1: [0, 1, 1]})
        b = fake_experiment(tmp_path / "b", "model_bonus", {0: [1, 1, 1]})
        assert main(["compare", str(a), str(b), "-o", str(tmp_path / "out")]) == EXIT_OK
        assert (tmp_path / "out" / "winner.txt").read_text() == "model_bonus\n"
        svg = (tmp_path / "out" / "compare.svg").read_text()
        assert svg.count("<polyline") == 2
        text = (tmp_path / "out" / "compare.csv").read_text().splitlines()
        # hand trapezoids: mean curve (0, 0.5, 1) -> area 1.0; (1, 1, 1) -> 2.0
        assert text[1].split(",")[3] == repr(1.0 / 100)
        assert text[2].split(",")[3] == repr(2.0 / 100)
        assert "winner: model_bonus" in capsys.readouterr().out

    def test_tie(self, tmp_path):
        a = fake_experiment(tmp_path / "a", "boltzmann", {0: [0, 1, 0]})
        b = fake_experiment(tmp_path / "b", "thompson", {0: [0.5, 0.5, 0.5]})
        assert experiment.compare([a, b]).winner == "tie"

    def test_refuses_different_envs(self, tmp_path, capsys):
        a = fake_experiment(tmp_path / "a", "boltzmann", {0: [0, 1]}, length=5)
        b = fake_experiment(tmp_path / "b", "thompson", {0: [0, 1]}, length=6)
        assert main(["compare", str(a), str(b)]) == EXIT_CONFIG
        assert "different environments" in capsys.readouterr().err

    def test_needs_curves(self, tmp_path):
        (tmp_path / "empty").mkdir()
        a = fake_experiment(tmp_path / "a", "boltzmann", {0: [0, 1]})
        assert main(["compare", str(a), str(tmp_path / "empty")]) == EXIT_CONFIG


def test_svg_one_polyline_per_series():
    series = {f"s{k}": LearningCurve.from_scores([0.0, k, 1.0]) for k in range(4)}
    svg = experiment.svg_plot(series, "a < b")
    assert svg.count("<polyline") == 4
    assert "a &lt; b" in svg
    pts = re.findall(r'points="([^"]+)"', svg)[0].split()
    assert len(pts) == 3


def test_auc_command(tmp_path, capsys):
    root = fake_experiment(tmp_path / "a", "boltzmann", {0: [0, 1, 1], 4: [1, 1, 1]})
    assert main(["auc", str(root)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(experiment.AUC_COLUMNS)
    assert lines[1:] == [f"boltzmann,0,{1.5 / 100!r},1.0", f"boltzmann,4,{2.0 / 100!r},1.0"]


def test_auc_command_without_curves(tmp_path):
    assert main(["auc", str(tmp_path)]) == EXIT_CONFIG


def test_dump_frames(tmp_path):
    assert main(["dump-frames", "--set", "env.length=6", "-n", "12", "-o", str(tmp_path)]) == 0
    files = sorted(tmp_path.glob("frame_*.pgm"))
    assert len(files) == 12
    env = PixelChain(6)
    frame = read_pgm(files[0])
    np.testing.assert_array_equal(frame, env.render(0))
    assert files[0].read_bytes().startswith(b"P5")


def test_tap_sweep(tmp_path, capsys):
    args = ["tap-sweep", *small_args("strategy.kind=model_bonus", "agent.total_epochs=2",
                                     "env.length=10"),
            "--seeds", "0", "-o", str(tmp_path)]
    assert main(args) == EXIT_OK
    cols = experiment.read_curve(tmp_path / "tap_sweep.csv")
    np.testing.assert_array_equal(cols["tap_index"], [4, 6])
    # hourglass for 80 pixels: (64, 48, 32, 16, 32, 48, 64, 80)
    np.testing.assert_array_equal(cols["encode_dim"], [16, 48])
    assert (tmp_path / "tap_sweep.svg").read_text().count("<polyline") == 2


def test_tap_sweep_needs_bonus_strategy(tmp_path):
    assert main(["tap-sweep", *small_args(), "-o", str(tmp_path)]) == EXIT_CONFIG
