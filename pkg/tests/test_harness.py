import json

import numpy as np
import pytest

from spiketrigger.harness import (ConfigError, ExperimentConfig, build_world, calibrate_rewards, compare,
                                  emit_speed_vs_mtr, load_config, load_world, run_episode, save_world,
                                  write_outputs)
from spiketrigger.policy import TriggerLog


def test_config_text_round_trip(tmp_path):
    cfg = load_config(preset="desk-scale", overrides=["trainer.batch_size=16", "run.freeze_after=none"])
    (tmp_path / "c.cfg").write_text("# saved\n" + cfg.to_text())
    back = load_config(tmp_path / "c.cfg")
    assert back == cfg
    assert back.trainer.batch_size == 16 and back.run.freeze_after is None and back.reward.compounding is True


def test_defaults_keep_published_hyperparameters():
    t = ExperimentConfig().trainer
    assert (t.batch_size, t.learning_rate, t.epsilon_init, t.epsilon_decay, t.buffer_capacity) == \
        (32, 0.2, 0.8, 0.001, 100)
    assert ExperimentConfig().snn.n_hidden == 128


@pytest.mark.parametrize("override", ["trainer.nope=1", "run.policy=greedy", "run.duration=-1",
                                      "trainer.batch_size=abc", "encoder.grid_w=7"])
def test_bad_config_rejected(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_config(preset="huge")


SHORT = ["run.duration=10", "calibration.duration=10"]


@pytest.fixture(scope="module")
def short_setup():
    cfg = load_config(overrides=SHORT)
    world = build_world(cfg)
    return cfg, world, calibrate_rewards(cfg, world)


def episode(setup, policy, **extra):
    cfg, world, calib = setup
    over = {"run.policy": policy, **extra}
    return run_episode(cfg.with_overrides(over), world, calibration=calib)


def test_ten_second_schedule_and_determinism(short_setup):
    a, b = episode(short_setup, "sean"), episode(short_setup, "sean")
    assert a.n_decisions == {"map": 200, "track": 1000}
    assert a.to_json() == b.to_json()
    assert a.log.to_csv() == b.log.to_csv()


def test_always_baseline_triggers_every_decision(short_setup):
    rep = episode(short_setup, "always")
    assert rep.metrics_full.ttr_fraction == 1.0 and rep.metrics_full.mtr_fraction == 1.0
    assert rep.metrics_full.ttr_hz == 100.0 and rep.metrics_full.mtr_hz == 20.0
    assert rep.speed_mtr_spearman == 0.0
    assert np.isfinite(rep.metrics.ape_rms)


def test_random_policy_rate(short_setup):
    rep = episode(short_setup, "random")
    assert abs(rep.metrics_full.ttr_fraction - 0.5) <= 0.05


def test_speed_bins_reject_bad_requests(short_setup):
    rep = episode(short_setup, "always")
    rows = emit_speed_vs_mtr(rep, 1.0)
    assert len(rows) == 10 and all(r[3] == 1.0 for r in rows)
    with pytest.raises(ValueError):
        emit_speed_vs_mtr(rep, 11.0)
    rep.log = TriggerLog([r for r in rep.log.records if r.channel == "track"])
    with pytest.raises(ValueError):
        emit_speed_vs_mtr(rep, 1.0)


def test_identical_policies_report_zero_deltas(short_setup):
    cfg, world, _ = short_setup
    table = compare(cfg, ["always", "always"], world)
    row = table.rows()[1]
    assert all(row[c + "_delta"] == "(0%)" for c in table.COLUMNS)
    assert "(0%)" in table.to_text()


def test_compare_needs_two_policies(short_setup):
    with pytest.raises(ConfigError):
        compare(short_setup[0], ["sean"])


def test_world_and_outputs_round_trip(short_setup, tmp_path):
    cfg, world, _ = short_setup
    save_world(world, cfg, tmp_path / "scene")
    back = load_world(tmp_path / "scene", cfg.rig)
    assert back.stream_hash() == world.stream_hash()
    np.testing.assert_array_equal(back.trajectory.poses, world.trajectory.poses)
    assert load_config(tmp_path / "scene" / "scene.cfg") == cfg

    out = write_outputs(episode(short_setup, "sean"), tmp_path / "run")
    names = {p.name for p in out.iterdir()}
    assert {"report.json", "trigger_log.csv", "metrics.csv", "speed_vs_mtr.csv", "map.csv",
            "map_net.npz", "track_net.npz"} <= names
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["trainer.learning_rate"] == "0.2"
    assert len(TriggerLog.read_csv(out / "trigger_log.csv")) == 1200
