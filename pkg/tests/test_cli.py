import json
import subprocess
import sys
import time

import numpy as np
import pytest

from normform.analysis import dominant_period
from normform.autoencoder import NfAutoencoder, estimate_tau
from normform.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, main
from normform.container import read_header
from normform.dataset import TrajectorySet
from normform.integrate import TimeGrid
from normform.pod import SnapshotSet, load_bases, reconstruct


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


SMOKE = {"preset": "scalar-sn", "sampling": {"n_train": 2, "n_test": 2},
         "training": {"epochs": 2, "batch_size": 2}}


def run(*args):
    return main([*map(str, args), "-q"])


def test_generate_smoke_is_fast_and_small(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMOKE)
    start = time.perf_counter()
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    assert time.perf_counter() - start < 1.0
    train = TrajectorySet.load(tmp_path / "o" / "train.nfds")
    assert train.n_trajectories == 2 and train.U.shape == (1, 202)
    manifest = json.loads((tmp_path / "o" / "manifest-generate.json").read_text())
    assert set(manifest["files"]) == {"train.nfds", "test.nfds"}
    assert manifest["dataset_hash"] == train.meta["config_hash"]


def test_generate_is_byte_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMOKE)
    for name in ("a", "b"):
        assert run("generate", "--config", cfg, "--out", tmp_path / name, "--seed", 11) == EXIT_OK
    for f in ("train.nfds", "test.nfds", "manifest-generate.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    run("generate", "--config", cfg, "--out", tmp_path / "c", "--seed", 12)
    assert (tmp_path / "a" / "train.nfds").read_bytes() != (tmp_path / "c" / "train.nfds").read_bytes()


def test_full_pipeline(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(SMOKE, validation={"n_ensemble": 3, "max_plots": 1}))
    out = tmp_path / "o"
    assert run("generate", "--config", cfg, "--out", out) == EXIT_OK
    assert run("train", "--config", cfg, "--out", out) == EXIT_OK
    probe = json.loads((out / "probe.json").read_text())
    assert probe["epoch"] == 1 and probe["l3_over_l1"] >= 0
    assert (out / "history.csv").read_text().count("\n") == 1 + 2
    model, header = NfAutoencoder.load(out / "checkpoint.nfck")
    assert header["dataset_hash"] == read_header(out / "train.nfds")["config_hash"]
    assert header["seed"] == 0 and len(header["loss_weights"]) == 6
    assert run("validate", "--config", cfg, "--out", out) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["n_trajectories"] == 2
    assert len(list((out / "traces").glob("*.csv"))) == 2
    assert len(list((out / "plots").glob("*.svg"))) == 1


def test_zero_epochs_write_untrained_checkpoint(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(SMOKE, training={"epochs": 0}))
    out = tmp_path / "o"
    run("generate", "--config", cfg, "--out", out)
    assert run("train", "--config", cfg, "--out", out) == EXIT_OK
    model, _ = NfAutoencoder.load(out / "checkpoint.nfck")
    assert model.phi1.layer_sizes == [1, 16, 16, 1]
    assert (out / "history.csv").read_text().count("\n") == 1
    assert not (out / "probe.json").exists()


def test_missing_dataset_is_an_io_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMOKE)
    assert run("train", "--config", cfg, "--out", tmp_path / "nothing") == EXIT_IO
    assert run("validate", "--config", cfg, "--out", tmp_path / "nothing") == EXIT_IO
    assert run("generate", "--config", tmp_path / "missing.json") == EXIT_IO


def test_config_errors(tmp_path):
    assert run("generate", "--config", write_config(tmp_path / "a.json", {"preset": "nope"})) == EXIT_CONFIG
    (tmp_path / "b.json").write_text("{not json")
    assert run("generate", "--config", tmp_path / "b.json") == EXIT_CONFIG
    assert run("generate", "--config", write_config(tmp_path / "c.json", {"preset": "navierstokes-pod"}),
               "--out", tmp_path / "o") == EXIT_CONFIG
    bad_tau = dict(SMOKE, tau={"policy": "guess"})
    cfg = write_config(tmp_path / "d.json", bad_tau)
    run("generate", "--config", cfg, "--out", tmp_path / "d")
    assert run("train", "--config", cfg, "--out", tmp_path / "d") == EXIT_CONFIG


def test_validate_refuses_foreign_dataset_unless_forced(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(SMOKE, validation={"n_ensemble": 2, "max_plots": 0}))
    other = write_config(tmp_path / "o.json", dict(SMOKE, sampling={"n_train": 2, "n_test": 2, "sigma_u": 0.05}))
    run("generate", "--config", cfg, "--out", tmp_path / "a")
    run("train", "--config", cfg, "--out", tmp_path / "a")
    run("generate", "--config", other, "--out", tmp_path / "b")
    args = ["validate", "--config", cfg, "--out", tmp_path / "v",
            "--checkpoint", tmp_path / "a" / "checkpoint.nfck", "--test", tmp_path / "b" / "test.nfds"]
    assert run(*args) == EXIT_CONFIG
    assert run(*args, "--force") == EXIT_OK


def test_divergence_exit_code_keeps_history(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(
        SMOKE, sampling={"n_train": 6, "n_test": 0}, network={"activation": "elu"},
        training={"epochs": 20, "batch_size": 3, "learning_rate": 1e8},
        loss_weights=[1e300, 1, 1, 1, 0, 1]))
    run("generate", "--config", cfg, "--out", tmp_path / "o")
    with np.errstate(over="ignore"):
        assert run("train", "--config", cfg, "--out", tmp_path / "o") == EXIT_DIVERGENCE
    assert (tmp_path / "o" / "history.csv").exists()
    assert not (tmp_path / "o" / "checkpoint.nfck").exists()


def test_estimated_time_scale(tmp_path):
    cfg = write_config(tmp_path / "c.json", {
        "preset": "lorenz96", "sampling": {"n_train": 4, "n_test": 0, "seed": 3},
        "tau": {"policy": "estimate"}, "training": {"epochs": 0}})
    out = tmp_path / "o"
    assert run("generate", "--config", cfg, "--out", out) == EXIT_OK
    assert run("train", "--config", cfg, "--out", out) == EXIT_OK
    ts = TrajectorySet.load(out / "train.nfds")
    periods = [dominant_period(ts.trajectory(j).states[0], ts.grid.dt)
               for j in np.flatnonzero(ts.alpha > 0.1)]
    _, header = NfAutoencoder.load(out / "checkpoint.nfck")
    assert header["tau"] == pytest.approx(estimate_tau(np.median(periods), 2 * np.pi), rel=1e-12)


def test_estimate_policy_needs_hopf(tmp_path):
    cfg = write_config(tmp_path / "c.json", dict(SMOKE, tau={"policy": "estimate"}))
    run("generate", "--config", cfg, "--out", tmp_path / "o")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def rank_one_snapshots(path, n_runs=3, space=40, t=120):
    x = np.linspace(0, 1, space)
    blocks = []
    for j in range(n_runs):
        tt = np.linspace(0, 12, t)
        blocks.append(np.outer(np.sin(np.pi * x), np.cos((1 + 0.1 * j) * tt)) + x[:, None])
    snaps = SnapshotSet(np.hstack(blocks), 45.0 + np.arange(n_runs), t, TimeGrid(0, 12, t))
    snaps.save(path)
    return snaps


def pod_config(tmp_path, **pod):
    return write_config(tmp_path / "p.json", {"system": {"name": "external", "alpha_c": 44.6},
                                              "sampling": {"n_test": 1}, "pod": pod})


def test_pod_rank_one_round_trip(tmp_path):
    snaps = rank_one_snapshots(tmp_path / "s.nfds")
    cfg = pod_config(tmp_path, m=1, stride=1, gamma="identity")
    out = tmp_path / "o"
    assert run("pod", "--config", cfg, "--snapshots", tmp_path / "s.nfds", "--out", out) == EXIT_OK
    train, test = TrajectorySet.load(out / "train.nfds"), TrajectorySet.load(out / "test.nfds")
    assert train.n_trajectories == 2 and test.n_trajectories == 1
    np.testing.assert_allclose(train.alpha, [0.4, 1.4], atol=1e-12)
    bases = load_bases(out / "bases.nfpb")
    for j, series in enumerate([train.trajectory(0), train.trajectory(1), test.trajectory(0)]):
        np.testing.assert_allclose(reconstruct(bases[j], series.states), snaps.states(j), atol=1e-8)


def test_pod_cylinder_mixing_by_name(tmp_path):
    rng = np.random.default_rng(0)
    SnapshotSet(rng.standard_normal((10, 60)), [45.0, 46.0], 30).save(tmp_path / "s.nfds")
    cfg = pod_config(tmp_path, m=4, stride=1, gamma="cylinder")
    assert run("pod", "--config", cfg, "--snapshots", tmp_path / "s.nfds", "--out", tmp_path / "o") == EXIT_OK
    header = read_header(tmp_path / "o" / "train.nfds")
    assert header["pod"]["gamma"][0] == [0.154739, -0.523688, 0.675546, 0.495243]


def test_pod_rank_too_high(tmp_path):
    rank_one_snapshots(tmp_path / "s.nfds")
    cfg = pod_config(tmp_path, m=2, stride=1, gamma="identity")
    assert run("pod", "--config", cfg, "--snapshots", tmp_path / "s.nfds", "--out", tmp_path / "o") == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMOKE)
    proc = subprocess.run([sys.executable, "-m", "normform", "generate", "--config", cfg,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0 and "wrote" in proc.stderr
    help_text = subprocess.run([sys.executable, "-m", "normform", "--help"],
                               capture_output=True, text=True).stdout
    assert all(cmd in help_text for cmd in ("generate", "train", "validate", "pod"))
