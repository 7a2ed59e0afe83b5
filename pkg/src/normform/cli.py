"""``normform generate|train|validate|pod`` command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric divergence,
4 I/O failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import presets
from .analysis import dominant_period, validation_report
from .autoencoder import (LOSS_NAMES, LossWeights, NfAutoencoder, build_model, compute_losses,
                          consistency_ratios, estimate_tau, train, write_history_csv)
from .container import config_hash
from .dataset import SamplingSpec, TrajectorySet, build_set
from .exceptions import (ConfigError, DatasetConstructionError, IntegrationBlowupError,
                         NoOscillationError, RankDeficiencyError, TrainingDivergenceError)
from .integrate import TimeGrid
from .normal_forms import NormalForm, NormalFormKind
from .pod import SnapshotSet, reduce_trajectory_set, save_bases
from .systems import make_system

log = logging.getLogger("normform")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

TRAIN_FILE, TEST_FILE = "train.nfds", "test.nfds"
CHECKPOINT_FILE = "checkpoint.nfck"
BASES_FILE = "bases.nfpb"


# -- helpers ------------------------------------------------------------------

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _section(cfg, key):
    value = cfg.get(key)
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} is missing or not an object")
    return value


def _data_config(cfg):
    return {k: cfg.get(k) for k in ("system", "sampling", "grid", "trim")}


def _system(cfg):
    sec = _section(cfg, "system")
    name = sec.get("name")
    if name == "external":
        raise ConfigError("this preset reads external snapshots; run `normform pod` instead")
    try:
        return make_system(name, sec.get("params"), sec.get("alpha_c"))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad system section: {err}") from err


def _grid(cfg):
    try:
        return TimeGrid.from_dict(_section(cfg, "grid"))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad grid section: {err}") from err


def _path(args, attr, cfg, key, default):
    value = getattr(args, attr, None) or cfg.get("paths", {}).get(key)
    return value or os.path.join(args.out, default)


def _manifest(args, cfg, command, files, extra=None):
    entry = {"command": command, "config": cfg, "config_hash": config_hash(cfg),
             "files": {os.path.basename(p): file_sha256(p) for p in files}}
    entry.update(extra or {})
    _write_json(os.path.join(args.out, f"manifest-{command}.json"), entry)


def _normal_form(cfg):
    sec = _section(cfg, "normal_form")
    try:
        return NormalForm(NormalFormKind.parse(sec.get("kind")), float(sec.get("omega", 1.0)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad normal_form section: {err}") from err


def _estimate_tau_from_data(ts, nf):
    """Time scale from the median period of the oscillating training runs."""
    if nf.kind is not NormalFormKind.HOPF:
        raise ConfigError("tau policy 'estimate' needs a Hopf normal form")
    periods = []
    for j in np.flatnonzero(ts.alpha > 0):
        try:
            periods.append(dominant_period(ts.trajectory(j).states[0], ts.grid.dt))
        except NoOscillationError:
            continue
    if not periods:
        raise ConfigError("no oscillating training trajectory to estimate tau from")
    return estimate_tau(float(np.median(periods)), 2.0 * np.pi / abs(nf.omega))


# -- commands -----------------------------------------------------------------

def cmd_generate(args, cfg):
    system = _system(cfg)
    grid = _grid(cfg)
    samp = _section(cfg, "sampling")
    try:
        spec = SamplingSpec(np.zeros(system.state_dim), 0.0, float(samp.get("sigma_u", 0.1)),
                            float(samp.get("sigma_alpha", 0.5)), int(samp.get("n_train", 1000)),
                            int(samp.get("n_test", 20)), int(samp.get("seed", 0)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad sampling section: {err}") from err
    meta = {"config_hash": config_hash(_data_config(cfg)), "system": cfg["system"],
            "spec": spec.to_dict(), "trim": int(cfg.get("trim", 0))}
    train_set, test_set = build_set(system, spec, grid, int(cfg.get("trim", 0)), meta=meta)
    os.makedirs(args.out, exist_ok=True)
    files = [os.path.join(args.out, TRAIN_FILE)]
    train_set.save(files[0])
    if test_set is not None:
        files.append(os.path.join(args.out, TEST_FILE))
        test_set.save(files[1])
    _manifest(args, cfg, "generate", files, {"dataset_hash": meta["config_hash"]})
    log.info("wrote %s", ", ".join(files))
    return EXIT_OK


def cmd_train(args, cfg):
    path = _path(args, "train", cfg, "train", TRAIN_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"training set {path} not found")
    ts = TrajectorySet.load(path)
    nf = _normal_form(cfg)
    net = cfg.get("network", {})
    tr = cfg.get("training", {})
    tau_cfg = cfg.get("tau", {"policy": "fixed", "value": 1.0})
    policy = tau_cfg.get("policy", "fixed")
    if policy == "estimate":
        tau = _estimate_tau_from_data(ts, nf)
    elif policy in ("fixed", "trainable"):
        tau = float(tau_cfg.get("value", 1.0))
    else:
        raise ConfigError(f"unknown tau policy {policy!r}")
    try:
        weights = LossWeights.of(cfg.get("loss_weights", (1, 0, 0, 0, 0, 0)))
        seed = int(tr.get("seed", 0))
        model = build_model(ts.state_dim, nf.with_tau(tau),
                            net.get("phi1_hidden", (32, 16)), net.get("psi1_hidden", (16, 32)),
                            net.get("phi2_hidden", (16, 16)), net.get("psi2_hidden", (16, 16)),
                            net.get("activation", "tanh"), policy == "trainable",
                            int(net.get("orientation", 1)), float(net.get("sign_eps", 1e-2)),
                            seed)
        epochs = int(tr.get("epochs", 0))
        batch_size = min(int(tr.get("batch_size", ts.n_trajectories)), ts.n_trajectories)
        eta = float(tr.get("learning_rate", 1e-3))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad training configuration: {err}") from err

    os.makedirs(args.out, exist_ok=True)
    probe_path = os.path.join(args.out, "probe.json")
    history_path = os.path.join(args.out, "history.csv")

    def probe(epoch, m, history):
        if epoch == 0:
            report, _, _ = compute_losses(m, ts, weights, with_grads=False)
            r3, r4 = consistency_ratios(report)
            _write_json(probe_path, {"epoch": 1, "l3_over_l1": r3, "l4_over_l1": r4,
                                     **{k: getattr(report, k) for k in LOSS_NAMES},
                                     "total": report.total})
            log.info("after epoch 1: l3/l1 = %.3g, l4/l1 = %.3g", r3, r4)

    initial, _, _ = compute_losses(model, ts, weights, with_grads=False)
    try:
        model, history = train(model, ts, weights, epochs, batch_size, eta, seed, [probe])
    except TrainingDivergenceError as err:
        write_history_csv(history_path, err.history or [])
        log.error("training diverged: %s (partial history in %s)", err, history_path)
        return EXIT_DIVERGENCE
    final, _, _ = compute_losses(model, ts, weights, with_grads=False)
    write_history_csv(history_path, history)
    ckpt = os.path.join(args.out, CHECKPOINT_FILE)
    model.save(ckpt, {"seed": seed, "loss_weights": list(weights.as_tuple()), "tau": model.tau,
                      "dataset_hash": ts.meta.get("config_hash"),
                      "config_hash": config_hash(cfg)})
    files = [ckpt, history_path] + ([probe_path] if os.path.exists(probe_path) else [])
    _manifest(args, cfg, "train", files, {"initial_total": initial.total,
                                          "final_total": final.total})
    log.info("loss %.4g -> %.4g, checkpoint %s", initial.total, final.total, ckpt)
    return EXIT_OK


def cmd_validate(args, cfg):
    ckpt = _path(args, "checkpoint", cfg, "checkpoint", CHECKPOINT_FILE)
    test_path = _path(args, "test", cfg, "test", TEST_FILE)
    for p in (ckpt, test_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"{p} not found")
    model, header = NfAutoencoder.load(ckpt)
    test_set = TrajectorySet.load(test_path)
    if test_set.state_dim != model.state_dim:
        raise ConfigError(f"checkpoint expects state dimension {model.state_dim}, "
                          f"test set has {test_set.state_dim}")
    recorded, actual = header.get("dataset_hash"), test_set.meta.get("config_hash")
    if recorded != actual and not args.force:
        raise ConfigError(f"checkpoint was trained on dataset {recorded}, test set is {actual}; "
                          "pass --force to validate anyway")
    val = cfg.get("validation", {})
    report = validation_report(model, test_set, int(val.get("n_ensemble", 20)),
                               float(val.get("spread", 0.05)), int(val.get("seed", 0)))
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    report.write_json(report_path)
    traces = report.write_csv(os.path.join(args.out, "traces"))
    plots = report.write_svg(os.path.join(args.out, "plots"), int(val.get("max_plots", 20)))
    _manifest(args, cfg, "validate", [report_path, *traces, *plots],
              {"checkpoint_sha256": file_sha256(ckpt), "test_sha256": file_sha256(test_path)})
    log.info("report: %s", json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_pod(args, cfg):
    path = _path(args, "snapshots", cfg, "snapshots", "snapshots.nfds")
    if not os.path.exists(path):
        raise FileNotFoundError(f"snapshot file {path} not found")
    snaps = SnapshotSet.load(path)
    pod = cfg.get("pod", {})
    try:
        m, stride = int(pod.get("m", 4)), int(pod.get("stride", 10))
        trim = int(pod.get("trim", cfg.get("trim", 0)))
        reduced, bases = reduce_trajectory_set(
            snaps, m, trim, stride, pod.get("gamma", "cylinder"), pod.get("seed"),
            alpha_shift=float(cfg.get("system", {}).get("alpha_c", 0.0)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad pod configuration: {err}") from err
    reduced.meta["config_hash"] = config_hash({"source": file_sha256(path), "pod": pod,
                                               "trim": trim})
    n_test = int(cfg.get("sampling", {}).get("n_test", 0))
    n = reduced.n_trajectories
    n_test = n_test if 0 < n_test < n else 0
    os.makedirs(args.out, exist_ok=True)
    files = [os.path.join(args.out, TRAIN_FILE)]
    train_part = reduced.subset(np.arange(n - n_test))
    train_part.meta["role"] = "train"
    train_part.save(files[0])
    if n_test:
        files.append(os.path.join(args.out, TEST_FILE))
        test_part = reduced.subset(np.arange(n - n_test, n))
        test_part.meta["role"] = "test"
        test_part.save(files[-1])
    files.append(os.path.join(args.out, BASES_FILE))
    save_bases(files[-1], bases, {"source_sha256": file_sha256(path)})
    _manifest(args, cfg, "pod", files, {"dataset_hash": reduced.meta["config_hash"]})
    log.info("reduced %d runs to %d x %d series", n, m, reduced.t_kept)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "validate": cmd_validate,
            "pod": cmd_pod}


def build_parser():
    parser = argparse.ArgumentParser(prog="normform",
                                     description="Learn normal-form coordinates from data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, help="override sampling and training seeds")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--force", action="store_true",
                       help="skip the dataset-hash check in validate")
        p.add_argument("--train", help="training set (train)")
        p.add_argument("--test", help="test set (validate)")
        p.add_argument("--checkpoint", help="checkpoint (validate)")
        p.add_argument("--snapshots", help="snapshot file (pod)")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("normform: %(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        cfg = presets.load_config(args.config)
        if args.seed is not None:
            cfg = presets.deep_merge(cfg, {"sampling": {"seed": args.seed},
                                           "training": {"seed": args.seed}})
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, RankDeficiencyError) as err:
        log.error("%s", err)
        return EXIT_CONFIG
    except (TrainingDivergenceError, DatasetConstructionError, IntegrationBlowupError) as err:
        log.error("%s", err)
        return EXIT_DIVERGENCE
    except OSError as err:
        log.error("%s", err)
        return EXIT_IO
    except ValueError as err:
        log.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
