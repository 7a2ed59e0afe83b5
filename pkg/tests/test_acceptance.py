"""Desk-scale acceptance suite.

Every criterion prints one ``PASS``/``FAIL`` line and then asserts. Run with
``pytest tests/test_acceptance.py -v`` or directly with
``python3 tests/test_acceptance.py`` for the bare PASS/FAIL listing.
"""

import json
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from normform.analysis import (amplitude_vs_parameter, dominant_period, fit_sqrt_law,
                               steady_amplitude)
from normform.autoencoder import NfAutoencoder, build_model, compute_losses, encode, estimate_tau, flat_grads
from normform.cli import main as cli_main
from normform.dataset import TrajectorySet
from normform.integrate import TimeGrid, integrate, trim_transients
from normform.normal_forms import NormalForm
from normform.pod import (CYLINDER_GAMMA, SnapshotSet, pod_decompose, reconstruct,
                          reduce_trajectory_set)
from normform.systems import make_system

RESULTS = {}


def verdict(key, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {key:>3}  {title}: {detail}"
    RESULTS[key] = line
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    return ok


# -- shared desk runs ---------------------------------------------------------------

SN_CONFIG = {"preset": "scalar-sn", "sampling": {"n_train": 100, "n_test": 20}}
L96_CONFIG = {"preset": "lorenz96", "sampling": {"n_train": 100, "n_test": 20},
              "training": {"epochs": 200, "batch_size": 10, "learning_rate": 1e-3}}


def desk_run(config, out):
    """generate, train and validate through the command-line entry point."""
    os.makedirs(out, exist_ok=True)
    cfg = os.path.join(out, "config.json")
    with open(cfg, "w") as fh:
        json.dump(config, fh)
    start = time.perf_counter()
    for cmd in ("generate", "train", "validate"):
        rc = cli_main([cmd, "--config", cfg, "--out", out, "-q"])
        if rc != 0:
            raise RuntimeError(f"{cmd} exited with {rc}")
    with open(os.path.join(out, "manifest-train.json")) as fh:
        losses = json.load(fh)
    with open(os.path.join(out, "report.json")) as fh:
        report = json.load(fh)["summary"]
    return {"out": out, "seconds": time.perf_counter() - start,
            "initial": losses["initial_total"], "final": losses["final_total"], **report}


@pytest.fixture(scope="module")
def workdir():
    with tempfile.TemporaryDirectory(prefix="normform-acceptance-") as d:
        yield d


@pytest.fixture(scope="module")
def sn_run(workdir):
    return desk_run(SN_CONFIG, os.path.join(workdir, "sn-1"))


@pytest.fixture(scope="module")
def l96_run(workdir):
    return desk_run(L96_CONFIG, os.path.join(workdir, "l96-1"))


# -- criteria -------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    U = rng.standard_normal((3, 10))
    data = TrajectorySet(U, rng.standard_normal((3, 10)), [0.4, -0.7], 5)
    worst = 0.0
    h = 1e-6
    for activation in ("tanh", "elu"):
        model = build_model(3, NormalForm("hopf", 1.0, 0.9), (4,), (4,), (3,), (3,), activation,
                            tau_trainable=True, sign_eps=0.5, seed=1)
        for net in model.nets.values():
            for b in net.biases:
                b[:] = 0.3 * rng.standard_normal(b.shape)
        params, _ = model.trainable_params()
        for term in range(6):
            weights = np.eye(6)[term]
            _, grads, tau_grad = compute_losses(model, data, weights)
            analytic = np.concatenate([g.ravel() for g in flat_grads(model, grads, tau_grad)])
            numeric = []
            for p in params:
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + h
                    up = compute_losses(model, data, weights, False)[0].total
                    p[idx] = old - h
                    down = compute_losses(model, data, weights, False)[0].total
                    p[idx] = old
                    numeric.append((up - down) / (2 * h))
            numeric = np.array(numeric)
            worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    seconds = time.perf_counter() - start
    ok = worst < 1e-4 and seconds < 10
    return verdict("1", "gradient exactness", ok,
                   f"max relative error {worst:.2e} (< 1e-4) over 6 terms x 2 activations, "
                   f"trainable tau, {seconds:.1f} s (< 10 s)")


def criterion_2():
    def err(n):
        traj = integrate(lambda u, a: -u, [1.0], 0.0, TimeGrid(0.0, 1.0, n + 1))
        return abs(traj.states[0, -1] - np.exp(-1.0))

    ratio = err(20) / err(40)
    return verdict("2", "RK4 order", 14 <= ratio <= 18, f"error ratio {ratio:.3f} (in [14, 18])")


def criterion_3():
    start = time.perf_counter()
    betas = np.linspace(0.05, 0.4, 8)
    points = amplitude_vs_parameter(NormalForm("hopf"), betas, TimeGrid(0.0, 300.0, 6001))
    _, resid = fit_sqrt_law(betas, [p.amplitude for p in points])
    seconds = time.perf_counter() - start
    return verdict("3", "Hopf square-root law", resid < 0.05 and seconds < 30,
                   f"relative residual {resid:.2e} (< 5e-2), {seconds:.1f} s (< 30 s)")


def criterion_4():
    start = time.perf_counter()
    s = make_system("lorenz96")
    grid = TimeGrid(0.0, 80.0, 500)
    u0 = 0.1 * np.random.default_rng(0).uniform(-1, 1, 64)
    below = integrate(s.rhs, u0, -0.3, grid).states
    tail = below[:, -below.shape[1] // 4:]
    fluct = float(np.max(np.abs(tail)))
    above = steady_amplitude(integrate(s.rhs, u0, 0.3, grid).states)
    seconds = time.perf_counter() - start
    ok = fluct < 1e-3 and above > 1e-2 and seconds < 60
    return verdict("4", "Lorenz96 bifurcation side", ok,
                   f"terminal fluctuation at -0.3 {fluct:.1e} (< 1e-3), amplitude at +0.3 "
                   f"{above:.3f} (> 1e-2), {seconds:.1f} s (< 60 s)")


def criterion_5(run):
    ratio = run["final"] / run["initial"]
    ok = (ratio < 0.2 and run["median_mismatch"] < 0.1 and run["reconstruction_error"] < 0.1
          and run["seconds"] < 600)
    return verdict("5", "saddle-node desk run", ok,
                   f"loss ratio {ratio:.3f} (< 0.2), median mismatch {run['median_mismatch']:.3f} "
                   f"(< 0.1), reconstruction {run['reconstruction_error']:.3f} (< 0.1), "
                   f"{run['seconds']:.0f} s (< 600 s)")


def latent_probe(checkpoint, alpha, seed=0):
    """Steady latent amplitude and terminal fluctuation for one fresh Lorenz96 run."""
    model, _ = NfAutoencoder.load(checkpoint)
    s = make_system("lorenz96")
    u0 = 0.1 * np.random.default_rng(seed).uniform(-1, 1, 64)
    traj = trim_transients(integrate(s.rhs, u0, alpha, TimeGrid(0.0, 80.0, 500)), 200)
    Z, _ = encode(model, traj.states, alpha)
    tail = Z[:, -Z.shape[1] // 4:]
    return steady_amplitude(Z), float(np.max(np.ptp(tail, axis=1)))


def criterion_6(run):
    ckpt = os.path.join(run["out"], "checkpoint.nfck")
    amp_up, _ = latent_probe(ckpt, 0.3)
    _, fluct_down = latent_probe(ckpt, -0.3)
    ok = (run["sign_agreement"] >= 0.9 and amp_up > 1e-2 and fluct_down < 1e-3
          and run["final"] < run["initial"] and run["seconds"] < 1800)
    return verdict("6", "Lorenz96 desk run", ok,
                   f"sign agreement {run['sign_agreement']:.2f} (>= 0.9), latent amplitude at +0.3 "
                   f"{amp_up:.3f} (> 1e-2), latent fluctuation at -0.3 {fluct_down:.1e} (< 1e-3), "
                   f"loss {run['initial']:.3g} -> {run['final']:.3g}, {run['seconds']:.0f} s (< 1800 s)")


def criterion_7a():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(20):
        rows, cols = rng.integers(5, 40), rng.integers(5, 40)
        W = rng.standard_normal((rows, cols)) * np.logspace(0, -3, cols)
        m = int(rng.integers(1, min(rows, cols)))
        basis, series = pod_decompose(W, m, stride=1, strict_rank=False)
        err = np.sum((W - reconstruct(basis, series.Lambda)) ** 2)
        tail = np.sum(np.linalg.svd(W - W.mean(axis=1, keepdims=True), compute_uv=False)[m:] ** 2)
        worst = max(worst, abs(err - tail) / tail)
    return verdict("7a", "POD energy identity", worst < 1e-6,
                   f"max relative gap {worst:.1e} (< 1e-6) over 20 random matrices")


def criterion_7b():
    G = CYLINDER_GAMMA
    gram = float(np.max(np.abs(G.T @ G - np.eye(4))))
    rows = np.linalg.norm(G, axis=1) - 1.0
    ok = gram < 5e-6 and np.max(np.abs(rows)) < 5e-6
    return verdict("7b", "cylinder mixing matrix unitarity", ok,
                   f"max |G^T G - I| {gram:.2e}, row norm deviations "
                   f"{', '.join(f'{r:+.1e}' for r in rows)} (all < 5e-6)")


def criterion_8():
    space, t = 200, 6180
    x = np.linspace(0, 2 * np.pi, space, endpoint=False)[:, None]
    time_axis = np.linspace(0, 77.0, t)
    runs = []
    for c in (1.0, 1.3):
        phase = x - c * time_axis
        runs.append(1.0 + np.sin(phase) + 0.4 * np.cos(2 * phase) + 0.02 * np.sin(3 * phase))
    snaps = SnapshotSet(np.hstack(runs), [45.0, 50.0], t, TimeGrid(0.0, 77.0, t))
    reduced, bases = reduce_trajectory_set(snaps, m=4, trim=3250, stride=10, gamma="random", seed=0,
                                           alpha_shift=44.6)
    worst = 0.0
    for j, basis in enumerate(bases):
        target = snaps.states(j)[:, 3250::10]
        back = reconstruct(basis, reduced.trajectory(j).states)
        worst = max(worst, np.linalg.norm(back - target) / np.linalg.norm(target))
    shape_ok = reduced.trajectory(0).states.shape == (4, 293) and reduced.U.shape == (4, 586)
    return verdict("8", "POD pipeline on a traveling wave", shape_ok and worst < 0.05,
                   f"series shape {reduced.trajectory(0).states.shape} (expect (4, 293)), "
                   f"round-trip error {worst:.2%} (< 5%)")


def criterion_9():
    rng = np.random.default_rng(1)
    dt, n = 0.05, 1000
    worst = 0.0
    for _ in range(100):
        period = rng.uniform(8 * dt, n * dt / 4)
        series = np.sin(2 * np.pi * np.arange(n) * dt / period + rng.uniform(0, 2 * np.pi))
        worst = max(worst, abs(dominant_period(series, dt) - period) / period)
    tau = estimate_tau(4.0, 1.0)
    return verdict("9", "period estimation", worst < 0.01 and tau == 2.0,
                   f"max error {worst:.2%} (< 1%) over 100 sinusoids, tau for 4:1 = {tau!r} (== 2.0)")


def criterion_10(first_sn, first_l96, workdir):
    same = []
    for config, first, name in ((SN_CONFIG, first_sn, "sn-2"), (L96_CONFIG, first_l96, "l96-2")):
        second = desk_run(config, os.path.join(workdir, name))
        with open(os.path.join(first["out"], "history.csv"), "rb") as a, \
                open(os.path.join(second["out"], "history.csv"), "rb") as b:
            same.append(a.read() == b.read())
    return verdict("10", "determinism", all(same),
                   f"identical loss histories: saddle-node {same[0]}, Lorenz96 {same[1]}")


# -- pytest wrappers --------------------------------------------------------------------

def test_criterion_01_gradient_exactness():
    assert criterion_1()


def test_criterion_02_rk4_order():
    assert criterion_2()


def test_criterion_03_hopf_square_root_law():
    assert criterion_3()


def test_criterion_04_lorenz96_bifurcation_side():
    assert criterion_4()


def test_criterion_05_saddle_node_desk_run(sn_run):
    assert criterion_5(sn_run)


def test_criterion_06_lorenz96_desk_run(l96_run):
    assert criterion_6(l96_run)


def test_criterion_07a_pod_energy_identity():
    assert criterion_7a()


def test_criterion_07b_cylinder_mixing_unitarity():
    assert criterion_7b()


def test_criterion_08_pod_traveling_wave():
    assert criterion_8()


def test_criterion_09_period_estimation():
    assert criterion_9()


def test_criterion_10_determinism(sn_run, l96_run, workdir):
    assert criterion_10(sn_run, l96_run, workdir)


if __name__ == "__main__":
    with tempfile.TemporaryDirectory(prefix="normform-acceptance-") as tmp:
        criterion_1()
        criterion_2()
        criterion_3()
        criterion_4()
        sn = desk_run(SN_CONFIG, os.path.join(tmp, "sn-1"))
        criterion_5(sn)
        l96 = desk_run(L96_CONFIG, os.path.join(tmp, "l96-1"))
        criterion_6(l96)
        criterion_7a()
        criterion_7b()
        criterion_8()
        criterion_9()
        criterion_10(sn, l96, tmp)
    print("\nsummary")
    for line in RESULTS.values():
        print(line)
    sys.exit(0 if all(line.startswith("PASS") for line in RESULTS.values()) else 1)
