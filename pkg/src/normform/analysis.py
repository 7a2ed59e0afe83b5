"""Post-training diagnostics: periods, ensemble envelopes, amplitudes, reports."""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import as_float_array, check_int, check_positive
from .autoencoder import decode, encode
from .dataset import _n_threads
from .exceptions import IntegrationBlowupError, NoOscillationError
from .integrate import TimeGrid, integrate
from .normal_forms import NormalForm, NormalFormKind, eval_rhs_scaled, simulate_ensemble

DECAY_THRESHOLD = 1e-4


def dominant_period(series, dt, pad_factor=16):
    """Period of the strongest non-constant Fourier component.

    The mean-subtracted series is Hann-windowed and zero padded to
    ``pad_factor`` times its length before the real FFT. The peak bin is
    refined by fitting a parabola to the log magnitude of the peak and its
    two neighbours.

    Raises
    ------
    NoOscillationError
        If the series is constant.
    """
    x = as_float_array(series, "series", ndim=1)
    if x.size < 8:
        raise ValueError(f"need at least 8 samples, got {x.size}")
    check_positive(float(dt), "dt")
    x = x - x.mean()
    scale = np.max(np.abs(x))
    if scale == 0.0 or not np.isfinite(scale):
        raise NoOscillationError("series is constant; no period to estimate")
    n_fft = 1 << int(np.ceil(np.log2(x.size * max(1, int(pad_factor)))))
    mag = np.abs(np.fft.rfft(x / scale * np.hanning(x.size), n_fft))
    k = 1 + int(np.argmax(mag[1:]))
    shift = 0.0
    if 1 < k < mag.size - 1 and np.all(mag[k - 1:k + 2] > 0):
        lm, l0, lp = np.log(mag[k - 1:k + 2])
        denom = lm - 2.0 * l0 + lp
        if denom < 0:
            shift = 0.5 * (lm - lp) / denom
    return n_fft * dt / (k + shift)


def _envelope_distance(Z, lo, hi):
    over = np.maximum(0.0, np.maximum(lo - Z, Z - hi))
    return float(np.mean(np.sqrt(np.sum(over * over, axis=0))))


def simulate_envelope(z0, nf, beta, grid, n_ensemble=20, spread=0.05, seed=0):
    """Pointwise min/max over an ensemble started around ``z0``.

    Member 0 starts exactly at ``z0``; the others are uniform perturbations of
    half-width ``spread``.
    """
    check_int(n_ensemble, "n_ensemble", minimum=1)
    z0 = np.asarray(z0, dtype=float).reshape(nf.dim)
    members = [integrate(lambda z, b: eval_rhs_scaled(nf, z, b), z0, beta, grid).states]
    if n_ensemble > 1:
        members += simulate_ensemble(nf, z0, beta, n_ensemble - 1, spread, grid, seed)
    stack = np.stack(members)
    return stack.min(axis=0), stack.max(axis=0)


def ensemble_mismatch(latent_traj, nf, beta, grid=None, n_ensemble=20, spread=0.05, seed=0,
                      dt=None):
    """Time-averaged distance of a latent trace to a normal-form ensemble envelope.

    Parameters
    ----------
    latent_traj : ndarray, shape (dim, n_times)
    nf : NormalForm
        Evaluated with its time scale, i.e. the field ``g / tau**2``.
    beta : float
    grid : TimeGrid, optional
        Sampling grid of ``latent_traj``; built from ``dt`` when omitted.

    Returns
    -------
    float
        Zero when the trace lies inside the envelope at every time.

    Raises
    ------
    IntegrationBlowupError
        If an ensemble member escapes.
    """
    Z = as_float_array(latent_traj, "latent_traj")
    if Z.ndim == 1:
        Z = Z[np.newaxis, :]
    if Z.size == 0:
        raise ValueError("latent_traj is empty")
    if Z.shape[0] != nf.dim:
        raise ValueError(f"latent trace has {Z.shape[0]} components, normal form has {nf.dim}")
    if grid is None:
        if dt is None:
            raise ValueError("pass either grid or dt")
        grid = TimeGrid(0.0, dt * max(Z.shape[1] - 1, 1), max(Z.shape[1], 2))
    if grid.n_points != Z.shape[1]:
        raise ValueError(f"grid has {grid.n_points} points, trace has {Z.shape[1]}")
    lo, hi = simulate_envelope(Z[:, 0], nf, float(beta), grid, n_ensemble, spread, seed)
    return _envelope_distance(Z, lo, hi)


class AmplitudePoint(NamedTuple):
    alpha: float
    amplitude: float
    blew_up: bool = False


def _resolve_rhs(target):
    if isinstance(target, NormalForm):
        return (lambda z, b: eval_rhs_scaled(target, z, b)), target.dim
    if hasattr(target, "rhs") and hasattr(target, "state_dim"):
        return target.rhs, target.state_dim
    if callable(target):
        return target, None
    raise TypeError(f"cannot integrate {type(target).__name__}")


def steady_amplitude(states, threshold=DECAY_THRESHOLD):
    """Half the peak-to-peak range over the final quarter, or 0 below ``threshold``."""
    tail = states[:, -max(1, states.shape[1] // 4):]
    ptp = np.max(np.ptp(tail, axis=1))
    return 0.0 if ptp < threshold else 0.5 * float(ptp)


def amplitude_vs_parameter(target, alphas, grid, u0=None, seed=0, threshold=DECAY_THRESHOLD):
    """Steady oscillation amplitude for each parameter value.

    Parameters
    ----------
    target : NormalForm, system instance or callable ``rhs(u, alpha)``
    alphas : sequence of float
    grid : TimeGrid
    u0 : ndarray, optional
        Initial state. Defaults to a seeded uniform perturbation of size 0.1
        around the origin, which is the equilibrium of every translated system.
        It needs an explicit size when ``target`` is a bare callable.

    Returns
    -------
    list of AmplitudePoint
        ``blew_up`` is set (and the amplitude is ``nan``) where integration
        escaped.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if alphas.size == 0:
        raise ValueError("need at least one parameter value")
    rhs, dim = _resolve_rhs(target)
    if u0 is None:
        if dim is None:
            raise ValueError("u0 is required when target is a bare callable")
        u0 = 0.1 * np.random.default_rng(seed).uniform(-1.0, 1.0, dim)
    out = []
    for a in alphas:
        try:
            states = integrate(rhs, u0, float(a), grid).states
        except IntegrationBlowupError:
            out.append(AmplitudePoint(float(a), float("nan"), True))
            continue
        out.append(AmplitudePoint(float(a), steady_amplitude(states, threshold)))
    return out


def fit_sqrt_law(betas, amplitudes):
    """Least-squares ``a`` in ``amp = a sqrt(beta)`` and the relative residual."""
    s = np.sqrt(np.asarray(betas, dtype=float))
    amp = np.asarray(amplitudes, dtype=float)
    a = float(s @ amp / (s @ s))
    return a, float(np.linalg.norm(amp - a * s) / np.linalg.norm(amp))


@dataclass
class ValidationReport:
    """Per-trajectory latent traces and scores plus aggregate metrics."""

    alpha: np.ndarray
    beta: np.ndarray
    latent: list
    mismatch: np.ndarray
    reconstruction_error: float
    sign_agreement: float
    periods: list
    times: np.ndarray
    n_blowups: int = 0
    envelopes: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if np.any(self.mismatch < 0) or self.reconstruction_error < 0:
            raise ValueError("scores must be non-negative")
        if not 0.0 <= self.sign_agreement <= 1.0:
            raise ValueError("sign agreement must lie in [0, 1]")

    @property
    def median_mismatch(self):
        return float(np.median(self.mismatch))

    def summary(self):
        finite = [p for p in self.periods if p is not None]
        return {
            "n_trajectories": int(self.alpha.size),
            "reconstruction_error": float(self.reconstruction_error),
            "sign_agreement": float(self.sign_agreement),
            "median_mismatch": self.median_mismatch,
            "mean_period": float(np.mean(finite)) if finite else None,
            "n_blowups": int(self.n_blowups),
        }

    def to_dict(self):
        return {
            "summary": self.summary(),
            "trajectories": [
                {"alpha": float(a), "beta": float(b),
                 "mismatch": float(m) if np.isfinite(m) else None,
                 "period": p}
                for a, b, m, p in zip(self.alpha, self.beta, self.mismatch, self.periods)
            ],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, directory):
        """One ``trace_XXXX.csv`` per trajectory: time and latent components."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for j, Z in enumerate(self.latent):
            path = os.path.join(directory, f"trace_{j:04d}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t"] + [f"z{i + 1}" for i in range(Z.shape[0])])
                for t, col in zip(self.times, Z.T):
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in col])
            paths.append(path)
        return paths

    def write_svg(self, directory, max_plots=20):
        """Latent components against time with the ensemble envelope shaded."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        os.makedirs(directory, exist_ok=True)
        paths = []
        with matplotlib.rc_context({"svg.hashsalt": "normform", "svg.fonttype": "none"}):
            for j, Z in enumerate(self.latent[:max_plots]):
                fig, ax = plt.subplots(figsize=(6, 3))
                for i in range(Z.shape[0]):
                    if j < len(self.envelopes) and self.envelopes[j] is not None:
                        lo, hi = self.envelopes[j]
                        ax.fill_between(self.times, lo[i], hi[i], alpha=0.25, color=f"C{i}", lw=0)
                    ax.plot(self.times, Z[i], color=f"C{i}", lw=1.2, label=f"z{i + 1}")
                ax.set_xlabel("t")
                ax.set_title(f"alpha={self.alpha[j]:.3f}  beta={self.beta[j]:.3f}")
                ax.legend(loc="upper right", fontsize="small")
                fig.tight_layout()
                path = os.path.join(directory, f"trace_{j:04d}.svg")
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
                paths.append(path)
        return paths


def _trajectory_seed(seed, alpha):
    # keyed on the trajectory itself so aggregates do not depend on set order
    return np.random.SeedSequence([int(seed), int(np.float64(alpha).view(np.uint64))])


def validation_report(model, test_set, n_ensemble=20, spread=0.05, seed=0, keep_envelopes=True):
    """Encode a test set and score it against normal-form ensembles.

    An ensemble that blows up scores ``inf`` and is counted in ``n_blowups``
    instead of aborting the report.
    """
    if test_set.n_trajectories == 0:
        raise ValueError("test set is empty")
    grid = test_set.grid or TimeGrid(0.0, float(test_set.t_kept - 1), test_set.t_kept)
    nf = model.nf
    Z_all, beta = encode(model, test_set.U, test_set.alpha)
    U_hat, _ = decode(model, Z_all, beta)
    recon = float(np.linalg.norm(test_set.U - U_hat) / np.linalg.norm(test_set.U))
    agree = float(np.mean(np.sign(test_set.alpha) == model.orientation * np.sign(beta)))

    def one(j):
        Z = Z_all[:, j * test_set.t_kept:(j + 1) * test_set.t_kept]
        try:
            lo, hi = simulate_envelope(Z[:, 0], nf, float(beta[j]), grid, n_ensemble, spread,
                                       _trajectory_seed(seed, test_set.alpha[j]))
            score, env = _envelope_distance(Z, lo, hi), (lo, hi)
        except IntegrationBlowupError:
            score, env = float("inf"), None
        period = None
        if nf.kind is NormalFormKind.HOPF and steady_amplitude(Z) > 0:
            try:
                period = float(dominant_period(Z[0], grid.dt))
            except NoOscillationError:
                pass
        return Z, score, env, period

    n = test_set.n_trajectories
    jobs = min(_n_threads(), n)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(one, range(n)))
    else:
        rows = [one(j) for j in range(n)]
    mismatch = np.array([r[1] for r in rows])
    return ValidationReport(
        alpha=test_set.alpha.copy(), beta=np.asarray(beta, dtype=float),
        latent=[r[0] for r in rows], mismatch=mismatch, reconstruction_error=recon,
        sign_agreement=agree, periods=[r[3] for r in rows], times=grid.times,
        n_blowups=int(np.sum(~np.isfinite(mismatch))),
        envelopes=[r[2] for r in rows] if keep_envelopes else [])
