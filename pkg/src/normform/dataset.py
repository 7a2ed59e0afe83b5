"""Training/test corpora: sampling, integration, trimming, stacking, batching."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_positive
from .container import read_container, write_container
from .exceptions import DatasetConstructionError
from .integrate import TimeGrid, Trajectory, integrate_many


@dataclass(frozen=True)
class SamplingSpec:
    """Uniform box of initial values ``u_c +/- sigma_u``, ``alpha_c +/- sigma_alpha``."""

    u_center: np.ndarray
    alpha_center: float = 0.0
    sigma_u: float = 0.1
    sigma_alpha: float = 0.5
    n_train: int = 1000
    n_test: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "u_center", np.atleast_1d(np.asarray(self.u_center, dtype=float)))
        check_positive(float(self.sigma_u), "sigma_u", strict=False)
        check_positive(float(self.sigma_alpha), "sigma_alpha", strict=False)
        check_int(self.n_train, "n_train", minimum=1)
        check_int(self.n_test, "n_test", minimum=0)

    @property
    def state_dim(self):
        return self.u_center.size

    def to_dict(self):
        return {"u_center": self.u_center.tolist(), "alpha_center": float(self.alpha_center),
                "sigma_u": float(self.sigma_u), "sigma_alpha": float(self.sigma_alpha),
                "n_train": int(self.n_train), "n_test": int(self.n_test), "seed": int(self.seed)}


def _draw(rng, spec, n):
    # u and alpha come from independent streams of the same generator
    u = spec.u_center[:, None] + spec.sigma_u * rng.uniform(-1.0, 1.0, size=(spec.state_dim, n))
    alpha = spec.alpha_center + spec.sigma_alpha * rng.uniform(-1.0, 1.0, size=n)
    return u, alpha


def sample_initial_conditions(spec):
    """Draw ``n_train + n_test`` initial values.

    Returns
    -------
    U0 : ndarray, shape (state_dim, n_train + n_test)
    alpha0 : ndarray, shape (n_train + n_test,)
    """
    return _draw(np.random.default_rng(spec.seed), spec, spec.n_train + spec.n_test)


@dataclass
class TrajectorySet:
    """Stacked trajectories ``U = [U^(0) ... U^(N-1)]`` with their derivatives.

    Every trajectory contributes ``t_kept`` consecutive columns to ``U`` and
    ``U_dot``; ``alpha`` holds one parameter value per trajectory.
    """

    U: np.ndarray
    U_dot: np.ndarray
    alpha: np.ndarray
    t_kept: int
    grid: TimeGrid = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.U_dot = np.asarray(self.U_dot, dtype=float)
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.U.shape != self.U_dot.shape or self.U.ndim != 2:
            raise ValueError(f"U and U_dot must be matching matrices, got {self.U.shape}, {self.U_dot.shape}")
        if self.U.shape[1] != self.alpha.size * self.t_kept:
            raise ValueError(f"{self.U.shape[1]} columns do not split into "
                             f"{self.alpha.size} trajectories of {self.t_kept}")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.U_dot))):
            raise ValueError("trajectory set contains non-finite entries")

    @property
    def n_trajectories(self):
        return self.alpha.size

    @property
    def state_dim(self):
        return self.U.shape[0]

    @property
    def ranges(self):
        """Half-open column range ``(start, stop)`` of each trajectory."""
        starts = np.arange(self.n_trajectories) * self.t_kept
        return np.column_stack([starts, starts + self.t_kept])

    @property
    def alpha_columns(self):
        return np.repeat(self.alpha, self.t_kept)

    def trajectory(self, j):
        lo, hi = j * self.t_kept, (j + 1) * self.t_kept
        return Trajectory(self.U[:, lo:hi], self.U_dot[:, lo:hi], float(self.alpha[j]), self.grid)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        cols = (idx[:, None] * self.t_kept + np.arange(self.t_kept)).ravel()
        return TrajectorySet(self.U[:, cols], self.U_dot[:, cols], self.alpha[idx],
                             self.t_kept, self.grid, dict(self.meta))

    @classmethod
    def from_trajectories(cls, trajs, meta=None):
        trajs = list(trajs)
        if not trajs:
            raise ValueError("need at least one trajectory")
        t_kept = trajs[0].states.shape[1]
        if any(t.states.shape[1] != t_kept for t in trajs):
            raise ValueError("all trajectories must have the same length")
        return cls(np.hstack([t.states for t in trajs]), np.hstack([t.derivs for t in trajs]),
                   np.array([t.alpha for t in trajs]), t_kept, trajs[0].grid, dict(meta or {}))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        header = dict(self.meta)
        header.update({
            "kind": "trajectory-set",
            "t_kept": int(self.t_kept),
            "grid": self.grid.to_dict() if self.grid is not None else None,
            "dims": {"state_dim": self.state_dim, "n_trajectories": self.n_trajectories,
                     "columns": int(self.U.shape[1])},
        })
        write_container(path, header, {"U": self.U, "U_dot": self.U_dot,
                                       "alpha": self.alpha, "ranges": self.ranges})

    @classmethod
    def load(cls, path):
        header, arrays = read_container(path)
        if header.get("kind") != "trajectory-set":
            raise ValueError(f"{path} does not hold a trajectory set")
        grid = TimeGrid.from_dict(header["grid"]) if header.get("grid") else None
        meta = {k: v for k, v in header.items()
                if k not in ("kind", "t_kept", "grid", "dims", "arrays")}
        return cls(arrays["U"], arrays["U_dot"], arrays["alpha"], int(header["t_kept"]), grid, meta)


@dataclass
class Batch:
    """Whole trajectories gathered for one optimization step."""

    U: np.ndarray
    U_dot: np.ndarray
    alpha: np.ndarray
    t_kept: int

    @property
    def n_trajectories(self):
        return self.alpha.size

    @property
    def alpha_columns(self):
        return np.repeat(self.alpha, self.t_kept)

    @classmethod
    def from_set(cls, ts):
        return cls(ts.U, ts.U_dot, ts.alpha, ts.t_kept)


def _n_threads():
    try:
        return max(1, int(os.environ.get("NORMFORM_THREADS", "1")))
    except ValueError:
        return 1


def _integrate_chunked(rhs_factory, U0, alphas, grid):
    n = alphas.size
    n_jobs = min(_n_threads(), n)
    if n_jobs == 1:
        return integrate_many(rhs_factory(alphas), U0, alphas, grid)
    chunks = np.array_split(np.arange(n), n_jobs)
    with ThreadPoolExecutor(n_jobs) as pool:
        parts = list(pool.map(
            lambda idx: integrate_many(rhs_factory(alphas[idx]), U0[:, idx], alphas[idx], grid),
            chunks))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def build_set(system, spec, grid, n_trim=0, max_rounds=20, meta=None):
    """Integrate sampled initial values and stack them into train/test sets.

    Trajectories that blow up are replaced by fresh draws from the same seeded
    stream, so the final counts are exact.

    Returns
    -------
    train, test : TrajectorySet
        ``test`` is ``None`` when ``spec.n_test == 0``.

    Raises
    ------
    DatasetConstructionError
        When escaped trajectories are still present after ``max_rounds``
        resampling rounds.
    """
    check_int(n_trim, "n_trim", minimum=0)
    if n_trim >= grid.n_points:
        raise ValueError(f"cannot trim {n_trim} of {grid.n_points} points")
    if spec.state_dim != system.state_dim:
        raise ValueError(f"sampling center has {spec.state_dim} components, "
                         f"system state has {system.state_dim}")
    rng = np.random.default_rng(spec.seed)
    n_total = spec.n_train + spec.n_test
    U0, alphas = _draw(rng, spec, n_total)
    factory = getattr(system, "batch_rhs", lambda a: system.rhs)
    states, derivs, escaped = _integrate_chunked(factory, U0, alphas, grid)
    attempts, failures = n_total, int(escaped.sum())
    for _ in range(max_rounds):
        bad = np.flatnonzero(escaped)
        if bad.size == 0:
            break
        U_new, a_new = _draw(rng, spec, bad.size)
        s_new, d_new, e_new = _integrate_chunked(factory, U_new, a_new, grid)
        states[bad], derivs[bad], alphas[bad], escaped[bad] = s_new, d_new, a_new, e_new
        attempts += bad.size
        failures += int(e_new.sum())
    if escaped.any():
        rate = failures / attempts
        raise DatasetConstructionError(
            f"{int(escaped.sum())} trajectories still escaping after {max_rounds} resampling "
            f"rounds (failure rate {rate:.1%})", failure_rate=rate)

    states = states[:, :, n_trim:]
    derivs = derivs[:, :, n_trim:]
    kept_grid = grid.drop_first(n_trim)
    t_kept = kept_grid.n_points

    def stack(idx, role):
        if idx.size == 0:
            return None
        U = np.concatenate(list(states[idx]), axis=1)
        U_dot = np.concatenate(list(derivs[idx]), axis=1)
        m = dict(meta or {})
        m["role"] = role
        return TrajectorySet(U, U_dot, alphas[idx].copy(), t_kept, kept_grid, m)

    train = stack(np.arange(spec.n_train), "train")
    test = stack(np.arange(spec.n_train, n_total), "test")
    return train, test


def batches(ts, batch_size, seed=0, epoch=0):
    """Shuffle whole trajectories and cut them into batches.

    The permutation depends only on ``(seed, epoch)``; a trailing partial
    batch is dropped.
    """
    check_int(batch_size, "batch_size", minimum=1)
    n = ts.n_trajectories
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds the {n} available trajectories")
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    out = []
    for k in range(n // batch_size):
        sub = ts.subset(order[k * batch_size:(k + 1) * batch_size])
        out.append(Batch(sub.U, sub.U_dot, sub.alpha, sub.t_kept))
    return out
