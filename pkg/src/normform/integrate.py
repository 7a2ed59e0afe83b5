"""Fixed-step fourth-order Runge-Kutta time integration."""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_int
from .exceptions import IntegrationBlowupError

#: States with any entry above this magnitude count as escaped.
BLOWUP_THRESHOLD = 1e6


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``t0 .. t_end`` with ``n_points`` samples."""

    t0: float
    t_end: float
    n_points: int

    def __post_init__(self):
        check_int(self.n_points, "n_points", minimum=2)
        if not (np.isfinite(self.t0) and np.isfinite(self.t_end)) or self.t_end <= self.t0:
            raise ValueError(f"need finite t_end > t0, got [{self.t0}, {self.t_end}]")

    @property
    def dt(self):
        return (self.t_end - self.t0) / (self.n_points - 1)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_points)

    def drop_first(self, n):
        return TimeGrid(self.t0 + n * self.dt, self.t_end, self.n_points - n)

    def to_dict(self):
        return {"t0": float(self.t0), "t_end": float(self.t_end), "n_points": int(self.n_points)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["t0"]), float(d["t_end"]), int(d["n_points"]))


@dataclass(frozen=True)
class Trajectory:
    """States and right-hand-side values sampled on a time grid.

    ``states`` and ``derivs`` are ``(state_dim, n_points)``.
    """

    states: np.ndarray
    derivs: np.ndarray
    alpha: float
    grid: TimeGrid


def _rk4_step(rhs, u, alpha, dt):
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_raw(rhs, u, alpha, dt)


def _rk4_raw(rhs, u, alpha, dt):
    k1 = rhs(u, alpha)
    k2 = rhs(u + 0.5 * dt * k1, alpha)
    k3 = rhs(u + 0.5 * dt * k2, alpha)
    k4 = rhs(u + dt * k3, alpha)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _escaped(u):
    return ~np.isfinite(u) | (np.abs(u) > BLOWUP_THRESHOLD)


def integrate(rhs, u0, alpha, grid):
    """Integrate ``du/dt = rhs(u, alpha)`` on ``grid`` with classic RK4.

    Parameters
    ----------
    rhs : callable
        ``rhs(u, alpha) -> du/dt`` for a state vector ``u``.
    u0 : array_like
        Initial state.
    alpha : float
    grid : TimeGrid

    Returns
    -------
    Trajectory
        ``derivs[:, k]`` is ``rhs`` re-evaluated at ``states[:, k]``.

    Raises
    ------
    IntegrationBlowupError
        If a state becomes non-finite or exceeds ``BLOWUP_THRESHOLD``.
    """
    u = np.array(u0, dtype=float).ravel()
    if _escaped(u).any():
        raise IntegrationBlowupError("initial state is not finite", time_index=0)
    states = np.empty((u.size, grid.n_points))
    states[:, 0] = u
    dt = grid.dt
    for k in range(1, grid.n_points):
        u = _rk4_step(rhs, u, alpha, dt)
        if _escaped(u).any():
            raise IntegrationBlowupError(
                f"state left the finite region at time index {k}", time_index=k)
        states[:, k] = u
    derivs = np.empty_like(states)
    for k in range(grid.n_points):
        derivs[:, k] = np.asarray(rhs(states[:, k], alpha), dtype=float).ravel()
    return Trajectory(states, derivs, float(alpha), grid)


def integrate_many(rhs, U0, alphas, grid):
    """Integrate many trajectories at once with a column-vectorized ``rhs``.

    ``rhs(U, alphas)`` must accept a ``(state_dim, k)`` matrix and a length-``k``
    parameter vector. Escaped trajectories are frozen and flagged rather than
    raising.

    Returns
    -------
    states, derivs : ndarray
        ``(k, state_dim, n_points)``; rows of escaped trajectories are NaN.
    escaped : ndarray of bool
        ``(k,)`` mask of trajectories that blew up.
    """
    U = np.array(U0, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    n_dim, n_traj = U.shape
    states = np.empty((grid.n_points, n_dim, n_traj))
    states[0] = U
    escaped = _escaped(U).any(axis=0)
    dt = grid.dt
    for k in range(1, grid.n_points):
        U = _rk4_step(rhs, U, alphas, dt)
        bad = _escaped(U).any(axis=0)
        if bad.any():
            escaped |= bad
            U[:, bad] = 0.0
        states[k] = U
    states = np.transpose(states, (2, 1, 0)).copy()
    derivs = np.empty_like(states)
    for k in range(grid.n_points):
        derivs[:, :, k] = np.asarray(rhs(states[:, :, k].T, alphas)).T
    states[escaped] = np.nan
    derivs[escaped] = np.nan
    return states, derivs, escaped


def trim_transients(traj, n_trim):
    """Drop the first ``n_trim`` samples of a trajectory."""
    check_int(n_trim, "n_trim", minimum=0)
    if n_trim >= traj.grid.n_points:
        raise ValueError(f"cannot trim {n_trim} of {traj.grid.n_points} points")
    if n_trim == 0:
        return traj
    return replace(traj, states=traj.states[:, n_trim:].copy(),
                   derivs=traj.derivs[:, n_trim:].copy(),
                   grid=traj.grid.drop_first(n_trim))
