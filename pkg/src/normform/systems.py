"""Ground-truth parameterized dynamical systems.

Every right-hand side accepts a state vector or a ``(state_dim, k)`` matrix of
column states together with a scalar or length-``k`` parameter, so the same
code serves single trajectories and vectorized ensembles.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .integrate import TimeGrid, integrate


@dataclass(frozen=True)
class ScalarOdeParams:
    """Scalar model with saddle-node, transcritical and pitchfork points."""

    gamma: float = 0.01
    u_sn: float = -6.0
    alpha_sn: float = -6.0
    alpha_pf: float = 6.0

    def __post_init__(self):
        if self.gamma == 0:
            raise ValueError("gamma must be nonzero")


@dataclass(frozen=True)
class Lorenz96Params:
    n: int = 64

    def __post_init__(self):
        if int(self.n) < 4:
            raise ValueError(f"Lorenz96 needs n >= 4, got {self.n}")


@dataclass(frozen=True)
class NeuralFieldParams:
    """Neural field with linear adaptation and a Gaussian input bump.

    With ``normalize_kernel`` the connectivity is divided by
    ``sqrt(pi) * sigma_e`` so it integrates to ``w_e``; without it the uniform
    rest state is an unstable focus and the field oscillates for every input.
    """

    kappa: float = 2.75
    tau_nf: float = 10.0
    w_e: float = 1.0
    sigma_e: float = 1.0
    beta_nf: float = 6.0
    u_thr: float = 0.375
    sigma: float = 1.2
    x_min: float = -6.0
    x_max: float = 6.0
    n_points: int = 64
    normalize_kernel: bool = True

    def __post_init__(self):
        if self.tau_nf <= 0 or self.sigma_e <= 0 or self.sigma <= 0:
            raise ValueError("tau_nf, sigma_e and sigma must be positive")
        if self.n_points < 2 or self.x_max <= self.x_min:
            raise ValueError("need at least two grid points on a nonempty interval")

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.n_points - 1)


# -- scalar ODE ---------------------------------------------------------------

def scalar_rhs(p, u, alpha):
    """``gamma u (a - a_pf - u^2)(a - a_sn + (u - u_sn)^2)``."""
    u = np.asarray(u, dtype=float)
    return (p.gamma * u * (alpha - p.alpha_pf - u**2)
            * (alpha - p.alpha_sn + (u - p.u_sn) ** 2))


def scalar_shift(p, which):
    """``(u, alpha)`` location of the named bifurcation of the scalar model."""
    which = str(which).upper()
    if which == "SN":
        return p.u_sn, p.alpha_sn
    if which == "PF":
        return 0.0, p.alpha_pf
    if which == "TC":
        return 0.0, p.alpha_sn - p.u_sn**2
    raise ValueError(f"unknown scalar bifurcation tag {which!r}; expected SN, PF or TC")


def scalar_translated_rhs(p, u, alpha, which):
    """Scalar field shifted so the chosen bifurcation sits at the origin."""
    u_shift, a_shift = scalar_shift(p, which)
    return scalar_rhs(p, np.asarray(u, dtype=float) + u_shift, alpha + a_shift)


# -- Lorenz96 -----------------------------------------------------------------

def _check_rows(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape[0] != n:
        raise ValueError(f"state must have {n} components, got {u.shape[0]}")
    return u


def lorenz96_rhs(p, u, alpha):
    """Cyclic Lorenz96: ``-u[j-1] (u[j-2] - u[j+1]) - u[j] + alpha``."""
    u = _check_rows(u, p.n)
    um1 = np.roll(u, 1, axis=0)
    um2 = np.roll(u, 2, axis=0)
    up1 = np.roll(u, -1, axis=0)
    return -um1 * (um2 - up1) - u + alpha


LORENZ96_ALPHA_C = 0.84975


def lorenz96_translated_rhs(p, u, alpha, alpha_c=LORENZ96_ALPHA_C):
    """Lorenz96 with the trivial equilibrium at 0 and the bifurcation at ``alpha=0``."""
    u = _check_rows(u, p.n)
    a = alpha + alpha_c
    return lorenz96_rhs(p, u + a, a)


# -- neural field ---------------------------------------------------------------

@lru_cache(maxsize=16)
def _nf_kernel(p):
    x = p.x
    diff = x[:, None] - x[None, :]
    kernel = p.w_e * np.exp(-((diff / p.sigma_e) ** 2)) * p.dx
    if p.normalize_kernel:
        kernel /= np.sqrt(np.pi) * p.sigma_e
    kernel.setflags(write=False)
    return kernel


def firing_rate(p, u):
    """Logistic firing rate ``1 / (1 + exp(-beta_nf (u - u_thr)))``."""
    return 1.0 / (1.0 + np.exp(-p.beta_nf * (np.asarray(u, dtype=float) - p.u_thr)))


def neural_field_input(p, alpha):
    alpha = np.asarray(alpha, dtype=float)
    shape = np.exp(-((p.x / p.sigma) ** 2))
    return shape[:, None] * alpha if alpha.ndim else shape * alpha


def neural_field_convolve(p, v):
    """Riemann-sum convolution of ``v`` with the Gaussian connectivity kernel."""
    return _nf_kernel(p) @ np.asarray(v, dtype=float)


def neural_field_rhs(p, state, alpha):
    """Potential/adaptation field; ``state`` is a pair ``(u, a)``."""
    u, a = state
    u = _check_rows(u, p.n_points)
    a = _check_rows(a, p.n_points)
    if u.shape != a.shape:
        raise ValueError("u and a must have the same shape")
    du = -u - p.kappa * a + neural_field_convolve(p, firing_rate(p, u)) + neural_field_input(p, alpha)
    da = (u - a) / p.tau_nf
    return du, da


def estimate_nf_equilibrium(alpha, trajectory, trim):
    """Equilibrium estimate from a simulated neural-field trajectory.

    Below the bifurcation (``alpha < 0``) the last snapshot is returned; at or
    above it, the time average after dropping ``trim`` columns.
    """
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.ndim != 2 or trajectory.shape[1] == 0:
        raise ValueError("trajectory must be a nonempty (state_dim, n_times) matrix")
    if alpha < 0:
        return trajectory[:, -1].copy()
    if trajectory.shape[1] <= trim:
        raise ValueError(f"trajectory has {trajectory.shape[1]} columns, cannot trim {trim}")
    return trajectory[:, trim:].mean(axis=1)


NEURAL_FIELD_ALPHA_C = 0.8040


# -- system instances --------------------------------------------------------------

class SystemKind(str, Enum):
    SCALAR_SN = "scalar-sn"
    SCALAR_PF = "scalar-pf"
    SCALAR_TC = "scalar-tc"
    LORENZ96 = "lorenz96"
    NEURAL_FIELD = "neuralfield"


_SCALAR_TAGS = {SystemKind.SCALAR_SN: "SN", SystemKind.SCALAR_PF: "PF", SystemKind.SCALAR_TC: "TC"}


@dataclass
class SystemInstance:
    """A system translated so its bifurcation sits at ``(u, alpha) = (0, 0)``.

    ``rhs(u, alpha)`` takes translated coordinates. For the neural field the
    state is the concatenation ``[u; a]`` and the translation subtracts an
    equilibrium estimated from simulation, cached per parameter value.
    """

    kind: SystemKind
    params: object
    alpha_c: float
    settle_grid: TimeGrid = field(default_factory=lambda: TimeGrid(0.0, 500.0, 1251))
    settle_trim: int = 625
    _eq_cache: dict = field(default_factory=dict, init=False, repr=False)
    _eq_lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.kind = SystemKind(self.kind)

    @property
    def state_dim(self):
        if self.kind is SystemKind.LORENZ96:
            return self.params.n
        if self.kind is SystemKind.NEURAL_FIELD:
            return 2 * self.params.n_points
        return 1

    @property
    def u_c(self):
        """Critical state; ``"from-data"`` for the neural field."""
        if self.kind is SystemKind.NEURAL_FIELD:
            return "from-data"
        if self.kind is SystemKind.LORENZ96:
            return np.full(self.params.n, self.alpha_c)
        return np.array([scalar_shift(self.params, _SCALAR_TAGS[self.kind])[0]])

    def raw_rhs(self, u, alpha):
        """Field in the original coordinates (flat state)."""
        if self.kind is SystemKind.LORENZ96:
            return lorenz96_rhs(self.params, u, alpha)
        if self.kind is SystemKind.NEURAL_FIELD:
            u = np.asarray(u, dtype=float)
            n = self.params.n_points
            du, da = neural_field_rhs(self.params, (u[:n], u[n:]), alpha)
            return np.concatenate([du, da], axis=0)
        return scalar_rhs(self.params, u, alpha)

    def equilibrium(self, alpha):
        """Data-estimated neural-field equilibrium at translated ``alpha``."""
        if self.kind is not SystemKind.NEURAL_FIELD:
            raise ValueError("data-estimated equilibria only apply to the neural field")
        key = float(alpha)
        cached = self._eq_cache.get(key)
        if cached is not None:
            return cached
        a = key + self.alpha_c
        traj = integrate(self.raw_rhs, np.zeros(self.state_dim), a, self.settle_grid)
        eq = estimate_nf_equilibrium(key, traj.states, self.settle_trim)
        eq.setflags(write=False)
        with self._eq_lock:
            self._eq_cache.setdefault(key, eq)
        return self._eq_cache[key]

    def warm_equilibria(self, alphas):
        """Fill the equilibrium cache for many parameter values in one sweep."""
        from .integrate import integrate_many

        todo = sorted({float(a) for a in np.ravel(alphas)} - set(self._eq_cache))
        if not todo:
            return
        todo = np.array(todo)
        states, _, escaped = integrate_many(
            self.raw_rhs, np.zeros((self.state_dim, todo.size)), todo + self.alpha_c,
            self.settle_grid)
        if escaped.any():
            raise ArithmeticError("neural field blew up while settling to equilibrium")
        for a, traj in zip(todo, states):
            eq = estimate_nf_equilibrium(a, traj, self.settle_trim)
            eq.setflags(write=False)
            with self._eq_lock:
                self._eq_cache.setdefault(float(a), eq)

    def _equilibria(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim == 0:
            return self.equilibrium(alpha)
        return np.column_stack([self.equilibrium(a) for a in alpha])

    def batch_rhs(self, alphas):
        """Column-vectorized translated field for a fixed parameter vector.

        Equilibria are looked up once instead of on every evaluation.
        """
        if self.kind is not SystemKind.NEURAL_FIELD:
            return self.rhs
        self.warm_equilibria(alphas)
        eq = self._equilibria(alphas)

        def rhs(u, alpha):
            return self.raw_rhs(np.asarray(u, dtype=float) + eq, np.asarray(alpha) + self.alpha_c)

        return rhs

    def rhs(self, u, alpha):
        """Translated field used to generate training data."""
        if self.kind is SystemKind.LORENZ96:
            return lorenz96_translated_rhs(self.params, u, alpha, self.alpha_c)
        if self.kind is SystemKind.NEURAL_FIELD:
            u = np.asarray(u, dtype=float)
            return self.raw_rhs(u + self._equilibria(alpha), np.asarray(alpha) + self.alpha_c)
        return scalar_translated_rhs(self.params, u, alpha, _SCALAR_TAGS[self.kind])


def make_system(name, params=None, alpha_c=None):
    """Build a named system preset, optionally overriding its parameters."""
    kind = SystemKind(str(name).lower())
    params = dict(params or {})
    if kind in _SCALAR_TAGS:
        p = ScalarOdeParams(**params)
        return SystemInstance(kind, p, scalar_shift(p, _SCALAR_TAGS[kind])[1])
    if kind is SystemKind.LORENZ96:
        return SystemInstance(kind, Lorenz96Params(**params),
                              LORENZ96_ALPHA_C if alpha_c is None else alpha_c)
    return SystemInstance(kind, NeuralFieldParams(**params),
                          NEURAL_FIELD_ALPHA_C if alpha_c is None else alpha_c)
