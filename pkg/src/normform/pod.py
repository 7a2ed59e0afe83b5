"""Proper orthogonal decomposition of snapshot matrices.

Snapshots are columns: ``W`` has shape ``(space_dim, n_times)``. The SVD is a
one-sided (Hestenes) Jacobi iteration with round-robin pair ordering, so each
round rotates all disjoint column pairs at once. Tall inputs are first
reduced with a QR factorization and the small triangular factor is
orthogonalized instead.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_int
from .container import read_container, write_container
from .dataset import TrajectorySet, _n_threads
from .exceptions import RankDeficiencyError
from .integrate import TimeGrid

#: 4x4 mixing matrix of the cylinder-wake reduction, digits as tabulated.
CYLINDER_GAMMA = np.array([
    [0.154739, -0.523688, 0.675546, 0.495243],
    [0.87244, 0.298319, 0.249166, -0.29685],
    [-0.292797, 0.785392, 0.450626, 0.30719],
    [0.359894, 0.141123, -0.527721, 0.756353],
])


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair exactly once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(p, q) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            rounds.append(np.array(pairs).T)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(A, tol=1e-15, max_sweeps=60):
    """Thin SVD ``A = U diag(s) V^T`` by one-sided Jacobi rotations.

    Returns ``U (m, k)``, ``s (k,)`` descending and ``Vt (k, n)`` with
    ``k = min(m, n)``. Columns of ``U`` belonging to zero singular values are
    completed to an orthonormal set.
    """
    A = as_float_array(A, "A", ndim=2)
    m, n = A.shape
    if n > m:
        U, s, Vt = jacobi_svd(A.T, tol, max_sweeps)
        return Vt.T, s, U.T
    Q = None
    if m > n:
        Q, A = np.linalg.qr(A)
    X = A.copy()
    V = np.eye(n)
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for P, R in rounds:
            xp, xq = X[:, P], X[:, R]
            a = np.einsum("ij,ij->j", xp, xp)
            b = np.einsum("ij,ij->j", xq, xq)
            g = np.einsum("ij,ij->j", xp, xq)
            active = np.abs(g) > tol * np.sqrt(a * b)
            if not active.any():
                continue
            rotated = True
            P, R, a, b, g = P[active], R[active], a[active], b[active], g[active]
            zeta = (b - a) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for M in (X, V):
                mp, mq = M[:, P], M[:, R]
                M[:, P] = c * mp - s * mq
                M[:, R] = s * mp + c * mq
        if not rotated:
            break
    sing = np.linalg.norm(X, axis=0)
    order = np.argsort(-sing, kind="stable")
    sing, X, V = sing[order], X[:, order], V[:, order]
    cutoff = max(m, n) * np.finfo(float).eps * (sing[0] if sing.size else 0.0)
    nonzero = sing > cutoff
    U = np.zeros_like(X)
    U[:, nonzero] = X[:, nonzero] / sing[nonzero]
    if not nonzero.all():
        U = _complete_basis(U, nonzero)
        sing = np.where(nonzero, sing, 0.0)
    if Q is not None:
        U = Q @ U
    return U, sing, V.T


def _complete_basis(U, keep):
    """Replace the columns of ``U`` outside ``keep`` by an orthonormal complement."""
    m = U.shape[0]
    basis = [U[:, j] for j in np.flatnonzero(keep)]
    for e in np.eye(m):
        if len(basis) == U.shape[1]:
            break
        v = e - sum(np.dot(b, e) * b for b in basis) if basis else e.copy()
        v = v - sum(np.dot(b, v) * b for b in basis) if basis else v
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    out = U.copy()
    out[:, ~keep] = np.column_stack(basis[int(keep.sum()):])
    return out


def numerical_rank(singular_values, shape):
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > max(shape) * np.finfo(float).eps * s[0]))


@dataclass
class PodBasis:
    """Mean field, leading spatial modes, their energies and the mixing matrix."""

    mean_field: np.ndarray
    modes: np.ndarray
    singular_values: np.ndarray
    gamma: np.ndarray = None

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = np.eye(self.m)

    @property
    def m(self):
        return self.modes.shape[1]

    @property
    def space_dim(self):
        return self.modes.shape[0]


@dataclass
class ReducedSeries:
    """Temporal coefficients ``Lambda = Sigma_m V_m^T`` and their mixed version."""

    Lambda: np.ndarray
    mixed: np.ndarray = field(default=None)


def pod_decompose(snapshots, m, trim=0, stride=10, strict_rank=True):
    """POD of one trajectory's snapshots.

    Drops ``trim`` leading columns, subtracts the temporal mean of what is
    left, keeps every ``stride``-th column and truncates the SVD at rank
    ``m``. Mode signs make each mode's largest-magnitude entry positive.

    Returns
    -------
    basis : PodBasis
        With identity ``gamma``.
    series : ReducedSeries
        ``Lambda`` has shape ``(m, n_kept)``; ``mixed`` is unset.

    Raises
    ------
    RankDeficiencyError
        If the data has numerical rank below ``m`` (only when
        ``strict_rank``); ``err.rank`` is the achievable rank.
    """
    W = as_float_array(snapshots, "snapshots", ndim=2)
    check_int(m, "m", minimum=1)
    check_int(trim, "trim", minimum=0)
    check_int(stride, "stride", minimum=1)
    if W.shape[1] - trim < m:
        raise ValueError(f"{W.shape[1]} snapshots minus trim {trim} leave fewer than m={m} columns")
    W = W[:, trim:]
    mean = W.mean(axis=1)
    X = (W - mean[:, None])[:, ::stride]
    if X.shape[1] < m or X.shape[0] < m:
        raise RankDeficiencyError(f"only {min(X.shape)} columns/rows available for rank {m}",
                                  rank=min(X.shape))
    U, s, Vt = jacobi_svd(X)
    rank = numerical_rank(s, X.shape)
    if strict_rank and rank < m:
        raise RankDeficiencyError(f"data has numerical rank {rank}, cannot truncate at {m}",
                                  rank=rank)
    U, s, Vt = U[:, :m], s[:m], Vt[:m]
    flip = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(m)])
    flip[flip == 0] = 1.0
    U = U * flip
    Vt = Vt * flip[:, None]
    return PodBasis(mean, U, s), ReducedSeries(s[:, None] * Vt)


def make_unitary_gamma(m, seed=None):
    """Orthogonal factor ``U V^T`` of a seeded random ``m x m`` matrix."""
    check_int(m, "m", minimum=1)
    rng = np.random.default_rng(seed)
    U, _, Vt = jacobi_svd(rng.standard_normal((m, m)))
    return U @ Vt


def gamma_preset(name, m=4, seed=None):
    """Resolve a mixing-matrix policy: ``"cylinder"``, ``"identity"``, ``"random"``."""
    if isinstance(name, (list, tuple, np.ndarray)):
        return np.asarray(name, dtype=float)
    key = str(name).lower()
    if key == "cylinder":
        if m != 4:
            raise ValueError("the cylinder mixing matrix is 4x4")
        return CYLINDER_GAMMA.copy()
    if key == "identity":
        return np.eye(m)
    if key == "random":
        return make_unitary_gamma(m, seed)
    raise ValueError(f"unknown gamma policy {name!r}")


def mix(basis, series):
    series.mixed = basis.gamma @ series.Lambda
    return series


def reconstruct(basis, mixed_series):
    """Physical-space snapshots ``mean + modes Gamma^T mixed``."""
    Y = as_float_array(mixed_series, "mixed_series")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != basis.m:
        raise ValueError(f"series has {Y.shape[0]} rows, basis has {basis.m} modes")
    return basis.mean_field[:, None] + basis.modes @ (basis.gamma.T @ Y)


@dataclass
class SnapshotSet:
    """Stacked snapshot matrices of several runs, ``t_size`` columns each.

    Same container layout as a trajectory set but without derivatives, since
    externally produced fields usually come without a right-hand side.
    """

    W: np.ndarray
    alpha: np.ndarray
    t_size: int
    grid: TimeGrid = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.W.ndim != 2 or self.W.shape[1] != self.alpha.size * self.t_size:
            raise ValueError(f"snapshot matrix {self.W.shape} does not split into "
                             f"{self.alpha.size} runs of {self.t_size}")

    @property
    def n_trajectories(self):
        return self.alpha.size

    def states(self, j):
        return self.W[:, j * self.t_size:(j + 1) * self.t_size]

    def save(self, path):
        header = dict(self.meta)
        header.update({"kind": "snapshot-set", "t_size": int(self.t_size),
                       "grid": self.grid.to_dict() if self.grid is not None else None,
                       "dims": {"space_dim": int(self.W.shape[0]),
                                "n_trajectories": self.n_trajectories}})
        write_container(path, header, {"W": self.W, "alpha": self.alpha})

    @classmethod
    def load(cls, path):
        """Read a snapshot set; trajectory-set files are accepted too."""
        header, arrays = read_container(path)
        grid = TimeGrid.from_dict(header["grid"]) if header.get("grid") else None
        meta = {k: v for k, v in header.items()
                if k not in ("kind", "t_size", "t_kept", "grid", "dims", "arrays")}
        if header.get("kind") == "snapshot-set":
            return cls(arrays["W"], arrays["alpha"], int(header["t_size"]), grid, meta)
        if header.get("kind") == "trajectory-set":
            return cls(arrays["U"], arrays["alpha"], int(header["t_kept"]), grid, meta)
        raise ValueError(f"{path} holds neither snapshots nor trajectories")

    @classmethod
    def from_trajectory_set(cls, ts):
        return cls(ts.U, ts.alpha, ts.t_kept, ts.grid, dict(ts.meta))


def reduce_trajectory_set(snapshots, m=4, trim=0, stride=10, gamma="cylinder", seed=None,
                          strict_rank=True, alpha_shift=0.0):
    """Per-trajectory POD of a snapshot set into a trainable reduced set.

    Each trajectory gets its own mean and modes. The reduced states are
    ``Gamma Lambda``; their time derivatives are centered finite differences
    on the strided time step. ``alpha_shift`` is subtracted from the stored
    parameters so the critical value moves to 0.

    Returns
    -------
    reduced : TrajectorySet
    bases : list of PodBasis
    """
    if isinstance(snapshots, TrajectorySet):
        snapshots = SnapshotSet.from_trajectory_set(snapshots)
    G = gamma_preset(gamma, m, seed)
    reduced_U, reduced_dot, bases = [], [], []
    dt = snapshots.grid.dt if snapshots.grid is not None else 1.0
    n = snapshots.n_trajectories

    def one(j):
        return pod_decompose(snapshots.states(j), m, trim, stride, strict_rank)

    jobs = min(_n_threads(), n)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(one, range(n)))
    else:
        parts = [one(j) for j in range(n)]
    for basis, series in parts:
        basis.gamma = G
        mix(basis, series)
        bases.append(basis)
        reduced_U.append(series.mixed)
        if series.mixed.shape[1] >= 3:
            reduced_dot.append(np.gradient(series.mixed, dt * stride, axis=1, edge_order=2))
        else:
            reduced_dot.append(np.gradient(series.mixed, dt * stride, axis=1))
    n_kept = reduced_U[0].shape[1]
    grid = None
    if snapshots.grid is not None:
        t0 = snapshots.grid.t0 + trim * dt
        grid = TimeGrid(t0, t0 + max(n_kept - 1, 1) * dt * stride, max(n_kept, 2))
    meta = dict(snapshots.meta)
    meta["pod"] = {"m": int(m), "trim": int(trim), "stride": int(stride),
                   "gamma": G.tolist()}
    reduced = TrajectorySet(np.hstack(reduced_U), np.hstack(reduced_dot),
                            snapshots.alpha - float(alpha_shift),
                            n_kept, grid, meta)
    return reduced, bases


def save_bases(path, bases, header=None):
    arrays = {"gamma": bases[0].gamma}
    for j, b in enumerate(bases):
        arrays[f"mean.{j}"] = b.mean_field
        arrays[f"modes.{j}"] = b.modes
        arrays[f"sigma.{j}"] = b.singular_values
    h = dict(header or {})
    h.update({"kind": "pod-bases", "count": len(bases)})
    write_container(path, h, arrays)


def load_bases(path):
    header, arrays = read_container(path)
    if header.get("kind") != "pod-bases":
        raise ValueError(f"{path} does not hold POD bases")
    G = arrays["gamma"]
    return [PodBasis(arrays[f"mean.{j}"], arrays[f"modes.{j}"], arrays[f"sigma.{j}"], G)
            for j in range(header["count"])]


class PODTransformer(TransformerMixin, BaseEstimator):
    """Scikit-learn style POD with an orthogonal mixing of the coefficients.

    Rows of ``X`` are snapshots (time samples), columns are spatial points.

    Parameters
    ----------
    n_modes : int
    trim : int
        Leading rows dropped before fitting.
    stride : int
        Row subsampling applied before the SVD.
    gamma : {"identity", "cylinder", "random"} or array
    random_state : int
        Seed for ``gamma="random"``.
    """

    def __init__(self, n_modes=4, trim=0, stride=1, gamma="identity", random_state=None):
        self.n_modes = n_modes
        self.trim = trim
        self.stride = stride
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_float_array(X, "X", ndim=2)
        basis, _ = pod_decompose(X.T, self.n_modes, self.trim, self.stride)
        basis.gamma = gamma_preset(self.gamma, self.n_modes, self.random_state)
        self.basis_ = basis
        self.mean_ = basis.mean_field
        self.components_ = basis.modes.T
        self.singular_values_ = basis.singular_values
        self.gamma_ = basis.gamma
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = as_float_array(X, "X", ndim=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must have {self.n_features_in_} columns, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_.T @ self.gamma_.T

    def inverse_transform(self, Y):
        check_is_fitted(self, "basis_")
        return reconstruct(self.basis_, as_float_array(Y, "Y", ndim=2).T).T
