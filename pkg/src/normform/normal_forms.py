"""Canonical normal-form vector fields used to constrain the latent space.

All evaluation functions broadcast over columns: ``z`` is either a vector of
length ``dim`` or a matrix ``(dim, k)`` holding ``k`` latent points, and
``beta`` is a scalar or a length-``k`` vector.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._validation import check_int, check_positive
from .exceptions import IntegrationBlowupError


class NormalFormKind(str, Enum):
    SADDLE_NODE = "saddle-node"
    TRANSCRITICAL = "transcritical"
    PITCHFORK = "pitchfork"
    HOPF = "hopf"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"sn": "saddle-node", "saddlenode": "saddle-node",
                   "tc": "transcritical", "pf": "pitchfork"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown normal form kind {value!r}") from None


@dataclass(frozen=True)
class NormalForm:
    """Target normal form ``g(z, beta)`` with its time scale.

    Parameters
    ----------
    kind : NormalFormKind or str
    omega : float
        Rotation frequency, only used by the Hopf form.
    tau : float
        Time scale; the latent dynamics follow ``g / tau**2``.
    """

    kind: NormalFormKind
    omega: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NormalFormKind.parse(self.kind))
        check_positive(float(self.tau), "tau")
        if self.kind is NormalFormKind.HOPF:
            if not np.isfinite(self.omega) or self.omega == 0:
                raise ValueError("Hopf normal form needs a finite nonzero omega")

    @property
    def dim(self):
        return 2 if self.kind is NormalFormKind.HOPF else 1

    def with_tau(self, tau):
        return NormalForm(self.kind, self.omega, float(tau))

    def to_dict(self):
        return {"kind": self.kind.value, "omega": float(self.omega), "tau": float(self.tau)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("omega", 1.0)), float(d.get("tau", 1.0)))


def _check_z(nf, z):
    z = np.asarray(z, dtype=float)
    if z.ndim not in (1, 2) or z.shape[0] != nf.dim:
        raise ValueError(f"{nf.kind.value} state must have leading dimension {nf.dim}, got {z.shape}")
    return z


def eval_rhs(nf, z, beta):
    """Unscaled normal-form field ``g(z, beta)``.

    The Hopf field is the supercritical one, written in real coordinates:
    ``(b z1 - w z2 - z1 r^2, w z1 + b z2 - z2 r^2)``.
    """
    z = _check_z(nf, z)
    beta = np.asarray(beta, dtype=float)
    kind = nf.kind
    if kind is NormalFormKind.SADDLE_NODE:
        return beta - z**2
    if kind is NormalFormKind.TRANSCRITICAL:
        return z * (beta - z)
    if kind is NormalFormKind.PITCHFORK:
        return z * (beta - z**2)
    z1, z2 = z[0], z[1]
    r2 = z1**2 + z2**2
    w = nf.omega
    return np.stack([beta * z1 - w * z2 - z1 * r2,
                     w * z1 + beta * z2 - z2 * r2])


def eval_rhs_scaled(nf, z, beta):
    """Time-scaled field ``g(z, beta) / tau**2``."""
    return eval_rhs(nf, z, beta) / nf.tau**2


def eval_rhs_grad_z(nf, z, beta):
    """Jacobian of the scaled field with respect to ``z``.

    Returns ``(dim, dim)`` for a single point or ``(dim, dim, k)`` for ``k``
    columns.
    """
    z = _check_z(nf, z)
    beta = np.asarray(beta, dtype=float)
    kind = nf.kind
    if kind is NormalFormKind.SADDLE_NODE:
        jac = (-2.0 * z)[np.newaxis]
    elif kind is NormalFormKind.TRANSCRITICAL:
        jac = (beta - 2.0 * z)[np.newaxis]
    elif kind is NormalFormKind.PITCHFORK:
        jac = (beta - 3.0 * z**2)[np.newaxis]
    else:
        z1, z2 = z[0], z[1]
        r2 = z1**2 + z2**2
        w = nf.omega
        cross = -2.0 * z1 * z2
        a, b, c, d = np.broadcast_arrays(beta - r2 - 2.0 * z1**2, -w + cross,
                                         w + cross, beta - r2 - 2.0 * z2**2)
        jac = np.array([[a, b], [c, d]])
    return jac / nf.tau**2


def eval_rhs_grad_beta(nf, z, beta):
    """Derivative of the scaled field with respect to ``beta`` (shape of ``z``)."""
    z = _check_z(nf, z)
    if nf.kind is NormalFormKind.SADDLE_NODE:
        out = np.ones_like(z)
    else:
        out = z.copy()
    return out / nf.tau**2


def simulate_ensemble(nf, z0_center, beta, n_traj, spread, t_grid, seed=None):
    """Integrate the scaled normal form from uniformly perturbed initial values.

    Initial values are drawn componentwise from ``z0_center +/- spread``.

    Returns
    -------
    list of ndarray
        One ``(dim, n_points)`` state matrix per trajectory.

    Raises
    ------
    IntegrationBlowupError
        With ``trajectory_index`` set to the first trajectory that escaped.
    """
    from .integrate import integrate

    check_int(n_traj, "n_traj", minimum=1)
    check_positive(float(spread), "spread", strict=False)
    center = np.asarray(z0_center, dtype=float).reshape(nf.dim)
    rng = np.random.default_rng(seed)
    starts = center + spread * rng.uniform(-1.0, 1.0, size=(n_traj, nf.dim))

    def rhs(z, b):
        return eval_rhs_scaled(nf, z, b)

    out = []
    for i, z0 in enumerate(starts):
        try:
            out.append(integrate(rhs, z0, beta, t_grid).states)
        except IntegrationBlowupError as err:
            raise IntegrationBlowupError(
                f"ensemble trajectory {i} blew up: {err}",
                time_index=err.time_index, trajectory_index=i) from err
    return out
