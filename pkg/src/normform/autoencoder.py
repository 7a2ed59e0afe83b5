"""Normal-form autoencoders: state pair (phi1, psi1) and parameter pair (phi2, psi2).

The encoders map a state ``u`` to latent ``z = phi1(u)`` and a parameter
``alpha`` to ``beta = phi2(alpha)``; training asks the latent trajectories to
follow a prescribed normal form ``dz/dt = g(z, beta) / tau**2`` while the
decoders invert the encoders. Losses, in the order they are reported:

1. state reconstruction ``|u - psi1(phi1(u))|^2``
2. parameter reconstruction ``|alpha - psi2(phi2(alpha))|^2``
3. latent consistency ``|J_phi1(u) du/dt - g(z, beta)|^2``
4. state consistency ``|du/dt - J_psi1(z) g(z, beta)|^2``
5. zero time-mean of each latent trajectory (l1 norm)
6. sign agreement between ``alpha`` and ``beta`` (l1 norm, smoothed)

Terms 1, 3 and 4 are averaged over all ``N * t_f`` samples, the per-trajectory
terms 2, 5 and 6 over the ``N`` trajectories. Gradients are exact and hand-derived; see
:func:`compute_losses`.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import mlp
from ._validation import as_float_array, check_positive
from .container import read_container, write_container
from .dataset import Batch, TrajectorySet, batches
from .exceptions import TrainingDivergenceError
from .normal_forms import (NormalForm, NormalFormKind, eval_rhs_grad_beta,
                           eval_rhs_grad_z, eval_rhs_scaled)

logger = logging.getLogger(__name__)

LOSS_NAMES = ("l1", "l2", "l3", "l4", "l5", "l6")
HISTORY_FIELDS = ("iteration", "epoch") + LOSS_NAMES + ("total", "tau")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    lambda4: float = 0.0
    lambda5: float = 0.0
    lambda6: float = 0.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            check_positive(float(val), name, strict=False)

    @classmethod
    def of(cls, weights):
        if isinstance(weights, cls):
            return weights
        if isinstance(weights, dict):
            return cls(**{k: float(v) for k, v in weights.items()})
        vals = [float(w) for w in weights]
        if len(vals) != 6:
            raise ValueError(f"need six loss weights, got {len(vals)}")
        return cls(*vals)

    def as_tuple(self):
        return tuple(asdict(self).values())


@dataclass
class LossReport:
    """Weighted loss terms; ``total`` is their sum.

    ``l6`` is the smoothed sign term that is optimized, ``l6_hard`` the same
    term evaluated with the discontinuous sign function.
    """

    l1: float
    l2: float
    l3: float
    l4: float
    l5: float
    l6: float
    total: float
    l6_hard: float = 0.0

    def terms(self):
        return np.array([self.l1, self.l2, self.l3, self.l4, self.l5, self.l6])


@dataclass
class NfAutoencoder:
    """The four networks, the normal form and the trainable time scale.

    ``log_tau`` is a one-element array so that ADAM can update it in place;
    ``tau = exp(log_tau)`` stays positive.
    """

    phi1: mlp.Mlp
    psi1: mlp.Mlp
    phi2: mlp.Mlp
    psi2: mlp.Mlp
    kind: NormalFormKind
    omega: float = 1.0
    log_tau: np.ndarray = field(default_factory=lambda: np.zeros(1))
    tau_trainable: bool = False
    orientation: int = 1
    sign_eps: float = 1e-2

    def __post_init__(self):
        self.kind = NormalFormKind.parse(self.kind)
        self.log_tau = np.atleast_1d(np.asarray(self.log_tau, dtype=float)).copy()
        if self.orientation not in (1, -1):
            raise ValueError(f"orientation must be +1 or -1, got {self.orientation}")
        d = self.latent_dim
        if self.phi1.out_dim != d or self.psi1.in_dim != d:
            raise ValueError(f"state autoencoder latent size must be {d}")
        if self.psi1.out_dim != self.phi1.in_dim:
            raise ValueError("psi1 must map back to the state dimension")
        for net in (self.phi2, self.psi2):
            if net.in_dim != 1 or net.out_dim != 1:
                raise ValueError("parameter networks must be scalar to scalar")

    @property
    def latent_dim(self):
        return 2 if self.kind is NormalFormKind.HOPF else 1

    @property
    def state_dim(self):
        return self.phi1.in_dim

    @property
    def tau(self):
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_tau[0]))

    @property
    def nf(self):
        return NormalForm(self.kind, self.omega, self.tau)

    @property
    def nets(self):
        return {"phi1": self.phi1, "psi1": self.psi1, "phi2": self.phi2, "psi2": self.psi2}

    def trainable_params(self):
        """Parameter arrays and names in a fixed order (networks, then ``log_tau``)."""
        params, names = [], []
        for key, net in self.nets.items():
            params += net.params
            names += [f"{key}.{n}" for n in net.param_names]
        if self.tau_trainable:
            params.append(self.log_tau)
            names.append("log_tau")
        return params, names

    def copy(self):
        return NfAutoencoder(self.phi1.copy(), self.psi1.copy(), self.phi2.copy(), self.psi2.copy(),
                             self.kind, self.omega, self.log_tau.copy(), self.tau_trainable,
                             self.orientation, self.sign_eps)

    # -- checkpoints -----------------------------------------------------------

    def save(self, path, extra=None):
        header = {"kind": "nf-autoencoder", "normal_form": self.nf.to_dict(),
                  "tau_trainable": self.tau_trainable, "orientation": self.orientation,
                  "sign_eps": self.sign_eps, "activation": self.phi1.activation.value,
                  "layer_sizes": {k: net.layer_sizes for k, net in self.nets.items()}}
        header.update(extra or {})
        arrays = {"log_tau": self.log_tau}
        for key, net in self.nets.items():
            for name, p in zip(net.param_names, net.params):
                arrays[f"{key}.{name}"] = p
        write_container(path, header, arrays)

    @classmethod
    def load(cls, path):
        header, arrays = read_container(path)
        if header.get("kind") != "nf-autoencoder":
            raise ValueError(f"{path} is not an autoencoder checkpoint")
        nets = {}
        for key, sizes in header["layer_sizes"].items():
            n = len(sizes) - 1
            nets[key] = mlp.Mlp(sizes, [arrays[f"{key}.W{i}"].reshape(sizes[i + 1], sizes[i]) for i in range(n)],
                                [arrays[f"{key}.b{i}"].reshape(sizes[i + 1]) for i in range(n)],
                                header["activation"])
        nf = header["normal_form"]
        model = cls(nets["phi1"], nets["psi1"], nets["phi2"], nets["psi2"], nf["kind"], nf["omega"],
                    arrays["log_tau"].reshape(1), header["tau_trainable"], header["orientation"],
                    header["sign_eps"])
        return model, header


def build_model(state_dim, nf, phi1_hidden=(32, 16), psi1_hidden=(16, 32), phi2_hidden=(16, 16),
                psi2_hidden=(16, 16), activation="tanh", tau_trainable=False, orientation=1,
                sign_eps=1e-2, seed=0):
    """Initialize an autoencoder pair for ``nf`` with freshly seeded networks."""
    nf = nf if isinstance(nf, NormalForm) else NormalForm.from_dict(nf)
    d = nf.dim
    seeds = np.random.SeedSequence(seed).generate_state(4)
    phi1 = mlp.init([state_dim, *phi1_hidden, d], activation, seeds[0])
    psi1 = mlp.init([d, *psi1_hidden, state_dim], activation, seeds[1])
    phi2 = mlp.init([1, *phi2_hidden, 1], activation, seeds[2])
    psi2 = mlp.init([1, *psi2_hidden, 1], activation, seeds[3])
    return NfAutoencoder(phi1, psi1, phi2, psi2, nf.kind, nf.omega, np.array([np.log(nf.tau)]),
                         tau_trainable, orientation, sign_eps)


def _as_param_row(alpha):
    return np.atleast_1d(np.asarray(alpha, dtype=float))[np.newaxis, :]


def encode(model, U, alpha):
    """Latent states ``Z = phi1(U)`` and parameters ``beta = phi2(alpha)``."""
    Z = mlp.forward(model.phi1, U)
    beta = mlp.forward(model.phi2, _as_param_row(alpha))[0]
    return Z, beta


def decode(model, Z, beta):
    U_hat = mlp.forward(model.psi1, Z)
    alpha_hat = mlp.forward(model.psi2, _as_param_row(beta))[0]
    return U_hat, alpha_hat


def latent_derivative(model, U, U_dot):
    """Chain-rule latent velocity ``J_phi1(U) U_dot``."""
    return mlp.jvp_input(model.phi1, U, U_dot)


def compute_losses(model, batch, weights, with_grads=True):
    """Weighted losses and their exact gradients for one batch.

    Parameters
    ----------
    model : NfAutoencoder
    batch : Batch or TrajectorySet
    weights : LossWeights or sequence of six floats
    with_grads : bool

    Returns
    -------
    report : LossReport
    grads : dict
        Network name -> gradient list in ``Mlp.params`` order (``None`` when
        ``with_grads`` is false).
    tau_grad : float
        Gradient with respect to ``log_tau`` (0 when tau is fixed).

    Raises
    ------
    TrainingDivergenceError
        If a loss term is not finite.
    """
    lam = LossWeights.of(weights).as_tuple()
    if isinstance(batch, TrajectorySet):
        batch = Batch.from_set(batch)
    U, U_dot, alpha, t_f = batch.U, batch.U_dot, batch.alpha, batch.t_kept
    n_traj = alpha.size
    n_cols = U.shape[1]
    nf = model.nf
    d = model.latent_dim
    eps, orient = model.sign_eps, model.orientation

    # forward
    Z, Z_dot, c_phi1 = mlp.forward_jvp(model.phi1, U, U_dot)
    a_row = alpha[np.newaxis, :]
    beta_row, _, c_phi2 = mlp.forward_jvp(model.phi2, a_row, np.zeros_like(a_row))
    alpha_hat, _, c_psi2 = mlp.forward_jvp(model.psi2, beta_row, np.zeros_like(beta_row))
    beta = beta_row[0]
    beta_cols = np.repeat(beta, t_f)
    G = eval_rhs_scaled(nf, Z, beta_cols)
    U_hat, P, c_psi1 = mlp.forward_jvp(model.psi1, Z, G)

    r1 = U - U_hat
    r2 = alpha - alpha_hat[0]
    r3 = Z_dot - G
    r4 = U_dot - P
    means = Z.reshape(d, n_traj, t_f).mean(axis=2)
    sgn_alpha = np.sign(alpha)
    soft = np.tanh(beta / eps)
    r6 = sgn_alpha - orient * soft

    terms = [lam[0] * np.sum(r1 * r1) / n_cols,
             lam[1] * np.sum(r2 * r2) / n_traj,
             lam[2] * np.sum(r3 * r3) / n_cols,
             lam[3] * np.sum(r4 * r4) / n_cols,
             lam[4] * np.sum(np.abs(means)) / n_traj,
             lam[5] * np.sum(np.abs(r6)) / n_traj]
    for k, val in enumerate(terms):
        if not np.isfinite(val):
            raise TrainingDivergenceError(f"loss term {k + 1} is not finite", term=k + 1)
    l6_hard = lam[5] * np.sum(np.abs(sgn_alpha - orient * np.sign(beta))) / n_traj
    report = LossReport(*[float(t) for t in terms], float(sum(terms)), float(l6_hard))
    if not with_grads:
        return report, None, 0.0

    # reverse
    g_uhat = (-2.0 * lam[0] / n_cols) * r1
    g_p = (-2.0 * lam[3] / n_cols) * r4
    grads_psi1, g_z, g_g = mlp.backward_jvp(model.psi1, c_psi1, g_uhat, g_p)
    g_g = g_g - (2.0 * lam[2] / n_cols) * r3
    g_zdot = (2.0 * lam[2] / n_cols) * r3

    # through G = g(Z, beta) / tau^2
    jac = eval_rhs_grad_z(nf, Z, beta_cols)
    g_z = g_z + np.einsum("ijk,ik->jk", jac, g_g)
    g_beta_cols = np.sum(g_g * eval_rhs_grad_beta(nf, Z, beta_cols), axis=0)
    tau_grad = float(np.sum(g_g * (-2.0 * G))) if model.tau_trainable else 0.0

    g_means = (lam[4] / n_traj) * np.sign(means) / t_f
    g_z = g_z + np.repeat(g_means, t_f, axis=1)
    grads_phi1, _, _ = mlp.backward_jvp(model.phi1, c_phi1, g_z, g_zdot)

    g_beta = g_beta_cols.reshape(n_traj, t_f).sum(axis=1)
    g_beta += (lam[5] / n_traj) * np.sign(r6) * (-orient) * (1.0 - soft * soft) / eps
    g_ahat = (-2.0 * lam[1] / n_traj) * r2
    grads_psi2, g_beta_psi2, _ = mlp.backward_jvp(model.psi2, c_psi2, g_ahat[np.newaxis, :])
    g_beta = g_beta + g_beta_psi2[0]
    grads_phi2, _, _ = mlp.backward_jvp(model.phi2, c_phi2, g_beta[np.newaxis, :])

    grads = {"phi1": grads_phi1, "psi1": grads_psi1, "phi2": grads_phi2, "psi2": grads_psi2}
    return report, grads, tau_grad


def flat_grads(model, grads, tau_grad):
    """Gradient list aligned with :meth:`NfAutoencoder.trainable_params`."""
    out = []
    for key in ("phi1", "psi1", "phi2", "psi2"):
        out += grads[key]
    if model.tau_trainable:
        out.append(np.array([tau_grad]))
    return out


def train(model, train_set, weights, epochs, batch_size, eta, seed=0, callbacks=(), optimizer=None):
    """Minimize the weighted loss with ADAM over shuffled trajectory batches.

    ``model`` is updated in place and returned with the per-iteration loss
    history. Each callback is called as ``cb(epoch, model, history)`` after
    every epoch; a truthy return value stops training early.

    Raises
    ------
    TrainingDivergenceError
        If a loss or gradient becomes non-finite; ``err.history`` holds the
        rows recorded so far.
    """
    weights = LossWeights.of(weights)
    params, names = model.trainable_params()
    opt = optimizer or mlp.AdamState.for_params(params, eta=eta)
    history = []
    iteration = 0
    for epoch in range(int(epochs)):
        for batch in batches(train_set, batch_size, seed=seed, epoch=epoch):
            try:
                report, grads, tau_grad = compute_losses(model, batch, weights)
                mlp.adam_step(opt, params, flat_grads(model, grads, tau_grad), names)
                if not np.isfinite(model.tau):
                    raise TrainingDivergenceError("time scale overflowed", term=0)
            except TrainingDivergenceError as err:
                err.history = history
                raise
            except ArithmeticError as err:
                raise TrainingDivergenceError(str(err), term=0, history=history) from err
            history.append({"iteration": iteration, "epoch": epoch,
                            **{k: getattr(report, k) for k in LOSS_NAMES},
                            "total": report.total, "tau": model.tau})
            iteration += 1
        if any([cb(epoch, model, history) for cb in callbacks]):
            break
    return model, history


def estimate_tau(data_period, nf_period):
    """Time scale ``sqrt(T_data / T_nf)`` matching the two oscillation periods."""
    check_positive(float(data_period), "data_period")
    check_positive(float(nf_period), "nf_period")
    return float(np.sqrt(data_period / nf_period))


def consistency_ratios(report):
    """Ratios ``l3/l1`` and ``l4/l1``; about 1e-2 is the usual target."""
    if report.l1 == 0:
        return float("inf"), float("inf")
    return report.l3 / report.l1, report.l4 / report.l1


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)
        for row in history:
            writer.writerow([row["iteration"], row["epoch"]]
                            + [repr(float(row[k])) for k in HISTORY_FIELDS[2:]])


class NormalFormAutoencoder(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper around :class:`NfAutoencoder` training.

    ``fit`` takes a :class:`~normform.dataset.TrajectorySet`. The transform
    methods follow the scikit-learn layout, one sample per row:
    ``transform`` maps states ``(n_samples, state_dim)`` to latent
    coordinates ``(n_samples, latent_dim)`` and ``inverse_transform`` maps
    them back.

    Parameters
    ----------
    normal_form : {"saddle-node", "transcritical", "pitchfork", "hopf"}
    omega : float
        Hopf rotation frequency.
    tau : float
        Initial (or fixed) time scale.
    tau_trainable : bool
    phi1_hidden, psi1_hidden, phi2_hidden, psi2_hidden : tuple of int
        Hidden layer widths of the four networks.
    activation : {"tanh", "elu"}
    loss_weights : sequence of six floats
    orientation : {1, -1}
        Whether ``beta`` should share the sign of ``alpha`` (1) or oppose it.
    sign_eps : float
        Width of the ``tanh`` surrogate used for the sign loss.
    epochs, batch_size : int
        ``batch_size`` counts whole trajectories.
    learning_rate : float
    random_state : int
    """

    def __init__(self, normal_form="hopf", omega=1.0, tau=1.0, tau_trainable=False,
                 phi1_hidden=(32, 16), psi1_hidden=(16, 32), phi2_hidden=(16, 16),
                 psi2_hidden=(16, 16), activation="tanh",
                 loss_weights=(1.0, 1e-2, 1e-3, 1e-3, 0.0, 1e-1), orientation=1,
                 sign_eps=1e-2, epochs=100, batch_size=100, learning_rate=1e-4,
                 random_state=0):
        self.normal_form = normal_form
        self.omega = omega
        self.tau = tau
        self.tau_trainable = tau_trainable
        self.phi1_hidden = phi1_hidden
        self.psi1_hidden = psi1_hidden
        self.phi2_hidden = phi2_hidden
        self.psi2_hidden = psi2_hidden
        self.activation = activation
        self.loss_weights = loss_weights
        self.orientation = orientation
        self.sign_eps = sign_eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _build(self, state_dim):
        nf = NormalForm(self.normal_form, self.omega, self.tau)
        return build_model(state_dim, nf, self.phi1_hidden, self.psi1_hidden, self.phi2_hidden,
                           self.psi2_hidden, self.activation, self.tau_trainable,
                           self.orientation, self.sign_eps, self.random_state)

    def fit(self, X, y=None, callbacks=()):
        """Train on a :class:`TrajectorySet` (``y`` is ignored)."""
        if not isinstance(X, TrajectorySet):
            raise TypeError("fit expects a TrajectorySet carrying U, U_dot and alpha")
        model = self._build(X.state_dim)
        self.initial_loss_ = compute_losses(model, X, self.loss_weights, with_grads=False)[0]
        model, history = train(model, X, self.loss_weights, self.epochs,
                               min(self.batch_size, X.n_trajectories), self.learning_rate,
                               seed=self.random_state, callbacks=callbacks)
        self.model_ = model
        self.history_ = history
        self.tau_ = model.tau
        self.n_features_in_ = X.state_dim
        return self

    @classmethod
    def from_model(cls, model, **params):
        """Wrap an already trained :class:`NfAutoencoder`."""
        est = cls(normal_form=model.kind.value, omega=model.omega, tau=model.tau,
                  tau_trainable=model.tau_trainable, activation=model.phi1.activation.value,
                  orientation=model.orientation, sign_eps=model.sign_eps, **params)
        est.model_ = model
        est.history_ = []
        est.tau_ = model.tau
        est.n_features_in_ = model.state_dim
        return est

    def _rows(self, X, width, name="X"):
        X = as_float_array(X, name)
        if X.ndim == 1:
            X = X[np.newaxis, :]
        if X.ndim != 2 or X.shape[1] != width:
            raise ValueError(f"{name} must have shape (n_samples, {width}), got {X.shape}")
        return X

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = self._rows(X, self.model_.state_dim)
        return mlp.forward(self.model_.phi1, X.T).T

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        Z = self._rows(Z, self.model_.latent_dim, "Z")
        return mlp.forward(self.model_.psi1, Z.T).T

    def predict(self, X):
        """Reconstructed states ``psi1(phi1(X))``, one sample per row."""
        return self.inverse_transform(self.transform(X))

    def latent_derivative(self, X, X_dot):
        check_is_fitted(self, "model_")
        X = self._rows(X, self.model_.state_dim)
        X_dot = self._rows(X_dot, self.model_.state_dim, "X_dot")
        return latent_derivative(self.model_, X.T, X_dot.T).T

    def encode_parameter(self, alpha):
        check_is_fitted(self, "model_")
        return mlp.forward(self.model_.phi2, _as_param_row(alpha))[0]

    def decode_parameter(self, beta):
        check_is_fitted(self, "model_")
        return mlp.forward(self.model_.psi2, _as_param_row(beta))[0]

    def loss_report(self, X):
        check_is_fitted(self, "model_")
        return compute_losses(self.model_, X, self.loss_weights, with_grads=False)[0]

    def score(self, X, y=None):
        """Negative total loss on a :class:`TrajectorySet` (higher is better)."""
        return -self.loss_report(X).total
