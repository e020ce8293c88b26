"""Variational Bayesian Gaussian mixture with conjugate Dirichlet/Gaussian-Wishart priors.

Coordinate ascent on the evidence lower bound, alternating the responsibility
update and the posterior hyperparameter update.  Notation follows the usual
textbook treatment: ``rho`` Dirichlet weights, ``beta`` mean-precision scale,
``gamma`` means, ``V`` Wishart scale matrices, ``nu`` degrees of freedom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp
from sklearn.cluster import kmeans_plusplus

from .student import InvalidDofError, StudentMixture

log = logging.getLogger(__name__)

RESP_FLOOR = 1e-300
PD_JITTER = 1e-9


class DimensionMismatchError(ValueError):
    pass


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings; ``None`` entries are resolved from the data."""

    c: int = 70
    rho0: float = 1.0
    beta0: float = 1.0
    nu0: float | None = None  # dim + 1
    gamma0: np.ndarray | None = None  # data mean
    V0: np.ndarray | None = None  # identity

    def resolve(self, data: np.ndarray) -> "Hyperparameters":
        dim = data.shape[1]
        nu0 = float(dim + 1) if self.nu0 is None else float(self.nu0)
        gamma0 = data.mean(axis=0) if self.gamma0 is None else np.asarray(self.gamma0, dtype=float)
        V0 = np.eye(dim) if self.V0 is None else np.asarray(self.V0, dtype=float)
        hp = Hyperparameters(self.c, float(self.rho0), float(self.beta0), nu0, gamma0, V0)
        hp.validate(dim)
        return hp

    def validate(self, dim: int) -> None:
        if self.c < 1:
            raise ValueError("need at least one component")
        if not (self.rho0 > 0 and self.beta0 > 0):
            raise ValueError("rho0 and beta0 must be positive")
        if self.nu0 is not None and not self.nu0 > dim - 1:
            raise ValueError("nu0 must exceed dim - 1")
        if self.gamma0 is not None and np.shape(self.gamma0) != (dim,):
            raise DimensionMismatchError("gamma0 has the wrong dimension")
        if self.V0 is not None:
            V0 = np.asarray(self.V0)
            if V0.shape != (dim, dim):
                raise DimensionMismatchError("V0 has the wrong dimension")
            if not np.allclose(V0, V0.T):
                raise ValueError("V0 must be symmetric")
            try:
                np.linalg.cholesky(V0)
            except np.linalg.LinAlgError as exc:
                raise ValueError("V0 must be positive definite") from exc


@dataclass(frozen=True)
class ComponentPosterior:
    rho: float
    beta: float
    nu: float
    gamma: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class VgmModel:
    dim: int
    components: tuple[ComponentPosterior, ...]

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("a model needs at least one component")
        for comp in self.components:
            if comp.gamma.shape != (self.dim,) or comp.V.shape != (self.dim, self.dim):
                raise DimensionMismatchError("component dimension does not match model")

    def __len__(self) -> int:
        return len(self.components)

    @property
    def rho(self) -> np.ndarray:
        return np.array([c.rho for c in self.components])

    @property
    def weights(self) -> np.ndarray:
        rho = self.rho
        return rho / rho.sum()

    @classmethod
    def from_arrays(cls, rho, beta, nu, gamma, V) -> "VgmModel":
        comps = tuple(
            ComponentPosterior(float(rho[j]), float(beta[j]), float(nu[j]), np.array(gamma[j], dtype=float), np.array(V[j], dtype=float))
            for j in range(len(rho))
        )
        return cls(int(np.shape(gamma)[1]), comps)

    def arrays(self):
        return (
            self.rho,
            np.array([c.beta for c in self.components]),
            np.array([c.nu for c in self.components]),
            np.stack([c.gamma for c in self.components]),
            np.stack([c.V for c in self.components]),
        )


@dataclass
class FitResult:
    model: VgmModel
    resp: np.ndarray
    elbo_trace: list[float] = field(default_factory=list)
    converged: bool = False

    # allow ``model, resp, trace = fit(...)``
    def __iter__(self):
        return iter((self.model, self.resp, self.elbo_trace))


# ---------------------------------------------------------------------------


def _log_b(logdet_V: np.ndarray, nu: np.ndarray, dim: int) -> np.ndarray:
    """Log normalizer of the Wishart density."""
    i = np.arange(1, dim + 1)
    return (
        -0.5 * nu * logdet_V
        - 0.5 * nu * dim * np.log(2.0)
        - 0.25 * dim * (dim - 1) * np.log(np.pi)
        - np.sum(gammaln(0.5 * (nu[:, None] + 1 - i[None, :])), axis=1)
    )


def _expected_logdet(logdet_V: np.ndarray, nu: np.ndarray, dim: int) -> np.ndarray:
    i = np.arange(1, dim + 1)
    return np.sum(digamma(0.5 * (nu[:, None] + 1 - i[None, :])), axis=1) + dim * np.log(2.0) + logdet_V


class _State:
    """Posterior hyperparameters plus the sufficient statistics that produced them."""

    def __init__(self, X, R, hp: Hyperparameters):
        dim = X.shape[1]
        self.Nk = R.sum(axis=0)
        safe = np.where(self.Nk > 0, self.Nk, 1.0)
        xbar = (R.T @ X) / safe[:, None]
        xbar[self.Nk <= 0] = hp.gamma0
        self.xbar = xbar
        c = R.shape[1]
        NS = np.empty((c, dim, dim))
        for k in range(c):
            diff = X - xbar[k]
            NS[k] = (R[:, k, None] * diff).T @ diff
        self.NS = NS

        self.rho = hp.rho0 + self.Nk
        self.beta = hp.beta0 + self.Nk
        self.nu = hp.nu0 + self.Nk
        self.gamma = (hp.beta0 * hp.gamma0[None, :] + self.Nk[:, None] * xbar) / self.beta[:, None]
        V0inv = np.linalg.inv(hp.V0)
        dev = xbar - hp.gamma0[None, :]
        shrink = hp.beta0 * self.Nk / (hp.beta0 + self.Nk)
        Vinv = V0inv[None] + NS + shrink[:, None, None] * np.einsum("ci,cj->cij", dev, dev)
        Vinv = 0.5 * (Vinv + np.transpose(Vinv, (0, 2, 1)))
        self.V = np.empty_like(Vinv)
        self.logdet_V = np.empty(c)
        self.chol_V = np.empty_like(Vinv)
        for k in range(c):
            self.V[k], self.chol_V[k], self.logdet_V[k] = _invert_pd(Vinv[k], k)

    def model(self) -> VgmModel:
        return VgmModel.from_arrays(self.rho, self.beta, self.nu, self.gamma, self.V)


def _invert_pd(Vinv: np.ndarray, k: int):
    try:
        L = np.linalg.cholesky(Vinv)
    except np.linalg.LinAlgError:
        log.warning("component %d lost positive definiteness; adding %.0e jitter", k, PD_JITTER)
        Vinv = Vinv + PD_JITTER * np.eye(Vinv.shape[0])
        try:
            L = np.linalg.cholesky(Vinv)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"Wishart scale of component {k} is not positive definite") from exc
    Linv = np.linalg.inv(L)
    V = Linv.T @ Linv
    V = 0.5 * (V + V.T)
    chol_V = np.linalg.cholesky(V)
    return V, chol_V, -2.0 * np.sum(np.log(np.diag(L)))


def _log_rho(X: np.ndarray, st: _State) -> np.ndarray:
    n, dim = X.shape
    c = len(st.rho)
    e_logpi = digamma(st.rho) - digamma(st.rho.sum())
    e_logdet = _expected_logdet(st.logdet_V, st.nu, dim)
    out = np.empty((n, c))
    for k in range(c):
        y = (X - st.gamma[k]) @ st.chol_V[k]
        maha = np.einsum("ij,ij->i", y, y)
        out[:, k] = e_logpi[k] + 0.5 * e_logdet[k] - 0.5 * dim * np.log(2 * np.pi) - 0.5 * (dim / st.beta[k] + st.nu[k] * maha)
    return out


def _responsibilities(X: np.ndarray, st: _State) -> np.ndarray:
    lr = _log_rho(X, st)
    R = np.exp(lr - logsumexp(lr, axis=1, keepdims=True))
    R[R < RESP_FLOOR] = 0.0
    return R / R.sum(axis=1, keepdims=True)


def _elbo(R: np.ndarray, st: _State, hp: Hyperparameters) -> float:
    dim = st.gamma.shape[1]
    c = len(st.rho)
    e_logpi = digamma(st.rho) - digamma(st.rho.sum())
    e_logdet = _expected_logdet(st.logdet_V, st.nu, dim)
    Nk = st.Nk

    dx = st.xbar - st.gamma
    trSW = np.einsum("cij,cji->c", st.NS, st.V)
    quad_x = np.einsum("ci,cij,cj->c", dx, st.V, dx)
    t_data = 0.5 * np.sum(Nk * (e_logdet - dim / st.beta - dim * np.log(2 * np.pi)) - st.nu * trSW - Nk * st.nu * quad_x)

    t_z = np.sum(Nk * e_logpi)
    t_pi = gammaln(c * hp.rho0) - c * gammaln(hp.rho0) + (hp.rho0 - 1.0) * e_logpi.sum()

    dm = st.gamma - hp.gamma0[None, :]
    quad_m = np.einsum("ci,cij,cj->c", dm, st.V, dm)
    V0inv = np.linalg.inv(hp.V0)
    logdet_V0 = np.linalg.slogdet(hp.V0)[1]
    tr0 = np.einsum("ij,cji->c", V0inv, st.V)
    t_mulam = (
        0.5 * np.sum(dim * np.log(hp.beta0 / (2 * np.pi)) + e_logdet - dim * hp.beta0 / st.beta - hp.beta0 * st.nu * quad_m)
        + c * _log_b(np.array([logdet_V0]), np.array([hp.nu0]), dim)[0]
        + 0.5 * (hp.nu0 - dim - 1) * e_logdet.sum()
        - 0.5 * np.sum(st.nu * tr0)
    )

    nz = R > 0
    q_z = float(np.sum(R[nz] * np.log(R[nz])))
    q_pi = np.sum((st.rho - 1.0) * e_logpi) + gammaln(st.rho.sum()) - np.sum(gammaln(st.rho))
    entropy_lam = -_log_b(st.logdet_V, st.nu, dim) - 0.5 * (st.nu - dim - 1) * e_logdet + 0.5 * st.nu * dim
    q_mulam = np.sum(0.5 * e_logdet + 0.5 * dim * np.log(st.beta / (2 * np.pi)) - 0.5 * dim - entropy_lam)

    return float(t_data + t_z + t_pi + t_mulam - q_z - q_pi - q_mulam)


def _initial_responsibilities(X: np.ndarray, c: int, seed: int) -> np.ndarray:
    n = X.shape[0]
    k = min(c, n)
    # seed on standardized data so no single axis dominates the distances
    scale = X.std(axis=0)
    Xs = (X - X.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    centers, _ = kmeans_plusplus(Xs, n_clusters=k, random_state=seed)
    d2 = ((Xs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    R = np.zeros((n, c))
    R[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    return R


def _as_data(data, dim: int | None) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("data must be a non-empty (m, dim) array")
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite")
    return X


def fit(data, hp: Hyperparameters = Hyperparameters(), max_iters: int = 500, elbo_tol: float = 1e-8, seed: int = 0) -> FitResult:
    """Fit a variational Gaussian mixture; returns model, responsibilities and ELBO trace."""
    hp_dim = None if hp.gamma0 is None else len(hp.gamma0)
    if hp.V0 is not None:
        hp_dim = np.shape(hp.V0)[0]
    X = _as_data(data, hp_dim)
    hp = hp.resolve(X)

    R = _initial_responsibilities(X, hp.c, seed)
    trace: list[float] = []
    converged = False
    st = _State(X, R, hp)
    for it in range(max_iters):
        if it > 0:
            R = _responsibilities(X, st)
            st = _State(X, R, hp)
        trace.append(_elbo(R, st, hp))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < elbo_tol * abs(trace[-1]):
            converged = True
            break
    return FitResult(st.model(), R, trace, converged)


def elbo(model: VgmModel, resp: np.ndarray, data, hp: Hyperparameters) -> float:
    """Lower bound for given responsibilities; model must be the update they imply."""
    X = _as_data(data, model.dim)
    hp = hp.resolve(X)
    resp = np.asarray(resp, dtype=float)
    if resp.shape != (X.shape[0], len(model)):
        raise DimensionMismatchError("responsibilities do not match data/model")
    st = _State(X, resp, hp)
    return _elbo(resp, st, hp)


def prune(model: VgmModel, threshold: float = 1e-5) -> VgmModel:
    """Drop components whose normalized weight falls below ``threshold``."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    w = model.weights
    kept = tuple(c for c, wj in zip(model.components, w) if wj >= threshold)
    if not kept:
        raise ValueError("pruning would remove every component")
    return VgmModel(model.dim, kept)


def predictive(model: VgmModel) -> StudentMixture:
    """Posterior predictive density: a Student-t mixture."""
    rho, beta, nu, gamma, V = model.arrays()
    dof = nu + 1.0 - model.dim
    if np.any(dof <= 0):
        raise InvalidDofError("nu + 1 - dim must be positive for every component")
    precs = (dof * beta / (1.0 + beta))[:, None, None] * V
    return StudentMixture(rho / rho.sum(), gamma.copy(), precs, dof)
