"""Multivariate Student-t mixtures parameterized by precision matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp


class InvalidDofError(ValueError):
    pass


class ZeroMarginalError(ValueError):
    """Conditioning value has negligible support under the mixture."""


def student_logpdf(x: np.ndarray, loc: np.ndarray, prec: np.ndarray, dof: float) -> np.ndarray:
    """Log density of St(x | loc, prec, dof) for rows of ``x``."""
    x = np.atleast_2d(x)
    dim = loc.shape[0]
    chol = np.linalg.cholesky(prec)
    diff = x - loc
    maha = np.sum((diff @ chol) ** 2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return (
        gammaln(0.5 * (dof + dim))
        - gammaln(0.5 * dof)
        + 0.5 * logdet
        - 0.5 * dim * np.log(dof * np.pi)
        - 0.5 * (dof + dim) * np.log1p(maha / dof)
    )


@dataclass(frozen=True)
class StudentMixture:
    weights: np.ndarray  # (C,)
    locs: np.ndarray  # (C, D)
    precs: np.ndarray  # (C, D, D)
    dofs: np.ndarray  # (C,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to one")
        if np.any(np.asarray(self.dofs) <= 0):
            raise InvalidDofError("degrees of freedom must be positive")

    @property
    def dim(self) -> int:
        return self.locs.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    def component_logpdf(self, x) -> np.ndarray:
        """(N, C) matrix of log weight + log component density."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], len(self)))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        for j in range(len(self)):
            out[:, j] = logw[j] + student_logpdf(x, self.locs[j], self.precs[j], self.dofs[j])
        return out

    def logpdf(self, x) -> np.ndarray:
        return logsumexp(self.component_logpdf(x), axis=1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))


def marginalize(mix: StudentMixture, keep_dims) -> StudentMixture:
    """Marginal over ``keep_dims``; each component keeps its dof."""
    keep = np.asarray(keep_dims, dtype=int)
    if keep.size == 0:
        raise ValueError("keep_dims must be non-empty")
    covs = np.linalg.inv(mix.precs)
    sub = covs[:, keep[:, None], keep[None, :]]
    return StudentMixture(mix.weights.copy(), mix.locs[:, keep].copy(), np.linalg.inv(sub), mix.dofs.copy())


def condition(mix: StudentMixture, observed_dims, observed_values) -> StudentMixture:
    """Conditional mixture over the free dims given observed values.

    Per component the dof grows by the number of observed dims and the scale
    is inflated by ``(dof + maha_b) / (dof + n_b)``; component weights are
    reweighted by each component's marginal density at the observation.
    """
    obs = np.asarray(observed_dims, dtype=int)
    xb = np.asarray(observed_values, dtype=float)
    free = np.array([i for i in range(mix.dim) if i not in set(obs.tolist())], dtype=int)
    if obs.size == 0 or free.size == 0:
        raise ValueError("observed_dims must be a proper non-empty subset")

    nb = obs.size
    covs = np.linalg.inv(mix.precs)
    s_bb = covs[:, obs[:, None], obs[None, :]]
    s_ab = covs[:, free[:, None], obs[None, :]]
    lam_aa = mix.precs[:, free[:, None], free[None, :]]

    diff_b = xb[None, :] - mix.locs[:, obs]
    sol = np.linalg.solve(s_bb, diff_b[..., None])[..., 0]
    maha_b = np.einsum("ci,ci->c", diff_b, sol)
    locs = mix.locs[:, free] + np.einsum("cij,cj->ci", s_ab, sol)
    dofs = mix.dofs + nb
    precs = lam_aa * ((mix.dofs + nb) / (mix.dofs + maha_b))[:, None, None]

    marg = marginalize(mix, obs)
    logm = marg.component_logpdf(xb[None, :])[0]
    total = logsumexp(logm)
    if not np.isfinite(total) or total < -700:
        raise ZeroMarginalError("observation has negligible marginal density")
    weights = np.exp(logm - total)
    weights = weights / weights.sum()
    return StudentMixture(weights, locs, precs, dofs)
