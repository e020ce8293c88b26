"""Particle representation of a single vehicle.

Kinematics are carried by particles; every particle also holds one extent
hypothesis which, at prediction time, is expanded into up to nine discrete
variants (width and length each shifted by -delta, 0, +delta).  After the
measurement update the variants collapse back to their posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numba
import numpy as np

from .geometry import Extent, KinematicState, SensorMount, transform_poses, wrap_angle
from .radar_model import ClutterModel, RadarModel, log_ratio_terms

OMEGA_EPS = 1e-6


class DegenerateWeightsError(FloatingPointError):
    """All particle weights vanished."""


@dataclass(frozen=True)
class NoiseBounds:
    """Half-widths of the uniform process noise for one second."""

    position: float = 3.0  # m/s
    angle: float = 0.698  # rad/s
    speed: float = 9.0  # m/s^2
    yaw_rate: float = 3.0  # rad/s^2

    def __post_init__(self):
        if min(self.position, self.angle, self.speed, self.yaw_rate) < 0:
            raise ValueError("noise bounds must be nonnegative")

    def scaled(self, dt: float) -> np.ndarray:
        return dt * np.array([self.position, self.position, self.angle, self.speed, self.yaw_rate])


@dataclass(frozen=True)
class ExtentConstraints:
    a_min: float = 1.4
    a_max: float = 2.5
    b_min: float = 2.5
    b_max: float = 7.0
    ratio_min: float = 1.7
    ratio_max: float = 3.5

    def feasible(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = b / a
        tol = 1e-12
        return (
            (a >= self.a_min - tol)
            & (a <= self.a_max + tol)
            & (b >= self.b_min - tol)
            & (b <= self.b_max + tol)
            & (ratio >= self.ratio_min - tol)
            & (ratio <= self.ratio_max + tol)
        )

    def project(self, a, b):
        """Nearest point (approximately) satisfying every constraint."""
        a = np.clip(np.asarray(a, dtype=float), self.a_min, self.a_max)
        b = np.clip(np.asarray(b, dtype=float), self.b_min, self.b_max)
        for r in (self.ratio_min, self.ratio_max):
            bad = (b / a < self.ratio_min) if r == self.ratio_min else (b / a > self.ratio_max)
            # orthogonal projection onto the line b = r * a
            t = (a + r * b) / (1.0 + r * r)
            a = np.where(bad, t, a)
            b = np.where(bad, r * t, b)
        return np.clip(a, self.a_min, self.a_max), np.clip(b, self.b_min, self.b_max)


def constrain_extent(extent: Extent, constraints: ExtentConstraints = ExtentConstraints()) -> bool:
    return bool(constraints.feasible(extent.a, extent.b))


@dataclass(frozen=True)
class ParticleBudget:
    birth: int = 900
    step: int = 100
    steady: int = 300

    def next(self, current: int) -> int:
        return max(self.steady, current - self.step)


# ---------------------------------------------------------------------------
# motion model
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _ctrv_kernel(xi, dt):
    out = xi.copy()
    two_pi = 2.0 * np.pi
    for i in range(xi.shape[0]):
        x, y, phi, v, om = xi[i, 0], xi[i, 1], xi[i, 2], xi[i, 3], xi[i, 4]
        phi1 = phi + om * dt
        if abs(om) >= OMEGA_EPS:
            out[i, 0] = x + v / om * (math.sin(phi1) - math.sin(phi))
            out[i, 1] = y + v / om * (math.cos(phi) - math.cos(phi1))
        else:
            # second-order expansion in omega*dt for the near-straight branch
            c, s = math.cos(phi), math.sin(phi)
            out[i, 0] = x + v * dt * c - 0.5 * v * om * dt * dt * s
            out[i, 1] = y + v * dt * s + 0.5 * v * om * dt * dt * c
        # same convention as wrap_angle: (-pi, pi]
        r = (np.pi - phi1) % two_pi
        out[i, 2] = np.pi - r
    return out


def ctrv_arrays(xi: np.ndarray, dt: float) -> np.ndarray:
    """CTRV propagation of (..., 5) kinematic arrays."""
    xi = np.asarray(xi, dtype=float)
    flat = np.ascontiguousarray(xi.reshape(-1, 5))
    return _ctrv_kernel(flat, float(dt)).reshape(xi.shape)


def ctrv_step(xi: KinematicState, dt: float) -> KinematicState:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    arr = ctrv_arrays(np.array([xi.x, xi.y, xi.phi, xi.v, xi.omega]), dt)
    return KinematicState(*(float(u) for u in arr))


# ---------------------------------------------------------------------------
# particle sets
# ---------------------------------------------------------------------------

_OFFSETS = np.array([(da, db) for da in (-1.0, 0.0, 1.0) for db in (-1.0, 0.0, 1.0)])


@dataclass
class ParticleSet:
    xi: np.ndarray  # (N, 5)
    extent: np.ndarray  # (N, 2) width, length
    w: np.ndarray  # (N,) normalized weights
    var_ab: np.ndarray | None = None  # (N, 9, 2) extent variants after prediction
    var_logw: np.ndarray | None = None  # (N, 9) log variant weights, -inf when infeasible
    # arrays are treated as immutable once built, so the mean can be cached
    _mean: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).reshape(-1, 5)
        self.extent = np.asarray(self.extent, dtype=float).reshape(-1, 2)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if not (len(self.xi) == len(self.extent) == len(self.w)):
            raise ValueError("particle arrays differ in length")

    def __len__(self) -> int:
        return len(self.w)

    @classmethod
    def uniform(cls, xi, extent) -> "ParticleSet":
        xi = np.asarray(xi, dtype=float).reshape(-1, 5)
        extent = np.broadcast_to(np.asarray(extent, dtype=float), (len(xi), 2)).copy()
        return cls(xi, extent, np.full(len(xi), 1.0 / len(xi)))

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            self.xi.copy(),
            self.extent.copy(),
            self.w.copy(),
            None if self.var_ab is None else self.var_ab.copy(),
            None if self.var_logw is None else self.var_logw.copy(),
        )

    def variants(self) -> tuple[np.ndarray, np.ndarray]:
        """Extent variants and their log weights; a single variant when not expanded."""
        if self.var_ab is None:
            return self.extent[:, None, :], np.zeros((len(self), 1))
        return self.var_ab, self.var_logw

    def ess(self) -> float:
        return float(1.0 / np.sum(self.w**2))

    def mean(self) -> np.ndarray:
        """Weighted mean [x, y, phi, v, omega, a, b]; heading via circular mean."""
        if self._mean is None:
            w = self.w
            m = w @ self.xi
            m[2] = float(np.arctan2(w @ np.sin(self.xi[:, 2]), w @ np.cos(self.xi[:, 2])))
            self._mean = np.concatenate([m, w @ self.extent])
        return self._mean.copy()


@numba.njit(cache=True)
def _expand_kernel(extent, delta, offsets, lims):
    a_min, a_max, b_min, b_max, r_min, r_max, tol = lims
    n = extent.shape[0]
    nv = offsets.shape[0]
    var = np.empty((n, nv, 2))
    logw = np.empty((n, nv))
    ok = np.empty(nv, dtype=np.bool_)
    centre = nv // 2
    for i in range(n):
        count = 0
        for k in range(nv):
            a = extent[i, 0] + delta * offsets[k, 0]
            b = extent[i, 1] + delta * offsets[k, 1]
            var[i, k, 0] = a
            var[i, k, 1] = b
            if delta == 0.0:
                good = k == centre
            else:
                ratio = b / a if a != 0.0 else np.inf
                good = (
                    a >= a_min - tol and a <= a_max + tol and b >= b_min - tol
                    and b <= b_max + tol and ratio >= r_min - tol and ratio <= r_max + tol
                )
            ok[k] = good
            count += good
        if count == 0:
            # keep the unchanged variant when nothing is feasible
            ok[centre] = True
            count = 1
        lw = -math.log(count)
        for k in range(nv):
            logw[i, k] = lw if ok[k] else -np.inf
    return var, logw


def expand_extents(extent: np.ndarray, delta: float, constraints: ExtentConstraints):
    """(N, 9, 2) variants and (N, 9) normalized log weights."""
    c = constraints
    lims = (c.a_min, c.a_max, c.b_min, c.b_max, c.ratio_min, c.ratio_max, 1e-12)
    return _expand_kernel(np.ascontiguousarray(extent, dtype=float), float(delta), _OFFSETS, lims)


def predict_particles(
    ps: ParticleSet,
    dt: float,
    noise: NoiseBounds,
    rng: np.random.Generator,
    delta: float = 0.1,
    constraints: ExtentConstraints = ExtentConstraints(),
) -> ParticleSet:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    xi = ctrv_arrays(ps.xi, dt)
    half = noise.scaled(dt)
    if np.any(half > 0):
        xi = xi + rng.uniform(-1.0, 1.0, size=xi.shape) * half
        xi[:, 2] = wrap_angle(xi[:, 2])
    var_ab, var_logw = expand_extents(ps.extent, delta, constraints)
    return ParticleSet(xi, ps.extent.copy(), ps.w.copy(), var_ab, var_logw)


@numba.njit(cache=True)
def logsumexp1(x):
    """log(sum(exp(x))) of a 1-D array; -inf when every entry is -inf."""
    mx = -np.inf
    for i in range(x.shape[0]):
        if x[i] > mx:
            mx = x[i]
    if mx == -np.inf or mx == np.inf:
        return mx
    acc = 0.0
    for i in range(x.shape[0]):
        acc += math.exp(x[i] - mx)
    return mx + math.log(acc)


@numba.njit(cache=True)
def reduce_variants(joint, var_ab, extent):
    """Per-particle log mass over extent variants and the variant-weighted mean extent.

    joint: (N, V) log weights; var_ab: (N, V, 2); extent: (N, 2) fallback for
    particles whose variants all carry zero mass.
    """
    n, nv = joint.shape
    per = np.empty(n)
    out = extent.copy()
    for i in range(n):
        mx = -np.inf
        for v in range(nv):
            if joint[i, v] > mx:
                mx = joint[i, v]
        if mx == -np.inf:
            per[i] = -np.inf
            continue
        s = 0.0
        ea = 0.0
        eb = 0.0
        for v in range(nv):
            e = math.exp(joint[i, v] - mx)
            s += e
            ea += e * var_ab[i, v, 0]
            eb += e * var_ab[i, v, 1]
        per[i] = mx + math.log(s)
        out[i, 0] = ea / s
        out[i, 1] = eb / s
    return per, out


def posterior(ps: ParticleSet, loglik: np.ndarray, constraints: ExtentConstraints = ExtentConstraints()):
    """Reweight by per-(particle, variant) log-likelihoods ``loglik`` (N, V).

    Returns the updated set (extent reduced to the posterior mean per
    particle) and log eta, the log of the total weight mass before
    renormalization.
    """
    var_ab, var_logw = ps.variants()
    loglik = np.broadcast_to(loglik, var_logw.shape)
    with np.errstate(divide="ignore"):
        joint = np.ascontiguousarray(var_logw + loglik)
        per_particle, extent = reduce_variants(joint, np.ascontiguousarray(var_ab, dtype=float), ps.extent)
        logw = np.log(ps.w) + per_particle
    log_eta = float(logsumexp1(logw))
    if not np.isfinite(log_eta):
        raise DegenerateWeightsError("all particle weights vanished")
    w = np.exp(logw - log_eta)
    w /= w.sum()
    bad = ~constraints.feasible(extent[:, 0], extent[:, 1])
    if np.any(bad):
        a, b = constraints.project(extent[bad, 0], extent[bad, 1])
        extent[bad, 0], extent[bad, 1] = a, b
    return ParticleSet(ps.xi, extent, w), log_eta


def resample(ps: ParticleSet, target_count: int, rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling to ``target_count`` equally weighted particles."""
    if target_count < 1:
        raise ValueError("target_count must be positive")
    cdf = np.cumsum(ps.w)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(target_count)) / target_count
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, len(ps) - 1)
    return ParticleSet(ps.xi[idx].copy(), ps.extent[idx].copy(), np.full(target_count, 1.0 / target_count))


def cluster_loglik(ps: ParticleSet, dets: np.ndarray, model: RadarModel, clutter: ClutterModel, mount: SensorMount) -> np.ndarray:
    """(N, V) log object/clutter ratio of a detection cluster for every particle and variant."""
    var_ab, _ = ps.variants()
    xi_sc = transform_poses(ps.xi, mount.x, mount.y, mount.yaw)
    terms = log_ratio_terms(model, clutter, xi_sc, var_ab, dets)
    return -model.lambda_t + terms.sum(axis=-1)


def update_particles(ps: ParticleSet, dets: np.ndarray, model: RadarModel, clutter: ClutterModel, mount: SensorMount):
    """Reweight by the likelihood ratio of a non-empty cluster (compensated Doppler)."""
    dets = np.asarray(dets, dtype=float).reshape(-1, 3)
    if len(dets) == 0:
        raise ValueError("update_particles needs at least one detection")
    return posterior(ps, cluster_loglik(ps, dets, model, clutter, mount))
