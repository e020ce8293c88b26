"""Learned single-object radar likelihood, clutter model and the object/clutter ratio.

The learned density lives in the reduced space ``z' = (zx, zy, zd)``
conditioned on the aspect angle ``x'``.  Every detection handed to this
module is expected to carry ego-compensated Doppler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy.special import gammaln

from .geometry import (
    CENTER_OFFSET,
    FRONT_OVERHANG,
    REAR_OVERHANG,
    Detection,
    SensorMount,
    VehicleState,
    aspect_angles,
    compensate_doppler_arrays,
    EgoMotion,
    object_coords,
    reduce_arrays,
    transform_poses,
)
from ._vecmath import vexp, vlog1p
from .records import Scan, TruthFrame, TruthIndex
from .vgm import StudentMixture, VgmModel, condition, marginalize, predictive

DEFAULT_LAMBDA_T = 5.0
DEFAULT_LAMBDA_C = 30.0
DEFAULT_PD = 0.8
TWO_PI = 2.0 * np.pi
# sums of scaled component terms below ACC_FLOOR are redone exactly in log space
ACC_FLOOR = 1e-14


class ZeroClutterDensityError(ValueError):
    pass


class OutOfFovError(ValueError):
    pass


# ---------------------------------------------------------------------------
# conditional density kernel
# ---------------------------------------------------------------------------

_KERNEL_FLAGS = dict(cache=True, error_model="numpy", fastmath={"reassoc", "contract"})


@numba.njit(**_KERNEL_FLAGS)
def _wrap(a):
    return np.pi - np.mod(np.pi - a, TWO_PI)


@numba.njit(**_KERNEL_FLAGS)
def _aspect_weights(asp, logw, nu, mu_b, var_b, mconst, out):
    """Fill ``out`` with log w_j + log St_j(asp); return their log-sum-exp."""
    c = logw.shape[0]
    for j in range(c):
        d = asp - mu_b[j]
        out[j] = logw[j] + mconst[j] - 0.5 * (nu[j] + 1.0) * vlog1p(d * d / (var_b[j] * nu[j]))
    mx = -np.inf
    for j in range(c):
        mx = max(mx, out[j])
    if mx == -np.inf:
        return mx
    acc = 0.0
    for j in range(c):
        acc += vexp(out[j] - mx)
    return mx + math.log(acc)


@numba.njit(**_KERNEL_FLAGS)
def _log_gprime_kernel(
    xi, ab, px, py, alpha, vd, logw, nu, ma0, ma1, ma2, mu_b, var_b, g0, g1, g2,
    l00, l10, l20, l11, l21, l22, mconst, cconst, cutoff, wrap,
):
    n = xi.shape[0]
    nv = ab.shape[1]
    m = px.shape[0]
    c = logw.shape[0]
    out = np.empty((n, nv, m))
    negk = -0.5 * (nu + 4.0)
    lm = np.empty(c)
    lm2 = np.empty(c)
    base = np.empty(c)
    lbase = np.empty(c)
    scu = np.empty(c)
    c0 = np.empty(c)
    c1 = np.empty(c)
    c2 = np.empty(c)
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    for p in range(n):
        x = xi[p, 0]
        y = xi[p, 1]
        phi = xi[p, 2]
        v = xi[p, 3]
        om = xi[p, 4]
        asp = _wrap(phi - math.atan2(y, x))
        logp = _aspect_weights(asp, logw, nu, mu_b, var_b, mconst, lm)
        if wrap and asp != 0.0:
            alt = asp - TWO_PI if asp > 0.0 else asp + TWO_PI
            logp2 = _aspect_weights(alt, logw, nu, mu_b, var_b, mconst, lm2)
            if logp2 > logp:
                asp = alt
                logp = logp2
                for j in range(c):
                    lm[j] = lm2[j]
        for j in range(c):
            d = asp - mu_b[j]
            s = (nu[j] + 1.0) / (nu[j] + d * d / var_b[j])
            scu[j] = s / (nu[j] + 1.0)
            c0[j] = ma0[j] + g0[j] * d
            c1[j] = ma1[j] + g1[j] * d
            c2[j] = ma2[j] + g2[j] * d
            base[j] = (lm[j] - logp) + cconst[j] + 1.5 * vlog1p(s - 1.0)
        ref = -np.inf
        for j in range(c):
            if lm[j] - logp < -cutoff:
                base[j] = -np.inf
            ref = max(ref, base[j])
        for j in range(c):
            lbase[j] = base[j] - ref
        cph = math.cos(phi)
        sph = math.sin(phi)
        s1 = v * cph + om * y
        s2 = v * sph - om * x
        for mi in range(m):
            dx = px[mi] - x
            dy = py[mi] - y
            ox = cph * dx + sph * dy
            oy = -sph * dx + cph * dy
            zd = vd[mi] - (ca[mi] * s1 + sa[mi] * s2)
            for vi in range(nv):
                zx = ox / ab[p, vi, 1]
                zy = oy / ab[p, vi, 0]
                acc = 0.0
                for j in range(c):
                    d0 = zx - c0[j]
                    d1 = zy - c1[j]
                    d2 = zd - c2[j]
                    # chol is lower triangular L with Lambda_aa = L L^T
                    y0 = l00[j] * d0 + l10[j] * d1 + l20[j] * d2
                    y1 = l11[j] * d1 + l21[j] * d2
                    y2 = l22[j] * d2
                    u = scu[j] * (y0 * y0 + y1 * y1 + y2 * y2)
                    acc += vexp(lbase[j] + negk[j] * vlog1p(u))
                if acc > ACC_FLOOR:
                    out[p, vi, mi] = ref + math.log(acc)
                    continue
                # far tails: redo in log space
                mx = -np.inf
                for j in range(c):
                    if base[j] == -np.inf:
                        lm2[j] = -np.inf
                        continue
                    d0 = zx - c0[j]
                    d1 = zy - c1[j]
                    d2 = zd - c2[j]
                    y0 = l00[j] * d0 + l10[j] * d1 + l20[j] * d2
                    y1 = l11[j] * d1 + l21[j] * d2
                    y2 = l22[j] * d2
                    u = scu[j] * (y0 * y0 + y1 * y1 + y2 * y2)
                    val = base[j] + negk[j] * math.log1p(u)
                    lm2[j] = val
                    if val > mx:
                        mx = val
                if mx == -np.inf:
                    out[p, vi, mi] = -np.inf
                    continue
                acc = 0.0
                for j in range(c):
                    if lm2[j] > -np.inf:
                        acc += math.exp(lm2[j] - mx)
                out[p, vi, mi] = mx + math.log(acc)
    return out


class RadarModel:
    """Learned measurement density ``g'(z'|x')`` plus the expected detection count.

    ``cutoff`` skips components whose conditional weight is below
    ``exp(-cutoff)`` of the total; ``np.inf`` keeps everything.
    """

    ASPECT = 3

    def __init__(self, mixture: StudentMixture, lambda_t: float = DEFAULT_LAMBDA_T, cutoff: float = np.inf, wrap: bool = True):
        if mixture.dim != 4:
            raise ValueError("the radar model needs a 4-D mixture over (zx, zy, zd, aspect)")
        if not lambda_t > 0:
            raise ValueError("lambda_t must be positive")
        self.mixture = mixture
        self.lambda_t = float(lambda_t)
        self.cutoff = float(cutoff)
        self.wrap = bool(wrap)
        self._build_tables()

    @classmethod
    def from_vgm(cls, model: VgmModel, **kwargs) -> "RadarModel":
        return cls(predictive(model), **kwargs)

    def _build_tables(self):
        mix = self.mixture
        self._aspect_marginal = marginalize(mix, [3])
        cov = np.linalg.inv(mix.precs)
        nu = np.asarray(mix.dofs, dtype=float)
        var_b = cov[:, 3, 3]
        lam_aa = mix.precs[:, :3, :3]
        chol = np.linalg.cholesky(lam_aa)
        logdet_aa = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(mix.weights)
        gain = cov[:, :3, 3] / var_b[:, None]
        col = np.ascontiguousarray

        # flat contiguous columns; strided views would stop the kernel loops vectorizing
        self._tables = (
            col(logw),
            col(nu),
            col(mix.locs[:, 0]),
            col(mix.locs[:, 1]),
            col(mix.locs[:, 2]),
            col(mix.locs[:, 3]),
            col(var_b),
            col(gain[:, 0]),
            col(gain[:, 1]),
            col(gain[:, 2]),
            col(chol[:, 0, 0]),
            col(chol[:, 1, 0]),
            col(chol[:, 2, 0]),
            col(chol[:, 1, 1]),
            col(chol[:, 2, 1]),
            col(chol[:, 2, 2]),
            col(gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi * var_b)),
            col(gammaln(0.5 * (nu + 4.0)) - gammaln(0.5 * (nu + 1.0)) + 0.5 * logdet_aa - 1.5 * np.log((nu + 1.0) * np.pi)),
        )

    def log_gprime(self, xi_sc: np.ndarray, ab: np.ndarray, dets: np.ndarray) -> np.ndarray:
        """log g'(f_z(z, x) | f_x(x)) for particles × extent variants × detections.

        xi_sc: (N, 5) kinematics in SC; ab: (N, V, 2) widths/lengths;
        dets: (M, 3) polar detections with compensated Doppler.
        """
        xi_sc = np.ascontiguousarray(xi_sc, dtype=float).reshape(-1, 5)
        ab = np.ascontiguousarray(ab, dtype=float)
        if ab.ndim == 2:
            ab = ab[:, None, :]
        dets = np.asarray(dets, dtype=float).reshape(-1, 3)
        d, alpha, vd = dets[:, 0], np.ascontiguousarray(dets[:, 1]), np.ascontiguousarray(dets[:, 2])
        px, py = d * np.cos(alpha), d * np.sin(alpha)
        return _log_gprime_kernel(xi_sc, ab, px, py, alpha, vd, *self._tables, self.cutoff, self.wrap)

    def effective_aspect(self, aspect: float) -> float:
        """Aspect representative used for evaluation (wrap mitigation near +-pi)."""
        if not self.wrap or aspect == 0.0:
            return aspect
        alt = aspect - TWO_PI if aspect > 0 else aspect + TWO_PI
        m = self._aspect_marginal
        return alt if m.logpdf([[alt]])[0] > m.logpdf([[aspect]])[0] else aspect

    def conditional(self, aspect: float) -> StudentMixture:
        """Full conditional mixture over z' at the given aspect (reference path)."""
        return condition(self.mixture, [3], [self.effective_aspect(aspect)])


# ---------------------------------------------------------------------------
# clutter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClutterModel:
    """Poisson clutter: uniform in Cartesian SC, Doppler a Gaussian/uniform mixture.

    The Doppler density acts on ego-compensated Doppler, so the stationary
    world sits at 0 m/s.
    """

    area: float
    lambda_c: float = DEFAULT_LAMBDA_C
    gauss_weight: float = 0.7
    gauss_sigma: float = 0.5
    doppler_min: float = -40.0
    doppler_max: float = 40.0
    opening_angle: float = np.deg2rad(170.0)
    max_range: float = 43.0

    def __post_init__(self):
        if not self.area > 0:
            raise ValueError("clutter area must be positive")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be nonnegative")
        if not 0.0 <= self.gauss_weight <= 1.0:
            raise ValueError("gauss_weight must lie in [0, 1]")
        if not (self.gauss_sigma > 0 and self.doppler_max > self.doppler_min):
            raise ValueError("invalid Doppler clutter parameters")

    @classmethod
    def for_mount(cls, mount: SensorMount, **kwargs) -> "ClutterModel":
        return cls(area=mount.fov_area, opening_angle=mount.opening_angle, max_range=mount.max_range, **kwargs)

    def log_doppler(self, vd) -> np.ndarray:
        vd = np.asarray(vd, dtype=float)
        with np.errstate(divide="ignore"):
            lg = np.log(self.gauss_weight) - 0.5 * (vd / self.gauss_sigma) ** 2 - np.log(self.gauss_sigma * np.sqrt(TWO_PI))
            inside = (vd >= self.doppler_min) & (vd <= self.doppler_max)
            lu = np.where(inside, np.log(1.0 - self.gauss_weight) - np.log(self.doppler_max - self.doppler_min), -np.inf)
        return np.logaddexp(lg, lu)

    def in_fov(self, d, alpha) -> np.ndarray:
        return (np.asarray(d) <= self.max_range) & (np.abs(alpha) <= 0.5 * self.opening_angle)


def clutter_intensity(clutter: ClutterModel, z: Detection) -> float:
    """kappa(z) = lambda_C * p_C(z) in the polar detection space (d, alpha, v_D).

    The Cartesian uniform density 1/area becomes d/area in polar coordinates.
    """
    if not bool(clutter.in_fov(z.d, z.alpha)):
        raise OutOfFovError("detection lies outside the sensor field of view")
    return float(clutter.lambda_c * z.d / clutter.area * np.exp(clutter.log_doppler(z.vd)))


def log_clutter_reduced(clutter: ClutterModel, ab: np.ndarray, vd: np.ndarray) -> np.ndarray:
    """log p_C(z') in the reduced space: log(a*b/area) + log Doppler density.

    ``ab``: (..., 2); ``vd``: detections' compensated Doppler (M,).
    Returns (..., M).
    """
    spatial = np.log(ab[..., 0] * ab[..., 1]) - np.log(clutter.area)
    dop = clutter.log_doppler(vd)
    if np.any(~np.isfinite(dop)):
        raise ZeroClutterDensityError("clutter density vanishes at a detection")
    return spatial[..., None] + dop


def log_ratio_terms(model: RadarModel, clutter: ClutterModel, xi_sc, ab, dets) -> np.ndarray:
    """Per-detection log-ratio contributions, shape (N, V, M).

    Each entry is log(lambda_T/lambda_C) + log g'(z'|x') - log p_C(z').
    """
    ab = np.asarray(ab, dtype=float)
    if ab.ndim == 2:
        ab = ab[:, None, :]
    dets = np.asarray(dets, dtype=float).reshape(-1, 3)
    lg = model.log_gprime(xi_sc, ab, dets)
    lc = log_clutter_reduced(clutter, ab, dets[:, 2])
    return np.log(model.lambda_t) - np.log(clutter.lambda_c) + lg - lc


def _dets_array(Z) -> np.ndarray:
    if isinstance(Z, np.ndarray):
        return Z.reshape(-1, 3).astype(float)
    return np.array([[z.d, z.alpha, z.vd] for z in Z], dtype=float).reshape(-1, 3)


def likelihood_ratio(model: RadarModel, clutter: ClutterModel, Z_O, x: VehicleState) -> float:
    """log of the object/clutter likelihood ratio for one cluster and one state (SC)."""
    dets = _dets_array(Z_O)
    if len(dets) == 0:
        return -model.lambda_t
    ab = np.array([[[x.extent.a, x.extent.b]]])
    terms = log_ratio_terms(model, clutter, x.as_array()[None, :5], ab, dets)
    return float(-model.lambda_t + terms[0, 0].sum())


def single_object_likelihood(model: RadarModel, Z_O, x: VehicleState) -> float:
    """log g(Z_O|x) = -lambda_T + sum(log lambda_T + log g_z(z|x)) in polar detection space."""
    dets = _dets_array(Z_O)
    if len(dets) == 0:
        return -model.lambda_t
    a, b = x.extent.a, x.extent.b
    lg = model.log_gprime(x.as_array()[None, :5], np.array([[[a, b]]]), dets)[0, 0]
    # density of z follows from g' times |d z'/d z| = d / (a b)
    lz = lg + np.log(dets[:, 0]) - np.log(a * b)
    return float(-model.lambda_t + np.sum(np.log(model.lambda_t) + lz))


# ---------------------------------------------------------------------------
# detection probability
# ---------------------------------------------------------------------------


def detection_probability_sc(x_sc, y_sc, mount: SensorMount, p_max: float = DEFAULT_PD, range_band: float = 0.1, az_band: float = np.deg2rad(5.0)):
    """Probability of detection for points given in SC (vectorized)."""
    r = np.hypot(x_sc, y_sc)
    az = np.abs(np.arctan2(y_sc, x_sc))
    band_r = range_band * mount.max_range
    f_r = np.clip((mount.max_range - r) / band_r, 0.0, 1.0)
    f_az = np.clip((0.5 * mount.opening_angle - az) / az_band, 0.0, 1.0)
    return p_max * np.minimum(f_r, f_az)


def detection_probability_arrays(xi_vc: np.ndarray, length: np.ndarray, mount: SensorMount, **kwargs) -> np.ndarray:
    """p_D evaluated at the box centers of VC states ``xi_vc`` (N, 5)."""
    off = CENTER_OFFSET * np.asarray(length)
    cx = xi_vc[..., 0] + off * np.cos(xi_vc[..., 2])
    cy = xi_vc[..., 1] + off * np.sin(xi_vc[..., 2])
    c, s = np.cos(mount.yaw), np.sin(mount.yaw)
    dx, dy = cx - mount.x, cy - mount.y
    return detection_probability_sc(c * dx + s * dy, -s * dx + c * dy, mount, **kwargs)


def detection_probability(x: VehicleState, mounts: Sequence[SensorMount], **kwargs) -> np.ndarray:
    """Per-sensor p_D for a state in VC."""
    xi = x.as_array()[:5]
    return np.array([float(detection_probability_arrays(xi, x.extent.b, m, **kwargs)) for m in mounts])


# ---------------------------------------------------------------------------
# training corpus
# ---------------------------------------------------------------------------


def inside_inflated_box(px, py, xi_sc, a, b, margin: float):
    ox, oy = object_coords(xi_sc, px, py)
    return (ox >= -REAR_OVERHANG * b - margin) & (ox <= FRONT_OVERHANG * b + margin) & (np.abs(oy) <= 0.5 * a + margin)


def build_training_set(
    scans: Iterable[Scan],
    truths: TruthIndex | Sequence[TruthFrame],
    mounts: Sequence[SensorMount],
    gate_margin: float = 0.5,
    return_index: bool = False,
):
    """Gate detections by the inflated truth boxes and reduce them to training points.

    Returns an (M, 4) array [zx, zy, zd, aspect]; with ``return_index`` also an
    (M, 3) int array of (scan index, detection index, target id).
    """
    index = truths if isinstance(truths, TruthIndex) else TruthIndex(list(truths))
    rows, idx = [], []
    for si, scan in enumerate(scans):
        if len(scan.detections) == 0:
            continue
        frame = index.at(scan.t)
        if frame is None or not frame.targets:
            continue
        mount = mounts[scan.sensor]
        ego = scan.ego or frame.ego
        d, alpha, vd = scan.detections.T
        vd = compensate_doppler_arrays(alpha, vd, mount, EgoMotion(v=ego.v, omega=ego.omega))
        px, py = d * np.cos(alpha), d * np.sin(alpha)
        taken = np.zeros(len(d), dtype=bool)
        for tid, state in frame.targets_in_ego():
            xi_sc = transform_poses(state.as_array()[:5], mount.x, mount.y, mount.yaw)
            a, b = state.extent.a, state.extent.b
            hit = inside_inflated_box(px, py, xi_sc, a, b, gate_margin) & ~taken
            if not np.any(hit):
                continue
            taken |= hit
            zx, zy, zd = reduce_arrays(d[hit], alpha[hit], vd[hit], xi_sc, a, b)
            asp = np.full(zx.shape, float(aspect_angles(xi_sc)))
            rows.append(np.column_stack([zx, zy, zd, asp]))
            idx.append(np.column_stack([np.full(hit.sum(), si), np.flatnonzero(hit), np.full(hit.sum(), tid)]))
    pts = np.concatenate(rows) if rows else np.empty((0, 4))
    if return_index:
        return pts, (np.concatenate(idx).astype(int) if idx else np.empty((0, 3), dtype=int))
    return pts


def balance_by_aspect(points: np.ndarray, bin_width: float = np.deg2rad(5.0), seed: int = 0) -> np.ndarray:
    """Subsample every aspect bin down to the smallest non-empty bin count."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 4)
    if len(points) == 0:
        return points
    n_bins = int(np.ceil(TWO_PI / bin_width))
    bins = np.minimum(((points[:, 3] + np.pi) // bin_width).astype(int), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    target = counts[counts > 0].min()
    rng = np.random.default_rng(seed)
    keep = []
    for k in np.flatnonzero(counts):
        members = np.flatnonzero(bins == k)
        keep.append(np.sort(rng.choice(members, size=target, replace=False)))
    return points[np.concatenate(keep)]


def write_corpus(path, points: np.ndarray) -> None:
    with open(path, "w") as fh:
        for zx, zy, zd, asp in points:
            fh.write(json.dumps({"zx": float(zx), "zy": float(zy), "zd": float(zd), "aspect": float(asp)}) + "\n")


def read_corpus(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                rows.append([doc["zx"], doc["zy"], doc["zd"], doc["aspect"]])
    return np.array(rows, dtype=float).reshape(-1, 4)
