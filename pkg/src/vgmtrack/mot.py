"""Labeled multi-Bernoulli filtering with an extended-object GLMB update."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .association import Cluster, Partition, dbscan, generate_partitions, murty
from .geometry import (
    CENTER_OFFSET,
    EgoMotion,
    SensorMount,
    VehicleState,
    in_union_fov,
    rectangle_corners,
    retarget_arrays,
    transform_poses,
    wrap_angle,
)
from .particles import ExtentConstraints, NoiseBounds, ParticleSet, logsumexp1, predict_particles, reduce_variants
from .radar_model import DEFAULT_PD, ClutterModel, RadarModel, detection_probability_arrays, detection_probability_sc, log_ratio_terms

Label = tuple[int, int]

DEFAULT_BIRTH_R = 0.1
DEFAULT_PRUNE = 0.01
DEFAULT_HYPOTHESIS_CAP = 100
DEFAULT_K_BEST = 10


class EmptyPartitionSetError(ValueError):
    pass


class InfeasibleHypothesesError(ValueError):
    """Feasibility conditioning removed every hypothesis."""


@dataclass
class Track:
    label: Label
    r: float
    particles: ParticleSet

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("existence probability must lie in [0, 1]")

    def mean(self) -> np.ndarray:
        return self.particles.mean()


@dataclass
class LmbDensity:
    tracks: list[Track] = field(default_factory=list)

    def __post_init__(self):
        labels = [t.label for t in self.tracks]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate track labels")

    def __len__(self) -> int:
        return len(self.tracks)

    @property
    def expected_cardinality(self) -> float:
        return float(sum(t.r for t in self.tracks))

    def by_label(self) -> dict[Label, Track]:
        return {t.label: t for t in self.tracks}


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


class FovSurvival:
    """p_S = exp(-dt / mean_life), with a long mean life inside the joint sensor FOV."""

    def __init__(self, mounts: Sequence[SensorMount], inside: float = 10.0, outside: float = 0.1):
        if not (inside > 0 and outside > 0):
            raise ValueError("mean lifetimes must be positive")
        self.mounts = list(mounts)
        self.inside = inside
        self.outside = outside

    def in_view(self, xi: np.ndarray, length: np.ndarray) -> np.ndarray:
        off = CENTER_OFFSET * length
        cx = xi[:, 0] + off * np.cos(xi[:, 2])
        cy = xi[:, 1] + off * np.sin(xi[:, 2])
        return in_union_fov(cx, cy, self.mounts)

    def __call__(self, xi: np.ndarray, extent: np.ndarray, dt: float) -> np.ndarray:
        inside = self.in_view(xi, extent[:, 1])
        return np.where(inside, np.exp(-dt / self.inside), np.exp(-dt / self.outside))


def constant_survival(p: float) -> Callable:
    def fn(xi, extent, dt):
        return np.full(len(xi), p)

    return fn


def predict(
    lmb: LmbDensity,
    dt: float,
    ego: EgoMotion,
    births: Sequence[Track],
    survival: Callable,
    noise: NoiseBounds,
    rng: np.random.Generator,
    delta: float = 0.1,
    constraints: ExtentConstraints = ExtentConstraints(),
) -> LmbDensity:
    """Append births, move every track into the current ego frame, apply survival and CTRV."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = []
    for tr in list(lmb.tracks) + list(births):
        ps = tr.particles
        xi = retarget_arrays(ps.xi, ego)
        ps_s = survival(xi, ps.extent, dt)
        eta = float(ps.w @ ps_s)
        if eta > 0:
            w = ps.w * ps_s / eta
        else:
            w = ps.w.copy()
        moved = ParticleSet(xi, ps.extent, w)
        pred = predict_particles(moved, dt, noise, rng, delta, constraints)
        out.append(Track(tr.label, float(np.clip(eta * tr.r, 0.0, 1.0)), pred))
    return LmbDensity(out)


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------


def _axes(corners: np.ndarray) -> np.ndarray:
    edges = np.roll(corners, -1, axis=0) - corners
    return np.column_stack([-edges[:2, 1], edges[:2, 0]])


def rectangles_overlap(c1: np.ndarray, c2: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given by corners (4, 2).

    Touching boundaries count as overlap.
    """
    for ax in np.vstack([_axes(c1), _axes(c2)]):
        p1, p2 = c1 @ ax, c2 @ ax
        if p1.max() < p2.min() or p2.max() < p1.min():
            return False
    return True


def mean_rectangle(track: Track, inflate: float = 0.0) -> np.ndarray:
    x, y, phi, _, _, a, b = track.mean()
    if inflate:
        # grow the box by ``inflate`` on every side while keeping its center
        cx = x + CENTER_OFFSET * b * np.cos(phi)
        cy = y + CENTER_OFFSET * b * np.sin(phi)
        a, b = a + 2 * inflate, b + 2 * inflate
        x = cx - CENTER_OFFSET * b * np.cos(phi)
        y = cy - CENTER_OFFSET * b * np.sin(phi)
    return rectangle_corners(x, y, phi, a, b)


def point_in_convex(p: np.ndarray, corners: np.ndarray) -> bool:
    """Whether ``p`` lies inside (or on) the convex polygon ``corners`` in either winding."""
    e = np.roll(corners, -1, axis=0) - corners
    d = p[None, :] - corners
    cross = e[:, 0] * d[:, 1] - e[:, 1] * d[:, 0]
    return bool(np.all(cross >= 0) or np.all(cross <= 0))


def feasible_set(labels: Sequence[Label], rects: dict[Label, np.ndarray]) -> bool:
    for l1, l2 in itertools.combinations(labels, 2):
        if rectangles_overlap(rects[l1], rects[l2]):
            return False
    return True


def feasibility_condition(hyps: Sequence[tuple[tuple[Label, ...], float]], rects: dict[Label, np.ndarray]):
    """Zero the weight of label sets with overlapping mean rectangles and renormalize.

    ``hyps`` holds (label set, weight) pairs.
    """
    kept = [(I, w if feasible_set(I, rects) else 0.0) for I, w in hyps]
    total = sum(w for _, w in kept)
    if not total > 0:
        raise InfeasibleHypothesesError("every hypothesis is infeasible")
    return [(I, w / total) for I, w in kept]


def lmb_label_sets(tracks: Sequence[Track], rects: dict[Label, np.ndarray] | None = None, cap: int | None = None):
    """Label-set hypotheses (label set, log weight) of an LMB group, feasibility-conditioned.

    Log weights are normalized; with ``cap`` only the heaviest sets survive.
    """
    if len(tracks) == 1:
        t = tracks[0]
        sets = [((t.label,), math.log(t.r)), ((), math.log1p(-t.r))] if 0.0 < t.r < 1.0 else None
        if sets is not None:
            return sets if t.r >= 0.5 else sets[::-1]
    out = []
    labels = [t.label for t in tracks]
    r = np.array([t.r for t in tracks])
    with np.errstate(divide="ignore"):
        lr, lq = np.log(r), np.log1p(-r)
    for mask in itertools.product((False, True), repeat=len(tracks)):
        mask = np.array(mask, dtype=bool)
        lw = float(lr[mask].sum() + lq[~mask].sum())
        if not np.isfinite(lw):
            continue
        I = tuple(l for l, m in zip(labels, mask) if m)
        if rects is not None and not feasible_set(I, rects):
            continue
        out.append((I, lw))
    if not out:
        raise InfeasibleHypothesesError("every hypothesis is infeasible")
    out.sort(key=lambda h: -h[1])
    if cap is not None:
        out = out[:cap]
    norm = logsumexp1(np.array([lw for _, lw in out]))
    return [(I, lw - norm) for I, lw in out]


# ---------------------------------------------------------------------------
# single-track cluster scoring
# ---------------------------------------------------------------------------


@dataclass
class ClusterPosterior:
    log_eta: float
    per_particle: np.ndarray  # (N,) log of unnormalized particle mass
    extent: np.ndarray  # (N, 2) posterior mean extent per particle


class ClusterScorer:
    """log eta(l | W) and the particle posterior for clusters W of one sensor scan.

    The per-detection log ratio terms are computed once for all detections
    the track may be associated with and reused for every cluster.
    ``dets`` are polar detections with compensated Doppler in the sensor frame.
    """

    def __init__(
        self,
        track: Track,
        dets: np.ndarray,
        model: RadarModel,
        clutter: ClutterModel,
        mount: SensorMount,
        p_d: float | None = None,
        p_max: float = DEFAULT_PD,
    ):
        self.track = track
        self.model = model
        ps = track.particles
        self.var_ab, self.var_logw = ps.variants()
        self.log_w = np.log(ps.w)
        if p_d is None:
            pd = detection_probability_arrays(ps.xi, ps.extent[:, 1], mount, p_max=p_max)
        else:
            pd = np.full(len(ps), p_d)
        with np.errstate(divide="ignore"):
            self.log_pd = np.log(pd)
            self.log_miss = np.log((1.0 - pd) + pd * np.exp(-model.lambda_t))
        self.dets = np.asarray(dets, dtype=float).reshape(-1, 3)
        self._terms = None
        self._mount = mount
        self._clutter = clutter
        self._cache: dict[Cluster, ClusterPosterior] = {}

    @property
    def terms(self) -> np.ndarray:
        if self._terms is None:
            xi_sc = transform_poses(self.track.particles.xi, self._mount.x, self._mount.y, self._mount.yaw)
            self._terms = log_ratio_terms(self.model, self._clutter, xi_sc, self.var_ab, self.dets)
        return self._terms

    def log_eta(self, cluster: Cluster) -> float:
        return self.posterior(cluster).log_eta

    def posterior(self, cluster: Cluster) -> ClusterPosterior:
        hit = self._cache.get(cluster)
        if hit is not None:
            return hit
        with np.errstate(divide="ignore", invalid="ignore"):
            if len(cluster) == 0:
                joint = self.var_logw + self.log_miss[:, None]
            else:
                cols = list(cluster)
                ll = self.terms[:, :, cols[0]] if len(cols) == 1 else self.terms[:, :, cols].sum(axis=-1)
                joint = self.var_logw + (ll + (self.log_pd - self.model.lambda_t)[:, None])
            per_var, extent = reduce_variants(np.ascontiguousarray(joint), self.var_ab, self.track.particles.extent)
            per_particle = self.log_w + per_var
        res = ClusterPosterior(float(logsumexp1(per_particle)), per_particle, extent)
        self._cache[cluster] = res
        return res


# ---------------------------------------------------------------------------
# GLMB update
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlmbHypothesis:
    labels: tuple[Label, ...]
    weight: float
    assoc: tuple[tuple[Label, Cluster], ...]  # detected labels with their cluster; others missed
    partition: int = -1  # first partition that produced this event

    def cluster_of(self, label: Label) -> Cluster:
        for l, c in self.assoc:
            if l == label:
                return c
        return ()


@dataclass
class Glmb:
    hypotheses: list[GlmbHypothesis]
    densities: dict[tuple[Label, Cluster], ParticleSet]  # per-label posterior for each cluster
    labels: list[Label]

    def total_weight(self) -> float:
        return float(sum(h.weight for h in self.hypotheses))

    def density(self, h: GlmbHypothesis, label: Label) -> ParticleSet:
        return self.densities[(label, h.cluster_of(label))]


def glmb_update(
    prior: Sequence[tuple[tuple[Label, ...], float]],
    scorers: dict[Label, ClusterScorer],
    partitions: Sequence[Partition],
    k_best: int = DEFAULT_K_BEST,
    cap: int | None = DEFAULT_HYPOTHESIS_CAP,
) -> Glmb:
    """Posterior GLMB of one track group for a single sensor scan.

    ``prior`` holds (label set, log weight) pairs.  Each label set is combined
    with every partition and its ``k_best`` cheapest association maps; events
    (label set plus label-to-cluster assignment) that arise from more than one
    partition are counted once, detections left unassigned being clutter.
    Weights are w(I) times the product of eta factors, jointly normalized.
    """
    if len(partitions) == 0:
        raise EmptyPartitionSetError("no partitions to evaluate")
    if k_best < 1:
        raise ValueError("k_best must be positive")
    events: dict[tuple, tuple[float, tuple, int]] = {}
    for I, log_w in prior:
        if not np.isfinite(log_w):
            continue
        miss = np.array([-scorers[l].log_eta(()) for l in I])
        for pi, part in enumerate(partitions):
            if len(I) == 0:
                ranked_maps = [((), 0.0)]
            else:
                cost = np.array([[-scorers[l].log_eta(c) for c in part] for l in I]).reshape(len(I), len(part))
                ranked = murty(cost, miss, k_best)
                ranked_maps = [(r.theta, r.cost) for r in ranked]
            for theta, c in ranked_maps:
                assoc = tuple((l, part[j]) for l, j in zip(I, theta) if j >= 0)
                key = (I, frozenset(assoc))
                if key not in events:
                    events[key] = (log_w - c, assoc, pi)
    if not events:
        raise InfeasibleHypothesesError("no hypothesis with finite weight")
    items = sorted(events.items(), key=lambda kv: -kv[1][0])
    if cap is not None:
        items = items[:cap]
    lw = np.array([v[0] for _, v in items])
    w = np.exp(lw - logsumexp1(lw))
    w /= w.sum()
    hyps = [GlmbHypothesis(I, float(wi), assoc, pi) for ((I, _), (_, assoc, pi)), wi in zip(items, w)]
    densities: dict[tuple[Label, Cluster], ParticleSet] = {}
    for h in hyps:
        for l in h.labels:
            c = h.cluster_of(l)
            if (l, c) not in densities:
                densities[(l, c)] = _posterior_set(scorers[l], c)
    return Glmb(hyps, densities, list(scorers))


def _posterior_set(scorer: ClusterScorer, cluster: Cluster) -> ParticleSet:
    post = scorer.posterior(cluster)
    ps = scorer.track.particles
    w = np.exp(post.per_particle - post.log_eta)
    w /= w.sum()
    return ParticleSet(ps.xi, post.extent, w)


def lmb_approximate(glmb: Glmb, tracks: dict[Label, Track] | None = None) -> LmbDensity:
    """Collapse a GLMB into independent tracks: r = sum of weights containing the label,
    density = weight-mixed per-hypothesis posteriors.

    When every component density shares the same particle states the mixture
    is formed per particle (extents averaged with the mixing weights);
    otherwise the particle sets are concatenated.
    """
    out = []
    for label in glmb.labels:
        parts = [(h.weight, glmb.density(h, label)) for h in glmb.hypotheses if label in h.labels]
        r = float(sum(w for w, _ in parts))
        if r <= 0 or not parts:
            if tracks and label in tracks:
                out.append(Track(label, 0.0, tracks[label].particles))
            continue
        out.append(Track(label, min(r, 1.0), mix_particle_sets(parts)))
    return LmbDensity(out)


def mix_particle_sets(parts: Sequence[tuple[float, ParticleSet]]) -> ParticleSet:
    total = sum(w for w, _ in parts)
    first = parts[0][1]
    shared = all(p.xi is first.xi or (p.xi.shape == first.xi.shape and np.array_equal(p.xi, first.xi)) for _, p in parts)
    if shared:
        mass = np.zeros(len(first))
        ext = np.zeros_like(first.extent)
        for w, p in parts:
            m = (w / total) * p.w
            mass += m
            ext += m[:, None] * p.extent
        ok = mass > 0
        ext[ok] /= mass[ok, None]
        ext[~ok] = first.extent[~ok]
        return ParticleSet(first.xi, ext, mass / mass.sum())
    xi = np.vstack([p.xi for _, p in parts])
    ext = np.vstack([p.extent for _, p in parts])
    w = np.concatenate([(wt / total) * p.w for wt, p in parts])
    return ParticleSet(xi, ext, w / w.sum())


def detection_association(glmb: Glmb, n_dets: int) -> np.ndarray:
    """Posterior probability that each detection index belongs to some track."""
    prob = np.zeros(n_dets)
    for h in glmb.hypotheses:
        for _, c in h.assoc:
            prob[list(c)] += h.weight
    return prob


# ---------------------------------------------------------------------------
# births, pruning, estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BirthModel:
    r_b: float = DEFAULT_BIRTH_R
    particles: int = 900
    candidates: int = 4000
    screen: int = 500  # candidates scored before deciding whether to score the rest
    min_detections: int = 2
    doppler_threshold: float = 1.0  # m/s, compensated
    free_threshold: float = 0.2  # association probability below which a detection is free
    cluster_eps: float = 2.0
    observable_spread: float = 1.5  # m; longer clusters admit the full length range
    length_range: tuple[float, float] = (2.5, 7.0)
    default_length: tuple[float, float] = (4.0, 5.0)
    speed_noise: float = 1.0
    yaw_rate_max: float = 0.3
    position_spread: float = 1.5
    occupied_r: float = 0.5  # tracks at least this likely block births inside their gate
    occupied_inflate: float = 1.0
    # log Bayes factor (new vehicle vs clutter) a cluster must exceed; None disables
    min_log_ratio: float | None = 0.0
    # finer DBSCAN radii tried when a cluster may hold several vehicles; () disables splitting
    split_eps: tuple[float, ...] = (0.5, 1.0)

    def __post_init__(self):
        if not 0.0 < self.r_b < 1.0:
            raise ValueError("r_b must lie in (0, 1)")


def free_detections(dets: np.ndarray, assoc_prob: np.ndarray, birth: BirthModel) -> np.ndarray:
    """Indices of detections that may seed a birth."""
    dets = np.asarray(dets, dtype=float).reshape(-1, 3)
    return np.flatnonzero((assoc_prob < birth.free_threshold) & (np.abs(dets[:, 2]) > birth.doppler_threshold))


def birth_cloud(
    dets: np.ndarray,
    mount: SensorMount,
    model: RadarModel,
    clutter: ClutterModel,
    birth: BirthModel,
    rng: np.random.Generator,
    constraints: ExtentConstraints = ExtentConstraints(),
    p_max: float = DEFAULT_PD,
) -> tuple[ParticleSet | None, float]:
    """Particle cloud for a new vehicle explaining the cluster ``dets`` (SC, compensated Doppler).

    Candidates are drawn around the cluster with Doppler-consistent speed and
    then importance-resampled with the full vehicle-vs-clutter likelihood ratio
    of the cluster, detection probability and expected detection count
    included.  Also returns the log of the mean ratio over candidates, the
    Bayes factor of "new vehicle" against "clutter" under the proposal.  The
    cloud is None when the cluster fails ``birth.min_log_ratio`` on the first
    ``birth.screen`` candidates or no candidate is detectable.
    """
    dets = np.asarray(dets, dtype=float).reshape(-1, 3)
    n = birth.candidates
    px = dets[:, 0] * np.cos(dets[:, 1])
    py = dets[:, 0] * np.sin(dets[:, 1])
    spread = float(np.max(np.hypot(px[:, None] - px[None, :], py[:, None] - py[None, :])))
    lo, hi = birth.length_range if spread >= birth.observable_spread else birth.default_length

    def draw(k):
        a = rng.uniform(constraints.a_min, constraints.a_max, k)
        b = rng.uniform(lo, hi, k)
        a, b = constraints.project(a, b)
        phi = rng.uniform(-np.pi, np.pi, k)
        # least-squares speed along each sampled heading from v_D = v cos(phi - alpha)
        proj = np.cos(phi[:, None] - dets[None, :, 1])
        denom = np.maximum((proj**2).sum(axis=1), 1e-3)
        v = (proj * dets[None, :, 2]).sum(axis=1) / denom
        v = np.clip(v, -40.0, 40.0) + rng.uniform(-birth.speed_noise, birth.speed_noise, k)
        # forward driving only: a negative speed becomes the opposite heading
        phi = np.where(v < 0, wrap_angle(phi + np.pi), phi)
        v = np.abs(v)
        cx = px.mean() + rng.uniform(-birth.position_spread, birth.position_spread, k)
        cy = py.mean() + rng.uniform(-birth.position_spread, birth.position_spread, k)
        x = cx - CENTER_OFFSET * b * np.cos(phi)
        y = cy - CENTER_OFFSET * b * np.sin(phi)
        om = rng.uniform(-birth.yaw_rate_max, birth.yaw_rate_max, k)
        xi = np.column_stack([x, y, phi, v, om])
        ab = np.column_stack([a, b])
        terms = log_ratio_terms(model, clutter, xi, ab[:, None, :], dets)
        with np.errstate(divide="ignore"):
            log_pd = np.log(detection_probability_sc(cx, cy, mount, p_max=p_max))
        return xi, ab, terms[:, 0, :].sum(axis=-1) + log_pd - model.lambda_t

    # a cheap look at the first candidates rejects most clutter clusters
    m = min(birth.screen, n)
    xi_sc, ab, ll = draw(m)
    if birth.min_log_ratio is not None and m < n:
        log_ratio = logsumexp1(ll) - np.log(m)
        if log_ratio <= birth.min_log_ratio:
            return None, float(log_ratio)
    if m < n:
        xi2, ab2, ll2 = draw(n - m)
        xi_sc, ab, ll = np.concatenate([xi_sc, xi2]), np.concatenate([ab, ab2]), np.concatenate([ll, ll2])
    total = logsumexp1(ll)
    if total == -np.inf:
        return None, -np.inf
    w = np.exp(ll - total)
    w /= w.sum()
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, (rng.random() + np.arange(birth.particles)) / birth.particles, side="right")
    idx = np.minimum(idx, n - 1)
    xi_vc = transform_poses(xi_sc[idx], *_inverse_mount(mount))
    return ParticleSet.uniform(xi_vc, ab[idx]), float(total - np.log(n))


def birth_proposals(
    dets: np.ndarray,
    points: np.ndarray,
    assoc_prob: np.ndarray,
    tracks: Sequence[Track],
    mount: SensorMount,
    model: RadarModel,
    clutter: ClutterModel,
    birth: BirthModel,
    rng: np.random.Generator,
    step: int,
    constraints: ExtentConstraints = ExtentConstraints(),
    p_max: float = DEFAULT_PD,
) -> list[Track]:
    """New tracks from clusters of free detections.

    dets: (M, 3) SC polar detections with compensated Doppler; points: (M, 2)
    their VC positions; assoc_prob: (M,) posterior association probability
    summed over tracks.  Labels are (step, ordinal).
    """
    free = free_detections(dets, assoc_prob, birth)
    if len(free) < birth.min_detections:
        return []
    clusters, _ = dbscan(points[free], birth.cluster_eps, 1)
    # a newborn inside a likely track's gate would be infeasible next to it
    occupied = [mean_rectangle(t, birth.occupied_inflate) for t in tracks if t.r >= birth.occupied_r]
    out = []
    for c in clusters:
        if len(c) < birth.min_detections:
            continue
        idx = free[c]
        if len(idx) >= 2 * birth.min_detections and birth.split_eps:
            parts = generate_partitions(points[idx], dets[idx, 1], dets[idx, 2], eps_grid=birth.split_eps)
        else:
            parts = []
        whole = (tuple(range(len(idx))),)
        if whole not in parts:
            parts = [whole] + parts
        clouds = _best_birth_split(dets[idx], points[idx], parts, occupied, mount, model, clutter, birth, rng, constraints, p_max)
        for ps in clouds:
            out.append(Track((step, len(out)), birth.r_b, ps))
    return out


def _best_birth_split(dets, points, parts, occupied, mount, model, clutter, birth, rng, constraints, p_max):
    """Birth clouds of the partition of one free cluster with the largest evidence.

    Each newborn adds its log Bayes factor against clutter plus the prior log
    odds of a birth; sub-clusters that fail the birth gate stay clutter.  A
    split whose newborns overlap is infeasible and skipped.
    """
    log_odds = math.log(birth.r_b) - math.log1p(-birth.r_b)
    scored: dict[Cluster, tuple[ParticleSet | None, float]] = {}

    def score(sub: Cluster):
        if sub not in scored:
            centroid = points[list(sub)].mean(axis=0)
            if len(sub) < birth.min_detections or any(point_in_convex(centroid, r) for r in occupied):
                scored[sub] = (None, -np.inf)
            else:
                ps, lr = birth_cloud(dets[list(sub)], mount, model, clutter, birth, rng, constraints, p_max)
                ok = ps is not None and (birth.min_log_ratio is None or lr > birth.min_log_ratio)
                scored[sub] = (ps, lr) if ok else (None, -np.inf)
        return scored[sub]

    best, best_score = [], 0.0
    for part in parts:
        clouds, total = [], 0.0
        for sub in part:
            ps, lr = score(sub)
            if ps is not None:
                clouds.append(ps)
                total += lr + log_odds
        if len(clouds) > 1:
            rects = [mean_rectangle(Track((0, 0), 1.0, ps)) for ps in clouds]
            if any(rectangles_overlap(a, b) for a, b in itertools.combinations(rects, 2)):
                continue
        if clouds and (not best or total > best_score):
            best, best_score = clouds, total
    return best


def _inverse_mount(mount: SensorMount) -> tuple[float, float, float]:
    """Frame parameters that map SC poses back into VC via transform_poses."""
    c, s = np.cos(mount.yaw), np.sin(mount.yaw)
    return (-(c * mount.x + s * mount.y), -(-s * mount.x + c * mount.y), -mount.yaw)


def prune_tracks(lmb: LmbDensity, threshold: float = DEFAULT_PRUNE) -> LmbDensity:
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    return LmbDensity([t for t in lmb.tracks if t.r >= threshold])


def extract_estimates(lmb: LmbDensity) -> list[tuple[Label, VehicleState, float]]:
    """The round(sum r) most likely tracks as (label, mean state, r)."""
    n = int(np.floor(lmb.expected_cardinality + 0.5))
    ranked = sorted(lmb.tracks, key=lambda t: (-t.r, t.label))[:n]
    out = []
    for t in ranked:
        m = t.mean()
        m[2] = wrap_angle(m[2])
        out.append((t.label, VehicleState.from_array(m), t.r))
    return out


def union_groups(n: int, pairs: Iterable[tuple[int, int]]) -> list[list[int]]:
    """Connected components of {0..n-1} under ``pairs``."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())
