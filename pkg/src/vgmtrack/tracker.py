"""Sequential multi-sensor tracking loop around the LMB filter."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .association import DEFAULT_EPS_GRID, DOPPLER_SPLIT_THRESHOLD, generate_partitions
from .geometry import CENTER_OFFSET, FRONT_OVERHANG, REAR_OVERHANG, EgoMotion, SensorMount, compensate_doppler_arrays
from .mot import (
    DEFAULT_HYPOTHESIS_CAP,
    DEFAULT_K_BEST,
    DEFAULT_PRUNE,
    BirthModel,
    ClusterScorer,
    FovSurvival,
    LmbDensity,
    Track,
    birth_proposals,
    detection_association,
    glmb_update,
    lmb_approximate,
    lmb_label_sets,
    mean_rectangle,
    predict,
    prune_tracks,
    rectangles_overlap,
    union_groups,
)
from .particles import ExtentConstraints, NoiseBounds, ParticleBudget, resample
from .radar_model import DEFAULT_LAMBDA_C, DEFAULT_PD, ClutterModel, RadarModel
from .records import EgoState, Scan


@dataclass(frozen=True)
class TrackerConfig:
    lambda_c: float = DEFAULT_LAMBDA_C
    p_d: float = DEFAULT_PD
    noise: NoiseBounds = NoiseBounds()
    constraints: ExtentConstraints = ExtentConstraints()
    budget: ParticleBudget = ParticleBudget()
    birth: BirthModel = BirthModel()
    extent_step: float = 0.1
    k_best: int = DEFAULT_K_BEST
    hypothesis_cap: int = DEFAULT_HYPOTHESIS_CAP
    prune: float = DEFAULT_PRUNE
    resample_ess: float = 0.5
    gate_inflate: float = 1.0
    gate_samples: int = 32
    eps_grid: tuple[float, ...] = DEFAULT_EPS_GRID
    split_threshold: float = DOPPLER_SPLIT_THRESHOLD
    survival_inside: float = 10.0
    survival_outside: float = 0.1
    seed: int = 0


@dataclass
class ScanContext:
    """Per-scan detection arrays: polar SC with compensated Doppler plus VC positions."""

    dets: np.ndarray
    points: np.ndarray
    mount: SensorMount
    clutter: ClutterModel


def _ego_motion(prev: EgoState | None, cur: EgoState | None) -> EgoMotion:
    if cur is None:
        return EgoMotion()
    if prev is None:
        return EgoMotion(v=cur.v, omega=cur.omega)
    return EgoMotion.from_poses(prev.pose(), cur.pose(), cur.v, cur.omega)


def sensor_to_vehicle(dets: np.ndarray, mount: SensorMount) -> np.ndarray:
    px = dets[:, 0] * np.cos(dets[:, 1])
    py = dets[:, 0] * np.sin(dets[:, 1])
    c, s = np.cos(mount.yaw), np.sin(mount.yaw)
    return np.column_stack([mount.x + c * px - s * py, mount.y + s * px + c * py])


def gate_detections(track: Track, points: np.ndarray, samples: int, inflate: float) -> np.ndarray:
    """Detections inside the inflated box of any of ``samples`` weight-spread particles."""
    ps = track.particles
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    cdf = np.cumsum(ps.w)
    cdf[-1] = 1.0
    k = min(samples, len(ps))
    idx = np.unique(np.minimum(np.searchsorted(cdf, (np.arange(k) + 0.5) / k, side="right"), len(ps) - 1))
    xi = ps.xi[idx]
    a, b = ps.extent[idx, 0], ps.extent[idx, 1]
    c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    dx = points[None, :, 0] - xi[:, None, 0]
    dy = points[None, :, 1] - xi[:, None, 1]
    ox = c[:, None] * dx + s[:, None] * dy
    oy = -s[:, None] * dx + c[:, None] * dy
    inside = (
        (ox >= -REAR_OVERHANG * b[:, None] - inflate)
        & (ox <= FRONT_OVERHANG * b[:, None] + inflate)
        & (np.abs(oy) <= 0.5 * a[:, None] + inflate)
    )
    return inside.any(axis=0)


class Tracker:
    def __init__(self, model: RadarModel, mounts: Sequence[SensorMount], config: TrackerConfig = TrackerConfig()):
        self.model = model
        self.mounts = list(mounts)
        self.config = config
        self.clutter = [ClutterModel.for_mount(m, lambda_c=config.lambda_c) for m in self.mounts]
        self.survival = FovSurvival(self.mounts, config.survival_inside, config.survival_outside)
        self.rng = np.random.default_rng(config.seed)
        self.lmb = LmbDensity()
        self.pending: list[Track] = []
        self.t: float | None = None
        self.ego: EgoState | None = None
        self.step_index = 0

    # -- one scan -----------------------------------------------------------

    def step(self, scan: Scan) -> dict:
        cfg = self.config
        if not 0 <= scan.sensor < len(self.mounts):
            raise ValueError(f"scan references unknown sensor {scan.sensor}")
        dt = 0.0 if self.t is None else scan.t - self.t
        if dt < 0:
            raise ValueError("scans must be processed in timestamp order")
        ego = _ego_motion(self.ego, scan.ego)
        self.lmb = predict(
            self.lmb, dt, ego, self.pending, self.survival, cfg.noise, self.rng, cfg.extent_step, cfg.constraints
        )
        self.pending = []
        self.t, self.ego = scan.t, scan.ego

        ctx = self._context(scan, ego)
        assoc = self._update(ctx)
        self._resample()
        self.lmb = prune_tracks(self.lmb, cfg.prune)
        self.pending = self._births(ctx, assoc)
        self.step_index += 1
        return self.record()

    def _context(self, scan: Scan, ego: EgoMotion) -> ScanContext:
        mount = self.mounts[scan.sensor]
        dets = scan.detections.copy()
        if len(dets):
            dets[:, 2] = compensate_doppler_arrays(dets[:, 1], dets[:, 2], mount, ego)
        return ScanContext(dets, sensor_to_vehicle(dets, mount), mount, self.clutter[scan.sensor])

    def _update(self, ctx: ScanContext) -> np.ndarray:
        cfg = self.config
        tracks = self.lmb.tracks
        n_t, n_m = len(tracks), len(ctx.dets)
        assoc = np.zeros(n_m)
        if n_t == 0:
            return assoc
        gate = np.array([gate_detections(t, ctx.points, cfg.gate_samples, cfg.gate_inflate) for t in tracks]).reshape(n_t, n_m)
        rects = {t.label: mean_rectangle(t) for t in tracks}
        means = np.array([t.mean() for t in tracks])
        centers = means[:, :2] + CENTER_OFFSET * means[:, 6:7] * np.column_stack([np.cos(means[:, 2]), np.sin(means[:, 2])])
        dist = np.hypot(ctx.points[None, :, 0] - centers[:, None, 0], ctx.points[None, :, 1] - centers[:, None, 1])
        pairs = []
        inflated = [mean_rectangle(t, cfg.gate_inflate) for t in tracks]
        for i in range(n_t):
            for j in range(i + 1, n_t):
                if np.any(gate[i] & gate[j]) or rectangles_overlap(inflated[i], inflated[j]):
                    pairs.append((i, j))
        new_tracks: dict = {}
        for group in union_groups(n_t, pairs):
            members = [tracks[i] for i in group]
            sub = np.flatnonzero(gate[group].any(axis=0))
            dets = ctx.dets[sub]
            if len(sub):
                parts = generate_partitions(
                    ctx.points[sub],
                    dets[:, 1],
                    dets[:, 2],
                    eps_grid=cfg.eps_grid,
                    gate=gate[np.ix_(group, sub)],
                    dist=dist[np.ix_(group, sub)],
                    split_threshold=cfg.split_threshold,
                )
            else:
                parts = [()]
            scorers = {t.label: ClusterScorer(t, dets, self.model, ctx.clutter, ctx.mount, p_max=cfg.p_d) for t in members}
            prior = lmb_label_sets(members, rects, cfg.hypothesis_cap)
            glmb = glmb_update(prior, scorers, parts, cfg.k_best, cfg.hypothesis_cap)
            for t in lmb_approximate(glmb, {t.label: t for t in members}).tracks:
                new_tracks[t.label] = t
            if len(sub):
                assoc[sub] += detection_association(glmb, len(sub))
        self.lmb = LmbDensity([new_tracks[t.label] for t in tracks if t.label in new_tracks])
        return assoc

    def _resample(self) -> None:
        cfg = self.config
        for t in self.lmb.tracks:
            ps = t.particles
            if ps.ess() < cfg.resample_ess * len(ps):
                t.particles = resample(ps, cfg.budget.next(len(ps)), self.rng)

    def _births(self, ctx: ScanContext, assoc: np.ndarray) -> list[Track]:
        cfg = self.config
        return birth_proposals(
            ctx.dets, ctx.points, assoc, self.lmb.tracks, ctx.mount, self.model, ctx.clutter,
            cfg.birth, self.rng, self.step_index, cfg.constraints, cfg.p_d,
        )

    # -- output ---------------------------------------------------------------

    def record(self) -> dict:
        tracks = []
        for t in sorted(self.lmb.tracks, key=lambda t: t.label):
            x, y, phi, v, om, a, b = (float(u) for u in t.mean())
            tracks.append(
                {
                    "label": [int(t.label[0]), int(t.label[1])],
                    "r": float(t.r),
                    "state": {"x": x, "y": y, "phi": phi, "v": v, "omega": om, "a": a, "b": b},
                }
            )
        return {"t": round(float(self.t), 9), "tracks": tracks, "expected_cardinality": self.lmb.expected_cardinality}


def run_tracker(scans: Iterable[Scan], model: RadarModel, mounts: Sequence[SensorMount], config: TrackerConfig = TrackerConfig()) -> list[dict]:
    tracker = Tracker(model, mounts, config)
    ordered = sorted(scans, key=lambda s: (s.t, s.sensor))
    return [tracker.step(s) for s in ordered]


def records_to_jsonl(records: Iterable[dict]) -> Iterable[str]:
    for rec in records:
        yield json.dumps(rec)
