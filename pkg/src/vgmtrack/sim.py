"""Synthetic multi-sensor radar scenarios.

Targets follow CTRV trajectories and reflect from a small set of planted
reflection centers (surface centers, corners, wheels) whose visibility depends
on the aspect angle.  Wheel reflections carry a wide Doppler error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    CENTER_OFFSET,
    REAR_OVERHANG,
    FRONT_OVERHANG,
    EgoMotion,
    SensorMount,
    VehicleState,
    aspect_angles,
    doppler_profile,
    sensor_velocity,
    transform_poses,
    wrap_angle,
)
from .particles import ctrv_arrays
from .radar_model import DEFAULT_LAMBDA_C, DEFAULT_LAMBDA_T, ClutterModel, detection_probability_arrays
from .records import EgoState, Scan, TruthFrame

SCAN_RATE = 20.0
TICK = 0.0125  # common time grid: every scan time is a multiple of this
SUBSTEPS = 10
SENSOR_OFFSETS = (0.0, 0.0125, 0.025, 0.0375)


def default_mounts() -> list[SensorMount]:
    """Four corner radars: front-left, front-right, rear-left, rear-right."""
    deg = np.deg2rad
    return [
        SensorMount(3.7, 0.9, deg(45.0)),
        SensorMount(3.7, -0.9, deg(-45.0)),
        SensorMount(-1.1, 0.9, deg(135.0)),
        SensorMount(-1.1, -0.9, deg(-135.0)),
    ]


# ---------------------------------------------------------------------------
# reflection template
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectionPoint:
    zx: float
    zy: float
    normal: float  # outward normal direction in OC
    wheel: bool = False
    weight: float = 1.0


@dataclass(frozen=True)
class ReflectionTemplate:
    points: tuple[ReflectionPoint, ...]
    position_sigma: float = 0.1  # normalized units
    body_doppler_sigma: float = 0.15
    wheel_doppler_sigma: float = 2.0
    wheels_enabled: bool = True

    @classmethod
    def default(cls, **kwargs) -> "ReflectionTemplate":
        rear, front = -REAR_OVERHANG, FRONT_OVERHANG
        q = np.pi / 4
        pts = [
            ReflectionPoint(rear, 0.0, np.pi),
            ReflectionPoint(front, 0.0, 0.0),
            ReflectionPoint(front, 0.5, q),
            ReflectionPoint(front, -0.5, -q),
            ReflectionPoint(rear, 0.5, 3 * q),
            ReflectionPoint(rear, -0.5, -3 * q),
            ReflectionPoint(CENTER_OFFSET, 0.5, 2 * q),
            ReflectionPoint(CENTER_OFFSET, -0.5, -2 * q),
        ]
        for zx in (0.0, WHEELBASE):
            pts.append(ReflectionPoint(zx, 0.5, 2 * q, wheel=True))
            pts.append(ReflectionPoint(zx, -0.5, -2 * q, wheel=True))
        return cls(tuple(pts), **kwargs)

    def arrays(self):
        zx = np.array([p.zx for p in self.points])
        zy = np.array([p.zy for p in self.points])
        nrm = np.array([p.normal for p in self.points])
        wheel = np.array([p.wheel for p in self.points])
        base = np.array([p.weight for p in self.points])
        if not self.wheels_enabled:
            base = np.where(wheel, 0.0, base)
        return zx, zy, nrm, wheel, base

    def visibility(self, aspect: float) -> np.ndarray:
        """Unnormalized sampling weights of every point at the given aspect."""
        _, _, nrm, _, base = self.arrays()
        to_sensor = np.pi - aspect  # direction from the vehicle to the sensor in OC
        return base * np.maximum(0.0, np.cos(nrm - to_sensor))


# rear axle sits at the OC origin; the front axle 60 % of the length ahead
WHEELBASE = 0.6


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

Controls = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def segment_controls(segments: Sequence[dict]) -> tuple[Controls, float]:
    """Piecewise-constant (v, omega) controls from [{"duration", "v", "omega"}, ...]."""
    ends = np.cumsum([float(s["duration"]) for s in segments])
    vs = np.array([float(s["v"]) for s in segments])
    oms = np.array([float(s.get("omega", 0.0)) for s in segments])
    if np.any(np.asarray([s["duration"] for s in segments], dtype=float) < 0):
        raise ValueError("segment durations must be nonnegative")

    def controls(t):
        i = np.minimum(np.searchsorted(ends, t, side="right"), len(ends) - 1)
        return vs[i], oms[i]

    return controls, float(ends[-1]) if len(ends) else 0.0


def ctrv_trajectory(init: Sequence[float], controls: Controls, duration: float, dt: float = TICK / SUBSTEPS) -> tuple[np.ndarray, np.ndarray]:
    """Integrate CTRV with controls held constant over each step (midpoint sample).

    Returns times (K,) and states (K, 5); K = 1 for zero duration.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    n = int(round(duration / dt))
    times = np.arange(n + 1) * dt
    states = np.empty((n + 1, 5))
    s = np.array(init, dtype=float)
    v0, om0 = controls(np.array([0.0]))
    s[3], s[4] = float(v0[0]), float(om0[0])
    states[0] = s
    if n:
        mids = (np.arange(n) + 0.5) * dt
        vs, oms = controls(mids)
        for i in range(n):
            s[3], s[4] = vs[i], oms[i]
            s = ctrv_arrays(s, dt)
            states[i + 1] = s
    return times, states


@dataclass
class TargetSpec:
    id: int
    a: float
    b: float
    start: float
    init: tuple[float, float, float]  # x, y, phi in the world frame
    controls: Controls
    duration: float


@dataclass
class Scenario:
    name: str
    duration: float
    targets: list[TargetSpec] = field(default_factory=list)
    ego_init: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ego_controls: Controls | None = None
    mounts: list[SensorMount] = field(default_factory=default_mounts)
    rate: float = SCAN_RATE
    sensor_offsets: tuple[float, ...] = SENSOR_OFFSETS

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if len(self.sensor_offsets) < len(self.mounts):
            raise ValueError("every sensor needs a scan time offset")


class Trajectories:
    """Ground truth sampled on the common tick grid."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        n_ticks = int(round(scenario.duration / TICK))
        self.ticks = np.arange(n_ticks + 1) * TICK
        stride = SUBSTEPS
        ctrl = scenario.ego_controls or (lambda t: (np.zeros_like(t), np.zeros_like(t)))
        _, ego = ctrv_trajectory((*scenario.ego_init, 0.0, 0.0), ctrl, scenario.duration)
        self.ego = ego[::stride][: len(self.ticks)]
        self.targets: list[tuple[TargetSpec, int, np.ndarray]] = []
        for spec in scenario.targets:
            first = int(round(spec.start / TICK))
            life = min(spec.duration, scenario.duration - spec.start)
            if life < 0:
                continue
            _, st = ctrv_trajectory((*spec.init, 0.0, 0.0), spec.controls, life)
            self.targets.append((spec, first, st[::stride]))

    def tick_of(self, t: float) -> int:
        return int(round(t / TICK))

    def ego_state(self, k: int) -> EgoState:
        x, y, yaw, v, om = self.ego[k]
        return EgoState(float(x), float(y), float(yaw), float(v), float(om))

    def targets_at(self, k: int) -> list[tuple[int, VehicleState]]:
        out = []
        for spec, first, st in self.targets:
            i = k - first
            if 0 <= i < len(st):
                x, y, phi, v, om = st[i]
                out.append((spec.id, VehicleState.from_array([x, y, phi, v, om, spec.a, spec.b])))
        return out

    def frame(self, k: int) -> TruthFrame:
        return TruthFrame(float(self.ticks[k]), self.targets_at(k), self.ego_state(k))


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensorNoise:
    range_sigma: float = 0.1
    azimuth_sigma: float = np.deg2rad(0.5)


def _world_to_vc(states: np.ndarray, ego: EgoState) -> np.ndarray:
    return transform_poses(states, ego.x, ego.y, ego.yaw)


def _clutter(rng, mount: SensorMount, clutter: ClutterModel, vs: np.ndarray):
    n = rng.poisson(clutter.lambda_c)
    r = mount.max_range * np.sqrt(rng.random(n))
    alpha = (rng.random(n) - 0.5) * mount.opening_angle
    gauss = rng.random(n) < clutter.gauss_weight
    vd = np.where(
        gauss,
        rng.normal(0.0, clutter.gauss_sigma, n),
        rng.uniform(clutter.doppler_min, clutter.doppler_max, n),
    )
    raw = vd - (np.cos(alpha) * vs[0] + np.sin(alpha) * vs[1])
    return np.column_stack([r, alpha, raw])


def simulate_scan(
    traj: Trajectories,
    t: float,
    sensor: int,
    template: ReflectionTemplate,
    clutter: ClutterModel,
    rng: np.random.Generator,
    lambda_t: float = DEFAULT_LAMBDA_T,
    noise: SensorNoise = SensorNoise(),
    pd_kwargs: dict | None = None,
) -> Scan:
    k = traj.tick_of(t)
    mount = traj.scenario.mounts[sensor]
    ego = traj.ego_state(k)
    vs = sensor_velocity(mount, EgoMotion(v=ego.v, omega=ego.omega))
    tzx, tzy, _, wheel, _ = template.arrays()
    rows, labels = [], []
    for tid, state in traj.targets_at(k):
        arr = state.as_array()
        xi_vc = _world_to_vc(arr[:5], ego)
        a, b = state.extent.a, state.extent.b
        p_d = float(detection_probability_arrays(xi_vc, b, mount, **(pd_kwargs or {})))
        if p_d <= 0.0 or rng.random() >= p_d:
            continue
        n = rng.poisson(lambda_t)
        if n == 0:
            continue
        xi_sc = transform_poses(xi_vc, mount.x, mount.y, mount.yaw)
        vis = template.visibility(float(aspect_angles(xi_sc)))
        if vis.sum() <= 0:
            continue
        pick = rng.choice(len(vis), size=n, p=vis / vis.sum())
        zx = tzx[pick] + template.position_sigma * rng.normal(size=n)
        zy = tzy[pick] + template.position_sigma * rng.normal(size=n)
        c, s = np.cos(xi_sc[2]), np.sin(xi_sc[2])
        ox, oy = zx * b, zy * a
        px = xi_sc[0] + c * ox - s * oy
        py = xi_sc[1] + s * ox + c * oy
        d = np.hypot(px, py) + noise.range_sigma * rng.normal(size=n)
        alpha = np.arctan2(py, px) + noise.azimuth_sigma * rng.normal(size=n)
        sig = np.where(wheel[pick], template.wheel_doppler_sigma, template.body_doppler_sigma)
        vd = doppler_profile(xi_sc, alpha) + sig * rng.normal(size=n)
        raw = vd - (np.cos(alpha) * vs[0] + np.sin(alpha) * vs[1])
        keep = (d > 0) & (d <= mount.max_range) & (np.abs(alpha) <= 0.5 * mount.opening_angle)
        rows.append(np.column_stack([d, alpha, raw])[keep])
        labels.extend([tid] * int(keep.sum()))
    cl = _clutter(rng, mount, clutter, vs)
    rows.append(cl)
    labels.extend([-1] * len(cl))
    dets = np.concatenate(rows) if rows else np.empty((0, 3))
    labels_arr = np.array(labels, dtype=int)
    order = rng.permutation(len(dets))
    return Scan(float(traj.ticks[k]), sensor, dets[order], labels_arr[order].tolist(), ego)


@dataclass
class SimConfig:
    seed: int = 0
    lambda_t: float = DEFAULT_LAMBDA_T
    lambda_c: float = DEFAULT_LAMBDA_C
    template: ReflectionTemplate = field(default_factory=ReflectionTemplate.default)
    noise: SensorNoise = field(default_factory=SensorNoise)


def scan_schedule(scenario: Scenario) -> list[tuple[int, int, float]]:
    """(scan index, sensor, time) in time order; ties broken by sensor index."""
    period = 1.0 / scenario.rate
    out = []
    for sensor in range(len(scenario.mounts)):
        off = scenario.sensor_offsets[sensor]
        k = 0
        while off + k * period <= scenario.duration + 1e-9:
            out.append((k, sensor, round(off + k * period, 9)))
            k += 1
    out.sort(key=lambda e: (e[2], e[1]))
    return out


def simulate(scenario: Scenario, config: SimConfig = SimConfig()) -> tuple[list[Scan], list[TruthFrame]]:
    traj = Trajectories(scenario)
    scans = []
    for k, sensor, t in scan_schedule(scenario):
        clutter = ClutterModel.for_mount(scenario.mounts[sensor], lambda_c=config.lambda_c)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, sensor, k]))
        scans.append(simulate_scan(traj, t, sensor, config.template, clutter, rng, config.lambda_t, config.noise))
    frames = [traj.frame(k) for k in range(len(traj.ticks))]
    return scans, frames


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------

FIGURE_EIGHT_SPEED = 5.0
FIGURE_EIGHT_PEAK_RATE = np.deg2rad(60.0)
# J0 first zero: heading swing amplitude that closes the loop every period
_J0_ZERO = 2.404825557695773
FIGURE_EIGHT_PERIOD = 2.0 * np.pi * _J0_ZERO / FIGURE_EIGHT_PEAK_RATE


def figure_eight_controls(speed: float = FIGURE_EIGHT_SPEED, peak_rate: float = FIGURE_EIGHT_PEAK_RATE) -> Controls:
    period = 2.0 * np.pi * _J0_ZERO / peak_rate

    def controls(t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, speed), peak_rate * np.sin(2.0 * np.pi * t / period)

    return controls


def figure_eight(duration: float = 60.0) -> Scenario:
    # heading swings by +-A around phi0 + A; with phi0 = -A the mean heading
    # points along +x and the two lobes sit left and right of the ego axis
    phi0 = -_J0_ZERO
    ctrl = figure_eight_controls()
    _, st = ctrv_trajectory((0.0, 0.0, phi0, 0.0, 0.0), ctrl, FIGURE_EIGHT_PERIOD)
    # center the closed curve 17 m ahead of the ego rear axle
    cx, cy = st[:, 0].mean(), st[:, 1].mean()
    x0, y0 = 17.0 - cx, -cy
    target = TargetSpec(1, 1.85, 4.7, 0.0, (x0, y0, phi0), ctrl, duration)
    return Scenario("figure-eight", duration, [target])


def oncoming_pair(duration: float = 16.0) -> Scenario:
    seg = [{"duration": duration, "v": 8.0, "omega": 0.0}]
    ctrl, _ = segment_controls(seg)
    t1 = TargetSpec(1, 1.8, 4.5, 0.0, (52.0, 4.0, np.pi), ctrl, duration)
    t2 = TargetSpec(2, 1.9, 4.9, 2.0, (52.0, -3.5, np.pi), ctrl, duration)
    return Scenario("oncoming-pair", duration, [t1, t2])


def close_parallel(duration: float = 16.0) -> Scenario:
    ego_ctrl, _ = segment_controls([{"duration": duration, "v": 10.0, "omega": 0.0}])
    # side gap 0.8 m: lateral center distance = gap + mean width
    straight, _ = segment_controls([{"duration": duration, "v": 10.6, "omega": 0.0}])
    diverge, _ = segment_controls(
        [
            {"duration": 8.0, "v": 10.6, "omega": 0.0},
            {"duration": 2.0, "v": 10.6, "omega": -0.15},
            {"duration": 2.0, "v": 10.6, "omega": 0.15},
            {"duration": duration, "v": 10.6, "omega": 0.0},
        ]
    )
    t1 = TargetSpec(1, 1.8, 4.6, 0.0, (9.0, 1.3, 0.0), straight, duration)
    t2 = TargetSpec(2, 1.8, 4.4, 0.0, (9.5, -1.3, 0.0), diverge, duration)
    return Scenario("close-parallel", duration, [t1, t2], ego_controls=ego_ctrl)


def empty(duration: float = 10.0) -> Scenario:
    return Scenario("empty", duration, [])


def _circle(tid, radius, speed, center, start, duration, ccw=True, a=1.8, b=4.6):
    om = speed / radius * (1 if ccw else -1)
    ctrl, _ = segment_controls([{"duration": duration, "v": speed, "omega": om}])
    cx, cy = center
    # start on the circle, heading tangent
    return TargetSpec(tid, a, b, start, (cx, cy - radius if ccw else cy + radius, 0.0), ctrl, duration)


def training_scenarios(duration: float = 40.0) -> list[Scenario]:
    """Varied maneuvers covering all aspect angles for model training."""
    out = []
    tid = 1
    # circles around the stationary ego vehicle
    for radius, speed, ccw in ((9.0, 4.0, True), (14.0, 6.0, False), (20.0, 7.0, True), (27.0, 8.0, False)):
        out.append(Scenario(f"circle-{radius:g}", duration, [_circle(tid, radius, speed, (0.8, 0.0), 0.0, duration, ccw)]))
        tid += 1
    # small circles placed around the ego vehicle: the aspect sweeps through all values
    for cx, cy in ((18.0, 0.0), (-15.0, 6.0), (2.0, -17.0), (4.0, 16.0)):
        out.append(Scenario(f"small-{cx:g}-{cy:g}", duration, [_circle(tid, 6.0, 4.0, (cx, cy), 0.0, duration, cx > 0)]))
        tid += 1
    # straight passes in assorted directions and lateral offsets
    passes = []
    for k, (heading, offset, speed) in enumerate(((np.pi, 4.0, 8.0), (0.0, -5.0, 9.0), (np.pi / 2, 10.0, 7.0), (-np.pi / 2, -8.0, 6.0), (np.pi, -12.0, 10.0), (0.0, 14.0, 5.0))):
        ctrl, _ = segment_controls([{"duration": duration, "v": speed, "omega": 0.0}])
        dx, dy = np.cos(heading), np.sin(heading)
        start = np.array([0.8, 0.0]) - 40.0 * np.array([dx, dy]) + offset * np.array([-dy, dx])
        passes.append(TargetSpec(tid, 1.85, 4.7, 0.0, (start[0], start[1], heading), ctrl, 80.0 / speed))
        tid += 1
        if k % 2 == 1:
            out.append(Scenario(f"passes-{k // 2}", duration, passes))
            passes = []
    return out


BUILTIN = {
    "figure-eight": figure_eight,
    "oncoming-pair": oncoming_pair,
    "close-parallel": close_parallel,
    "empty": empty,
}


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------


def scenario_from_dict(doc: dict) -> Scenario:
    """Scenario from {"name", "duration", "ego": {...}, "targets": [...]}.

    Controls are piecewise-constant segments [{"duration", "v", "omega"}].
    """
    try:
        duration = float(doc["duration"])
        ego = doc.get("ego", {})
        ego_ctrl = segment_controls(ego["segments"])[0] if ego.get("segments") else None
        targets = []
        for g in doc.get("targets", []):
            ctrl, life = segment_controls(g["segments"])
            targets.append(
                TargetSpec(int(g["id"]), float(g["a"]), float(g["b"]), float(g.get("start", 0.0)), (float(g["x"]), float(g["y"]), float(g["phi"])), ctrl, life)
            )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario: {exc}") from exc
    return Scenario(
        str(doc.get("name", "custom")),
        duration,
        targets,
        ego_init=(float(ego.get("x", 0.0)), float(ego.get("y", 0.0)), float(ego.get("yaw", 0.0))),
        ego_controls=ego_ctrl,
    )


def load_scenario(name_or_path: str) -> Scenario:
    if name_or_path in BUILTIN:
        return BUILTIN[name_or_path]()
    path = Path(name_or_path)
    if not path.is_file():
        raise ValueError(f"unknown scenario {name_or_path!r}; built-ins: {', '.join(BUILTIN)}")
    return scenario_from_dict(json.loads(path.read_text()))


def generate_corpus(scenarios: Sequence[Scenario], config: SimConfig = SimConfig()) -> tuple[list[Scan], list[TruthFrame]]:
    """Concatenate scenarios back to back on one time axis."""
    scans, frames = [], []
    t0 = 0.0
    for i, sc in enumerate(scenarios):
        cfg = SimConfig(config.seed * 1000 + i, config.lambda_t, config.lambda_c, config.template, config.noise)
        s, f = simulate(sc, cfg)
        for scan in s:
            scan.t = round(scan.t + t0, 9)
        for fr in f:
            fr.t = round(fr.t + t0, 9)
        scans.extend(s)
        frames.extend(f)
        # leave a gap so frames of consecutive scenarios never interpolate
        t0 = round(t0 + sc.duration + 1.0, 9)
    return scans, frames
