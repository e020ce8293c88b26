"""Scan and ground-truth records plus their JSON Lines formats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import VehicleState, rot, wrap_angle


@dataclass(frozen=True)
class EgoState:
    """World pose and motion of the ego vehicle."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    v: float = 0.0
    omega: float = 0.0

    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


@dataclass
class Scan:
    t: float
    sensor: int
    detections: np.ndarray  # (M, 3): d, alpha, raw v_D
    labels: list[int] | None = None  # target id per detection, -1 for clutter
    ego: EgoState | None = None

    def __post_init__(self):
        self.detections = np.asarray(self.detections, dtype=float).reshape(-1, 3)


@dataclass
class TruthFrame:
    t: float
    targets: list[tuple[int, VehicleState]] = field(default_factory=list)  # world frame
    ego: EgoState = field(default_factory=EgoState)

    def targets_in_ego(self) -> list[tuple[int, VehicleState]]:
        """Targets expressed in the ego vehicle frame (speeds stay over-ground)."""
        out = []
        R = rot(-self.ego.yaw)
        for tid, s in self.targets:
            arr = s.as_array()
            arr[:2] = R @ (arr[:2] - np.array([self.ego.x, self.ego.y]))
            arr[2] = wrap_angle(arr[2] - self.ego.yaw)
            out.append((tid, VehicleState.from_array(arr)))
        return out


def _ts(t: float) -> float:
    return round(float(t), 9)


def _ego_dict(e: EgoState) -> dict:
    return {"x": e.x, "y": e.y, "yaw": e.yaw, "v": e.v, "omega": e.omega}


def _ego_from(d: dict | None) -> EgoState | None:
    if d is None:
        return None
    return EgoState(float(d["x"]), float(d["y"]), float(d["yaw"]), float(d["v"]), float(d["omega"]))


def scan_to_json(scan: Scan) -> str:
    doc = {
        "t": _ts(scan.t),
        "sensor": int(scan.sensor),
        "detections": [{"d": float(d), "alpha": float(a), "vd": float(v)} for d, a, v in scan.detections],
    }
    if scan.labels is not None:
        doc["labels"] = [int(v) for v in scan.labels]
    if scan.ego is not None:
        doc["ego"] = _ego_dict(scan.ego)
    return json.dumps(doc)


def scan_from_json(line: str) -> Scan:
    doc = json.loads(line)
    dets = np.array([[z["d"], z["alpha"], z["vd"]] for z in doc["detections"]], dtype=float).reshape(-1, 3)
    return Scan(float(doc["t"]), int(doc["sensor"]), dets, doc.get("labels"), _ego_from(doc.get("ego")))


def truth_to_json(frame: TruthFrame) -> str:
    targets = []
    for tid, s in frame.targets:
        x, y, phi, v, omega, a, b = (float(u) for u in s.as_array())
        targets.append({"id": int(tid), "x": x, "y": y, "phi": phi, "v": v, "omega": omega, "a": a, "b": b})
    return json.dumps({"t": _ts(frame.t), "targets": targets, "ego": _ego_dict(frame.ego)})


def truth_from_json(line: str) -> TruthFrame:
    doc = json.loads(line)
    targets = [
        (int(g["id"]), VehicleState.from_array([g["x"], g["y"], g["phi"], g["v"], g["omega"], g["a"], g["b"]]))
        for g in doc["targets"]
    ]
    return TruthFrame(float(doc["t"]), targets, _ego_from(doc.get("ego")) or EgoState())


def write_jsonl(path, lines: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def _read_lines(path) -> Iterator[str]:
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                yield raw


def read_scans(path) -> list[Scan]:
    return [scan_from_json(line) for line in _read_lines(path)]


def read_truths(path) -> list[TruthFrame]:
    return [truth_from_json(line) for line in _read_lines(path)]


def write_scans(path, scans: Iterable[Scan]) -> None:
    write_jsonl(path, (scan_to_json(s) for s in scans))


def write_truths(path, frames: Iterable[TruthFrame]) -> None:
    write_jsonl(path, (truth_to_json(f) for f in frames))


class TruthIndex:
    """Time lookup of truth frames; exact hits or linear interpolation between neighbors."""

    def __init__(self, frames: list[TruthFrame]):
        self.frames = sorted(frames, key=lambda f: f.t)
        self.times = np.array([f.t for f in self.frames])

    def __len__(self) -> int:
        return len(self.frames)

    def at(self, t: float) -> TruthFrame | None:
        if len(self.frames) == 0:
            return None
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and abs(self.times[i] - t) < 1e-9:
            return self.frames[i]
        if i > 0 and abs(self.times[i - 1] - t) < 1e-9:
            return self.frames[i - 1]
        if i == 0 or i == len(self.times):
            return None
        return _interpolate(self.frames[i - 1], self.frames[i], t)


def _lerp_state(s0: np.ndarray, s1: np.ndarray, u: float) -> np.ndarray:
    out = s0 + u * (s1 - s0)
    out[2] = wrap_angle(s0[2] + u * wrap_angle(s1[2] - s0[2]))
    return out


def _interpolate(f0: TruthFrame, f1: TruthFrame, t: float) -> TruthFrame:
    u = (t - f0.t) / (f1.t - f0.t)
    later = {tid: s for tid, s in f1.targets}
    targets = []
    for tid, s in f0.targets:
        if tid in later:
            targets.append((tid, VehicleState.from_array(_lerp_state(s.as_array(), later[tid].as_array(), u))))
    e0 = np.array([f0.ego.x, f0.ego.y, f0.ego.yaw, f0.ego.v, f0.ego.omega])
    e1 = np.array([f1.ego.x, f1.ego.y, f1.ego.yaw, f1.ego.v, f1.ego.omega])
    e = _lerp_state(e0, e1, u)
    return TruthFrame(t, targets, EgoState(*(float(v) for v in e)))


def ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
