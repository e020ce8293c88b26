"""Evaluation of track records against simulator ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import CENTER_OFFSET, SensorMount, in_union_fov, wrap_angle
from .records import TruthFrame, TruthIndex

STATE_KEYS = ("x", "y", "phi", "v", "omega", "a", "b")
CARD_BINS = ("-2", "-1", "0", "+1", "+2")
DEFAULT_GATE = 2.5
DEFAULT_MIN_SPEED = 1.0


@dataclass
class MetricsReport:
    rmse: dict[str, float]  # per state key plus "position" (Euclidean)
    cardinality: dict[str, float]  # shares of n_est - n_true, clipped to +-2
    availability: float  # matched truth instances / relevant truth instances
    steps: int
    matched: int
    swaps: int  # times a label's matched truth changed
    swap_events: list[tuple[float, list[int], int, int]] = field(default_factory=list)

    @property
    def correct_cardinality(self) -> float:
        return self.cardinality["0"]

    def to_json(self) -> str:
        doc = asdict(self)
        doc["correct_cardinality"] = self.correct_cardinality
        return json.dumps(doc, indent=2, sort_keys=True)


def estimates(record: dict) -> list[tuple[tuple[int, int], np.ndarray]]:
    """The round(sum r) highest-r tracks of one record as (label, state array)."""
    n = int(np.floor(record["expected_cardinality"] + 0.5))
    ranked = sorted(record["tracks"], key=lambda t: (-t["r"], tuple(t["label"])))[:n]
    return [(tuple(t["label"]), np.array([t["state"][k] for k in STATE_KEYS])) for t in ranked]


def relevant_truths(frame: TruthFrame, mounts: Sequence[SensorMount], min_speed: float = DEFAULT_MIN_SPEED):
    """Ego-frame targets that are moving faster than ``min_speed`` with box center in view."""
    out = []
    for tid, s in frame.targets_in_ego():
        arr = s.as_array()
        if abs(arr[3]) <= min_speed:
            continue
        cx = arr[0] + CENTER_OFFSET * arr[6] * np.cos(arr[2])
        cy = arr[1] + CENTER_OFFSET * arr[6] * np.sin(arr[2])
        if bool(in_union_fov(cx, cy, mounts)):
            out.append((tid, arr))
    return out


def greedy_match(est: np.ndarray, truth: np.ndarray, gate: float = DEFAULT_GATE) -> list[tuple[int, int]]:
    """Pairs (i_est, j_truth) by ascending position distance, each used once, within ``gate``."""
    if len(est) == 0 or len(truth) == 0:
        return []
    d = np.hypot(est[:, None, 0] - truth[None, :, 0], est[:, None, 1] - truth[None, :, 1])
    order = np.argsort(d, axis=None, kind="stable")
    used_e, used_t, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), d.shape[1])
        if d[i, j] > gate:
            break
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        pairs.append((i, j))
    return pairs


def evaluate(
    records: Iterable[dict],
    truths: Sequence[TruthFrame],
    mounts: Sequence[SensorMount],
    gate: float = DEFAULT_GATE,
    min_speed: float = DEFAULT_MIN_SPEED,
) -> MetricsReport:
    index = TruthIndex(list(truths))
    sq = {k: 0.0 for k in STATE_KEYS}
    sq_pos = 0.0
    card = dict.fromkeys(CARD_BINS, 0)
    steps = matched = relevant = 0
    last_truth: dict[tuple[int, int], int] = {}
    swap_events = []
    for rec in records:
        frame = index.at(rec["t"])
        if frame is None:
            continue
        steps += 1
        est = estimates(rec)
        tru = relevant_truths(frame, mounts, min_speed)
        err = int(np.clip(len(est) - len(tru), -2, 2))
        card[f"{err:+d}" if err else "0"] += 1
        relevant += len(tru)
        e_arr = np.array([s for _, s in est]).reshape(-1, 7)
        t_arr = np.array([s for _, s in tru]).reshape(-1, 7)
        for i, j in greedy_match(e_arr, t_arr, gate):
            matched += 1
            diff = e_arr[i] - t_arr[j]
            diff[2] = wrap_angle(diff[2])
            for k, dv in zip(STATE_KEYS, diff):
                sq[k] += dv * dv
            sq_pos += diff[0] ** 2 + diff[1] ** 2
            label, tid = est[i][0], tru[j][0]
            prev = last_truth.get(label)
            if prev is not None and prev != tid:
                swap_events.append((float(rec["t"]), list(label), prev, tid))
            last_truth[label] = tid
    rmse = {k: (float(np.sqrt(v / matched)) if matched else float("nan")) for k, v in sq.items()}
    rmse["position"] = float(np.sqrt(sq_pos / matched)) if matched else float("nan")
    shares = {k: (v / steps if steps else 0.0) for k, v in card.items()}
    return MetricsReport(
        rmse=rmse,
        cardinality=shares,
        availability=matched / relevant if relevant else 1.0,
        steps=steps,
        matched=matched,
        swaps=len(swap_events),
        swap_events=swap_events,
    )


def records_from_truth(
    times: Iterable[float],
    truths: Sequence[TruthFrame],
    mounts: Sequence[SensorMount],
    min_speed: float = DEFAULT_MIN_SPEED,
) -> list[dict]:
    """Track records that reproduce the relevant truth exactly (r = 1)."""
    index = TruthIndex(list(truths))
    out = []
    for t in times:
        frame = index.at(t)
        tracks = []
        if frame is not None:
            for tid, arr in relevant_truths(frame, mounts, min_speed):
                state = dict(zip(STATE_KEYS, (float(u) for u in arr)))
                tracks.append({"label": [0, int(tid)], "r": 1.0, "state": state})
        out.append({"t": float(t), "tracks": tracks, "expected_cardinality": float(len(tracks))})
    return out


def shift_records(records: Iterable[dict], dx: float = 0.0, dy: float = 0.0) -> list[dict]:
    """Copies with every track position offset by (dx, dy)."""
    out = []
    for rec in records:
        tracks = []
        for t in rec["tracks"]:
            st = dict(t["state"], x=t["state"]["x"] + dx, y=t["state"]["y"] + dy)
            tracks.append(dict(t, state=st))
        out.append(dict(rec, tracks=tracks))
    return out
