"""Baseline surrogate safety measures and detection scoring.

Time-to-collision projects both agents at constant velocity and solves for
the first time their separation falls to the proximity radius. Encroachment
time works on observed trajectories: it anchors a small circular zone at the
paths' closest approach and measures the gap between one agent leaving that
zone and the other entering it. Detection metrics score each
vehicle-pedestrian pair by its maximum risk over time against the
encroachment-time ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InputError
from .risk import KinematicState, RiskProfile
from .trajectory import Dataset, Trajectory


def compute_ttc(veh: KinematicState, ped: KinematicState, radius: float = 1.0
                ) -> Optional[float]:
    """First time (s, >= 0) at which constant-velocity extrapolations come
    within ``radius``; ``None`` when the agents never get that close."""
    px = ped.x - veh.x
    py = ped.y - veh.y
    vx = ped.vx - veh.vx
    vy = ped.vy - veh.vy
    c = px * px + py * py - radius * radius
    if c <= 0.0:
        return 0.0  # already within the radius
    a = vx * vx + vy * vy
    b = 2.0 * (px * vx + py * vy)
    if a < 1e-15:
        return None  # no relative motion, separated
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None  # closest approach stays outside the radius
    t_enter = (-b - math.sqrt(disc)) / (2.0 * a)
    return t_enter if t_enter >= 0.0 else None


@dataclass(frozen=True)
class ConflictEvent:
    """A vehicle-pedestrian encroachment within the zone at closest approach."""

    vehicle_id: str
    pedestrian_id: str
    window: tuple  # (first zone entry, last zone exit), seconds
    pet: float
    zone_center: tuple

    def __post_init__(self) -> None:
        if self.pet < 0:
            raise ValueError("encroachment time cannot be negative")
        if self.window[0] > self.window[1]:
            raise ValueError("event window start must not exceed its end")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.vehicle_id, self.pedestrian_id)


def _zone_interval(times: np.ndarray, positions: np.ndarray, center: np.ndarray,
                   radius: float) -> Optional[tuple[float, float]]:
    d = np.linalg.norm(positions - center[None, :], axis=1)
    inside = np.nonzero(d <= radius)[0]
    if inside.size == 0:
        return None
    return float(times[inside[0]]), float(times[inside[-1]])


def compute_pet(veh: Trajectory, ped: Trajectory, zone_radius: float = 1.0
                ) -> Optional[ConflictEvent]:
    """Encroachment time at the observed paths' closest approach.

    The zone is a disc of ``zone_radius`` around the midpoint of the closest
    sample pair. The event time window spans first entry to last exit over
    both agents; the encroachment time is the gap between their in-zone
    intervals (zero when they overlap). ``None`` when the paths never come
    within ``zone_radius``.
    """
    veh_pts = veh.valid_points()
    ped_pts = ped.valid_points()
    if not veh_pts or not ped_pts:
        return None
    veh_xy = np.array([[p.x, p.y] for p in veh_pts])
    ped_xy = np.array([[p.x, p.y] for p in ped_pts])
    veh_t = np.array([p.t for p in veh_pts])
    ped_t = np.array([p.t for p in ped_pts])

    diff = veh_xy[:, None, :] - ped_xy[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    j, k = np.unravel_index(int(np.argmin(d2)), d2.shape)
    if math.sqrt(d2[j, k]) > zone_radius:
        return None
    center = (veh_xy[j] + ped_xy[k]) / 2.0

    veh_iv = _zone_interval(veh_t, veh_xy, center, zone_radius)
    ped_iv = _zone_interval(ped_t, ped_xy, center, zone_radius)
    if veh_iv is None or ped_iv is None:
        return None
    pet = max(0.0, max(veh_iv[0], ped_iv[0]) - min(veh_iv[1], ped_iv[1]))
    window = (min(veh_iv[0], ped_iv[0]), max(veh_iv[1], ped_iv[1]))
    return ConflictEvent(vehicle_id=veh.id, pedestrian_id=ped.id, window=window,
                         pet=pet, zone_center=(float(center[0]), float(center[1])))


def co_present_pairs(dataset: Dataset) -> list[tuple[Trajectory, Trajectory]]:
    """Vehicle-pedestrian pairs whose time supports overlap."""
    pairs = []
    for veh in dataset.vehicles:
        for ped in dataset.pedestrians:
            if max(veh.start_time, ped.start_time) <= min(veh.end_time, ped.end_time):
                pairs.append((veh, ped))
    return pairs


def identify_conflicts_pet(dataset: Dataset, threshold: float = 3.0,
                           zone_radius: float = 1.0) -> list[ConflictEvent]:
    """Ground-truth conflicts: co-present pairs with encroachment time at or
    below ``threshold`` seconds."""
    events = []
    for veh, ped in co_present_pairs(dataset):
        event = compute_pet(veh, ped, zone_radius)
        if event is not None and event.pet <= threshold:
            events.append(event)
    events.sort(key=lambda e: e.pair)
    return events


# ---------------------------------------------------------------------------
# Detection metrics
# ---------------------------------------------------------------------------


@dataclass
class DetectionReport:
    sensitivity: float
    false_alarm_rate: float
    auc: float
    roc: list  # (threshold, tpr, fpr) rows, descending threshold
    tp: int
    fp: int
    tn: int
    fn: int

    def to_text(self) -> str:
        lines = [
            "detection report",
            "================",
            f"positives: {self.tp + self.fn}  negatives: {self.fp + self.tn}",
            f"sensitivity (risk > 0): {self.sensitivity:.4f}",
            f"false alarm rate (risk > 0): {self.false_alarm_rate:.4f}",
            f"auc: {self.auc:.4f}",
            "roc (threshold, tpr, fpr):",
        ]
        for thr, tpr, fpr in self.roc:
            lines.append(f"  {thr:.6f} {tpr:.4f} {fpr:.4f}")
        return "\n".join(lines) + "\n"


def _pair_score(stream) -> float:
    if isinstance(stream, (int, float)):
        return float(stream)
    values = []
    for item in stream:
        values.append(item.risk if isinstance(item, RiskProfile) else float(item))
    if not values:
        raise InputError("empty risk stream")
    return max(values)


def evaluate_detection(pair_streams: Mapping, truth: Sequence) -> DetectionReport:
    """Event-level detection scoring.

    ``pair_streams`` maps (vehicle id, pedestrian id) to a risk stream (risk
    profiles or floats) or a precomputed score; each pair is one sample scored
    by its maximum risk. ``truth`` holds :class:`ConflictEvent` instances or
    raw pairs. The operating point declares a conflict whenever the score
    exceeds zero; the ROC sweeps the threshold over all observed scores.
    """
    truth_pairs = set()
    for item in truth:
        truth_pairs.add(item.pair if isinstance(item, ConflictEvent) else tuple(item))
    missing = [p for p in truth_pairs if p not in pair_streams]
    if missing:
        raise InputError(f"ground-truth pairs without risk streams: {sorted(missing)}")

    pairs = sorted(pair_streams)
    scores = np.array([_pair_score(pair_streams[p]) for p in pairs])
    labels = np.array([p in truth_pairs for p in pairs], dtype=bool)

    predicted = scores > 0.0
    tp = int(np.sum(predicted & labels))
    fn = int(np.sum(~predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    tn = int(np.sum(~predicted & ~labels))
    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    far = fp / (fp + tn) if (fp + tn) > 0 else 0.0

    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    roc = [(math.inf, 0.0, 0.0)]
    if n_pos > 0 and n_neg > 0:
        for thr in sorted(set(scores), reverse=True):
            hit = scores >= thr
            roc.append((
                float(thr),
                float(np.sum(hit & labels)) / n_pos,
                float(np.sum(hit & ~labels)) / n_neg,
            ))
        if roc[-1][1:] != (1.0, 1.0):
            roc.append((-math.inf, 1.0, 1.0))
        fpr = np.array([r[2] for r in roc])
        tpr = np.array([r[1] for r in roc])
        auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    else:
        roc.append((-math.inf, 1.0, 1.0))
        auc = 0.5  # undefined without both classes; uninformative default

    return DetectionReport(sensitivity=sensitivity, false_alarm_rate=far, auc=auc,
                           roc=roc, tp=tp, fp=fp, tn=tn, fn=fn)
