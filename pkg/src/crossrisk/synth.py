"""Deterministic synthetic intersection scenarios with known ground truth.

The canonical intersection is axis-aligned and centered at the origin: four
crosswalk lines at +/-10 m spanning +/-8 m, vehicles on lanes offset 1.75 m
from the road centerlines, quarter-circle turn arcs tangent to the approach
and exit lanes. Vehicles decelerate into turns and accelerate out;
pedestrians funnel through a crosswalk endpoint, cross with a small lateral
bow, and disperse. Engineered conflicts time a pedestrian and a turning
vehicle through a common point so that the measured encroachment time equals
the requested value; all other crossing events are spaced far enough apart in
time to stay conflict-free.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .trajectory import (
    Dataset,
    Direction,
    Maneuver,
    ObjectClass,
    SUPPORTED_MANEUVERS,
    TrackPoint,
    Trajectory,
)

# Canonical intersection layout (meters).
CROSSWALK_OFFSET = 10.0
CROSSWALK_HALF = 8.0
LANE_OFFSET = 1.75
START_DIST = 30.0
END_DIST = 34.0
LEFT_TURN_RADIUS = 9.0
RIGHT_TURN_RADIUS = 7.0
DECEL_LENGTH = 12.0
ACCEL_LENGTH = 10.0
PED_APPROACH_LENGTH = 2.5

#: Rotation (radians, counterclockwise) mapping the canonical south-entry
#: frame onto each entering direction.
_ENTRY_ROTATION = {
    Direction.S: 0.0,
    Direction.E: math.pi / 2.0,
    Direction.N: math.pi,
    Direction.W: 3.0 * math.pi / 2.0,
}

_EPISODE_PERIOD = 26.0
_FIRST_EPISODE_CENTER = 18.0

GROUND_TRUTH_VERSION = 1


def canonical_endpoints() -> dict:
    """True crosswalk endpoints of the canonical intersection."""
    L, h = CROSSWALK_OFFSET, CROSSWALK_HALF
    return {
        "N_NW": (-h, L),
        "N_NE": (h, L),
        "E_NE": (L, h),
        "E_SE": (L, -h),
        "S_SE": (h, -L),
        "S_SW": (-h, -L),
        "W_SW": (-L, -h),
        "W_NW": (-L, h),
    }


def canonical_search_regions(margin: float = 1.25) -> dict:
    """Search boxes centered on the canonical endpoints, for estimation.

    The default margin stays below half the spacing of adjacent corner
    endpoints so each box isolates exactly one pedestrian funnel."""
    return {
        key: (x - margin, y - margin, x + margin, y + margin)
        for key, (x, y) in canonical_endpoints().items()
    }


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything that determines a generated scene, including its seed."""

    seed: int = 0
    n_vehicles_per_cell: int = 4
    n_pedestrians_per_crosswalk: int = 2
    n_engineered_conflicts: int = 0
    requested_pet_range: tuple = (0.8, 2.5)
    n_fast_pedestrians: int = 0
    noise_std_position: float = 0.1
    noise_std_velocity: float = 0.1
    cruise_speed: float = 11.0
    turn_speed: float = 6.0
    pedestrian_speed: float = 1.4
    frame_interval: float = 0.1
    pet_zone_radius: float = 1.0
    min_separation: float = 5.5

    def __post_init__(self) -> None:
        if min(self.n_vehicles_per_cell, self.n_pedestrians_per_crosswalk,
               self.n_engineered_conflicts, self.n_fast_pedestrians) < 0:
            raise InputError("entity counts must be nonnegative")
        if self.noise_std_position < 0 or self.noise_std_velocity < 0:
            raise InputError("noise levels must be nonnegative")
        if min(self.cruise_speed, self.turn_speed, self.pedestrian_speed) <= 0:
            raise InputError("speeds must be positive")
        if self.frame_interval <= 0:
            raise InputError("frame_interval must be positive")
        lo, hi = self.requested_pet_range
        if lo <= 0 or hi < lo:
            raise InputError("requested_pet_range must be positive and ordered")


@dataclass(frozen=True)
class ConflictTruth:
    vehicle_id: str
    pedestrian_id: str
    requested_pet: float
    point: tuple
    t_vehicle: float
    t_pedestrian: float

    @property
    def pair(self) -> tuple[str, str]:
        return (self.vehicle_id, self.pedestrian_id)


@dataclass
class GroundTruth:
    vehicles: dict = field(default_factory=dict)  # id -> (Direction, Maneuver)
    pedestrian_crosswalks: dict = field(default_factory=dict)  # id -> Direction
    conflicts: list = field(default_factory=list)


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": GROUND_TRUTH_VERSION,
        "vehicles": {
            vid: {"direction": d.value, "maneuver": m.value}
            for vid, (d, m) in sorted(truth.vehicles.items())
        },
        "pedestrians": {
            pid: {"crosswalk": d.value}
            for pid, d in sorted(truth.pedestrian_crosswalks.items())
        },
        "conflicts": [
            {
                "vehicle_id": c.vehicle_id,
                "pedestrian_id": c.pedestrian_id,
                "requested_pet": c.requested_pet,
                "point": list(c.point),
                "t_vehicle": c.t_vehicle,
                "t_pedestrian": c.t_pedestrian,
            }
            for c in truth.conflicts
        ],
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def read_ground_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    if not path.exists():
        raise InputError(f"ground-truth file not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("version") != GROUND_TRUTH_VERSION:
        raise InputError(f"unsupported ground-truth version: {payload.get('version')!r}")
    truth = GroundTruth()
    for vid, entry in payload["vehicles"].items():
        truth.vehicles[vid] = (Direction(entry["direction"]), Maneuver(entry["maneuver"]))
    for pid, entry in payload.get("pedestrians", {}).items():
        truth.pedestrian_crosswalks[pid] = Direction(entry["crosswalk"])
    for c in payload["conflicts"]:
        truth.conflicts.append(
            ConflictTruth(
                vehicle_id=c["vehicle_id"],
                pedestrian_id=c["pedestrian_id"],
                requested_pet=c["requested_pet"],
                point=tuple(c["point"]),
                t_vehicle=c["t_vehicle"],
                t_pedestrian=c["t_pedestrian"],
            )
        )
    return truth


# ---------------------------------------------------------------------------
# Path primitives
# ---------------------------------------------------------------------------


class _Segment:
    """A line or circular arc with arc-length parametrization."""

    def __init__(self, kind: str, **kw):
        self.kind = kind
        if kind == "line":
            self.p0 = np.asarray(kw["p0"], dtype=float)
            self.p1 = np.asarray(kw["p1"], dtype=float)
            self.length = float(np.linalg.norm(self.p1 - self.p0))
            self._dir = (self.p1 - self.p0) / self.length if self.length > 0 else np.zeros(2)
        else:
            self.center = np.asarray(kw["center"], dtype=float)
            self.radius = float(kw["radius"])
            self.theta0 = float(kw["theta0"])
            self.theta1 = float(kw["theta1"])
            self.length = self.radius * abs(self.theta1 - self.theta0)

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray, float]:
        """(position, unit tangent, curvature) at arc length ``s``."""
        if self.kind == "line":
            return self.p0 + self._dir * s, self._dir, 0.0
        frac = s / self.length if self.length > 0 else 0.0
        theta = self.theta0 + (self.theta1 - self.theta0) * frac
        pos = self.center + self.radius * np.array([math.cos(theta), math.sin(theta)])
        sign = 1.0 if self.theta1 > self.theta0 else -1.0
        tangent = sign * np.array([-math.sin(theta), math.cos(theta)])
        return pos, tangent, 1.0 / self.radius


class _Path:
    def __init__(self, segments: Sequence[_Segment]):
        self.segments = [s for s in segments if s.length > 1e-9]
        self.cum = np.concatenate([[0.0], np.cumsum([s.length for s in self.segments])])
        self.total = float(self.cum[-1])

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray, float]:
        s = min(max(s, 0.0), self.total)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(i, len(self.segments) - 1)
        return self.segments[i].at(s - self.cum[i])


def _rotate(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T


class _SpeedProfile:
    """Piecewise-linear speed as a function of arc length."""

    def __init__(self, knots_s: Sequence[float], knots_v: Sequence[float]):
        self.s = np.asarray(knots_s, dtype=float)
        self.v = np.asarray(knots_v, dtype=float)

    def __call__(self, s) -> np.ndarray:
        return np.interp(s, self.s, self.v)


def _vehicle_geometry(maneuver: Maneuver, cruise: float, turn: float
                      ) -> tuple[_Path, _SpeedProfile]:
    """Canonical south-entry path for one maneuver, with its speed profile.

    Left turns exit into the quadrant counterclockwise of the entry (east for
    a south entry), right turns clockwise of it (west), matching the movement
    labeling convention used by preprocessing.
    """
    lane = LANE_OFFSET
    if maneuver == Maneuver.STRAIGHT:
        path = _Path([_Segment("line", p0=(lane, -START_DIST), p1=(lane, END_DIST))])
        profile = _SpeedProfile([0.0, path.total], [cruise, cruise])
        return path, profile
    if maneuver == Maneuver.LEFT:
        r = LEFT_TURN_RADIUS
        exit_y = -LANE_OFFSET
        arc_start_y = exit_y - r
        center = (lane + r, arc_start_y)
        segments = [
            _Segment("line", p0=(lane, -START_DIST), p1=(lane, arc_start_y)),
            _Segment("arc", center=center, radius=r, theta0=math.pi, theta1=math.pi / 2.0),
            _Segment("line", p0=(lane + r, exit_y), p1=(END_DIST, exit_y)),
        ]
    else:  # RIGHT: exit west
        r = RIGHT_TURN_RADIUS
        exit_y = LANE_OFFSET
        arc_start_y = exit_y - r
        center = (lane - r, arc_start_y)
        segments = [
            _Segment("line", p0=(lane, -START_DIST), p1=(lane, arc_start_y)),
            _Segment("arc", center=center, radius=r, theta0=0.0, theta1=math.pi / 2.0),
            _Segment("line", p0=(lane - r, exit_y), p1=(-END_DIST, exit_y)),
        ]
    path = _Path(segments)
    arc_start = path.cum[1]
    arc_end = path.cum[2]
    profile = _SpeedProfile(
        [0.0, max(0.0, arc_start - DECEL_LENGTH), arc_start, arc_end,
         min(path.total, arc_end + ACCEL_LENGTH), path.total],
        [cruise, cruise, turn, turn, cruise, cruise],
    )
    return path, profile


class _RotatedPath:
    """A canonical path rotated into the target entry direction."""

    def __init__(self, path: _Path, angle: float):
        self.path = path
        self.angle = angle
        self.total = path.total

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray, float]:
        pos, tangent, curv = self.path.at(s)
        return (_rotate(pos[None, :], self.angle)[0],
                _rotate(tangent[None, :], self.angle)[0], curv)


def _pedestrian_path(crosswalk: Direction, reverse: bool, lateral_offset: float,
                     approach_angle: float) -> _Path:
    """Polyline from an approach fan through one endpoint, across the
    crosswalk with a sinusoidal lateral bow, out past the far endpoint."""
    endpoints = canonical_endpoints()
    key_a, key_b = {
        Direction.N: ("N_NW", "N_NE"),
        Direction.E: ("E_NE", "E_SE"),
        Direction.S: ("S_SE", "S_SW"),
        Direction.W: ("W_SW", "W_NW"),
    }[crosswalk]
    a = np.asarray(endpoints[key_a], dtype=float)
    b = np.asarray(endpoints[key_b], dtype=float)
    if reverse:
        a, b = b, a
    axis = (b - a) / np.linalg.norm(b - a)
    normal = np.array([-axis[1], axis[0]])

    back = -axis
    ca, sa = math.cos(approach_angle), math.sin(approach_angle)
    fan = np.array([ca * back[0] - sa * back[1], sa * back[0] + ca * back[1]])
    start = a + fan * PED_APPROACH_LENGTH

    u = np.linspace(0.0, 1.0, 81)
    bow = np.sin(math.pi * u) * lateral_offset
    curve = a[None, :] + u[:, None] * (b - a)[None, :] + bow[:, None] * normal[None, :]
    exit_pt = b + axis * PED_APPROACH_LENGTH

    waypoints = np.vstack([start[None, :], curve, exit_pt[None, :]])
    segments = [
        _Segment("line", p0=waypoints[i], p1=waypoints[i + 1])
        for i in range(len(waypoints) - 1)
    ]
    return _Path(segments)


# ---------------------------------------------------------------------------
# Motion integration and sampling
# ---------------------------------------------------------------------------


def _integrate_motion(total_length: float, speed_of_s, dt: float,
                      substeps: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Dense (time, arc length) table for motion along a path."""
    h = dt / substeps
    t_list = [0.0]
    s_list = [0.0]
    s = 0.0
    t = 0.0
    while s < total_length:
        v = float(speed_of_s(s))
        if v <= 1e-6:
            break
        s = min(total_length, s + v * h)
        t += h
        t_list.append(t)
        s_list.append(s)
        if t > 3600.0:
            raise InputError("path integration exceeded one hour; bad speed profile")
    return np.asarray(t_list), np.asarray(s_list)


def _time_at_arclength(s_star: float, t_dense: np.ndarray, s_dense: np.ndarray) -> float:
    return float(np.interp(s_star, s_dense, t_dense))


@dataclass
class _Entity:
    entity_id: str
    object_class: ObjectClass
    path: object  # _Path or _RotatedPath
    speed_of_s: object
    launch_frame: int = 0
    noise_seed: int = 0

    def sample(self, dt: float, noise_pos: float, noise_vel: float,
               t_dense: np.ndarray, s_dense: np.ndarray) -> Trajectory:
        rng = np.random.default_rng(self.noise_seed)
        n_frames = int(math.floor(t_dense[-1] / dt)) + 1
        points = []
        for k in range(n_frames):
            s = float(np.interp(k * dt, t_dense, s_dense))
            pos, tangent, curv = self.path.at(s)
            v = float(self.speed_of_s(s))
            vel = v * tangent
            if noise_pos > 0:
                pos = pos + rng.normal(0.0, noise_pos, size=2)
            if noise_vel > 0:
                vel = vel + rng.normal(0.0, noise_vel, size=2)
            x, y = pos
            vx, vy = vel
            points.append(
                TrackPoint.create(
                    t=round((self.launch_frame + k) * dt, 6),
                    x=float(x), y=float(y), vx=float(vx), vy=float(vy),
                    yaw_rate=abs(v * curv),
                )
            )
        return Trajectory(id=self.entity_id, object_class=self.object_class,
                          points=tuple(points))


# ---------------------------------------------------------------------------
# Crossing bookkeeping for conflict-free scheduling
# ---------------------------------------------------------------------------

_CROSSWALK_LINES = {
    Direction.N: ("y", CROSSWALK_OFFSET),
    Direction.S: ("y", -CROSSWALK_OFFSET),
    Direction.E: ("x", CROSSWALK_OFFSET),
    Direction.W: ("x", -CROSSWALK_OFFSET),
}


def _vehicle_crossings(path, step: float = 0.25) -> list:
    """(crosswalk, arc length, spot) for each crosswalk line the path crosses."""
    s_grid = np.arange(0.0, path.total + step, step)
    pts = np.array([path.at(min(s, path.total))[0] for s in s_grid])
    crossings = []
    for cw, (axis, level) in _CROSSWALK_LINES.items():
        coord = pts[:, 0] if axis == "x" else pts[:, 1]
        f = coord - level
        # predicate change catches transversal crossings, including exact zeros
        for i in np.nonzero((f[:-1] <= 0.0) != (f[1:] <= 0.0))[0]:
            frac = f[i] / (f[i] - f[i + 1])
            spot = pts[i] + frac * (pts[i + 1] - pts[i])
            span = spot[0] if axis == "y" else spot[1]
            if abs(span) <= CROSSWALK_HALF + 0.5:
                s_star = float(s_grid[i] + frac * step)
                crossings.append((cw, s_star, (float(spot[0]), float(spot[1]))))
    return crossings


def _crosswalk_axis(cw: Direction) -> tuple[np.ndarray, np.ndarray]:
    endpoints = canonical_endpoints()
    key_a, key_b = {
        Direction.N: ("N_NW", "N_NE"),
        Direction.E: ("E_NE", "E_SE"),
        Direction.S: ("S_SE", "S_SW"),
        Direction.W: ("W_SW", "W_NW"),
    }[cw]
    return np.asarray(endpoints[key_a], float), np.asarray(endpoints[key_b], float)


class _Schedule:
    """Reserved crossing times; keeps unrelated vehicle/pedestrian crossings
    separated by the scenario's minimum time gap."""

    def __init__(self, min_separation: float):
        self.min_separation = min_separation
        self.vehicle_crossings: list = []  # (crosswalk, spot, t_abs)
        self.ped_traversals: list = []  # (crosswalk, t_at_a, t_at_b, a, b)

    def _ped_time_at(self, traversal, spot) -> float:
        """When a traversing pedestrian passes the projection of ``spot``."""
        _, t_a, t_b, a, b = traversal
        seg = b - a
        frac = float(np.dot(np.asarray(spot) - a, seg) / np.dot(seg, seg))
        frac = min(1.0, max(0.0, frac))
        return t_a + frac * (t_b - t_a)

    def vehicle_ok(self, crossings_abs) -> bool:
        for cw, spot, t in crossings_abs:
            for trav in self.ped_traversals:
                if trav[0] != cw:
                    continue
                if abs(t - self._ped_time_at(trav, spot)) < self.min_separation:
                    return False
        return True

    def ped_ok(self, cw, t_a, t_b, a, b) -> bool:
        trav = (cw, t_a, t_b, a, b)
        for vcw, spot, t in self.vehicle_crossings:
            if vcw != cw:
                continue
            if abs(t - self._ped_time_at(trav, spot)) < self.min_separation:
                return False
        return True

    def add_vehicle(self, crossings_abs) -> None:
        self.vehicle_crossings.extend(crossings_abs)

    def add_ped(self, cw, t_a, t_b, a, b) -> None:
        self.ped_traversals.append((cw, t_a, t_b, a, b))


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------


def _quantize_frame(t: float, dt: float) -> int:
    return max(0, int(round(t / dt)))


def generate_scenario(spec: ScenarioSpec) -> tuple[Dataset, GroundTruth]:
    """Build a deterministic scene from a scenario description; same seed,
    same bytes.

    Returns the observed dataset plus ground truth: each vehicle's entering
    direction and maneuver, each pedestrian's crosswalk, and the engineered
    conflict list with requested encroachment times.
    """
    dt = spec.frame_interval
    rng = np.random.default_rng(spec.seed)
    schedule = _Schedule(spec.min_separation)
    trajectories: list[Trajectory] = []
    truth = GroundTruth()
    veh_counter = 0
    ped_counter = 0
    horizon = _FIRST_EPISODE_CENTER + _EPISODE_PERIOD * max(1, spec.n_engineered_conflicts) + 30.0

    def jitter(base: float, frac: float = 0.03) -> float:
        return base * (1.0 + frac * (2.0 * rng.random() - 1.0))

    def make_vehicle(direction: Direction, maneuver: Maneuver):
        """Build one vehicle plus the crossing times of its whole maneuver
        hypothesis fan; scheduling against the counterfactual paths keeps the
        risk engine's wrong-maneuver rollouts conflict-free too."""
        nonlocal veh_counter
        cruise, turn = jitter(spec.cruise_speed), jitter(spec.turn_speed)
        hypothesis_crossings = []
        chosen = None
        for m in SUPPORTED_MANEUVERS:
            path_c, profile_m = _vehicle_geometry(m, cruise, turn)
            path_m = _RotatedPath(path_c, _ENTRY_ROTATION[direction])
            t_m, s_m = _integrate_motion(path_m.total, profile_m, dt)
            crossings_m = _vehicle_crossings(path_m)
            for cw, s_star, spot in crossings_m:
                hypothesis_crossings.append(
                    (cw, _time_at_arclength(s_star, t_m, s_m), spot)
                )
            if m == maneuver:
                chosen = (path_m, profile_m, t_m, s_m, crossings_m)
        path, profile, t_dense, s_dense, crossings = chosen
        entity_id = f"veh{veh_counter:04d}"
        veh_counter += 1
        return (entity_id, path, profile, t_dense, s_dense, crossings,
                hypothesis_crossings)

    def make_ped(crosswalk: Direction, reverse: bool, lateral_offset: float,
                 speed: float):
        nonlocal ped_counter
        angle = (2.0 * rng.random() - 1.0) * math.radians(60.0)
        path = _pedestrian_path(crosswalk, reverse, lateral_offset, angle)
        profile = _SpeedProfile([0.0, path.total], [speed, speed])
        t_dense, s_dense = _integrate_motion(path.total, profile, dt)
        entity_id = f"ped{ped_counter:04d}"
        ped_counter += 1
        return entity_id, path, profile, t_dense, s_dense

    def emit(entity_id, object_class, path, profile, launch_frame):
        t_dense, s_dense = _integrate_motion(path.total, profile, dt)
        entity = _Entity(entity_id=entity_id, object_class=object_class, path=path,
                         speed_of_s=profile, launch_frame=launch_frame,
                         noise_seed=spec.seed * 1_000_003 + len(trajectories))
        trajectories.append(
            entity.sample(dt, spec.noise_std_position, spec.noise_std_velocity,
                          t_dense, s_dense)
        )

    # -- engineered conflicts ------------------------------------------------
    turn_cells = [(d, m) for m in (Maneuver.LEFT, Maneuver.RIGHT) for d in Direction]
    lo, hi = spec.requested_pet_range
    for i in range(spec.n_engineered_conflicts):
        direction, maneuver = turn_cells[i % len(turn_cells)]
        requested = lo if spec.n_engineered_conflicts == 1 else (
            lo + (hi - lo) * i / (spec.n_engineered_conflicts - 1)
        )
        vid, vpath, vprofile, vt, vs, vcross, vhypo = make_vehicle(direction, maneuver)
        exit_crossings = [c for c in vcross if c[1] > vs[-1] * 0.4]
        if not exit_crossings:
            raise InputError("engineered vehicle path never crosses an exit crosswalk")
        cw, s_star, spot = max(exit_crossings, key=lambda c: c[1])

        center = _FIRST_EPISODE_CENTER + _EPISODE_PERIOD * i
        t_rel = _time_at_arclength(s_star, vt, vs)
        launch_v = _quantize_frame(center - t_rel, dt)
        t_veh_abs = launch_v * dt + t_rel

        # Pedestrian crossing through the exact spot: start from the endpoint
        # nearer the spot so it arrives early in its traversal.
        a, b = _crosswalk_axis(cw)
        reverse = np.linalg.norm(np.asarray(spot) - b) < np.linalg.norm(np.asarray(spot) - a)
        ped_speed = jitter(spec.pedestrian_speed, 0.05)
        pid, ppath, pprofile, pt, ps = make_ped(cw, reverse, 0.0, ped_speed)

        # Arc length at the spot: the bow is zero, so scan for closest approach.
        s_scan = np.linspace(0.0, ppath.total, 2000)
        d_scan = [np.linalg.norm(ppath.at(s)[0] - np.asarray(spot)) for s in s_scan]
        s_spot = float(s_scan[int(np.argmin(d_scan))])
        t_ped_rel = _time_at_arclength(s_spot, pt, ps)

        v_veh_spot = float(vprofile(s_star))
        gap = requested + spec.pet_zone_radius * (1.0 / v_veh_spot + 1.0 / ped_speed) - dt
        if gap <= 0:
            raise InputError(
                f"infeasible conflict timing: requested gap {requested} too small"
            )
        sign = 1.0 if i % 2 == 0 else -1.0
        t_ped_target = t_veh_abs + sign * gap
        launch_p = _quantize_frame(t_ped_target - t_ped_rel, dt)
        if launch_p * dt > t_ped_target - t_ped_rel + dt:
            raise InputError("infeasible conflict timing: pedestrian launch underflow")
        t_ped_abs = launch_p * dt + t_ped_rel

        schedule.add_vehicle([(c, s, launch_v * dt + t_rel_c)
                              for c, t_rel_c, s in vhypo])
        pa, pb = (b, a) if reverse else (a, b)
        t_a = launch_p * dt + PED_APPROACH_LENGTH / ped_speed
        t_b = t_a + float(np.linalg.norm(pb - pa)) / ped_speed
        schedule.add_ped(cw, t_a, t_b, pa, pb)

        emit(vid, ObjectClass.VEHICLE, vpath, vprofile, launch_v)
        emit(pid, ObjectClass.PEDESTRIAN, ppath, pprofile, launch_p)
        truth.vehicles[vid] = (direction, maneuver)
        truth.pedestrian_crosswalks[pid] = cw
        truth.conflicts.append(
            ConflictTruth(vehicle_id=vid, pedestrian_id=pid, requested_pet=requested,
                          point=spot, t_vehicle=round(t_veh_abs, 4),
                          t_pedestrian=round(t_ped_abs, 4))
        )

    # -- background vehicles -------------------------------------------------
    for direction in Direction:
        for maneuver in SUPPORTED_MANEUVERS:
            for j in range(spec.n_vehicles_per_cell):
                vid, vpath, vprofile, vt, vs, vcross, vhypo = make_vehicle(
                    direction, maneuver
                )
                base = (veh_counter * 7.3) % max(horizon - 20.0, 1.0)
                launch = None
                for attempt in range(600):
                    cand = _quantize_frame(base + attempt * 1.7, dt)
                    if cand * dt + vt[-1] > horizon + 60.0:
                        cand = _quantize_frame((attempt * 1.7) % horizon, dt)
                    abs_cross = [
                        (cw, spot, cand * dt + t_rel_c)
                        for cw, t_rel_c, spot in vhypo
                    ]
                    if schedule.vehicle_ok(abs_cross):
                        schedule.add_vehicle(abs_cross)
                        launch = cand
                        break
                if launch is None:
                    raise InputError("could not schedule a conflict-free vehicle")
                emit(vid, ObjectClass.VEHICLE, vpath, vprofile, launch)
                truth.vehicles[vid] = (direction, maneuver)

    # -- background pedestrians ----------------------------------------------
    ped_plan = [(cw, j) for cw in Direction for j in range(spec.n_pedestrians_per_crosswalk)]
    fast_plan = [(cw, -1) for cw in list(Direction)[: spec.n_fast_pedestrians]]
    for cw, j in ped_plan + fast_plan:
        fast = j == -1
        speed = 3.5 if fast else jitter(spec.pedestrian_speed, 0.1)
        offset = (2.0 * rng.random() - 1.0) * 1.2
        reverse = bool(rng.integers(2))
        pid, ppath, pprofile, pt, ps = make_ped(cw, reverse, offset, speed)
        a, b = _crosswalk_axis(cw)
        pa, pb = (b, a) if reverse else (a, b)
        base = (ped_counter * 9.1) % max(horizon - 30.0, 1.0)
        launch = None
        for attempt in range(600):
            cand = _quantize_frame(base + attempt * 1.7, dt)
            if cand * dt + pt[-1] > horizon + 60.0:
                cand = _quantize_frame((attempt * 1.7) % horizon, dt)
            t_a = cand * dt + PED_APPROACH_LENGTH / speed
            t_b = t_a + float(np.linalg.norm(pb - pa)) / speed
            if schedule.ped_ok(cw, t_a, t_b, pa, pb):
                schedule.add_ped(cw, t_a, t_b, pa, pb)
                launch = cand
                break
        if launch is None:
            raise InputError("could not schedule a conflict-free pedestrian")
        emit(pid, ObjectClass.PEDESTRIAN, ppath, pprofile, launch)
        truth.pedestrian_crosswalks[pid] = cw

    dataset = Dataset(trajectories=trajectories, frame_interval=dt)
    return dataset, truth
