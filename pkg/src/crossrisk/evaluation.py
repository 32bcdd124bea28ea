"""Pipeline-level studies: trajectory-prediction accuracy of the learned
velocity field against the constant-acceleration baseline, and per-pair risk
streams over a whole scene."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gpr import GprModelPair, RolloutConfig, rollout
from .maneuver import ForestModel
from .risk import (
    dynamic_model_predict,
    estimate_risk,
    state_from_trajectory,
    trajectory_error,
)
from .ssm import compute_ttc, co_present_pairs
from .trajectory import Dataset, Maneuver, SUPPORTED_MANEUVERS, Trajectory


@dataclass
class ErrorRow:
    """Pooled prediction-error summary for one table cell."""

    group: int  # starting point or horizon, in frames
    maneuver: Maneuver
    gpr_mean: float
    gpr_std: float
    dynamic_mean: float
    dynamic_std: float
    n_vehicles: int
    n_points: int


def _window_is_valid(traj: Trajectory, start_index: int, steps: int) -> bool:
    if start_index < 1 or start_index + steps >= len(traj.points):
        return False
    return all(p.valid for p in traj.points[start_index - 1 : start_index + steps + 1])


def _vehicle_errors(traj: Trajectory, pair: GprModelPair, start_point: int,
                    steps: int, dt: float) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Per-step distances of the rollout and the kinematic baseline for one
    vehicle, predicting ``steps`` frames from 1-based ``start_point``."""
    idx = start_point - 1
    if not _window_is_valid(traj, idx, steps):
        return None
    start = traj.points[idx]
    actual = np.array([[p.x, p.y] for p in traj.points[idx + 1 : idx + 1 + steps]])
    _, predicted = rollout(pair, start.position, RolloutConfig(steps=steps, dt=dt))
    gpr_err = trajectory_error(predicted, actual).distances
    baseline = dynamic_model_predict(state_from_trajectory(traj, idx), dt, steps)
    dyn_err = trajectory_error(baseline, actual).distances
    return gpr_err, dyn_err


def _pooled_rows(dataset: Dataset, models: dict, start_point: int, steps: int,
                 group_value: int) -> list:
    """One row per maneuver, pooling per-step distances across vehicles."""
    rows = []
    dt = dataset.frame_interval
    for maneuver in SUPPORTED_MANEUVERS:
        gpr_all, dyn_all, n_veh = [], [], 0
        for traj in dataset.vehicles:
            if traj.maneuver != maneuver or traj.entering_direction is None:
                continue
            pair = models.get((traj.entering_direction, maneuver))
            if pair is None:
                continue
            res = _vehicle_errors(traj, pair, start_point, steps, dt)
            if res is None:
                continue
            gpr_all.append(res[0])
            dyn_all.append(res[1])
            n_veh += 1
        if not gpr_all:
            continue
        g = np.concatenate(gpr_all)
        d = np.concatenate(dyn_all)
        rows.append(ErrorRow(group=group_value, maneuver=maneuver,
                             gpr_mean=float(np.mean(g)), gpr_std=float(np.std(g)),
                             dynamic_mean=float(np.mean(d)),
                             dynamic_std=float(np.std(d)),
                             n_vehicles=n_veh, n_points=int(g.size)))
    return rows


def prediction_error_study(
    dataset: Dataset,
    models: dict,
    starting_points: Sequence[int] = (10, 15, 20),
    horizons: Sequence[int] = (10, 15, 20),
    rollout_steps: int = 30,
    horizon_start_point: int = 10,
) -> tuple[list, list]:
    """Pooled distance statistics for the two prediction-accuracy tables.

    The first table varies the starting point at a fixed rollout length; the
    second varies the prediction horizon from a fixed starting point.
    """
    start_rows, horizon_rows = [], []
    for sp in starting_points:
        start_rows.extend(_pooled_rows(dataset, models, sp, rollout_steps, sp))
    for h in horizons:
        horizon_rows.extend(_pooled_rows(dataset, models, horizon_start_point, h, h))
    return start_rows, horizon_rows


# ---------------------------------------------------------------------------
# Scene-wide risk streams
# ---------------------------------------------------------------------------


def compute_risk_streams(
    dataset: Dataset,
    models: dict,
    forest: ForestModel,
    rollout_cfg: RolloutConfig,
    conflict_radius: float = 1.0,
    ttc_radius: float = 1.0,
    frame_stride: int = 1,
    use_velocity_components: bool = False,
) -> dict:
    """Risk profile time series for every co-present vehicle-pedestrian pair.

    Frames are matched on identical timestamps (the shared frame grid).
    Pairs whose vehicle lacks every cluster model are skipped.
    """
    streams: dict = {}
    ped_index = {
        ped.id: {round(p.t, 6): i for i, p in enumerate(ped.points) if p.valid}
        for ped in dataset.pedestrians
    }
    for veh, ped in co_present_pairs(dataset):
        if veh.entering_direction is None:
            continue
        if not any((veh.entering_direction, m) in models for m in SUPPORTED_MANEUVERS):
            continue
        lookup = ped_index[ped.id]
        profile_list = []
        for vi in range(0, len(veh.points), frame_stride):
            vp = veh.points[vi]
            if not vp.valid or not math.isfinite(vp.yaw_rate):
                continue
            pi = lookup.get(round(vp.t, 6))
            if pi is None:
                continue
            ped_state = state_from_trajectory(ped, pi)
            veh_state = state_from_trajectory(veh, vi)
            ttc = compute_ttc(veh_state, ped_state, ttc_radius)
            profile_list.append(
                estimate_risk(vp, veh.entering_direction, ped_state, models, forest,
                              rollout_cfg, radius=conflict_radius, ttc_baseline=ttc,
                              use_velocity_components=use_velocity_components)
            )
        if profile_list:
            streams[(veh.id, ped.id)] = profile_list
    return streams
