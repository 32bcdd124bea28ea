import math

import pytest
from hypothesis import given, settings, strategies as st

from crossrisk.errors import InputError
from crossrisk.geometry import IntersectionGeometry
from crossrisk.preprocess import (
    MergeCriteria,
    classify_entering_direction,
    classify_movement,
    filter_pedestrian_trajectories,
    merge_pedestrian_trajectories,
    preprocess_dataset,
)
from crossrisk.synth import ScenarioSpec, canonical_endpoints, generate_scenario
from crossrisk.trajectory import (
    Direction,
    Maneuver,
    ObjectClass,
    TrackPoint,
    Trajectory,
)


@pytest.fixture(scope="module")
def geom():
    return IntersectionGeometry(endpoints=canonical_endpoints())


def _traj(traj_id, samples, object_class=ObjectClass.PEDESTRIAN):
    """samples: list of (t, x, y, vx, vy)."""
    pts = tuple(TrackPoint.create(t=t, x=x, y=y, vx=vx, vy=vy, yaw_rate=0.0)
                for t, x, y, vx, vy in samples)
    return Trajectory(id=traj_id, object_class=object_class, points=pts)


def _vehicle_path(traj_id, xy_list, dt=0.1):
    samples = []
    for i, (x, y) in enumerate(xy_list):
        if i + 1 < len(xy_list):
            vx = (xy_list[i + 1][0] - x) / dt
            vy = (xy_list[i + 1][1] - y) / dt
        samples.append((round(i * dt, 6), x, y, vx, vy))
    return _traj(traj_id, samples, ObjectClass.VEHICLE)


class TestEnteringDirection:
    def test_deep_south_point(self, geom):
        t = _vehicle_path("v", [(1.0, -25.0), (1.0, -24.0)])
        assert classify_entering_direction(t, geom) == Direction.S

    def test_east_of_center(self, geom):
        t = _vehicle_path("v", [(10.0, 0.0), (9.0, 0.0)])
        assert classify_entering_direction(t, geom) == Direction.E

    def test_boundary_point_counterclockwise(self, geom):
        # exactly on the NE diagonal: deterministic counterclockwise pick (N)
        t = _vehicle_path("v", [(20.0, 20.0), (19.0, 19.0)])
        assert classify_entering_direction(t, geom) == Direction.N

    def test_no_valid_points_raises(self, geom):
        pts = (TrackPoint.create(0.0, float("nan"), 0.0, 0.0, 0.0),)
        t = Trajectory(id="v", object_class=ObjectClass.VEHICLE, points=pts)
        with pytest.raises(ValueError):
            classify_entering_direction(t, geom)


class TestMovement:
    def test_opposite_quadrants_is_straight(self, geom):
        t = _vehicle_path("v", [(1.0, -25.0), (1.0, 0.0), (1.0, 25.0)])
        assert classify_movement(t, geom) == Maneuver.STRAIGHT

    def test_hand_drawn_left_turn_arc(self, geom):
        # south entry curving into the east quadrant: a left turn by the
        # counterclockwise labeling convention
        pts = []
        r, cx, cy = 10.0, 11.75, -11.75
        for k in range(21):
            theta = math.pi - (math.pi / 2.0) * k / 20.0
            pts.append((cx + r * math.cos(theta), cy + r * math.sin(theta)))
        pts = [(1.75, -25.0)] + pts + [(25.0, -1.75)]
        t = _vehicle_path("v", pts)
        assert classify_movement(t, geom) == Maneuver.LEFT

    def test_clockwise_exit_is_right_turn(self, geom):
        t = _vehicle_path("v", [(1.0, -25.0), (0.5, -5.0), (-25.0, 1.0)])
        assert classify_movement(t, geom) == Maneuver.RIGHT

    def test_never_crossing_is_unsupported(self, geom):
        t = _vehicle_path("v", [(1.0, -25.0), (1.0, -20.0), (1.0, -15.0)])
        assert classify_movement(t, geom) == Maneuver.UNSUPPORTED

    def test_u_turn_is_unsupported(self, geom):
        t = _vehicle_path("v", [(1.0, -25.0), (0.0, 5.0), (-1.0, -25.0)])
        assert classify_movement(t, geom) == Maneuver.UNSUPPORTED


def _fragment(traj_id, t0, p0, heading_deg, n=6, speed=1.0, dt=0.1):
    """Straight pedestrian fragment starting at p0 moving along heading."""
    vx = speed * math.cos(math.radians(heading_deg))
    vy = speed * math.sin(math.radians(heading_deg))
    samples = [
        (round(t0 + i * dt, 6), p0[0] + vx * i * dt, p0[1] + vy * i * dt, vx, vy)
        for i in range(n)
    ]
    return _traj(traj_id, samples)


class TestMergeCriteria:
    def test_all_four_criteria_met_merges(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)       # ends (0.5, 0) at t=0.5
        b = _fragment("b", 0.6, (1.0, 0.0), 0.0)
        merged = merge_pedestrian_trajectories([a, b])
        assert len(merged) == 1
        ts = [p.t for p in merged[0].points]
        assert ts == sorted(ts) and len(ts) == 12

    def test_time_gap_boundary(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)
        at_boundary = _fragment("b", 0.7, (0.7, 0.0), 0.0)  # gap 0.2 from t=0.5
        assert len(merge_pedestrian_trajectories([a, at_boundary])) == 1
        over = _fragment("c", 0.81, (0.7, 0.0), 0.0)
        assert len(merge_pedestrian_trajectories([a, over])) == 2

    def test_distance_boundary(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)       # ends at (0.5, 0)
        at_boundary = _fragment("b", 0.6, (1.5, 0.0), 0.0)  # exactly 1.0 m
        assert len(merge_pedestrian_trajectories([a, at_boundary])) == 1
        over = _fragment("c", 0.6, (1.51, 0.0), 0.0)
        assert len(merge_pedestrian_trajectories([a, over])) == 2

    def test_heading_boundary(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)
        at_boundary = _fragment("b", 0.6, (0.6, 0.0), 90.0)
        assert len(merge_pedestrian_trajectories([a, at_boundary])) == 1
        over = _fragment("c", 0.6, (0.6, 0.0), 90.5)
        assert len(merge_pedestrian_trajectories([a, over])) == 2

    def test_chord_angle_boundary(self):
        # chord difference exactly 120 deg while the junction heading stays
        # within 90: the tail walks one way but is oriented back toward it
        a = _fragment("a", 0.0, (0.0, 0.0), 60.0)
        b = _fragment("b", 0.6, (0.4, 0.3), 180.0)  # heading diff 120 > 90
        assert len(merge_pedestrian_trajectories([a, b])) == 2

        # isolate the chord criterion: loose heading limit, tight chord limit
        crit = MergeCriteria(max_heading_diff=179.0, max_traj_angle_diff=120.0)
        assert len(merge_pedestrian_trajectories([a, b], crit)) == 1
        tight = MergeCriteria(max_heading_diff=179.0, max_traj_angle_diff=119.0)
        assert len(merge_pedestrian_trajectories([a, b], tight)) == 2

    def test_smaller_time_gap_candidate_wins(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)
        near = _fragment("near", 0.6, (0.6, 0.0), 0.0)        # gap 0.1
        late = _fragment("late", 0.7, (0.55, 0.0), 0.0)       # gap 0.2, closer
        merged = merge_pedestrian_trajectories([a, near, late])
        by_id = {m.id: m for m in merged}
        assert set(by_id) == {"a", "late"}
        assert any(p.x == pytest.approx(0.6) for p in by_id["a"].points)

    def test_each_fragment_consumed_once(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)
        b = _fragment("b", 0.0, (0.0, 1.0), 0.0)
        tail = _fragment("tail", 0.6, (0.6, 0.0), 0.0)
        merged = merge_pedestrian_trajectories([a, b, tail])
        total_points = sum(len(m) for m in merged)
        assert total_points == 18
        assert len(merged) == 2

    def test_chain_of_three(self):
        a = _fragment("a", 0.0, (0.0, 0.0), 0.0)
        b = _fragment("b", 0.6, (0.6, 0.0), 0.0)
        c = _fragment("c", 1.2, (1.2, 0.0), 0.0)
        merged = merge_pedestrian_trajectories([a, b, c])
        assert len(merged) == 1 and len(merged[0]) == 18

    def test_non_pedestrian_rejected(self):
        v = _vehicle_path("v", [(0, 0), (1, 0)])
        with pytest.raises(InputError):
            merge_pedestrian_trajectories([v])

    def test_merge_idempotent(self):
        frags = [
            _fragment("a", 0.0, (0.0, 0.0), 0.0),
            _fragment("b", 0.6, (0.6, 0.0), 0.0),
            _fragment("c", 5.0, (10.0, 0.0), 0.0),
        ]
        once = merge_pedestrian_trajectories(frags)
        twice = merge_pedestrian_trajectories(once)
        assert [m.id for m in twice] == [m.id for m in once]
        assert sum(len(m) for m in twice) == sum(len(m) for m in once)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(
        st.tuples(st.floats(0, 5), st.floats(-3, 3), st.floats(-3, 3),
                  st.floats(0, 359)),
        min_size=1, max_size=6))
    def test_merge_never_drops_points_or_breaks_time_order(self, specs):
        frags = [
            _fragment(f"f{i}", round(t0, 1), (x, y), h)
            for i, (t0, x, y, h) in enumerate(specs)
        ]
        # unique start times keep fragment timestamps strictly increasing
        seen = set()
        unique = []
        for f in frags:
            if f.start_time not in seen:
                seen.add(f.start_time)
                unique.append(f)
        merged = merge_pedestrian_trajectories(unique)
        assert sum(len(m) for m in merged) == sum(len(f) for f in unique)
        for m in merged:
            ts = [p.t for p in m.points]
            assert ts == sorted(ts) and len(set(ts)) == len(ts)


class TestFilters:
    def _good_walk(self, geom):
        # along the north crosswalk, 10 s, ~14 m, all valid
        samples = [
            (round(i * 0.1, 6), -7.0 + i * 0.014 * 100 * 0.1, 10.0, 1.4, 0.0)
            for i in range(101)
        ]
        return _traj("good", samples)

    def test_good_trajectory_kept(self, geom):
        kept, removed = filter_pedestrian_trajectories([self._good_walk(geom)], geom)
        assert len(kept) == 1 and not removed

    def test_short_duration_removed(self, geom):
        samples = [(round(i * 0.1, 6), i * 1.0, 10.0, 10.0, 0.0) for i in range(9)]
        t = _traj("short", samples)  # 0.8 s
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert not kept and "too_short" in removed["short"]

    def test_short_path_removed(self, geom):
        samples = [(round(i * 0.1, 6), 0.01 * i, 10.0, 0.1, 0.0) for i in range(30)]
        t = _traj("slowpoke", samples)  # 2.9 s but only 0.29 m
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert "too_short" in removed["slowpoke"]

    def test_mostly_invalid_removed(self, geom):
        samples = [(round(i * 0.1, 6), -7 + 0.2 * i, 10.0, 2.0, 0.0) for i in range(40)]
        pts = list(_traj("x", samples).points)
        for i in range(0, 40, 2):  # exactly 50% invalid
            pts[i] = TrackPoint.create(pts[i].t, float("nan"), 10.0, 2.0, 0.0)
        t = Trajectory(id="halfbad", object_class=ObjectClass.PEDESTRIAN,
                       points=tuple(pts))
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert "invalid_points" in removed["halfbad"]

    def test_sustained_fast_movement_removed(self, geom):
        # 12 consecutive points at 3.5 m/s amid an otherwise slow walk
        samples = []
        x = -7.0
        for i in range(60):
            v = 3.5 if 20 <= i < 32 else 1.2
            samples.append((round(i * 0.1, 6), x, 10.0, v, 0.0))
            x += v * 0.1
        t = _traj("runner", samples)
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert "too_fast" in removed["runner"]

    def test_nine_fast_points_not_removed(self, geom):
        samples = []
        x = -7.0
        for i in range(110):
            v = 3.5 if 20 <= i < 29 else 1.4
            samples.append((round(i * 0.1, 6), x, 10.0, v, 0.0))
            x += v * 0.1
        t = _traj("jogger", samples)
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert kept and "jogger" not in removed

    def test_wanderer_outside_regions_removed(self, geom):
        samples = [(round(i * 0.1, 6), 30.0 + 0.14 * i, 30.0, 1.4, 0.0)
                   for i in range(90)]
        t = _traj("wanderer", samples)
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert "outside_regions" in removed["wanderer"]

    def test_jaywalker_in_roadway_removed(self, geom):
        # diagonal through the middle of the intersection, off every crosswalk
        samples = [(round(i * 0.1, 6), -6.0 + 0.1 * i, -6.0 + 0.1 * i, 1.0, 1.0)
                   for i in range(120)]
        t = _traj("jaywalker", samples)
        kept, removed = filter_pedestrian_trajectories([t], geom)
        assert "leaves_crosswalk" in removed["jaywalker"]


class TestFullPreprocess:
    def test_zero_noise_scene_labels_match_truth(self, geom):
        spec = ScenarioSpec(seed=2, n_vehicles_per_cell=1,
                            n_pedestrians_per_crosswalk=1,
                            noise_std_position=0.0, noise_std_velocity=0.0)
        dataset, truth = generate_scenario(spec)
        labeled, report = preprocess_dataset(dataset, geom)
        assert report.vehicles_labeled == len(truth.vehicles)
        for traj in labeled.vehicles:
            want_dir, want_man = truth.vehicles[traj.id]
            assert traj.entering_direction == want_dir
            assert traj.maneuver == want_man
        assert report.pedestrians_retained == len(truth.pedestrian_crosswalks)
        assert len(report.cluster_counts) == 12

    def test_report_text_renders(self, geom):
        spec = ScenarioSpec(seed=2, n_vehicles_per_cell=1,
                            n_pedestrians_per_crosswalk=0)
        dataset, _ = generate_scenario(spec)
        _, report = preprocess_dataset(dataset, geom)
        text = report.to_text()
        assert "vehicles labeled" in text and "pedestrians retained" in text
