import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crossrisk.errors import InputError
from crossrisk.trajectory import (
    ColumnSchema,
    Dataset,
    Direction,
    Maneuver,
    ObjectClass,
    TrackPoint,
    Trajectory,
    load_dataset,
    majority_vote_label,
    save_dataset,
)


def _write(tmp_path, rows, header="t,id,class,x,y,vx,vy,yaw_rate"):
    path = tmp_path / "data.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestMajorityVote:
    def test_strict_majority(self):
        labels = [ObjectClass.PEDESTRIAN, ObjectClass.PEDESTRIAN, ObjectClass.VEHICLE]
        assert majority_vote_label(labels) == ObjectClass.PEDESTRIAN

    def test_singleton(self):
        assert majority_vote_label([ObjectClass.VEHICLE]) == ObjectClass.VEHICLE

    def test_tie_breaks_to_first_appearing(self):
        labels = [ObjectClass.VEHICLE, ObjectClass.PEDESTRIAN]
        assert majority_vote_label(labels) == ObjectClass.VEHICLE
        labels = [ObjectClass.PEDESTRIAN, ObjectClass.VEHICLE]
        assert majority_vote_label(labels) == ObjectClass.PEDESTRIAN

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            majority_vote_label([])

    @given(st.lists(st.sampled_from(list(ObjectClass)), min_size=1, max_size=30))
    def test_winner_always_in_input(self, labels):
        assert majority_vote_label(labels) in labels


class TestTrackPoint:
    def test_create_flags_non_finite(self):
        p = TrackPoint.create(t=0.0, x=float("nan"), y=1.0, vx=0.0, vy=0.0)
        assert not p.valid
        p = TrackPoint.create(t=0.0, x=1.0, y=1.0, vx=0.0, vy=float("inf"))
        assert not p.valid

    def test_nan_yaw_rate_stays_valid(self):
        p = TrackPoint.create(t=0.0, x=1.0, y=1.0, vx=0.0, vy=0.0)
        assert p.valid and math.isnan(p.yaw_rate)

    def test_speed(self):
        assert TrackPoint.create(0.0, 0.0, 0.0, 3.0, 4.0).speed == 5.0


class TestTrajectoryInvariants:
    def test_empty_points_rejected(self):
        with pytest.raises(ValueError):
            Trajectory(id="a", object_class=ObjectClass.VEHICLE, points=())

    def test_non_monotone_timestamps_rejected(self):
        pts = (TrackPoint.create(1.0, 0, 0, 0, 0), TrackPoint.create(1.0, 1, 0, 0, 0))
        with pytest.raises(ValueError):
            Trajectory(id="a", object_class=ObjectClass.VEHICLE, points=pts)

    def test_duplicate_ids_rejected(self):
        t = Trajectory(id="a", object_class=ObjectClass.VEHICLE,
                       points=(TrackPoint.create(0.0, 0, 0, 0, 0),))
        with pytest.raises(ValueError):
            Dataset(trajectories=[t, t])


class TestLoadDataset:
    def test_single_object(self, tmp_path):
        path = _write(tmp_path, [
            "0.0,7,vehicle,1.0,2.0,3.0,4.0,0.1",
            "0.1,7,vehicle,1.3,2.4,3.0,4.0,0.1",
            "0.2,7,vehicle,1.6,2.8,3.0,4.0,0.1",
        ])
        ds = load_dataset(path)
        assert len(ds) == 1
        traj = ds.by_id("7")
        assert len(traj) == 3
        assert traj.object_class == ObjectClass.VEHICLE

    def test_interleaved_objects_sorted(self, tmp_path):
        path = _write(tmp_path, [
            "0.1,9,pedestrian,0,0,1,0,0",
            "0.0,7,vehicle,1,2,3,4,0",
            "0.0,9,pedestrian,0,0,1,0,0",
            "0.1,7,vehicle,1,2,3,4,0",
        ])
        ds = load_dataset(path)
        assert len(ds) == 2
        for traj in ds.trajectories:
            ts = [p.t for p in traj.points]
            assert ts == sorted(ts)

    def test_non_finite_row_kept_invalid(self, tmp_path):
        path = _write(tmp_path, ["0.0,1,pedestrian,NaN,2.0,0.5,0.5,0.0"])
        ds = load_dataset(path)
        assert len(ds.by_id("1")) == 1
        assert not ds.by_id("1").points[0].valid

    def test_duplicate_timestamp_keeps_first(self, tmp_path):
        path = _write(tmp_path, [
            "0.0,1,vehicle,1.0,0,0,0,0",
            "0.0,1,vehicle,9.0,0,0,0,0",
            "0.1,1,vehicle,2.0,0,0,0,0",
        ])
        traj = load_dataset(path).by_id("1")
        assert [p.x for p in traj.points] == [1.0, 2.0]

    def test_majority_vote_applied(self, tmp_path):
        path = _write(tmp_path, [
            "0.0,1,misc,0,0,0,0,0",
            "0.1,1,pedestrian,0,0,0,0,0",
            "0.2,1,pedestrian,0,0,0,0,0",
        ])
        assert load_dataset(path).by_id("1").object_class == ObjectClass.PEDESTRIAN

    def test_missing_column_raises(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,id,class,x,y,vx,vy\n0,1,vehicle,0,0,0,0\n")
        with pytest.raises(InputError):
            load_dataset(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(InputError):
            load_dataset(tmp_path / "nope.csv")

    def test_zero_usable_rows_raises(self, tmp_path):
        path = _write(tmp_path, [])
        with pytest.raises(InputError):
            load_dataset(path)

    def test_schema_mapping_and_degree_conversion(self, tmp_path):
        path = tmp_path / "mapped.csv"
        path.write_text(
            "time,track,label,px,py,sx,sy,yr\n"
            "0.0,5,vehicle,1,2,3,4,90.0\n"
        )
        schema = ColumnSchema(
            columns={"t": "time", "id": "track", "class": "label", "x": "px",
                     "y": "py", "vx": "sx", "vy": "sy", "yaw_rate": "yr"},
            yaw_rate_unit="deg_s",
        )
        traj = load_dataset(path, schema).by_id("5")
        assert traj.points[0].yaw_rate == pytest.approx(math.pi / 2.0)


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = tuple(
            TrackPoint.create(
                t=round(0.1 * k, 6),
                x=float(rng.normal()), y=float(rng.normal()),
                vx=float(rng.normal()), vy=float(rng.normal()),
                yaw_rate=float(rng.normal()),
            )
            for k in range(20)
        )
        bad = TrackPoint.create(t=2.0, x=float("nan"), y=0.0, vx=0.0, vy=0.0,
                                yaw_rate=0.0)
        traj = Trajectory(id="42", object_class=ObjectClass.VEHICLE,
                          points=pts + (bad,),
                          entering_direction=Direction.S, maneuver=Maneuver.LEFT)
        ds = Dataset(trajectories=[traj])
        path = tmp_path / "roundtrip.csv"
        save_dataset(ds, path)
        back = load_dataset(path).by_id("42")
        assert len(back) == len(traj)
        assert back.entering_direction == Direction.S
        assert back.maneuver == Maneuver.LEFT
        for a, b in zip(traj.points, back.points):
            assert a.t == b.t and a.valid == b.valid
            for name in ("x", "y", "vx", "vy", "yaw_rate"):
                va, vb = getattr(a, name), getattr(b, name)
                assert (math.isnan(va) and math.isnan(vb)) or va == vb
