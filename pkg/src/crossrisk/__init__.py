"""Trajectory-based pedestrian-vehicle conflict risk estimation at intersections."""

__version__ = "0.1.0"

from .trajectory import (  # noqa: F401
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
