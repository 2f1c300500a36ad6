"""Named body-part partitions of common skeleton layouts (five parts each)."""

from __future__ import annotations

from mqa.errors import ConfigurationError

PART_NAMES = ("trunk_head", "left_arm", "right_arm", "left_leg", "right_leg")
UPPER_BODY_PARTS = ("trunk_head", "left_arm", "right_arm")

PRESETS: dict[str, dict[str, list[int]]] = {
    # Kinect v2 joint order (SpineBase=0 ... ThumbRight=24)
    "kinect25": {
        "trunk_head": [0, 1, 2, 3, 20],
        "left_arm": [4, 5, 6, 7, 21, 22],
        "right_arm": [8, 9, 10, 11, 23, 24],
        "left_leg": [12, 13, 14, 15],
        "right_leg": [16, 17, 18, 19],
    },
    # UI-PRMD processed Kinect layout: waist..head tip, then arms, then legs
    "uiprmd_kinect22": {
        "trunk_head": [0, 1, 2, 3, 4, 5],
        "left_arm": [6, 7, 8, 9],
        "right_arm": [10, 11, 12, 13],
        "left_leg": [14, 15, 16, 17],
        "right_leg": [18, 19, 20, 21],
    },
    # contiguous placeholder; replace with the true marker grouping when known
    "vicon39": {
        "trunk_head": list(range(0, 7)),
        "left_arm": list(range(7, 15)),
        "right_arm": list(range(15, 23)),
        "left_leg": list(range(23, 31)),
        "right_leg": list(range(31, 39)),
    },
    "synthetic10": {
        "trunk_head": [0, 1],
        "left_arm": [2, 3],
        "right_arm": [4, 5],
        "left_leg": [6, 7],
        "right_leg": [8, 9],
    },
}

_BY_JOINT_COUNT = {25: "kinect25", 22: "uiprmd_kinect22", 39: "vicon39", 10: "synthetic10"}


def preset(name: str) -> dict[str, list[int]]:
    try:
        return {k: list(v) for k, v in PRESETS[name].items()}
    except KeyError:
        raise ConfigurationError(f"unknown body-part preset {name!r}; known: {sorted(PRESETS)}") from None


def default_parts(joint_count: int) -> dict[str, list[int]]:
    """The preset matching ``joint_count`` joints."""
    if joint_count not in _BY_JOINT_COUNT:
        raise ConfigurationError(
            f"no body-part preset for {joint_count} joints; pass body_parts explicitly"
        )
    return preset(_BY_JOINT_COUNT[joint_count])


def check_partition(parts: dict[str, list[int]], joint_count: int) -> None:
    """Raise unless ``parts`` covers ``0..joint_count-1`` exactly once."""
    if not parts:
        raise ConfigurationError("body_parts is empty")
    for name, joints in parts.items():
        if not joints:
            raise ConfigurationError(f"body part {name!r} has no joints")
    flat = sorted(j for joints in parts.values() for j in joints)
    if flat != list(range(joint_count)):
        missing = sorted(set(range(joint_count)) - set(flat))
        extra = sorted(j for j in set(flat) if not 0 <= j < joint_count)
        dup = sorted({j for j in flat if flat.count(j) > 1})
        raise ConfigurationError(
            f"body_parts must partition joints 0..{joint_count - 1}: missing={missing} out_of_range={extra} duplicated={dup}"
        )
