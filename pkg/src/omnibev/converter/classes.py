"""Source label to detection category mapping.

The ten evaluation classes are the seven standard nuScenes vehicle/human
classes plus ``pole``, ``object`` and ``traffic_sign``. Categories outside
the standard nuScenes detection set are flagged as extensions.
"""
from __future__ import annotations

NUSCENES_DETECTION_CLASSES = frozenset({
    "car", "truck", "bus", "trailer", "construction_vehicle",
    "pedestrian", "motorcycle", "bicycle", "traffic_cone", "barrier",
})

EVAL_CLASSES = (
    "car", "truck", "trailer", "bus", "bicycle", "motorcycle",
    "pedestrian", "pole", "object", "traffic_sign",
)

# KITTI-360 label name -> category
LABEL_MAP = {
    "car": "car",
    "truck": "truck",
    "trailer": "trailer",
    "caravan": "trailer",
    "bus": "bus",
    "bicycle": "bicycle",
    "motorcycle": "motorcycle",
    "person": "pedestrian",
    "rider": "pedestrian",
    "pole": "pole",
    "smallPole": "pole",
    "lamp": "pole",
    "trafficSign": "traffic_sign",
    "trashbin": "object",
    "vendingmachine": "object",
    "box": "object",
    "unknownObject": "object",
    "trafficLight": "traffic_light",
    "building": "building",
    "garage": "building",
    "train": "train",
    "unknownVehicle": "vehicle_other",
    "gate": "gate",
    "stop": "stop",
    "fence": "fence",
    "wall": "wall",
    "guardRail": "guard_rail",
    "unknownConstruction": "construction_other",
}


class UnmappedLabelError(KeyError):
    """Source label missing from the mapping table."""


def map_classes(source_label: str) -> tuple[str, bool]:
    """Return ``(category, is_extension)`` for a source label."""
    try:
        category = LABEL_MAP[source_label]
    except KeyError:
        raise UnmappedLabelError(f"unmapped source label {source_label!r}") from None
    return category, category not in NUSCENES_DETECTION_CLASSES


def all_categories() -> list[str]:
    return sorted(set(LABEL_MAP.values()))
