"""Split counts on the real dataset; runs only when KITTI360_ROOT points at it."""
import os
from collections import Counter
from pathlib import Path

import pytest

from omnibev.config import load_config
from omnibev.converter.pipeline import convert_tree

ROOT = os.environ.get("KITTI360_ROOT")
CONFIG = Path(__file__).resolve().parents[1] / "configs" / "kitti360.yaml"

pytestmark = pytest.mark.skipif(not ROOT, reason="KITTI360_ROOT not set")


def test_split_counts():
    rs = convert_tree(ROOT, load_config(CONFIG).converter)
    split_of = {s["token"]: s["split"] for s in rs["scene"]}
    scenes = Counter(s["split"] for s in rs["scene"])
    samples = Counter(split_of[s["scene_token"]] for s in rs["sample"])
    assert (samples["train"], scenes["train"]) == (55526, 258)
    assert (samples["val"], scenes["val"]) == (8554, 41)
