from __future__ import annotations

import numpy as np
import pytest

from macronav.sim import FloorPlan, Pose, Scene, SceneConfig, SceneObject


def make_scene(objects, walls=(), rooms=((-20.0, -20.0, 20.0, 20.0),), spawn=Pose(0.0, 0.0, 0.0), **cfg_kw):
    """A hand-built scene: ``objects`` is a list of (class_id, (x, y)) or SceneObject."""
    objs = []
    for k, o in enumerate(objects):
        if isinstance(o, SceneObject):
            objs.append(o)
        else:
            cls, pos = o
            objs.append(SceneObject(k, cls, tuple(map(float, pos)), 1000 + k))
    n_t = cfg_kw.pop("n_targets", None)
    targets = [o for o in objs if o.is_target]
    cfg = SceneConfig(n_targets=n_t or max(1, len(targets)), **cfg_kw)
    plan = FloorPlan(list(rooms), [], np.asarray(walls, dtype=float).reshape(-1, 4))
    return Scene(0, cfg, plan, objs, spawn)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
