import math

import pytest

from beamguide.arm import default_model
from beamguide.demo import build_demo_workcell
from beamguide.optics import BeamOffset, LaserDevice, LaserRig
from beamguide.planner import make_plan


@pytest.fixture(scope="session")
def demo_cell():
    return build_demo_workcell()


@pytest.fixture(scope="session")
def demo_arm():
    return default_model()


@pytest.fixture(scope="session")
def demo_rig():
    return LaserRig(
        devices=(
            LaserDevice(
                offset=BeamOffset(math.radians(0.4), math.radians(-0.25)),
                fan_normal=(1.0, 0.0, 0.0),
            ),
            LaserDevice(fan_normal=(0.0, 1.0, 0.0)),
        )
    )


@pytest.fixture(scope="session")
def demo_plan(demo_cell, demo_arm, demo_rig):
    return make_plan(demo_cell, demo_arm, demo_rig, seed=1)
