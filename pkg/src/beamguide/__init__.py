"""beamguide: laser-projection guidance for manual assembly.

A simulated mobile robot assistant that projects laser marks onto a large
workpiece: rigid-body geometry, a 6R arm with numeric IK, mesh projection,
boresight calibration, fixture-based localization, base-station planning,
a line-protocol controller emulator, and an operator-driven sequencer.
"""

__version__ = "0.1.0"

from .geom import Ray, RigidTransform, Rotation

__all__ = ["Ray", "RigidTransform", "Rotation", "__version__"]
