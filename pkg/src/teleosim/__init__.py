"""Desk-scale leader-follower teleoperation simulator.

Modules:

- ``geometry``: SE(3) transforms, quaternions, twists
- ``leader``: view-hold and clutch state machines, command stream, scripts
- ``dynamics``: serial-chain rigid-body dynamics and penalty contacts
- ``controller``: saturated Cartesian impedance control
- ``observer``: momentum-based external wrench estimation
- ``haptics``: contact detection and haptic pattern synthesis
- ``depthcodec``: lossless depth compression and deprojection
- ``netsim``: datagram transport, traffic shaping, channel models, watchdog
- ``session``: virtual-clock orchestration, logs and metrics
- ``uibridge``: WebSocket bridge for the browser operator console
"""

__version__ = "0.1.0"

from .geometry import Transform, Twist, SpatialAccel, compose, invert  # noqa: F401
from .session import SessionConfig, SessionLog, run_session, metrics  # noqa: F401
