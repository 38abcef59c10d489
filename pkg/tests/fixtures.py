"""Mission contexts for exercising scripts outside a trial."""

from sonswarm.model import PlanarVelocity, RobotKind
from sonswarm.runtime import MissionContext
from sonswarm.sim import ObstacleSighting, Perception
from sonswarm.sons import Entry, GlobalEstimate

CONSTANTS = {"target_speed": 0.1, "theta2": 0.3, "theta3": 0.1, "d_safe": 0.1, "body_radius": 0.1, "dt": 0.1}
BODY = CONSTANTS["body_radius"]


def sighting_at_distance(oid, distance, bearing_x, bearing_y, radius=0.1):
    """Obstacle whose surface is ``distance`` from the robot's body along a unit bearing."""
    centre = distance + radius + BODY
    return ObstacleSighting(oid, centre * bearing_x, centre * bearing_y, radius)


def robot_ctx(obstacles=(), rid=2, tick=0):
    return MissionContext(rid, False, Perception(rid, tick, tuple(obstacles)), PlanarVelocity(0.0), CONSTANTS, tick)


def brain_ctx(ground, obstacles, rid=1, tick=5):
    """Brain context with ground robots [(id, x, y)] and obstacles [(id, x, y, r)] in its frame."""
    entries = {("robot", g): Entry("robot", g, x, y, tick, 0.0, RobotKind.GROUND) for g, x, y in ground}
    entries[("robot", rid)] = Entry("robot", rid, 0.0, 0.0, tick, 0.0, RobotKind.AERIAL)
    for oid, x, y, r in obstacles:
        entries[("obstacle", oid)] = Entry("obstacle", oid, x, y, tick, r)
    est = GlobalEstimate(rid, tick, entries, {})
    return MissionContext(
        rid, True, Perception(rid, tick), PlanarVelocity(0.0), CONSTANTS, tick, est, kind="aerial", body_radius=0.25
    )


SQUARE = [(10, 0.25, 0.25), (11, 0.25, -0.25), (12, -0.25, 0.25), (13, -0.25, -0.25)]
