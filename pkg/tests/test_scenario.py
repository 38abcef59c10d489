import pytest

from sonswarm.errors import ParseError, ValidationError
from sonswarm.model import RobotKind
from sonswarm.scenario import (
    demo_scenario,
    dump_scenario,
    load_scenario,
    parse_scenario,
    sim_scenario,
    slice_gaps_ok,
    without_obstacles,
)

HEADER = """\
dt = 0.1
seed = 4
max_ticks = 100
target_speed = 0.1
theta1 = 50
theta2 = 0.3
theta3 = 0.1
d_safe = 0.1
formation_spacing = 0.5
finish_line_x = 3.0
arena = -2 -3 8 3
"""


def test_bundled_demo_shape():
    s = load_scenario("demo")
    assert len(s.ground_ids) == 4 and len(s.aerial_ids) == 2
    assert len(s.obstacles) == 2
    assert s == demo_scenario()


def test_bundled_sim_shape():
    s = load_scenario("sim")
    assert len(s.ground_ids) == 25 and len(s.aerial_ids) == 9
    assert len(s.obstacles) == 15
    assert s == sim_scenario()
    body = s.specs[s.ground_ids[0]].body_radius
    xs = [o.x for o in s.obstacles]
    assert slice_gaps_ok(s.obstacles, s.arena[1], s.arena[3], 2 * (body + s.d_safe), min(xs), max(xs))


def test_dump_round_trip():
    for s in (demo_scenario(), sim_scenario()):
        assert parse_scenario(dump_scenario(s), s.name) == s


def test_minimal_file_gets_defaults():
    s = parse_scenario(HEADER + "[robot]\nkind = ground\nx = 0\ny = 0\n")
    assert s.robots[0].spec.id == 1
    assert s.robots[0].spec.kind is RobotKind.GROUND
    assert s.progress_epsilon == pytest.approx(0.2 * 0.1 * 0.1)
    assert s.default_brain() == 1


@pytest.mark.parametrize(
    "text",
    [
        HEADER + "[robot]\nkind = ground\nx = 0\n",
        HEADER + "[robot]\nkind = wheel\nx = 0\ny = 0\n",
        HEADER + "[robot]\nkind = ground\nx = zero\ny = 0\n",
        HEADER + "bogus = 1\n",
        HEADER + "dt = 0.2\n",
        HEADER + "[lamp]\n",
        HEADER.replace("arena = -2 -3 8 3", "arena = 1 2 3"),
        HEADER.replace("dt = 0.1\n", ""),
        HEADER + "[robot]\nkind = ground\nx = nan\ny = 0\n",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_scenario(text)


@pytest.mark.parametrize(
    "extra",
    [
        "",  # no robots
        "[robot]\nkind = aerial\nx = 0\ny = 0\n",  # no ground robots
        "[robot]\nid = 1\nkind = ground\nx = 0\ny = 0\n[robot]\nid = 1\nkind = ground\nx = 1\ny = 0\n",
        "[robot]\nkind = ground\nx = 0\ny = 0\n[obstacle]\nx = 0.3\ny = 0\nradius = 0.1\n",
        "[robot]\nkind = ground\nx = 50\ny = 0\n",
    ],
)
def test_validation_errors(extra):
    with pytest.raises(ValidationError):
        parse_scenario(HEADER + extra)


def test_validation_of_numbers():
    with pytest.raises(ValidationError):
        parse_scenario(HEADER.replace("dt = 0.1", "dt = 0") + "[robot]\nkind = ground\nx = 0\ny = 0\n")


def test_aerial_may_start_over_obstacle():
    s = parse_scenario(HEADER + "[robot]\nkind = ground\nx = -1\ny = 0\n[robot]\nkind = aerial\nx = 0\ny = 0\n"
                       "[obstacle]\nx = 0\ny = 0\nradius = 0.2\n")
    assert s.default_brain() == 2


def test_slice_gaps_detects_wall():
    from sonswarm.model import Obstacle

    wall = [Obstacle(i, 1.0, y / 2, 0.3) for i, y in enumerate(range(-6, 7))]
    assert not slice_gaps_ok(wall, -3, 3, 0.4, 0.5, 1.5)
    assert slice_gaps_ok(wall[:3], -3, 3, 0.4, 0.5, 1.5)


def test_without_obstacles():
    assert without_obstacles(demo_scenario()).obstacles == ()


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "nope.scn")
