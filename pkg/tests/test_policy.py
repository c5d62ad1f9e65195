import math

import numpy as np
import pytest

from evade import policy as pol
from evade import scenario as sc
from evade import world as wd

ROAD = wd.RoadTopology(wd.RoadKind.INTERSECTION, 15.0, 15.0)
ONE_WAY = wd.RoadTopology(wd.RoadKind.ONE_WAY_MULTILANE, 1.5, 10.0)


def ego(speed):
    return wd.VehicleState(speed=speed)


def snapshot(ego_state, participants=(), obstacles=(), road=ROAD):
    return sc.ScenarioSnapshot(timestamp=0.0, ego=ego_state, road=road,
                               participants=tuple(participants),
                               obstacles=tuple(obstacles))


class TestCatalog:
    def test_id_name_bijection(self):
        names = ["AEB", "AES_L", "AES_R", "ES_B_L", "ES_B_R",
                 "T_D_L", "T_D_R", "NI"]
        for i, name in enumerate(names):
            assert pol.Policy(i).name == name
            assert int(pol.Policy[name]) == i

    def test_severity_classes(self):
        assert pol.trigger_severity(pol.Policy.ES_B_L) == 0.5
        assert pol.trigger_severity(pol.Policy.T_D_R) == 1.0
        assert pol.trigger_severity(pol.Policy.NI) == 0.0
        for p in pol.Policy:
            expected = 0.0 if p == pol.Policy.NI else \
                (1.0 if p in (pol.Policy.T_D_L, pol.Policy.T_D_R) else 0.5)
            assert pol.trigger_severity(p) == expected


class TestGenerate:
    def test_aeb_stopping_distance(self):
        t = pol.generate(pol.Policy.AEB, ego(12.0), ROAD)
        stop_index = int(np.argmax(t.speeds == 0.0))
        assert t.xs[stop_index] == pytest.approx(9.0)
        assert t.terminal == pol.Terminal.STOPPED
        assert np.all(t.ys == 0.0)

    def test_ni_constant_velocity(self):
        t = pol.generate(pol.Policy.NI, ego(14.0), ROAD)
        i = int(round(1.0 / wd.DEFAULT_DT))
        assert t.xs[i] == pytest.approx(14.0)
        assert t.ys[i] == 0.0

    def test_drift_terminal_conditions(self):
        t = pol.generate(pol.Policy.T_D_R, ego(14.0), ROAD)
        assert math.degrees(t.headings[-1]) == pytest.approx(-90.0, abs=2.0)
        assert t.speeds[-1] == 0.0
        assert t.terminal == pol.Terminal.PERPENDICULAR
        assert t.ys[-1] < -2.0  # displaced toward the drift side

    def test_lane_change_completes_one_lane(self):
        t = pol.generate(pol.Policy.AES_L, ego(12.0), ROAD)
        assert t.ys[-1] == pytest.approx(ROAD.lane_width_m)
        assert np.all(t.speeds == 12.0)
        i = int(round(pol.LANE_CHANGE_TIME_S / wd.DEFAULT_DT))
        assert t.ys[i] == pytest.approx(ROAD.lane_width_m)

    def test_braking_lane_change_target_speed(self):
        t = pol.generate(pol.Policy.ES_B_R, ego(12.0), ROAD, target_speed=8.0)
        assert t.speeds.min() == pytest.approx(8.0)
        assert t.speeds[-1] == pytest.approx(8.0)

    @pytest.mark.parametrize("left,right", [
        (pol.Policy.AES_L, pol.Policy.AES_R),
        (pol.Policy.ES_B_L, pol.Policy.ES_B_R),
        (pol.Policy.T_D_L, pol.Policy.T_D_R)])
    def test_left_right_mirror_images(self, left, right):
        tl = pol.generate(left, ego(13.0), ROAD)
        tr = pol.generate(right, ego(13.0), ROAD)
        assert np.allclose(tl.xs, tr.xs)
        assert np.allclose(tl.ys, -tr.ys)
        assert np.allclose(tl.headings, -tr.headings)
        assert np.array_equal(tl.speeds, tr.speeds)

    @pytest.mark.parametrize("policy", [
        pol.Policy.AEB, pol.Policy.ES_B_L, pol.Policy.ES_B_R,
        pol.Policy.T_D_L, pol.Policy.T_D_R])
    def test_speed_profiles_non_increasing(self, policy):
        t = pol.generate(policy, ego(14.0), ROAD)
        assert np.all(np.diff(t.speeds) <= 1e-12)

    def test_time_monotone(self):
        t = pol.generate(pol.Policy.AES_R, ego(10.0), ROAD)
        assert np.all(np.diff(t.times) > 0)

    def test_world_frame_offset(self):
        start = wd.VehicleState(position=(50.0, 2.0), speed=10.0)
        t = pol.generate(pol.Policy.AEB, start, ROAD)
        assert t.xs[0] == pytest.approx(50.0)
        assert t.ys[0] == pytest.approx(2.0)

    def test_invalid_id_rejected(self):
        with pytest.raises(ValueError):
            pol.generate(42, ego(10.0), ROAD)

    def test_intervention_needs_motion(self):
        with pytest.raises(ValueError):
            pol.generate(pol.Policy.AEB, ego(0.0), ROAD)
        # NI is fine at a standstill.
        pol.generate(pol.Policy.NI, ego(0.0), ROAD)

    def test_rows_export(self):
        t = pol.generate(pol.Policy.AEB, ego(10.0), ROAD)
        rows = t.rows()
        assert len(rows) == len(t.times)
        assert rows[0] == (0.0, 0.0, 0.0, 0.0, 10.0)


class TestValidate:
    def test_ni_in_empty_scene_passes(self):
        t = pol.generate(pol.Policy.NI, ego(12.0), ROAD)
        result = pol.validate(t, snapshot(ego(12.0)))
        assert result.passed

    def test_validation_deterministic(self):
        t = pol.generate(pol.Policy.T_D_R, ego(14.0), ROAD)
        s = snapshot(ego(14.0))
        assert pol.validate(t, s) == pol.validate(t, s)

    def test_narrow_left_boundary_fails_lane_change(self):
        # 1.5 m to the left boundary cannot absorb a 3.5 m lane change.
        t = pol.generate(pol.Policy.AES_L, ego(12.0), ONE_WAY)
        result = pol.validate(t, snapshot(ego(12.0), road=ONE_WAY))
        assert not result.passed
        assert result.reason == "road-bounds"

    def test_merging_suv_occupies_target_lane(self):
        suv = wd.ParticipantState("s", "suv", (6.6, -4.0), (10.0, 0.0),
                                  intention="M", confidence=0.9)
        t = pol.generate(pol.Policy.ES_B_R, ego(12.0), ONE_WAY)
        result = pol.validate(t, snapshot(ego(12.0), participants=[suv],
                                          road=ONE_WAY))
        assert not result.passed
        assert result.reason == "occupied-lane"

    def test_blocking_obstacle_fails_collision(self):
        wall = wd.Obstacle("w", wd.Rectangle(2.0, 12.0), (10.0, 0.0))
        t = pol.generate(pol.Policy.AEB, ego(14.0), ROAD)
        result = pol.validate(t, snapshot(ego(14.0), obstacles=[wall]))
        assert not result.passed
        assert result.reason == "collision"

    def test_clear_braking_passes(self):
        wall = wd.Obstacle("w", wd.Rectangle(2.0, 12.0), (40.0, 0.0))
        t = pol.generate(pol.Policy.AEB, ego(12.0), ROAD)
        result = pol.validate(t, snapshot(ego(12.0), obstacles=[wall]))
        assert result.passed
