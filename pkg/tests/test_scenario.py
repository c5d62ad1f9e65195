import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evade import scenario as sc
from evade import world as wd
from evade.configs import load_config

ROAD = wd.RoadTopology(wd.RoadKind.INTERSECTION, 15.0, 15.0)


def snapshot(ego_speed=15.0, participants=(), obstacles=(), road=ROAD,
             awareness=True):
    return sc.ScenarioSnapshot(timestamp=0.0,
                               ego=wd.VehicleState(speed=ego_speed),
                               road=road, obstacles=tuple(obstacles),
                               participants=tuple(participants),
                               awareness=awareness)


def vec(values):
    return sc.ScenarioVector(values=np.asarray(values, dtype=float))


class TestPrompt:
    def test_golden_lines_from_shipped_config(self):
        world = load_config("intersection").build_world()
        snap, _ = sc.observe(world)
        text = sc.to_prompt(snap)
        assert "AUTONOMOUS DRIVING COLLISION AVOIDANCE SCENARIO" in text
        assert ("The participant is 16.0 m in front of the vehicle "
                "and 6.4 m to the left.") in text
        assert "No historical data is available." in text

    def test_section_order(self):
        world = load_config("one_way").build_world()
        snap, _ = sc.observe(world)
        text = sc.to_prompt(snap)
        sections = ["## Ego Vehicle:", "## Obstacles:",
                    "## Traffic Participants:", "## HISTORICAL SCENARIOS:"]
        positions = [text.index(s) for s in sections]
        assert positions == sorted(positions)
        assert text.startswith(sc.TITLE_LINE)

    def test_empty_obstacles_line(self):
        text = sc.to_prompt(snapshot())
        assert "No static obstacles detected." in text

    def test_one_decimal_formatting(self):
        p = wd.ParticipantState("a", "suv", (12.3456, -2.987), (9.4567, 0.0))
        text = sc.to_prompt(snapshot(participants=[p]))
        assert "12.3 m in front of the vehicle and 3.0 m to the right." in text
        assert "moving forward at a speed of 9.5 m/s." in text

    def test_awareness_off_omits_risk_and_intention(self):
        world = load_config("one_way").build_world()
        snap, _ = sc.observe(world, awareness=False)
        text = sc.to_prompt(snap)
        assert "Intention =" not in text
        assert "Risk =" not in text

    def test_injective_on_rounded_scenes(self):
        rng = np.random.default_rng(8)
        texts = set()
        for _ in range(60):
            parts = [wd.ParticipantState(
                "p", "suv",
                (round(float(rng.uniform(2, 60)), 1),
                 round(float(rng.uniform(-8, 8)), 1)),
                (round(float(rng.uniform(0, 20)), 1), 0.0))]
            texts.add(sc.to_prompt(snapshot(participants=parts)))
        assert len(texts) == 60

    def test_historical_cases_rendered(self):
        from evade.memory import MemoryRecord
        from evade.metrics import EvaluationReport
        from evade.policy import Policy
        record = MemoryRecord(
            id="rec-0001", vector=sc.encode(snapshot()),
            prompt_text="x", policy=Policy.T_D_R,
            outcome=EvaluationReport(0.0, 0.0), created_at=0.0)
        text = sc.to_prompt(snapshot(), historical=[(record, 0.97)])
        assert "Case rec-0001 (similarity 0.97)" in text
        assert "No historical data is available." not in text


class TestEncode:
    def test_empty_scene_layout(self):
        v = sc.encode(snapshot(ego_speed=15.0)).values
        assert v[0] == pytest.approx(0.5)
        assert v[1] == 1.0 and v[2] == 0.0
        assert np.all(v[3:] == 0.0)

    def test_dimension_constant(self):
        assert sc.encode(snapshot()).values.shape == (sc.VECTOR_DIM,)
        assert sc.VECTOR_DIM == 55

    def test_reordering_invariance(self):
        a = wd.ParticipantState("a", "suv", (30.0, 2.0), (5.0, 0.0))
        b = wd.ParticipantState("b", "small_car", (12.0, -1.0), (3.0, 0.0))
        v1 = sc.encode(snapshot(participants=[a, b])).values
        v2 = sc.encode(snapshot(participants=[b, a])).values
        assert np.array_equal(v1, v2)

    def test_truncation_flagged_keeps_nearest(self):
        parts = [wd.ParticipantState(f"p{i}", "suv", (10.0 + 5 * i, 0.0),
                                     (0.0, 0.0))
                 for i in range(6)]
        out = sc.encode(snapshot(participants=parts))
        assert out.truncated
        # Nearest slot is the closest participant.
        base = 3 + 4 * sc.OBSTACLE_SLOTS
        assert out.values[base] == pytest.approx(10.0 / sc.FWD_NORM)

    def test_risk_component_composition(self, grid_cache):
        world = load_config("one_way").build_world()
        snap, _ = sc.observe(world, grid_cache)
        v = sc.encode(snap).values
        # First obstacle slot is the ellipse (lowest TTC); risk matches the
        # snapshot's filled risk after 2-decimal quantization.
        ell = next(o for o in snap.obstacles if o.id == "obs1")
        assert v[6] == pytest.approx(round(ell.risk, 2))
        assert ell.risk > 0

    def test_prompt_equality_implies_vector_equality(self):
        p1 = wd.ParticipantState("a", "suv", (12.34, 3.01), (9.02, 0.0))
        p2 = wd.ParticipantState("a", "suv", (12.31, 2.99), (9.04, 0.0))
        s1, s2 = snapshot(participants=[p1]), snapshot(participants=[p2])
        assert sc.to_prompt(s1) == sc.to_prompt(s2)
        assert np.array_equal(sc.encode(s1).values, sc.encode(s2).values)

    def test_components_bounded(self):
        p = wd.ParticipantState("a", "suv", (500.0, -90.0), (25.0, 0.0))
        v = sc.encode(snapshot(participants=[p])).values
        assert np.all(v <= 1.0) and np.all(v >= -1.0)


class TestSimilarity:
    def test_identity(self):
        v = vec(np.arange(1, 56, dtype=float))
        assert sc.similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal_maps_to_half(self):
        a = np.zeros(55); a[0] = 1.0
        b = np.zeros(55); b[1] = 1.0
        assert sc.similarity(vec(a), vec(b)) == pytest.approx(0.5)

    def test_antipodal_maps_to_zero(self):
        a = np.ones(55)
        assert sc.similarity(vec(a), vec(-a)) == pytest.approx(0.0)

    def test_both_zero(self):
        z = vec(np.zeros(55))
        assert sc.similarity(z, z) == 1.0

    def test_one_zero_neutral(self):
        z = vec(np.zeros(55))
        v = vec(np.ones(55))
        assert sc.similarity(z, v) == 0.5
        assert sc.similarity(v, z) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sc.ScenarioVector(values=np.ones(10))

    @given(st.lists(st.floats(-1, 1), min_size=55, max_size=55),
           st.lists(st.floats(-1, 1), min_size=55, max_size=55),
           st.floats(0.01, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_symmetric_bounded_scale_invariant(self, a, b, k):
        va, vb = vec(a), vec(b)
        s1 = sc.similarity(va, vb)
        s2 = sc.similarity(vb, va)
        assert s1 == pytest.approx(s2)
        assert 0.0 <= s1 <= 1.0
        assert sc.similarity(vec(np.asarray(a) * k), vb) == pytest.approx(s1, abs=1e-6)


class TestForecast:
    def test_no_participants_three_identical(self):
        ob = wd.Obstacle("o", wd.Circle(3.0), (40.0, 0.0))
        s = snapshot(ego_speed=10.0, obstacles=[ob])
        out = sc.forecast(s, 1.3)
        assert len(out) == 3
        vs = [sc.encode(f).values for f in out]
        assert np.array_equal(vs[0], vs[1]) and np.array_equal(vs[1], vs[2])

    def test_full_confidence_degenerate_hypotheses(self):
        p = wd.ParticipantState("a", "suv", (40.0, 0.0), (2.0, 0.0),
                                intention="M", confidence=1.0)
        s = snapshot(ego_speed=10.0, participants=[p])
        out = sc.forecast(s, 1.3)
        vs = [sc.encode(f).values for f in out]
        assert np.array_equal(vs[0], vs[1]) and np.array_equal(vs[1], vs[2])

    def test_hypotheses_branch_on_lowest_confidence(self):
        world = load_config("intersection").build_world()
        snap, rankings = sc.observe(world)
        out = sc.forecast(snap, 1.3, rankings)
        labels = [next(p.intention for p in f.participants
                       if p.id == "object1") for f in out]
        assert labels == ["M", "LC", "RC"]

    def test_horizon_consistency(self):
        world = load_config("one_way").build_world()
        world = wd.step(world)  # mirror the arbiter's first-tick timing
        snap, rankings = sc.observe(world)
        out = sc.forecast(snap, 1.3, rankings)
        ttc, _ = sc.hazard_ttc(out[0].ego, out[0].participants,
                               out[0].obstacles, out[0].road)
        assert ttc == pytest.approx(1.3, abs=wd.DEFAULT_DT + 1e-9)

    def test_maintain_vs_braking_hypotheses_diverge(self):
        p = wd.ParticipantState("t", "large_truck", (60.0, 0.0), (7.5, 0.0),
                                intention="M", confidence=0.7)
        s = snapshot(ego_speed=15.0, participants=[p])
        rankings = {"t": ["M", "FB", "RC", "LC", "LB", "RB"]}
        a, b, _ = sc.forecast(s, 1.3, rankings)
        fa = next(q.rel_position[0] for q in a.participants)
        fb_ = next(q.rel_position[0] for q in b.participants)
        # The braking hypothesis leaves the truck further behind the
        # maintain hypothesis after propagation.
        assert fb_ < fa

    def test_positive_horizon_required(self):
        with pytest.raises(ValueError):
            sc.forecast(snapshot(), 0.0)


class TestHazardTtc:
    def test_intersection_truck_is_hazard(self):
        world = load_config("intersection").build_world()
        ttc, hid = sc.hazard_ttc(world.ego, world.participants,
                                 world.obstacles, world.road)
        assert hid == "object1"
        assert ttc == pytest.approx(16.0 / 15.2)

    def test_receding_pedestrian_not_hazard(self):
        ped = wd.ParticipantState("p", "pedestrian", (6.0, 4.0), (0.0, 0.5))
        ttc, hid = sc.hazard_ttc(wd.VehicleState(speed=14.0), (ped,), (),
                                 ROAD)
        assert ttc is None and hid is None

    def test_one_way_ellipse_drives_schedule(self):
        world = load_config("one_way").build_world()
        ttc, hid = sc.hazard_ttc(world.ego, world.participants,
                                 world.obstacles, world.road)
        assert hid == "obs1"
        assert ttc == pytest.approx(5.5)

    def test_lane_bound_merger_excluded(self):
        suv = wd.ParticipantState("s", "suv", (15.0, -4.5), (10.0, 1.5))
        ttc, hid = sc.hazard_ttc(wd.VehicleState(speed=12.0), (suv,), (),
                                 wd.RoadTopology(wd.RoadKind.ONE_WAY_MULTILANE,
                                                 1.5, 10.0))
        assert hid is None

    def test_offset_static_obstacle_excluded(self):
        ob = wd.Obstacle("c", wd.Circle(5.0), (70.0, -7.5))
        ttc, hid = sc.hazard_ttc(wd.VehicleState(speed=12.0), (), (ob,),
                                 wd.RoadTopology(wd.RoadKind.ONE_WAY_MULTILANE,
                                                 1.5, 10.0))
        assert hid is None
