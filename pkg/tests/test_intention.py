import itertools
import math

import numpy as np
import pytest

from evade import intention as it


def brute_force_decode(scores, loga):
    """Exhaustive max over all 6^T label sequences, first-best on ties."""
    T = len(scores)
    paths = np.array(list(itertools.product(range(6), repeat=T)))
    total = scores[0][paths[:, 0]].astype(float)
    for t in range(1, T):
        total = total + loga[paths[:, t - 1], paths[:, t]] + scores[t][paths[:, t]]
    best = int(np.argmax(total))
    return [it.LABELS[i] for i in paths[best]], float(total[best])


def random_instance(rng, T):
    scores = [rng.normal(0, 2, 6) for _ in range(T)]
    m = rng.uniform(0.05, 1.0, (6, 6))
    lb, rb = it.LABEL_INDEX["LB"], it.LABEL_INDEX["RB"]
    m[lb, rb] = 0.0
    m[rb, lb] = 0.0
    m = m / m.sum(axis=1, keepdims=True)
    return scores, it.TransitionMatrix(m)


class TestTransitionMatrix:
    def test_default_rows_stochastic(self):
        tm = it.default_transitions()
        assert np.allclose(tm.a.sum(axis=1), 1.0, atol=1e-9)
        assert (tm.a >= 0).all()

    def test_default_forbids_direction_flips(self):
        tm = it.default_transitions()
        lb, rb = it.LABEL_INDEX["LB"], it.LABEL_INDEX["RB"]
        assert tm.a[lb, rb] == 0.0
        assert tm.a[rb, lb] == 0.0

    def test_rejects_bad_rows(self):
        m = np.full((6, 6), 1.0 / 6.0)
        m[0, 0] += 0.1
        with pytest.raises(ValueError):
            it.TransitionMatrix(m)

    def test_rejects_negative(self):
        m = np.full((6, 6), 1.0 / 6.0)
        m[2, 3] = -m[2, 3]
        m[2, 4] += 2 * (1.0 / 6.0)
        with pytest.raises(ValueError):
            it.TransitionMatrix(m)

    def test_rejects_forbidden_mass(self):
        m = np.full((6, 6), 1.0 / 6.0)
        with pytest.raises(ValueError):
            it.TransitionMatrix(m)

    def test_config_roundtrip(self):
        tm = it.default_transitions()
        tm2 = it.transitions_from_config(tm.a.tolist())
        assert np.array_equal(tm.a, tm2.a)


class TestEmissionScores:
    def test_quiescent_is_maintain(self):
        scores = it.emission_scores(it.DrivingFeatures())
        m = it.LABEL_INDEX["M"]
        assert all(scores[m] > scores[i] for i in range(6) if i != m)

    def test_hard_braking_is_fb(self):
        scores = it.emission_scores(it.DrivingFeatures(longitudinal_accel=-5.0))
        assert it.LABELS[int(np.argmax(scores))] == "FB"

    def test_leftward_motion_is_lc(self):
        scores = it.emission_scores(it.DrivingFeatures(lateral_velocity=1.2))
        assert it.LABELS[int(np.argmax(scores))] == "LC"

    def test_brake_plus_left_is_lb(self):
        scores = it.emission_scores(
            it.DrivingFeatures(lateral_velocity=1.2, longitudinal_accel=-5.0))
        assert it.LABELS[int(np.argmax(scores))] == "LB"

    def test_rightward_mirror(self):
        scores = it.emission_scores(it.DrivingFeatures(lateral_velocity=-1.2))
        assert it.LABELS[int(np.argmax(scores))] == "RC"

    def test_argmax_invariant_to_table_rescaling(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            obs = it.DrivingFeatures(
                lateral_velocity=float(rng.uniform(-2, 2)),
                longitudinal_accel=float(rng.uniform(-6, 2)),
                lateral_offset_rate=float(rng.uniform(-2, 2)),
                heading_rate=float(rng.uniform(-0.3, 0.3)))
            k = float(rng.uniform(0.1, 7.0))
            scaled = dict(it.EMISSION_TABLE)
            scaled["weights"] = {
                label: tuple(k * w for w in ws)
                for label, ws in it.EMISSION_TABLE["weights"].items()}
            a = int(np.argmax(it.emission_scores(obs)))
            b = int(np.argmax(it.emission_scores(obs, scaled)))
            assert a == b

    def test_features_must_be_finite(self):
        with pytest.raises(ValueError):
            it.DrivingFeatures(lateral_velocity=math.inf)


class TestViterbi:
    def test_length_one_is_argmax(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores = [rng.normal(0, 1, 6)]
            out = it.viterbi_decode(scores, it.default_transitions())
            assert out == [it.LABELS[int(np.argmax(scores[0]))]]

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            it.viterbi_decode([], it.default_transitions())

    def test_forbidden_flip_never_decoded(self):
        # Emissions scream LB then RB; the decode must route around the
        # forbidden direct flip. Verified against the exhaustive oracle.
        tm = it.default_transitions()
        lb, rb = it.LABEL_INDEX["LB"], it.LABEL_INDEX["RB"]
        seq = []
        for t in range(4):
            s = np.full(6, -5.0)
            s[lb if t < 2 else rb] = 5.0
            seq.append(s)
        path = it.viterbi_decode(seq, tm)
        oracle, _ = brute_force_decode(seq, tm.log)
        assert path == oracle
        for a, b in zip(path, path[1:]):
            assert (a, b) not in (("LB", "RB"), ("RB", "LB"))

    def test_uniform_emissions_strongest_self_transition(self):
        m = it.default_transitions().a.copy()
        fb = it.LABEL_INDEX["FB"]
        # Strengthen FB persistence so the winner is unique.
        m[fb, fb] = 0.92
        m[fb, it.LABEL_INDEX["M"]] = 0.0
        tm = it.TransitionMatrix(m)
        seq = [np.zeros(6)] * 3
        path = it.viterbi_decode(seq, tm)
        oracle, _ = brute_force_decode(seq, tm.log)
        assert path == oracle
        assert path == ["FB", "FB", "FB"]

    def test_impossible_lattice_raises(self):
        seq = [np.zeros(6), np.full(6, -np.inf), np.zeros(6)]
        with pytest.raises(it.DecodeError):
            it.viterbi_decode(seq, it.default_transitions())

    def test_shift_invariance_per_step(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            T = int(rng.integers(2, 6))
            scores, tm = random_instance(rng, T)
            base = it.viterbi_decode(scores, tm)
            shifted = [s + float(rng.uniform(-30, 30)) for s in scores]
            assert it.viterbi_decode(shifted, tm) == base

    def test_matches_brute_force(self):
        rng = np.random.default_rng(123)
        for _ in range(150):
            T = int(rng.integers(1, 7))
            scores, tm = random_instance(rng, T)
            assert it.viterbi_decode(scores, tm) == \
                brute_force_decode(scores, tm.log)[0]


class TestPredict:
    def test_quiescent_window_confident_maintain(self):
        label, conf = it.predict_intention([it.DrivingFeatures()] * 10,
                                           it.default_transitions())
        assert label == "M"
        assert conf >= 0.5

    def test_braking_onset_detected(self):
        history = [it.DrivingFeatures()] * 5 + \
            [it.DrivingFeatures(longitudinal_accel=-5.0)] * 5
        tm = it.default_transitions()
        label, _ = it.predict_intention(history, tm)
        assert label == "FB"
        # Oracle cross-check on a window the exhaustive search can cover.
        short = history[2:5] + history[5:8]
        scores = [it.emission_scores(f) for f in short]
        oracle, _ = brute_force_decode(scores, tm.log)
        assert it.viterbi_decode(scores, tm) == oracle
        assert oracle[-1] == "FB"

    def test_ambiguous_features_low_confidence(self):
        # Near the M/LC decision boundary of the scoring table.
        history = [it.DrivingFeatures(lateral_velocity=0.671)] * 10
        _, conf = it.predict_intention(history, it.default_transitions())
        assert conf < 0.2

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            it.predict_intention([], it.default_transitions())

    def test_ranking_deterministic_and_complete(self):
        scores = [it.emission_scores(it.DrivingFeatures())]
        ranked = it.rank_final_labels(scores, it.default_transitions())
        assert sorted(ranked) == sorted(it.LABELS)
        assert ranked[0] == "M"
        assert ranked[1] == "LC"
