from __future__ import annotations

import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demoaudit.annotator import (
    AGE_GROUPS,
    Box,
    FaceDetection,
    age_group,
    expected_age,
    gate_detections,
    gender_label,
    stub_annotate,
)
from demoaudit.dataset import ImageRecord
from demoaudit.errors import InvalidPosterior, OutOfRange


def det(conf: float, image_id: str = "img") -> FaceDetection:
    return FaceDetection(image_id=image_id, box=Box(0, 0, 10, 10), confidence=conf)


class TestExpectedAge:
    def test_uniform_is_exactly_50(self):
        probs = [1 / 101] * 101
        assert expected_age(probs) == 50.0

    def test_one_hot(self):
        probs = [0.0] * 101
        probs[23] = 1.0
        assert expected_age(probs) == 23.0

    def test_two_point_mixture(self):
        probs = [0.0] * 101
        probs[20] = 0.5
        probs[30] = 0.5
        assert expected_age(probs) == 25.0

    @pytest.mark.parametrize(
        "probs",
        [
            [0.5] * 2,  # wrong length
            [1.0] + [0.0] * 99,  # 100 bins
            [-0.01] + [1.01] + [0.0] * 99,  # negative entry
            [1 / 101] * 100 + [1 / 101 + 0.01],  # mass off by 1e-2
        ],
    )
    def test_invalid_posteriors(self, probs):
        with pytest.raises(InvalidPosterior):
            expected_age(probs)

    @given(
        st.lists(st.floats(0.0, 1.0), min_size=101, max_size=101),
        st.lists(st.floats(0.0, 1.0), min_size=101, max_size=101),
        st.floats(0.0, 1.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, raw_p, raw_q, alpha):
        def normalize(raw):
            total = math.fsum(raw) or 1.0
            return [v / total if total else 1 / 101 for v in raw]

        p = normalize(raw_p) if math.fsum(raw_p) > 0 else [1 / 101] * 101
        q = normalize(raw_q) if math.fsum(raw_q) > 0 else [1 / 101] * 101
        mix = [alpha * a + (1 - alpha) * b for a, b in zip(p, q)]
        expected = alpha * expected_age(p) + (1 - alpha) * expected_age(q)
        assert expected_age(mix) == pytest.approx(expected, abs=1e-9)


class TestGenderLabel:
    @pytest.mark.parametrize(
        "score,label", [(0.74, "female"), (0.50, "female"), (0.12, "male"), (1.0, "female"), (0.0, "male")]
    )
    def test_threshold(self, score, label):
        assert gender_label(score) == label

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            gender_label(1.5)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        order = {"male": 0, "female": 1}
        assert order[gender_label(lo)] <= order[gender_label(hi)]


class TestAgeGroup:
    @pytest.mark.parametrize(
        "age,group",
        [
            (0.0, "0-14"),
            (14.999, "0-14"),
            (15.0, "15-29"),
            (29.99, "15-29"),
            (30.0, "30-44"),
            (45.0, "45-59"),
            (59.9, "45-59"),
            (60.0, "60+"),
            (100.0, "60+"),
        ],
    )
    def test_bins(self, age, group):
        assert age_group(age) == group

    @pytest.mark.parametrize("age", [-0.1, 101.0, 150.0])
    def test_out_of_range(self, age):
        with pytest.raises(OutOfRange):
            age_group(age)

    def test_integer_boundaries_agree(self):
        for a in range(0, 101):
            assert age_group(float(a)) == age_group(a + 0.999)


class TestGateDetections:
    def test_boundary_inclusive(self):
        dets = [det(0.95), det(0.89), det(0.90)]
        assert gate_detections(dets) == [dets[0], dets[2]]

    def test_empty(self):
        assert gate_detections([]) == []

    def test_zero_threshold_identity(self):
        dets = [det(0.1), det(0.5)]
        assert gate_detections(dets, min_conf=0.0) == dets

    @given(st.lists(st.floats(0.0, 1.0), max_size=30), st.floats(0.0, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_subsequence(self, confs, min_conf):
        dets = [det(c) for c in confs]
        kept = gate_detections(dets, min_conf)
        it = iter(dets)
        assert all(any(k is d for d in it) for k in kept)  # order-preserving subsequence
        assert all(k.confidence >= min_conf for k in kept)


class TestStubAnnotate:
    def img(self, image_id: str) -> ImageRecord:
        return ImageRecord(image_id=image_id, synset_wnid="n01", uri="x.jpg")

    def test_deterministic(self):
        first = stub_annotate(self.img("img007"), seed=3)
        second = stub_annotate(self.img("img007"), seed=3)
        assert first == second

    def test_seed_changes_confidences(self):
        ids = [f"img{i}" for i in range(50)]
        confs_a = [
            a.detection.confidence for i in ids for a in stub_annotate(self.img(i), seed=1)
        ]
        confs_b = [
            a.detection.confidence for i in ids for a in stub_annotate(self.img(i), seed=2)
        ]
        assert confs_a != confs_b

    def test_values_in_domain(self):
        for i in range(100):
            for ann in stub_annotate(self.img(f"img{i}"), seed=9):
                assert 0.8 <= ann.detection.confidence <= 1.0
                assert 0.0 <= ann.expected_age <= 100.0
                assert 0.0 <= ann.gender_score <= 1.0
                assert ann.age_group == age_group(ann.expected_age)
                assert ann.gender_label == gender_label(ann.gender_score)

    def test_corpus_recount_oracle(self):
        # Subgroup percentages recomputed independently from the stub's own
        # outputs must match a direct tally of the same outputs.
        images = [self.img(f"img{i:03d}") for i in range(200)]
        tally: Counter = Counter()
        total = 0
        for image in images:
            for ann in stub_annotate(image, seed=11):
                tally[(ann.age_group, ann.gender_label)] += 1
                total += 1

        oracle: Counter = Counter()
        for image in images:
            for ann in stub_annotate(image, seed=11):
                group = AGE_GROUPS[
                    [14, 29, 44, 59, 100].index(
                        next(u for u in [14, 29, 44, 59, 100] if math.floor(ann.expected_age) <= u)
                    )
                ]
                label = "female" if ann.gender_score >= 0.5 else "male"
                oracle[(group, label)] += 1

        assert total > 0
        assert tally == oracle
        for key, count in tally.items():
            assert 100 * count / total == pytest.approx(100 * oracle[key] / total)
