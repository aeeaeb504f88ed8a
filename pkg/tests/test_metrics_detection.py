import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
import toys
from groundcap.errors import ValidationError
from groundcap.metrics import Detection, GroundTruth, average_precision, iou, mean_ap
from groundcap.metrics.detection import ground_truths

boxes = st.tuples(
    st.floats(0, 100), st.floats(0, 100), st.floats(0.5, 50), st.floats(0.5, 50)
).map(lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


def as_objs(dets, gts, cat="c"):
    return ([Detection(i, b, cat, s) for i, b, s in dets], [GroundTruth(i, b, cat) for i, b in gts])


class TestIoU:
    def test_anchor(self):
        assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == 1 / 3

    def test_disjoint(self):
        assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValidationError):
            iou((0, 0, 0, 1), (0, 0, 1, 1))

    @settings(max_examples=200)
    @given(boxes, boxes)
    def test_properties(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert iou(a, a) == 1.0
        assert v == pytest.approx(oracles.box_iou(a, b), abs=1e-12)


class TestAP:
    def test_frozen_fixture(self):
        d, g = as_objs(
            [("i", (0, 0, 10, 10), 0.9), ("i", (20, 20, 30, 30), 0.8), ("i", (0, 0, 9, 10), 0.7)],
            [("i", (0, 0, 10, 10)), ("i", (50, 50, 60, 60))],
        )
        assert average_precision(d, g, 0.5) == 51 / 101

    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("thresh", [0.5, 0.75])
    def test_oracle(self, seed, thresh):
        dets, gts = toys.detection_instance(seed)
        d, g = as_objs(dets, gts)
        assert abs(average_precision(d, g, thresh) - oracles.average_precision(dets, gts, thresh)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.01, 100))
    def test_score_scale_invariance(self, seed, k):
        dets, gts = toys.detection_instance(seed)
        d, g = as_objs(dets, gts)
        scaled = [Detection(x.image_id, x.bbox, x.category, x.score * k) for x in d]
        assert average_precision(d, g, 0.5) == average_precision(scaled, g, 0.5)

    def test_no_gts(self):
        d, _ = as_objs([("i", (0, 0, 1, 1), 0.5)], [])
        assert average_precision(d, [], 0.5) == 0.0

    def test_nonfinite_score(self):
        with pytest.raises(ValidationError):
            Detection("i", (0, 0, 1, 1), "c", float("nan"))


class TestMeanAP:
    def test_perfect(self):
        gts = [GroundTruth("a", (0, 0, 5, 5), "x"), GroundTruth("b", (1, 1, 4, 9), "y")]
        dets = [Detection(g.image_id, g.bbox, g.category, 1.0) for g in gts]
        s = mean_ap(dets, gts, ["x", "y", "z"])
        assert (s.map, s.map50, s.map75) == (100.0, 100.0, 100.0)

    def test_no_detections(self):
        s = mean_ap([], [GroundTruth("a", (0, 0, 5, 5), "x")], ["x"])
        assert (s.map, s.map50, s.map75) == (0.0, 0.0, 0.0)

    def test_half_categories(self):
        gts = [GroundTruth("a", (0, 0, 5, 5), "x"), GroundTruth("a", (10, 10, 15, 15), "y")]
        dets = [Detection("a", (0, 0, 5, 5), "x", 0.9)]
        s = mean_ap(dets, gts, ["x", "y"])
        assert (s.map, s.map50, s.map75) == (50.0, 50.0, 50.0)

    def test_category_filtering(self):
        # a perfect box with the wrong label counts for nothing
        gts = [GroundTruth("a", (0, 0, 5, 5), "x")]
        s = mean_ap([Detection("a", (0, 0, 5, 5), "y", 0.9)], gts, ["x", "y"])
        assert s.map50 == 0.0

    def test_ground_truths_from_samples(self):
        from groundcap.dataset import SyntheticSpec, gen_synthetic_dataset
        samples, _ = gen_synthetic_dataset(SyntheticSpec(5, seed=0), shape=None)
        gts = ground_truths(samples)
        assert len(gts) == sum(len(s.boxes) for s in samples)

    def test_csv(self):
        s = mean_ap([], [GroundTruth("a", (0, 0, 5, 5), "x")], ["x"])
        assert s.to_csv().splitlines()[0] == "map,map50,map75"
