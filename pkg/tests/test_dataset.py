import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundcap.dataset import (
    CATEGORIES,
    CATEGORY_MIX,
    CATEGORY_PERCENT,
    BBox,
    Sample,
    SyntheticSpec,
    compute_stats,
    gen_synthetic_dataset,
    load_annotations,
    save_annotations,
    stratified_split,
)
from groundcap.errors import StratificationError, ValidationError


def line(image_id="img1", boxes=(([10, 10, 50, 60], "brick pile"),), caption="one brick pile."):
    return json.dumps({
        "image_id": image_id, "image_ref": "x.jpg", "width": 512, "height": 512,
        "boxes": [{"bbox": b, "category": c} for b, c in boxes], "caption": caption,
    })


def sample(i, cats, words=3):
    boxes = tuple(BBox(0, 0, 10 + k, 10 + k, c) for k, c in enumerate(cats))
    return Sample(f"s{i:04d}", "", boxes, " ".join(["w"] * words))


class TestLoad:
    def test_one_valid(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line() + "\n")
        (s,) = load_annotations(p)
        assert s.image_id == "img1" and s.boxes[0].category == "brick pile"

    def test_degenerate_box(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line(boxes=(([10, 10, 10, 60], "brick pile"),)) + "\n")
        with pytest.raises(ValidationError, match="degenerate.*") as ei:
            load_annotations(p)
        assert "img1" in str(ei.value) and ":1:" in str(ei.value)

    def test_unknown_category(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line(boxes=(([1, 1, 5, 5], "car"),)) + "\n")
        with pytest.raises(ValidationError, match="closed"):
            load_annotations(p)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line() + "\n" + line("img2") + "\n{not json\n")
        with pytest.raises(ValidationError, match=":3:"):
            load_annotations(p)

    def test_out_of_bounds(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line(boxes=(([500, 1, 520, 5], "brick pile"),)) + "\n")
        with pytest.raises(ValidationError, match="outside"):
            load_annotations(p)

    def test_no_boxes(self, tmp_path):
        p = tmp_path / "a.jsonl"
        p.write_text(line(boxes=()) + "\n")
        with pytest.raises(ValidationError):
            load_annotations(p)

    def test_resave_identical(self, tmp_path):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(20, seed=1), shape=None)
        save_annotations(samples, tmp_path / "a.jsonl")
        save_annotations(load_annotations(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert load_annotations(tmp_path / "a.jsonl") == samples

    def test_field_order(self, tmp_path):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(1, seed=1), shape=None)
        save_annotations(samples, tmp_path / "a.jsonl")
        keys = list(json.loads((tmp_path / "a.jsonl").read_text()))
        assert keys == ["image_id", "image_ref", "width", "height", "boxes", "caption"]


class TestSplit:
    def test_single_stratum(self):
        train, test = stratified_split([sample(i, ["scaffolding"]) for i in range(10)], 0.7, seed=0)
        assert (len(train), len(test)) == (7, 3)

    def test_rare_category_always_in_test(self):
        samples = [sample(i, ["construction debris"]) for i in range(40)]
        samples += [sample(100 + i, ["overflowing trash bin", "construction debris"]) for i in range(4)]
        for seed in range(10):
            _, test = stratified_split(samples, 0.7, seed)
            assert any("overflowing trash bin" in s.categories for s in test), seed

    def test_too_rare(self):
        samples = [sample(i, ["brick pile"]) for i in range(5)] + [sample(9, ["scaffolding"])]
        with pytest.raises(StratificationError, match="scaffolding"):
            stratified_split(samples)

    def test_deterministic(self):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(300, seed=2), shape=None)
        a = stratified_split(samples, 0.7, 5)
        b = stratified_split(samples, 0.7, 5)
        assert a == b
        c = stratified_split(samples, 0.7, 6)
        assert [s.image_id for s in a[1]] != [s.image_id for s in c[1]]

    def test_split_labels(self):
        train, test = stratified_split([sample(i, ["scaffolding"]) for i in range(4)])
        assert {s.split for s in train} == {"train"} and {s.split for s in test} == {"test"}

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(30, 200))
    def test_partition_and_coverage(self, seed, n):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(n, seed=seed), shape=None)
        counts = {c: sum(c in s.categories for s in samples) for c in CATEGORIES}
        if any(0 < k < 2 for k in counts.values()):
            with pytest.raises(StratificationError):
                stratified_split(samples, 0.7, seed)
            return
        train, test = stratified_split(samples, 0.7, seed)
        ids_train = {s.image_id for s in train}
        ids_test = {s.image_id for s in test}
        assert not ids_train & ids_test
        assert ids_train | ids_test == {s.image_id for s in samples}
        for c, k in counts.items():
            if k >= 2:
                assert any(c in s.categories for s in train), c
                assert any(c in s.categories for s in test), c

    def test_full_scale_ratio(self):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(10_572, seed=0), shape=None)
        train, test = stratified_split(samples, 0.7, 0)
        # target sizes 7,500 / 3,072
        assert abs(len(train) / len(samples) - 7500 / 10572) <= 0.02
        assert abs(len(test) / len(samples) - 3072 / 10572) <= 0.02


class TestStats:
    def test_histogram(self):
        stats = compute_stats([sample(0, ["brick pile"], 3), sample(1, ["brick pile"], 7)])
        assert stats.caption_length_hist == {0: 2}

    def test_proportions(self):
        s1 = Sample("a", "", tuple(BBox(0, 0, 5 + k, 5, "construction debris") for k in range(3)), "x")
        s2 = Sample("b", "", (BBox(0, 0, 5, 5, "ground litter"), BBox(1, 1, 5, 5, "ground litter"),
                             BBox(0, 0, 9, 9, "construction fencing")), "y")
        p = compute_stats([s1, s2]).proportions
        assert p["construction debris"] == 0.5
        assert p["ground litter"] == pytest.approx(1 / 3, abs=1e-15)
        assert p["construction fencing"] == pytest.approx(1 / 6, abs=1e-15)
        assert abs(sum(p.values()) - 1) <= 1e-9

    def test_top_words_and_splits(self):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(200, seed=4), shape=None)
        train, test = stratified_split(samples, 0.7, 0)
        stats = compute_stats(train + test)
        assert stats.top_words[0][1] >= stats.top_words[-1][1]
        assert stats.split_counts["train"]["images"] == len(train)
        assert stats.split_counts["test"]["boxes"] == sum(len(s.boxes) for s in test)
        assert "category_count,brick pile" in stats.to_csv()

    def test_empty(self):
        with pytest.raises(ValidationError):
            compute_stats([])


class TestSynthetic:
    def test_deterministic(self):
        a_s, a_b = gen_synthetic_dataset(SyntheticSpec(8, seed=3))
        b_s, b_b = gen_synthetic_dataset(SyntheticSpec(8, seed=3))
        assert len(a_s) == 8 and a_s == b_s
        assert all(x.equals(y) for x, y in zip(a_b, b_b))

    def test_single_category_mix(self):
        mix = tuple(1.0 if c == "scaffolding" else 0.0 for c in CATEGORIES)
        samples, _ = gen_synthetic_dataset(SyntheticSpec(30, mix, seed=1), shape=None)
        assert all("scaffolding" in s.caption for s in samples)

    def test_default_mix_proportions(self):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(1000, CATEGORY_MIX, seed=0), shape=None)
        p = compute_stats(samples).proportions
        for c, pct in zip(CATEGORIES, CATEGORY_PERCENT):
            assert abs(p[c] - pct / 100) <= 0.03, c

    def test_template_caption(self):
        samples, _ = gen_synthetic_dataset(SyntheticSpec(5, seed=9), shape=None)
        for s in samples:
            assert " near the " in s.caption and "; recommend " in s.caption

    @pytest.mark.parametrize("mix", [(0.5,) * 9, (1.0,), (-0.1, 1.1) + (0.0,) * 7])
    def test_invalid_mix(self, mix):
        with pytest.raises(ValidationError):
            SyntheticSpec(4, mix)

    def test_prefix_stable(self):
        a, _ = gen_synthetic_dataset(SyntheticSpec(5, seed=3), shape=None)
        b, _ = gen_synthetic_dataset(SyntheticSpec(9, seed=3), shape=None)
        assert a == b[:5]
