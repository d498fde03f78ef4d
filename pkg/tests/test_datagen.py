import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from prompt_tuner.datagen import (
    BIAS_PALETTE,
    GlyphSpec,
    ShiftSpec,
    biased_dataset,
    few_shot_split,
    load_dataset,
    load_idx,
    loc_dataset,
    render_glyph,
    save_dataset,
    source_glyph_dataset,
)
from prompt_tuner.errors import DatasetError, FormatError, InvalidInputError


class TestGlyphs:
    def test_digit_8_lights_all_segments(self):
        eight = render_glyph(8)
        union = np.zeros_like(eight)
        for d in range(10):
            union = np.maximum(union, render_glyph(d))
        np.testing.assert_array_equal(eight, union)

    def test_digit_1_is_right_side_only(self):
        one = render_glyph(1)[0]
        lit_cols = np.flatnonzero(one.any(axis=0))
        # Only the right vertical strip: 3 consecutive columns near the edge.
        assert lit_cols.tolist() == [19, 20, 21]
        assert one.sum() == one[:, 19:22].sum()

    def test_all_pairs_distinct(self):
        glyphs = [render_glyph(d)[0] for d in range(10)]
        for a, b in itertools.combinations(range(10), 2):
            assert np.sum(glyphs[a] != glyphs[b]) > 0

    def test_binary_and_deterministic(self):
        g1, g2 = render_glyph(GlyphSpec(3)), render_glyph(GlyphSpec(3))
        np.testing.assert_array_equal(g1, g2)
        assert set(np.unique(g1)) <= {0.0, 1.0}

    def test_rejects_bad_digit(self):
        with pytest.raises(InvalidInputError):
            render_glyph(10)


class TestPalette:
    def test_ten_distinct_colors_above_floor(self):
        assert BIAS_PALETTE.shape == (10, 3)
        dmin = min(
            np.linalg.norm(BIAS_PALETTE[i] - BIAS_PALETTE[j])
            for i, j in itertools.combinations(range(10), 2)
        )
        assert dmin > 0.5

    def test_excludes_white(self):
        assert not any(np.array_equal(c, [1.0, 1.0, 1.0]) for c in BIAS_PALETTE)


def background_color_index(image):
    """Corner pixel is always background (glyphs keep a margin)."""
    corner = image[:, 0, 0]
    return int(np.argmin(np.linalg.norm(BIAS_PALETTE - corner, axis=1)))


class TestBiasedDataset:
    def test_rho_one_train_is_fully_correlated(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=1.0, split="train", n_per_class=5))
        for img, label in zip(ds.images, ds.labels):
            assert background_color_index(img) == label

    def test_train_match_rate(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=0.9, split="train",
                                      n_per_class=600, seed=3))
        match = np.mean([background_color_index(i) == l for i, l in zip(ds.images, ds.labels)])
        assert abs(match - 0.9) < 0.02

    def test_test_split_match_rate_inverted(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=0.9, split="test",
                                      n_per_class=600, seed=3))
        match = np.mean([background_color_index(i) == l for i, l in zip(ds.images, ds.labels)])
        assert abs(match - 0.1) < 0.02

    def test_pixels_in_unit_range_and_shape(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=0.5, n_per_class=2))
        assert ds.images.shape == (20, 3, 28, 28)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_pure_function_of_spec(self):
        spec = ShiftSpec(kind="biased", rho=0.7, n_per_class=4, seed=11)
        a, b = biased_dataset(spec), biased_dataset(spec)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_foreground_stays_white(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=1.0, n_per_class=1))
        glyph = render_glyph(0)[0].astype(bool)
        np.testing.assert_array_equal(
            ds.images[0][:, glyph], np.ones((3, glyph.sum()))
        )


class TestLocDataset:
    def test_equal_patch_sizes_at_1_to_1(self):
        ds = loc_dataset(ShiftSpec(kind="loc", ratio="1:1", n_per_class=3, seed=5))
        slots = [(0, 42), (84, 42), (42, 0), (42, 84)]
        for img, label in zip(ds.images, ds.labels):
            plane = img[0]
            target = render_glyph(int(label))[0]
            hits = [
                np.array_equal(plane[r:r + 28, c:c + 28], target) for r, c in slots
            ]
            assert sum(hits) >= 1  # the labelled glyph sits intact on an edge
            center = plane[42:70, 42:70]
            assert center.sum() > 0 and not np.array_equal(center, target)

    def test_distractor_differs_from_target(self):
        ds = loc_dataset(ShiftSpec(kind="loc", ratio="1:1", n_per_class=20, seed=6))
        templates = {d: render_glyph(d)[0] for d in range(10)}
        for img, label in zip(ds.images, ds.labels):
            center = img[0, 42:70, 42:70]
            digit = next(d for d, t in templates.items() if np.array_equal(center, t))
            assert digit != label

    def test_big_distractor_fills_canvas(self):
        ds = loc_dataset(ShiftSpec(kind="loc", ratio="1:4", n_per_class=1, seed=7))
        assert ds.images.shape == (10, 3, 112, 112)
        # 4x-scaled glyph occupies the full 112 canvas; target pixels survive on top.
        for img, label in zip(ds.images, ds.labels):
            target = render_glyph(int(label))[0]
            slots = [(0, 42), (84, 42), (42, 0), (42, 84)]
            assert any(
                np.all(img[0, r:r + 28, c:c + 28] >= target) and
                np.all(img[0, r:r + 28, c:c + 28][target.astype(bool)] == 1.0)
                for r, c in slots
            )

    def test_edge_placement_uniform(self):
        ds = loc_dataset(ShiftSpec(kind="loc", ratio="1:1", n_per_class=400, seed=8))
        slots = [(0, 42), (84, 42), (42, 0), (42, 84)]
        counts = np.zeros(4, dtype=int)
        for img, label in zip(ds.images, ds.labels):
            target = render_glyph(int(label))[0]
            for e, (r, c) in enumerate(slots):
                if np.array_equal(img[0, r:r + 28, c:c + 28], target):
                    counts[e] += 1
                    break
        assert counts.sum() == len(ds)
        assert chisquare(counts).pvalue > 0.01


class TestFewShotSplit:
    def test_protocol_counts(self):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=0.9, n_per_class=32, seed=1))
        train, val, rest = few_shot_split(ds, 16, 4, seed=2)
        assert len(train) == 160 and len(val) == 40 and len(rest) == 120
        for part in (train, val):
            np.testing.assert_array_equal(np.bincount(part.labels), [16 if part is train else 4] * 10)

    def test_disjoint(self):
        ds = source_glyph_dataset(n_per_class=8, seed=3)
        train, val, rest = few_shot_split(ds, 4, 2, seed=4)
        seen = np.concatenate([train.images, val.images, rest.images])
        assert seen.shape[0] == len(ds)
        # images are unique w.h.p. thanks to noise; set-compare via hashing bytes
        hashes = {arr.tobytes() for arr in seen}
        assert len(hashes) == len(ds)

    def test_seeded(self):
        ds = source_glyph_dataset(n_per_class=8, seed=3)
        a = few_shot_split(ds, 4, 2, seed=9)
        b = few_shot_split(ds, 4, 2, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.images, y.images)

    def test_insufficient_examples(self):
        ds = source_glyph_dataset(n_per_class=3, seed=3)
        with pytest.raises(DatasetError):
            few_shot_split(ds, 4, 2, seed=0)


def write_idx_pair(tmp_path, images, labels):
    import struct

    img_path, lbl_path = tmp_path / "img.idx", tmp_path / "lbl.idx"
    n, h, w = images.shape
    img_path.write_bytes(
        struct.pack(">IIII", 0x00000803, n, h, w) + images.astype(np.uint8).tobytes()
    )
    lbl_path.write_bytes(
        struct.pack(">II", 0x00000801, n) + np.asarray(labels, dtype=np.uint8).tobytes()
    )
    return img_path, lbl_path


class TestIdx:
    def test_round_trips_handcrafted_fixture(self, tmp_path):
        raw = np.zeros((2, 3, 4), dtype=np.uint8)
        raw[0, 1, 2] = 255
        raw[1, 0, 0] = 128
        img_path, lbl_path = write_idx_pair(tmp_path, raw, [7, 2])
        ds = load_idx(img_path, lbl_path)
        assert ds.images.shape == (2, 1, 3, 4)
        assert ds.images[0, 0, 1, 2] == 1.0
        assert ds.images[1, 0, 0, 0] == pytest.approx(128 / 255)
        np.testing.assert_array_equal(ds.labels, [7, 2])

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        img_path, lbl_path = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
        img_path.write_bytes(b"\x00" * 4 + img_path.read_bytes()[4:])
        with pytest.raises(FormatError) as err:
            load_idx(img_path, lbl_path)
        assert err.value.offset == 0

    def test_count_mismatch(self, tmp_path):
        import struct

        img_path, lbl_path = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        lbl_path.write_bytes(struct.pack(">II", 0x00000801, 3) + b"\x00\x01\x02")
        with pytest.raises(FormatError):
            load_idx(img_path, lbl_path)

    def test_truncated_payload_names_offset(self, tmp_path):
        img_path, lbl_path = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        data = img_path.read_bytes()
        img_path.write_bytes(data[:-3])
        with pytest.raises(FormatError) as err:
            load_idx(img_path, lbl_path)
        assert err.value.offset == len(data) - 3


class TestExport:
    def test_save_load_round_trip(self, tmp_path):
        ds = biased_dataset(ShiftSpec(kind="biased", rho=0.8, n_per_class=2, seed=5))
        save_dataset(ds, tmp_path / "out")
        back = load_dataset(tmp_path / "out")
        np.testing.assert_allclose(back.images, ds.images, atol=1e-7)  # float32 files
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert len(list((tmp_path / "out").glob("*.f32"))) == 20
