import numpy as np
import pytest

from prompt_tuner.errors import ConfigurationError, DimensionError, InvalidInputError
from prompt_tuner.imageops import bilinear_resize, center_pad
from prompt_tuner.prompter import (
    TRIGGER_CHANNELS,
    TRIGGER_GRID,
    TRIGGER_LEN,
    TRUNK_WIDTH,
    Geometry,
    PrompterParams,
    apply_frequency_prompt,
    apply_spatial_prompt,
    decode,
    decoder_param_count,
    flatten,
    init_params,
    param_count,
    pick_resized_side,
    prepare_batch,
    prompt,
    prompt_prepared,
    sigmoid,
    unflatten,
)

SMALL = Geometry(full_h=32, full_w=32, resized_h=28, resized_w=28,
                 freq_h=14, freq_w=14, channels=3)


@pytest.fixture(scope="module")
def seeded_params():
    return init_params(SMALL, np.random.default_rng(123))


def zero_params(geom):
    return PrompterParams(
        decoder_weights=np.zeros(decoder_param_count(geom)),
        trigger_main=np.zeros(TRIGGER_LEN),
        trigger_spatial=np.zeros(TRIGGER_LEN),
        freq_scale=0.0,
    )


class TestGeometry:
    def test_defaults(self):
        g = Geometry()
        assert g.oracle_shape == (3, 224, 224)

    def test_rejects_odd_padding_gap(self):
        with pytest.raises(InvalidInputError):
            Geometry(full_h=33, full_w=32, resized_h=28, resized_w=28,
                     freq_h=14, freq_w=14)

    def test_rejects_freq_larger_than_resized(self):
        with pytest.raises(InvalidInputError):
            Geometry(full_h=32, full_w=32, resized_h=28, resized_w=28,
                     freq_h=30, freq_w=14)

    def test_resize_rule(self):
        assert pick_resized_side(28, 28) == 112
        assert pick_resized_side(224, 224) == 192
        assert pick_resized_side(160, 400) == 192
        assert pick_resized_side(159, 400) == 112


class TestDecode:
    def test_zero_params_give_zero_prompts(self):
        pair = decode(zero_params(SMALL), SMALL)
        np.testing.assert_array_equal(pair.freq_vp, np.zeros((3, 14, 14)))
        np.testing.assert_array_equal(pair.spatial_vp, np.zeros((3, 32, 32)))

    def test_deterministic(self, seeded_params):
        a = decode(seeded_params, SMALL)
        b = decode(seeded_params, SMALL)
        assert a.freq_vp.tobytes() == b.freq_vp.tobytes()
        assert a.spatial_vp.tobytes() == b.spatial_vp.tobytes()

    def test_output_shapes(self, seeded_params):
        pair = decode(seeded_params, SMALL)
        assert pair.freq_vp.shape == (3, 14, 14)
        assert pair.spatial_vp.shape == (3, 32, 32)
        assert np.all(np.isfinite(pair.freq_vp)) and np.all(np.isfinite(pair.spatial_vp))

    def test_trigger_spatial_reaches_spatial_prompt(self, seeded_params):
        base = decode(seeded_params, SMALL)
        bumped = PrompterParams(
            decoder_weights=seeded_params.decoder_weights,
            trigger_main=seeded_params.trigger_main,
            trigger_spatial=seeded_params.trigger_spatial + 0.5,
            freq_scale=seeded_params.freq_scale,
        )
        pair = decode(bumped, SMALL)
        assert np.max(np.abs(pair.spatial_vp - base.spatial_vp)) > 0

    def test_freq_scale_does_not_affect_decode(self, seeded_params):
        bumped = PrompterParams(
            decoder_weights=seeded_params.decoder_weights,
            trigger_main=seeded_params.trigger_main,
            trigger_spatial=seeded_params.trigger_spatial,
            freq_scale=seeded_params.freq_scale + 10.0,
        )
        base, pair = decode(seeded_params, SMALL), decode(bumped, SMALL)
        np.testing.assert_array_equal(pair.freq_vp, base.freq_vp)
        np.testing.assert_array_equal(pair.spatial_vp, base.spatial_vp)

    def test_wrong_weight_count_rejected(self, seeded_params):
        broken = PrompterParams(
            decoder_weights=seeded_params.decoder_weights[:-1],
            trigger_main=seeded_params.trigger_main,
            trigger_spatial=seeded_params.trigger_spatial,
            freq_scale=0.0,
        )
        with pytest.raises(ConfigurationError):
            decode(broken, SMALL)


class TestFlatten:
    def test_round_trip_exact(self, seeded_params):
        back = unflatten(flatten(seeded_params), SMALL)
        np.testing.assert_array_equal(back.decoder_weights, seeded_params.decoder_weights)
        np.testing.assert_array_equal(back.trigger_main, seeded_params.trigger_main)
        np.testing.assert_array_equal(back.trigger_spatial, seeded_params.trigger_spatial)
        assert back.freq_scale == seeded_params.freq_scale

    def test_default_geometry_count(self):
        # Architecture arithmetic, written out independently: input grid has
        # 8 + 392 channels, five 2x blocks reach 224 from 7, width-8 trunk,
        # 3x3 heads to 3 channels plus a 1x1 frequency head.
        g = Geometry()
        first = 8 * (TRIGGER_CHANNELS + TRIGGER_LEN) * 9 + 8
        trunk = 4 * (8 * 8 * 9 + 8)
        spatial_head = 3 * 8 * 9 + 3
        freq_head = 3 * 8 + 3
        expected = first + trunk + spatial_head + freq_head + 2 * 392 + 1
        assert param_count(g) == expected == 32175
        assert flatten(init_params(g, np.random.default_rng(0))).size == expected

    def test_small_geometry_count(self, seeded_params):
        assert flatten(seeded_params).size == param_count(SMALL)

    def test_injective(self, seeded_params):
        other = init_params(SMALL, np.random.default_rng(124))
        assert not np.array_equal(flatten(seeded_params), flatten(other))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            unflatten(np.zeros(10), SMALL)


class TestFrequencyPrompt:
    def test_zero_prompt_is_identity(self):
        rng = np.random.default_rng(1)
        img = rng.random((3, 28, 28))
        out = apply_frequency_prompt(img, np.zeros((3, 14, 14)), freq_scale=2.0)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_initial_scale_nearly_mutes_prompt(self):
        assert sigmoid(-5.0) == pytest.approx(0.006692850924284856, abs=1e-12)
        rng = np.random.default_rng(2)
        img = rng.random((3, 28, 28)) * 0.5 + 0.25
        vp = rng.normal(size=(3, 14, 14))
        out = apply_frequency_prompt(img, vp, freq_scale=-5.0)
        assert np.max(np.abs(out - img)) < 0.0067 * np.max(np.abs(vp)) * 14 * 3

    def test_saturated_scale_with_full_block_adds_prompt(self):
        # h_f == h_d: the DCT embed is the identity, so the prompt adds through.
        rng = np.random.default_rng(3)
        img = rng.random((3, 14, 14))
        out = apply_frequency_prompt(img, np.ones((3, 14, 14)), freq_scale=1000.0)
        np.testing.assert_allclose(out, np.ones((3, 14, 14)), atol=1e-9)

    def test_output_clamped(self):
        rng = np.random.default_rng(4)
        img = rng.random((3, 28, 28))
        vp = rng.normal(size=(3, 14, 14)) * 10
        out = apply_frequency_prompt(img, vp, freq_scale=3.0)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            apply_frequency_prompt(np.zeros((3, 28, 28)), np.zeros((1, 14, 14)), 0.0)
        with pytest.raises(DimensionError):
            apply_frequency_prompt(np.zeros((3, 14, 14)), np.zeros((3, 28, 28)), 0.0)


class TestSpatialPrompt:
    def test_zero_prompt_is_centered_padding(self):
        rng = np.random.default_rng(5)
        img = rng.random((3, 28, 28))
        out = apply_spatial_prompt(img, np.zeros((3, 32, 32)), SMALL)
        np.testing.assert_array_equal(out, center_pad(img, 32, 32))

    def test_center_window_untouched_by_any_prompt(self):
        rng = np.random.default_rng(6)
        img = rng.random((3, 28, 28))
        vp = rng.normal(size=(3, 32, 32))
        out = apply_spatial_prompt(img, vp, SMALL)
        np.testing.assert_array_equal(out[:, 2:30, 2:30], img)

    def test_frame_equals_clamped_prompt(self):
        rng = np.random.default_rng(7)
        img = rng.random((3, 28, 28))
        vp = rng.normal(size=(3, 32, 32)) * 2
        out = apply_spatial_prompt(img, vp, SMALL)
        frame = np.ones((32, 32), dtype=bool)
        frame[2:30, 2:30] = False
        clamped = np.clip(vp, 0.0, 1.0)
        for c in range(3):
            np.testing.assert_array_equal(out[c][frame], clamped[c][frame])

    def test_default_geometry_frame_width(self):
        g = Geometry()  # 224 canvas, 192 resized -> 16-pixel border
        assert (g.full_h - g.resized_h) // 2 == 16

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            apply_spatial_prompt(np.zeros((3, 30, 30)), np.zeros((3, 32, 32)), SMALL)


class TestPrompt:
    def test_zero_params_give_padded_resize(self):
        rng = np.random.default_rng(8)
        img = rng.random((3, 40, 40))
        out = prompt(zero_params(SMALL), SMALL, img)
        np.testing.assert_allclose(
            out, center_pad(np.clip(bilinear_resize(img, 28, 28), 0, 1), 32, 32),
            atol=1e-12,
        )

    def test_output_in_unit_range(self, seeded_params):
        rng = np.random.default_rng(9)
        out = prompt(seeded_params, SMALL, rng.random((3, 50, 30)))
        assert out.shape == (3, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_frame_is_input_independent(self, seeded_params):
        rng = np.random.default_rng(10)
        out1 = prompt(seeded_params, SMALL, rng.random((3, 28, 28)))
        out2 = prompt(seeded_params, SMALL, rng.random((3, 44, 44)))
        frame = np.ones((32, 32), dtype=bool)
        frame[2:30, 2:30] = False
        for c in range(3):
            np.testing.assert_array_equal(out1[c][frame], out2[c][frame])

    def test_center_preservation(self, seeded_params):
        rng = np.random.default_rng(11)
        img = rng.random((3, 28, 28))
        resized = bilinear_resize(img, 28, 28)
        pair = decode(seeded_params, SMALL)
        freq_prompted = apply_frequency_prompt(resized, pair.freq_vp, seeded_params.freq_scale)
        out = prompt(seeded_params, SMALL, img)
        np.testing.assert_array_equal(out[:, 2:30, 2:30], freq_prompted)

    def test_frequency_attenuation_is_monotone(self, seeded_params):
        rng = np.random.default_rng(12)
        img = rng.random((3, 28, 28))

        def output_at(fs):
            p = PrompterParams(seeded_params.decoder_weights, seeded_params.trigger_main,
                               seeded_params.trigger_spatial, fs)
            return prompt(p, SMALL, img)

        spatial_only = output_at(-50.0)
        dists = [np.linalg.norm(output_at(fs) - spatial_only) for fs in (-8.0, -2.0, 0.0, 3.0)]
        assert np.max(np.abs(output_at(-40.0) - spatial_only)) < 1e-12
        assert all(d2 >= d1 - 1e-12 for d1, d2 in zip(dists, dists[1:]))

    def test_trigger_entries_are_live(self, seeded_params):
        # Finite differences on a sample of entries of both triggers: no dead paths.
        rng = np.random.default_rng(13)
        img = rng.random((3, 28, 28))
        base_flat = flatten(seeded_params)
        n_dec = decoder_param_count(SMALL)
        idx_main = rng.choice(TRIGGER_LEN, size=8, replace=False) + n_dec
        idx_spatial = rng.choice(TRIGGER_LEN, size=8, replace=False) + n_dec + TRIGGER_LEN
        for idx in np.concatenate([idx_main, idx_spatial]):
            stepped = base_flat.copy()
            stepped[idx] += 1e-3
            diff = prompt(unflatten(stepped, SMALL), SMALL, img) - prompt(
                unflatten(base_flat, SMALL), SMALL, img
            )
            assert np.all(np.isfinite(diff))
            assert np.max(np.abs(diff)) > 0


class TestPreparedBatch:
    def test_matches_per_image_prompt(self, seeded_params):
        rng = np.random.default_rng(14)
        images = rng.random((5, 3, 28, 28))
        prepared = prepare_batch(images, SMALL)
        batch_out = prompt_prepared(prepared, seeded_params)
        for i in range(5):
            np.testing.assert_allclose(
                batch_out[i], prompt(seeded_params, SMALL, images[i]), atol=1e-10
            )

    def test_trunk_width_constant(self):
        # The decoder config the counts above rely on.
        assert TRUNK_WIDTH == 8 and TRIGGER_GRID == 7 and TRIGGER_CHANNELS == 8
