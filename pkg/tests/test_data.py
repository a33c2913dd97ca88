import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wmhseg.core import FLAIR, T1, InputConfig, Sample, TaskKind, TaskSpec
from wmhseg.data import (AugmentConfig, Patch, PhantomSpec, augment, build_training_items, crop,
                         generate_phantom, generate_phantoms, prepare_sample, sample_patch)
from wmhseg.data.patches import task_target
from wmhseg.errors import ConfigurationError, GenerationError, ShapeError
from wmhseg.labels import make_regional, regions_present

LESION = TaskSpec(TaskKind.LESION)


class TestPhantom:
    def test_deterministic(self):
        spec = PhantomSpec(shape=(24, 24, 24), seed=3)
        a, b = generate_phantom(spec, "x"), generate_phantom(spec, "x")
        for m in (T1, FLAIR):
            np.testing.assert_array_equal(a.modalities[m].data, b.modalities[m].data)
        np.testing.assert_array_equal(a.regions.labels, b.regions.labels)

    def test_different_seeds_differ(self):
        a = generate_phantom(PhantomSpec(shape=(24, 24, 24), seed=1))
        b = generate_phantom(PhantomSpec(shape=(24, 24, 24), seed=2))
        assert not np.array_equal(a.lesion.labels, b.lesion.labels)

    def test_structure(self, phantom):
        assert phantom.has(T1, FLAIR) and phantom.shape == (32, 40, 40)
        les = phantom.lesion.labels.astype(bool)
        assert les.any()
        # lesions sit inside region-labelled white matter
        assert not (les & (phantom.regions.labels == 0)).any()
        assert phantom.meta["lesion_count"] >= 3
        assert len(regions_present(phantom.regions)) == 8

    def test_contrast_polarity(self, phantom):
        les = phantom.lesion.labels.astype(bool)
        wm = (phantom.regions.labels > 0) & ~les
        flair, t1 = phantom.modalities[FLAIR].data, phantom.modalities[T1].data
        assert flair[les].mean() > flair[wm].mean()
        assert t1[les].mean() < t1[wm].mean()

    def test_zero_lesions_and_regions(self):
        s = generate_phantom(PhantomSpec(shape=(16, 16, 16), lesion_count=(0, 0), region_count=0))
        assert not s.lesion.labels.any() and not s.regions.labels.any()

    def test_infeasible_specs(self):
        with pytest.raises(GenerationError):
            PhantomSpec(region_count=40)
        with pytest.raises(GenerationError):
            PhantomSpec(shape=(4, 16, 16))
        with pytest.raises(GenerationError):
            generate_phantom(PhantomSpec(shape=(16, 16, 16), region_count=0, lesion_count=(1, 2)))
        bad = PhantomSpec().contrast
        bad[FLAIR]["lesion"] = 0.1
        with pytest.raises(GenerationError):
            PhantomSpec(contrast=bad)

    def test_json_round_trip(self):
        spec = PhantomSpec(shape=(20, 24, 28), spacing=(1, 1, 2), seed=9)
        assert PhantomSpec.from_json(spec.to_json()) == spec

    def test_region_atlas_shared_across_cohort(self):
        cohort = generate_phantoms(PhantomSpec(shape=(32, 32, 32), region_count=6), 3)
        assert len({tuple(s.meta["region_ids"]) for s in cohort}) == 1
        a, b = cohort[0].regions.labels, cohort[1].regions.labels
        both = (a > 0) & (b > 0)
        assert np.mean(a[both] == b[both]) > 0.6
        other = generate_phantom(PhantomSpec(shape=(32, 32, 32), region_count=6, atlas_seed=5))
        assert other.meta["region_ids"] != cohort[0].meta["region_ids"]

    def test_cohort_ids_and_seeds(self):
        cohort = generate_phantoms(PhantomSpec(shape=(16, 16, 16), region_count=3, lesion_count=(1, 2)), 3, "c")
        assert [s.subject_id for s in cohort] == ["c_000", "c_001", "c_002"]
        assert len({s.meta["seed"] for s in cohort}) == 3


def _drop(s: Sample, modality) -> Sample:
    return Sample(s.subject_id, {m: v for m, v in s.modalities.items() if m != modality},
                  s.lesion, s.regions, s.meta)


class TestTrainingItems:
    @pytest.mark.parametrize("cfg, per_subject, channels", [
        (InputConfig.FLAIR_ONLY, 1, {(FLAIR,)}),
        (InputConfig.T1_ONLY, 1, {(T1,)}),
        (InputConfig.CONCAT, 1, {(T1, FLAIR)}),
        (InputConfig.INTERCHANGEABLE, 2, {(T1,), (FLAIR,)}),
    ])
    def test_cardinality(self, small_phantoms, cfg, per_subject, channels):
        items = build_training_items(small_phantoms, cfg, LESION)
        assert len(items) == per_subject * len(small_phantoms)
        assert {it.channels for it in items} == channels

    def test_missing_modality_names_subject(self, small_phantoms):
        samples = [small_phantoms[0], _drop(small_phantoms[1], T1)]
        with pytest.raises(ConfigurationError, match=small_phantoms[1].subject_id):
            build_training_items(samples, InputConfig.CONCAT, LESION)
        # FLAIR-only training does not need T1
        assert len(build_training_items(samples, InputConfig.FLAIR_ONLY, LESION)) == 2

    def test_missing_labels(self, small_phantoms):
        s = small_phantoms[0]
        no_regions = Sample(s.subject_id, s.modalities, s.lesion, None)
        with pytest.raises(ConfigurationError):
            build_training_items([no_regions], InputConfig.CONCAT, TaskKind.JOINT)

    def test_joint_target_is_regional_lesion(self, phantom):
        got = task_target(phantom, TaskKind.JOINT)
        np.testing.assert_array_equal(got, make_regional(phantom.lesion, phantom.regions).labels)


class TestCrop:
    def test_interior(self):
        a = np.arange(1000).reshape(10, 10, 10)
        np.testing.assert_array_equal(crop(a, (5, 5, 5), (2, 4, 2)), a[4:6, 3:7, 4:6])

    def test_zero_padded_border(self):
        a = np.ones((4, 4, 4))
        out = crop(a, (0, 0, 0), (4, 4, 4))
        assert out.sum() == 8 and out[2:, 2:, 2:].all()

    def test_channel_axis_is_kept(self):
        assert crop(np.ones((2, 5, 5, 5)), (2, 2, 2), (3, 3, 3)).shape == (2, 3, 3, 3)


class TestSamplePatch:
    def test_shape_and_tags(self, phantom):
        p = sample_patch(phantom, LESION, InputConfig.CONCAT, (16, 16, 16), seed=0)
        assert p.inputs.shape == (2, 16, 16, 16) and p.target.shape == (16, 16, 16)
        assert p.channel_tags == (T1, FLAIR) and p.inputs.dtype == np.float32

    def test_deterministic(self, phantom):
        a = sample_patch(phantom, LESION, (FLAIR,), (8, 8, 8), seed=4)
        b = sample_patch(phantom, LESION, (FLAIR,), (8, 8, 8), seed=4)
        assert a.center == b.center
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_fg_bias_one_always_centres_on_lesion(self, phantom):
        for seed in range(50):
            p = sample_patch(phantom, LESION, (FLAIR,), (8, 8, 8), fg_bias=1.0, seed=seed)
            assert p.foreground_centered and phantom.lesion.labels[p.center] == 1

    def test_single_lesion_voxel_is_inside_patch(self, phantom):
        target = np.zeros(phantom.shape, np.int64)
        target[5, 30, 7] = 1
        for seed in range(10):
            p = sample_patch(phantom, LESION, (FLAIR,), (8, 8, 8), fg_bias=1.0, seed=seed, target=target)
            assert p.center == (5, 30, 7) and p.target.sum() == 1

    def test_empty_foreground_falls_back_to_uniform(self, phantom):
        target = np.zeros(phantom.shape, np.int64)
        p = sample_patch(phantom, LESION, (FLAIR,), (8, 8, 8), fg_bias=1.0, seed=0, target=target)
        assert not p.foreground_centered and not p.target.any()

    def test_foreground_fraction_monte_carlo(self, phantom):
        target = task_target(phantom, LESION)
        hits = sum(sample_patch(phantom, LESION, (FLAIR,), (4, 4, 4), 0.5, seed, target=target).foreground_centered
                   for seed in range(10_000))
        assert abs(hits / 10_000 - 0.5) <= 0.02

    def test_interchangeable_needs_one_modality(self, phantom):
        with pytest.raises(ConfigurationError):
            sample_patch(phantom, LESION, InputConfig.INTERCHANGEABLE, (8, 8, 8), seed=0)
        p = sample_patch(_drop(phantom, T1), LESION, InputConfig.INTERCHANGEABLE, (8, 8, 8), seed=0)
        assert p.channel_tags == (FLAIR,)

    def test_missing_modality(self, phantom):
        with pytest.raises(ConfigurationError):
            sample_patch(_drop(phantom, FLAIR), LESION, InputConfig.CONCAT, (8, 8, 8), seed=0)

    def test_prepared_inputs_are_normalized(self, phantom):
        prepared = prepare_sample(phantom)
        data = prepared.modalities[FLAIR].data
        brain = phantom.modalities[FLAIR].data != 0
        assert abs(data[brain].mean()) < 1e-4 and abs(data[brain].std() - 1) < 1e-3
        assert not data[~brain].any()


def _patch(rng, shape=(12, 12, 12), channels=(T1, FLAIR)):
    inputs = rng.normal(size=(len(channels), *shape)).astype(np.float32)
    target = (rng.random(shape) < 0.2).astype(np.int64) * rng.integers(1, 5, shape)
    return Patch(inputs, target, channels)


class TestAugment:
    def test_disabled_is_identity(self, rng):
        p = _patch(rng)
        q = augment(p, AugmentConfig.disabled(), seed=1)
        np.testing.assert_array_equal(q.inputs, p.inputs)
        np.testing.assert_array_equal(q.target, p.target)

    def test_probability_zero_is_identity(self, rng):
        p = _patch(rng)
        q = augment(p, AugmentConfig(probability=0.0), seed=1)
        np.testing.assert_array_equal(q.inputs, p.inputs)

    def test_exact_quarter_turn_matches_rot90(self, rng):
        p = _patch(rng)
        cfg = AugmentConfig.disabled(rotation=True, probability=1.0,
                                     rotation_degrees=((0, 0), (0, 0), (90, 90)))
        q = augment(p, cfg, seed=0)
        for c in range(2):
            np.testing.assert_allclose(q.inputs[c], np.rot90(p.inputs[c], -1, axes=(0, 1)), atol=1e-5)
        np.testing.assert_array_equal(q.target, np.rot90(p.target, -1, axes=(0, 1)))

    def test_seeded_reproducibility(self, rng):
        p = _patch(rng)
        cfg = AugmentConfig(probability=1.0)
        a, b = augment(p, cfg, seed=7), augment(p, cfg, seed=7)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.target, b.target)
        assert not np.array_equal(a.inputs, augment(p, cfg, seed=8).inputs)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_shape_and_label_closure(self, seed):
        p = _patch(np.random.default_rng(seed % 1000))
        q = augment(p, AugmentConfig(probability=1.0), seed=seed)
        assert q.inputs.shape == p.inputs.shape and q.target.shape == p.target.shape
        assert set(np.unique(q.target)) <= set(np.unique(p.target)) | {0}
        assert np.isfinite(q.inputs).all()

    def test_intensity_only_transforms_keep_target(self, rng):
        p = _patch(rng)
        cfg = AugmentConfig(probability=1.0, rotation=False, elastic=False)
        q = augment(p, cfg, seed=3)
        np.testing.assert_array_equal(q.target, p.target)
        assert not np.array_equal(q.inputs, p.inputs)

    def test_json_round_trip_and_validation(self):
        cfg = AugmentConfig(probability=0.3, rotation_degrees=((-5, 5), (0, 0), (-10, 10)))
        assert AugmentConfig.from_json(cfg.to_json()) == cfg
        with pytest.raises(ValueError):
            AugmentConfig(probability=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(additive_noise_sigma=(0.2, 0.1))

    def test_patch_validation(self):
        with pytest.raises(ShapeError):
            Patch(np.zeros((1, 4, 4, 4), np.float32), np.zeros((4, 4, 5)), (T1,))
        with pytest.raises(ShapeError):
            Patch(np.zeros((2, 4, 4, 4), np.float32), np.zeros((4, 4, 4)), (T1,))
