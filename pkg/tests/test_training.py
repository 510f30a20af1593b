"""Training determinism, preprocessing, and scoring behavior."""

import dataclasses

import numpy as np
import pytest

from fpad import imops
from fpad.errors import ConfigError, TrainingError
from fpad.model import DenseNetConfig, build_model
from fpad.patches import AugmentSpec, generate_procedural_dataset
from fpad.registry import (
    Manifest,
    QUALITY_REJECTED,
    Species,
    Split,
    SplitPlan,
    assign_splits,
)
from fpad.training import ColorMode, TrainConfig, preprocess, score, train

from helpers import make_image
from test_registry import make_record

# Small enough to train in well under a second per epoch; 16px inputs survive
# the single 2x transition pool (16 -> 8) without remainder.
MICRO = DenseNetConfig(
    growth_rate=4, block_layers=(1, 1), stem_filters=6, bottleneck=False, input_size=16
)
MICRO_GRAY = dataclasses.replace(MICRO, input_channels=1)

NO_AUG = AugmentSpec(max_rotation=0.0, flip_probability=0.0, zoom_range=0.0)


def micro_config(**overrides):
    fields = dict(model=MICRO, epochs=1, batch_size=8, lr=0.05, augment=NO_AUG, seed=0)
    fields.update(overrides)
    return TrainConfig(**fields)


def build_corpus(root, n_live=12, n_spoof=12, seed=0):
    manifest = Manifest(root / "manifest.jsonl")
    generate_procedural_dataset(manifest, n_live=n_live, n_spoof=n_spoof, image_size=16, seed=seed)
    assign_splits(
        manifest,
        SplitPlan(train_fraction=0.7, validation_fraction=0.15, subject_disjoint=False, seed=0),
    )
    manifest.save()
    return manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="module")
def trained(corpus):
    model, _ = train(micro_config(epochs=2), corpus)
    return model


def state_arrays(model):
    return [t.data.copy() for t in model.parameters() + model.buffers()]


def assert_states_equal(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.dtype == y.dtype
        assert np.array_equal(x, y)


class TestPreprocess:
    def test_rgb_layout_scale_dtype(self):
        img = make_image(20, 24, channels=3, seed=1)
        out = preprocess(img, ColorMode.RGB, None)
        assert out.shape == (3, 20, 24)
        assert out.dtype == np.float32
        expected = (img.pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)
        assert np.array_equal(out, expected)

    def test_grayscale_single_channel(self):
        img = make_image(10, 12, channels=3, seed=2)
        out = preprocess(img, ColorMode.GRAYSCALE, None)
        assert out.shape == (1, 10, 12)
        gray = imops.to_grayscale(img)
        assert np.array_equal(out[0], gray.pixels[:, :, 0].astype(np.float32) / 255.0)

    def test_resize_applied_after_grayscale(self):
        img = make_image(32, 32, channels=3, seed=3)
        out = preprocess(img, ColorMode.GRAYSCALE, 16)
        assert out.shape == (1, 16, 16)
        expected = imops.resize(imops.to_grayscale(img), 16, 16)
        assert np.array_equal(out[0], expected.pixels[:, :, 0].astype(np.float32) / 255.0)

    def test_upsample_resize_rejected(self):
        img = make_image(8, 8, channels=3, seed=4)
        with pytest.raises(ConfigError):
            preprocess(img, ColorMode.RGB, 16)

    def test_forced_flip_matches_manual_mirror(self):
        img = make_image(9, 11, channels=3, seed=5)
        plain = preprocess(img, ColorMode.RGB, None)
        spec = AugmentSpec(max_rotation=0.0, flip_probability=1.0, zoom_range=0.0)
        flipped = preprocess(img, ColorMode.RGB, None, augment_spec=spec, augment_seed=7)
        assert np.array_equal(flipped, plain[:, :, ::-1])

    def test_degenerate_augment_is_identity(self):
        img = make_image(9, 11, channels=3, seed=6)
        plain = preprocess(img, ColorMode.RGB, None)
        augmented = preprocess(img, ColorMode.RGB, None, augment_spec=NO_AUG, augment_seed=7)
        assert np.array_equal(augmented, plain)


class TestTrainConfigValidation:
    @pytest.mark.parametrize(
        "overrides",
        [
            dict(epochs=-1),
            dict(batch_size=0),
            dict(lr=0.0),
            dict(lr=-0.1),
            dict(momentum=1.0),
            dict(momentum=-0.1),
            dict(milestones=(0.5, 1.5)),
            dict(resize_to=0),
        ],
    )
    def test_bad_fields_rejected(self, overrides):
        with pytest.raises(ConfigError):
            micro_config(**overrides)

    def test_color_mode_channel_mismatch(self):
        with pytest.raises(ConfigError):
            micro_config(color_mode=ColorMode.GRAYSCALE)  # MICRO wants 3 channels
        with pytest.raises(ConfigError):
            micro_config(model=MICRO_GRAY)  # RGB produces 3, model wants 1

    def test_matched_grayscale_accepted(self):
        cfg = micro_config(model=MICRO_GRAY, color_mode=ColorMode.GRAYSCALE)
        assert cfg.model.input_channels == 1


class TestTrain:
    def test_zero_epochs_returns_initialized_model(self, corpus):
        cfg = micro_config(epochs=0)
        model, history = train(cfg, corpus)
        assert history == []
        fresh = build_model(cfg.model, seed=cfg.seed)
        assert_states_equal(state_arrays(model), state_arrays(fresh))

    def test_bitwise_deterministic_across_runs(self, corpus):
        cfg = micro_config(epochs=2)
        model_a, hist_a = train(cfg, corpus)
        model_b, hist_b = train(cfg, corpus)
        assert hist_a == hist_b
        assert_states_equal(state_arrays(model_a), state_arrays(model_b))

    def test_history_covers_every_epoch(self, corpus):
        cfg = micro_config(epochs=3)
        _, history = train(cfg, corpus)
        assert [h.epoch for h in history] == [0, 1, 2]
        for h in history:
            assert h.train_loss >= 0.0
            assert 0.0 <= h.val_accuracy <= 1.0

    def test_lr_schedule_decays_at_milestone_epochs(self, corpus):
        # milestones (0.5, 0.75) over 4 epochs decay at epochs 2 and 3.
        cfg = micro_config(epochs=4, lr=0.05, milestones=(0.5, 0.75), lr_decay=0.1)
        _, history = train(cfg, corpus)
        assert [h.lr for h in history] == pytest.approx([0.05, 0.05, 0.005, 0.0005])

    def test_loss_decreases_on_separable_data(self, corpus):
        cfg = micro_config(epochs=4, lr=0.05)
        _, history = train(cfg, corpus)
        losses = [h.train_loss for h in history]
        assert min(losses[1:]) < losses[0]

    def test_grayscale_training_runs(self, corpus):
        cfg = micro_config(model=MICRO_GRAY, color_mode=ColorMode.GRAYSCALE)
        model, history = train(cfg, corpus)
        assert len(history) == 1
        scored = score(model, corpus, Split.TEST, color_mode=ColorMode.GRAYSCALE)
        assert scored and all(0.0 <= s.score <= 1.0 for s in scored)

    def test_empty_train_split_rejected(self, tmp_path):
        manifest = Manifest(tmp_path / "manifest.jsonl")
        generate_procedural_dataset(manifest, n_live=2, n_spoof=2, image_size=16)
        for rec in manifest.records:
            rec.split = Split.VALIDATION
        with pytest.raises(TrainingError, match="training split"):
            train(micro_config(), manifest)

    def test_empty_validation_split_rejected(self, tmp_path):
        manifest = Manifest(tmp_path / "manifest.jsonl")
        generate_procedural_dataset(manifest, n_live=2, n_spoof=2, image_size=16)
        for rec in manifest.records:
            rec.split = Split.TRAIN
        with pytest.raises(TrainingError, match="validation split"):
            train(micro_config(), manifest)

    @pytest.mark.parametrize("split", [Split.TRAIN, Split.VALIDATION])
    def test_unknown_pai_species_rejected(self, tmp_path, split):
        manifest = build_corpus(tmp_path)
        intruder = make_record(
            900, species=Species.LATEX_LAYOVER, kind=manifest.records[0].kind, split=split
        )
        manifest.upsert([intruder])
        with pytest.raises(TrainingError, match="unknown-PAI"):
            train(micro_config(), manifest)

    def test_rejected_records_do_not_influence_weights(self, tmp_path):
        # Marking a training record rejected must train exactly as if the
        # record were absent, pixels and all.
        a = build_corpus(tmp_path / "a", seed=3)
        b = build_corpus(tmp_path / "b", seed=3)
        victim_a = next(r for r in sorted(a.records, key=lambda r: r.id) if r.split is Split.TRAIN)
        victim_b = next(r for r in sorted(b.records, key=lambda r: r.id) if r.split is Split.TRAIN)
        assert victim_a.id == victim_b.id
        victim_a.quality = QUALITY_REJECTED
        imops.save_png(make_image(16, 16, channels=3, seed=99), a.root / victim_a.path)
        b.records.remove(victim_b)
        cfg = micro_config(epochs=2)
        model_a, _ = train(cfg, a)
        model_b, _ = train(cfg, b)
        assert_states_equal(state_arrays(model_a), state_arrays(model_b))


class TestScore:
    def test_sorted_by_record_id_with_split_tag(self, trained, corpus):
        scored = score(trained, corpus, Split.TEST)
        expected_ids = sorted(
            r.id for r in corpus.records if r.split is Split.TEST and r.quality != QUALITY_REJECTED
        )
        assert [s.record_id for s in scored] == expected_ids
        assert all(s.split is Split.TEST for s in scored)
        assert all(0.0 <= s.score <= 1.0 for s in scored)

    def test_batch_size_invariance_bitwise(self, trained, corpus):
        one = score(trained, corpus, Split.TEST, batch_size=1)
        many = score(trained, corpus, Split.TEST, batch_size=32)
        assert [s.score for s in one] == [s.score for s in many]

    def test_single_sample_forward_oracle(self, trained, corpus):
        scored = score(trained, corpus, Split.TEST)
        rec = next(
            r
            for r in sorted(corpus.records, key=lambda r: r.id)
            if r.split is Split.TEST and r.quality != QUALITY_REJECTED
        )
        x = preprocess(imops.load_png(corpus.root / rec.path), ColorMode.RGB, None)
        prob = trained.forward(x[None])[0]
        assert scored[0].record_id == rec.id
        assert scored[0].score == float(prob)

    def test_channel_mismatch_rejected(self, trained, corpus):
        with pytest.raises(ConfigError):
            score(trained, corpus, Split.TEST, color_mode=ColorMode.GRAYSCALE)

    def test_empty_split_returns_empty_list(self, trained, corpus):
        assert score(trained, corpus, Split.UNASSIGNED) == []

    def test_rejected_records_skipped(self, trained, tmp_path):
        manifest = build_corpus(tmp_path)
        test_recs = sorted(
            (r for r in manifest.records if r.split is Split.TEST), key=lambda r: r.id
        )
        test_recs[0].quality = QUALITY_REJECTED
        scored = score(trained, manifest, Split.TEST)
        assert test_recs[0].id not in {s.record_id for s in scored}
        assert len(scored) == len(test_recs) - 1
