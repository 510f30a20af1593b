"""Protocol runner outputs: CSV/text reports, rerun determinism, figures."""

import filecmp

import pytest

from fpad.errors import ManifestError, MetricsError, TrainingError
from fpad.metrics import ScoredSample, compute_report
from fpad.model import conv_layer_count, count_trainable_params, build_model
from fpad.patches import generate_procedural_dataset
from fpad.protocol import (
    describe_model,
    read_scores_csv,
    run_protocol,
    write_report_csv,
    write_report_text,
    write_scores_csv,
)
from fpad.registry import Manifest, Species, Split

from test_registry import make_record
from test_training import MICRO, micro_config

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def split_by_species(manifest):
    """Deterministic 60/20/20 per-species split so every split holds both
    classes regardless of permutation seeds."""
    by_species = {}
    for rec in sorted(manifest.records, key=lambda r: r.id):
        by_species.setdefault(rec.species, []).append(rec)
    for recs in by_species.values():
        n = len(recs)
        for i, rec in enumerate(recs):
            if i < int(n * 0.6):
                rec.split = Split.TRAIN
            elif i < int(n * 0.8):
                rec.split = Split.VALIDATION
            else:
                rec.split = Split.TEST
    manifest.save()


def build_corpus(root, n=10, seed=0):
    manifest = Manifest(root / "manifest.jsonl")
    generate_procedural_dataset(manifest, n_live=n, n_spoof=n, image_size=16, seed=seed)
    split_by_species(manifest)
    return manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("protocol_corpus"))


@pytest.fixture(scope="module")
def result(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("protocol_out")
    return run_protocol(corpus, micro_config(epochs=2), out)


def sample(i, species, score, split=Split.TEST):
    return ScoredSample(record_id=f"r{i:03d}", species=species, score=score, split=split)


class TestScoresCsv:
    def test_round_trip_preserves_exact_floats(self, tmp_path):
        scored = [
            sample(0, Species.LIVE, 0.1 + 0.2),  # not representable as short decimal
            sample(1, Species.ECOFLEX_LAYOVER, 1.0 / 3.0),
            sample(2, Species.LATEX_LAYOVER, 0.0),
        ]
        path = write_scores_csv(scored, tmp_path / "scores.csv")
        assert read_scores_csv(path) == scored

    def test_header_line(self, tmp_path):
        path = write_scores_csv([], tmp_path / "scores.csv")
        assert path.read_text().splitlines()[0] == "record_id,species,split,score"

    def test_rejects_foreign_csv(self, tmp_path):
        bad = tmp_path / "other.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(MetricsError):
            read_scores_csv(bad)


class TestDescribeModel:
    def test_micro_description(self):
        model = build_model(MICRO, seed=0)
        desc = describe_model(model)
        assert desc["model"] == f"DenseNet-{conv_layer_count(MICRO)} (k={MICRO.growth_rate})"
        assert desc["input"] == "16x16x3"
        assert desc["params"] == count_trainable_params(model)


def report_fixture():
    scored = [
        sample(0, Species.LIVE, 0.1),
        sample(1, Species.LIVE, 0.2),
        sample(2, Species.LIVE, 0.9),  # live over threshold: BPCER error
        sample(3, Species.ECOFLEX_LAYOVER, 0.8),
        sample(4, Species.ECOFLEX_LAYOVER, 0.7),
        sample(5, Species.ECOFLEX_LAYOVER, 0.6),
        sample(6, Species.ECOFLEX_LAYOVER, 0.3),  # attack under threshold: APCER error
        sample(7, Species.LATEX_LAYOVER, 0.9),
        sample(8, Species.LATEX_LAYOVER, 0.4),  # unknown-species APCER error
    ]
    return compute_report(scored, 0.5)


class TestReportCsv:
    def test_wide_row_fields(self, tmp_path):
        report = report_fixture()
        desc = {"model": "DenseNet-5 (k=4)", "input": "16x16x3", "params": 1234}
        counts = {"train": 20, "val": 4, "test": 9}
        path = write_report_csv(report, desc, counts, tmp_path / "report.csv")
        header, row = path.read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert len(header.split(",")) == len(row.split(","))
        assert cells["model"] == "DenseNet-5 (k=4)"
        assert cells["train_patches"] == "20"
        assert cells["live_n"] == "3"
        assert cells["live_errors"] == "1"
        assert cells["bpcer_pct"] == "33.33"
        assert cells["EL_n"] == "4"
        assert cells["EL_errors"] == "1"
        assert cells["EL_apcer_pct"] == "25.00"
        assert cells["EL_role"] == "known"
        assert cells["LL_n"] == "2"
        assert cells["LL_role"] == "unknown"
        # Species never scored stay blank rather than reading as zero rates.
        assert cells["PL_n"] == ""
        assert cells["PL_apcer_pct"] == ""
        # No D-EER attached: both columns empty.
        assert cells["deer_pct"] == ""
        assert cells["deer_threshold"] == ""

    def test_threshold_written_with_full_precision(self, tmp_path):
        report = compute_report([sample(0, Species.LIVE, 0.1)], 1.0 / 3.0)
        path = write_report_csv(report, {}, {"train": 0, "val": 0, "test": 1}, tmp_path / "r.csv")
        header, row = path.read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert float(cells["threshold"]) == 1.0 / 3.0


class TestReportText:
    def test_species_rows_and_notes(self, tmp_path):
        report = report_fixture()
        desc = {"model": "DenseNet-5 (k=4)", "input": "16x16x3", "params": 1234}
        counts = {"train": 20, "val": 4, "test": 9}
        path = write_report_text(report, desc, counts, tmp_path / "report.txt")
        text = path.read_text()
        assert "PAD result summary" in text
        assert "patches train/val/test: 20/4/9" in text
        assert "BPCER%: 1/3 = 33.33" in text
        el_line = next(l for l in text.splitlines() if l.startswith(Species.ECOFLEX_LAYOVER.value))
        assert "known" in el_line and "25.00" in el_line
        ll_line = next(l for l in text.splitlines() if l.startswith(Species.LATEX_LAYOVER.value))
        assert "unknown" in ll_line
        for note in report.notes:
            assert f"note: {note}" in text


class TestRunProtocol:
    def test_output_files_exist(self, result):
        for key in ("scores_csv", "report_csv", "report_txt", "history_json"):
            assert result.files[key].is_file()
        for key in ("training_history_png", "score_hist_png", "det_curve_png", "apcer_bars_png"):
            assert result.files[key].read_bytes()[:8] == PNG_MAGIC

    def test_history_and_checkpoint(self, result):
        assert [h.epoch for h in result.history] == [0, 1]
        assert result.checkpoint_path.is_file()

    def test_scores_cover_test_split(self, result, corpus):
        test_ids = sorted(r.id for r in corpus.records if r.split is Split.TEST)
        assert [s.record_id for s in result.scored] == test_ids
        assert read_scores_csv(result.files["scores_csv"]) == result.scored

    def test_report_counts_match_manifest(self, result, corpus):
        header, row = result.files["report_csv"].read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        for split, key in ((Split.TRAIN, "train_patches"), (Split.VALIDATION, "val_patches"),
                           (Split.TEST, "test_patches")):
            assert int(cells[key]) == sum(1 for r in corpus.records if r.split is split)

    def test_deer_attached_when_both_classes_present(self, result):
        assert result.report.deer is not None
        assert result.report.deer_threshold is not None

    def test_rerun_is_byte_identical(self, result, corpus, tmp_path):
        again = run_protocol(corpus, micro_config(epochs=2), tmp_path / "again")
        for key in ("scores_csv", "report_csv", "report_txt", "history_json"):
            assert filecmp.cmp(result.files[key], again.files[key], shallow=False), key

    def test_checkpoint_reuse_skips_training(self, result, corpus, tmp_path):
        reused = run_protocol(
            corpus,
            micro_config(epochs=2),
            tmp_path / "reused",
            checkpoint=result.checkpoint_path,
        )
        assert reused.history == []
        assert reused.checkpoint_path == result.checkpoint_path
        assert "training_history_png" not in reused.files
        assert filecmp.cmp(
            result.files["scores_csv"], reused.files["scores_csv"], shallow=False
        )

    def test_figures_can_be_disabled(self, corpus, tmp_path):
        out = tmp_path / "nofig"
        res = run_protocol(
            corpus, micro_config(epochs=0), out, checkpoint=None, render_figures=False
        )
        # epochs=0 still scores with the initialized model.
        assert res.history == []
        assert not any(key.endswith("_png") for key in res.files)

    def test_invalid_manifest_rejected_up_front(self, corpus, tmp_path):
        manifest = build_corpus(tmp_path)
        manifest.upsert(
            [make_record(700, species=Species.LATEX_LAYOVER,
                         kind=manifest.records[0].kind, split=Split.TRAIN)]
        )
        with pytest.raises(ManifestError, match="unknown_pai_in_training"):
            run_protocol(manifest, micro_config(), tmp_path / "out")

    def test_empty_test_split_rejected(self, tmp_path):
        manifest = build_corpus(tmp_path)
        for rec in manifest.records:
            if rec.split is Split.TEST:
                rec.split = Split.TRAIN
        with pytest.raises(TrainingError, match="[Tt]est split"):
            run_protocol(manifest, micro_config(), tmp_path / "out")
