"""End-to-end protocol runner: train or load a model, score the Test split,
and emit the result summary as CSV, text, scored-sample dump, and figures.

Output files carry no timestamps; a rerun with the same manifest, config,
and seed writes byte-identical report.csv, report.txt, and scores.csv.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import figures
from .errors import ManifestError, MetricsError, TrainingError
from .metrics import EvalReport, ScoredSample, compute_deer, compute_report, format_pct
from .model import (
    DenseNet,
    conv_layer_count,
    count_trainable_params,
    load_checkpoint,
    save_checkpoint,
)
from .registry import Kind, Manifest, QUALITY_REJECTED, Species, Split, validate_manifest
from .training import EpochStats, TrainConfig, score, train

log = logging.getLogger(__name__)


@dataclass
class ProtocolResult:
    report: EvalReport
    scored: list[ScoredSample]
    history: list[EpochStats]
    model: DenseNet
    checkpoint_path: Path
    files: dict


def _patch_count(manifest: Manifest, split: Split) -> int:
    return sum(
        1
        for r in manifest.records
        if r.split is split and r.kind is Kind.PATCH and r.quality != QUALITY_REJECTED
    )


def write_scores_csv(scored: list[ScoredSample], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["record_id,species,split,score"]
    for s in scored:
        lines.append(f"{s.record_id},{s.species.value},{s.split.value},{s.score!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_scores_csv(path) -> list[ScoredSample]:
    """Inverse of write_scores_csv; full float precision survives the trip."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "record_id,species,split,score":
        raise MetricsError(f"{path} is not a scores.csv dump")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        record_id, species, split, score = line.split(",")
        out.append(
            ScoredSample(
                record_id=record_id,
                species=Species.parse(species),
                score=float(score),
                split=Split(split),
            )
        )
    return out


def describe_model(model: DenseNet) -> dict:
    config = model.config
    return {
        "model": f"DenseNet-{conv_layer_count(config)} (k={config.growth_rate})",
        "input": f"{config.input_size}x{config.input_size}x{config.input_channels}",
        "params": count_trainable_params(model),
    }


def write_report_csv(report: EvalReport, model_desc: dict, counts: dict, path) -> Path:
    """One wide row; every attack species gets n/errors/APCER%/role columns,
    blank when unseen. Raw counts ride along with the rounded rates."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [
        "model",
        "input",
        "trainable_params",
        "train_patches",
        "val_patches",
        "test_patches",
        "threshold",
        "live_n",
        "live_errors",
        "bpcer_pct",
        "deer_pct",
        "deer_threshold",
    ]
    row = [
        str(model_desc.get("model", "n/a")),
        str(model_desc.get("input", "n/a")),
        str(model_desc.get("params", "")),
        str(counts["train"]),
        str(counts["val"]),
        str(counts["test"]),
        f"{report.threshold!r}",
        str(report.n_live),
        str(report.n_live_misclassified),
        format_pct(report.bpcer),
        format_pct(report.deer) if report.deer is not None else "",
        f"{report.deer_threshold!r}" if report.deer_threshold is not None else "",
    ]
    for sp in Species:
        if sp is Species.LIVE:
            continue
        header += [f"{sp.code}_n", f"{sp.code}_errors", f"{sp.code}_apcer_pct", f"{sp.code}_role"]
        r = report.result_for(sp)
        if r is None:
            row += ["", "", "", ""]
        else:
            row += [
                str(r.n_attacks),
                str(r.n_misclassified),
                format_pct(r.apcer),
                "known" if r.known else "unknown",
            ]
    path.write_text(",".join(header) + "\n" + ",".join(row) + "\n", encoding="utf-8")
    return path


def write_report_text(report: EvalReport, model_desc: dict, counts: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "PAD result summary",
        "==================",
        f"model: {model_desc.get('model', 'n/a')}",
        f"input: {model_desc.get('input', 'n/a')}",
        f"trainable parameters: {model_desc.get('params', 'n/a')}",
        f"patches train/val/test: {counts['train']}/{counts['val']}/{counts['test']}",
        f"decision threshold: {report.threshold:g}",
        "",
        f"{'species':<22} {'role':<8} {'n':>6} {'errors':>7} {'APCER%':>8}",
    ]
    for r in report.species_results:
        lines.append(
            f"{r.species.value:<22} {'known' if r.known else 'unknown':<8} "
            f"{r.n_attacks:>6} {r.n_misclassified:>7} {format_pct(r.apcer):>8}"
        )
    lines.append("")
    lines.append(
        f"BPCER%: {report.n_live_misclassified}/{report.n_live} = {format_pct(report.bpcer)}"
    )
    if report.deer is not None:
        lines.append(f"D-EER%: {format_pct(report.deer)} at threshold {report.deer_threshold:.6g}")
    for note in report.notes:
        lines.append(f"note: {note}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def run_protocol(
    manifest: Manifest,
    train_config: TrainConfig,
    out_dir,
    threshold: float = 0.5,
    checkpoint: Optional[Path] = None,
    render_figures: bool = True,
) -> ProtocolResult:
    """Full evaluation pass over the manifest's Test split.

    Trains from scratch unless an existing checkpoint path is given, in which
    case it is loaded and history stays empty. All outputs land in out_dir.
    """
    violations = validate_manifest(manifest)
    if violations:
        first = violations[0]
        raise ManifestError(
            f"manifest failed validation with {len(violations)} violation(s); "
            f"first: {first.code} on {first.record_id}: {first.message}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    history: list[EpochStats] = []
    if checkpoint is not None and Path(checkpoint).exists():
        model = load_checkpoint(checkpoint)
        checkpoint_path = Path(checkpoint)
        log.info("protocol loaded checkpoint %s", checkpoint_path)
    else:
        model, history = train(train_config, manifest)
        checkpoint_path = out_dir / "model.ckpt"
        save_checkpoint(model, checkpoint_path)
        log.info("protocol trained model, checkpoint %s", checkpoint_path)

    scored = score(
        model,
        manifest,
        Split.TEST,
        color_mode=train_config.color_mode,
        resize_to=train_config.resize_to,
        batch_size=train_config.batch_size,
    )
    if not scored:
        raise TrainingError("Test split has no patches to score")
    report = compute_report(scored, threshold)
    try:
        deer, deer_threshold = compute_deer(scored)
        report = dataclasses.replace(report, deer=deer, deer_threshold=deer_threshold)
    except MetricsError as exc:
        report = dataclasses.replace(
            report, notes=report.notes + (f"D-EER unavailable: {exc}",)
        )

    counts = {
        "train": _patch_count(manifest, Split.TRAIN),
        "val": _patch_count(manifest, Split.VALIDATION),
        "test": _patch_count(manifest, Split.TEST),
    }
    desc = describe_model(model)
    files = {
        "scores_csv": write_scores_csv(scored, out_dir / "scores.csv"),
        "report_csv": write_report_csv(report, desc, counts, out_dir / "report.csv"),
        "report_txt": write_report_text(report, desc, counts, out_dir / "report.txt"),
    }
    history_path = out_dir / "history.json"
    history_path.write_text(
        json.dumps([h.to_json() for h in history], indent=2) + "\n", encoding="utf-8"
    )
    files["history_json"] = history_path

    if render_figures:
        if history:
            files["training_history_png"] = figures.save_training_history(
                history, out_dir / "training_history.png"
            )
        files["score_hist_png"] = figures.save_score_histogram(
            scored, threshold, out_dir / "score_hist.png"
        )
        try:
            files["det_curve_png"] = figures.save_det_curve(scored, out_dir / "det_curve.png")
        except MetricsError:
            pass
        files["apcer_bars_png"] = figures.save_apcer_bars(report, out_dir / "apcer_bars.png")

    return ProtocolResult(
        report=report,
        scored=scored,
        history=history,
        model=model,
        checkpoint_path=checkpoint_path,
        files=files,
    )
