"""Command-line entry point for the PAD pipeline.

Subcommands cover the workflow end to end: ingest, blur-scan, patchify,
synth-gen, split, train, eval, report, serve. Exit codes: 0 success, 1
domain error, 2 usage or configuration error. Heavy modules load lazily so
--help stays fast.

Precedence for train settings: command-line flags override config-file keys,
which override built-in defaults. Config files are `key = value` lines with
`#` comments; keys mirror the flag names (hyphen or underscore both work).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, FpadError

log = logging.getLogger("fpad")


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


_GLOBAL_DEFAULTS = {"manifest": None, "data_root": None, "seed": 0, "threads": None, "verbose": 0}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    _setup_logging(args.verbose)
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help()
        return 2
    try:
        result = handler(args)
        return 0 if result is None else int(result)
    except FpadError as exc:
        log.error("%s", exc)
        return exc.exit_code


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _build_parser() -> argparse.ArgumentParser:
    # Shared flags are accepted both before and after the subcommand. SUPPRESS
    # defaults keep the subparser pass from clobbering values parsed earlier;
    # dispatch() fills in the real defaults afterwards.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--manifest",
        default=argparse.SUPPRESS,
        help="manifest path (default: DATA_ROOT/manifest.jsonl)",
    )
    common.add_argument(
        "--data-root",
        default=argparse.SUPPRESS,
        help="dataset root directory (default: $FPAD_DATA_ROOT, then the working directory)",
    )
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed")
    common.add_argument(
        "--threads",
        type=int,
        default=argparse.SUPPRESS,
        help="worker cap for scan stages (default: all cores; 1 = fully sequential)",
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=argparse.SUPPRESS, help="-v info, -vv debug"
    )

    parser = argparse.ArgumentParser(
        prog="fpad",
        description="Noncontact fingerprint presentation-attack detection pipeline.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command")

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("ingest", help="scan a directory of PNGs into the manifest")
    p.add_argument("dir", help="directory to scan recursively")
    p.add_argument("--species", required=True, help="species name or code (Live, EL, PL, ...)")
    p.add_argument("--sensor", required=True, help="capture sensor label")
    p.add_argument(
        "--kind",
        required=True,
        choices=["FourFinger", "SingleFingertip", "Patch"],
        help="record kind for every scanned file",
    )
    p.add_argument("--subject", help="subject id override (default: first directory component)")
    p.add_argument("--session", type=int, default=1)
    p.set_defaults(handler=_cmd_ingest)

    p = add_parser("blur-scan", help="score fingertip sharpness and flag the blurriest")
    p.add_argument(
        "--removal-fraction",
        type=float,
        default=0.098,
        help="fraction of fingertips to flag as rejected (default 0.098)",
    )
    p.add_argument("--out", help="report directory (default: DATA_ROOT/reports)")
    p.set_defaults(handler=_cmd_blur_scan)

    p = add_parser("patchify", help="extract training patches from fingertips")
    p.add_argument("--patch-size", type=int, default=None, help="square patch side (default 256)")
    p.add_argument("--out-dir", default="patches", help="patch directory under the data root")
    p.set_defaults(handler=_cmd_patchify)

    p = add_parser("synth-gen", help="generate a procedural two-class dataset")
    p.add_argument("--n", type=int, default=500, help="images per class")
    p.add_argument("--size", type=int, default=32, help="square image side")
    p.add_argument("--spoof-species", default="EL", help="attack species label for the spoof class")
    p.add_argument(
        "--unknown-n",
        type=int,
        default=0,
        help="additionally generate this many images of an unknown-PAI species",
    )
    p.add_argument("--unknown-species", default="LL", help="species used for --unknown-n")
    p.set_defaults(handler=_cmd_synth_gen)

    p = add_parser("split", help="assign Train/Validation/Test splits")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument(
        "--per-record",
        action="store_true",
        help="split records independently instead of subject-disjoint",
    )
    p.set_defaults(handler=_cmd_split)

    p = add_parser("train", help="train the classifier on Train/Validation patches")
    p.add_argument("--config", help="key=value config file; flags override its values")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--color-mode", choices=["rgb", "grayscale"], default=None)
    p.add_argument("--resize-to", type=int, default=None)
    p.add_argument(
        "--arch",
        choices=["tiny", "full"],
        default=None,
        help="tiny = blocks [2,2] at 32px; full = blocks [6,12,24,16] at 256px",
    )
    p.add_argument("--out", help="output directory (default: DATA_ROOT/run)")
    p.set_defaults(handler=_cmd_train)

    p = add_parser("eval", help="score the Test split with a trained checkpoint")
    p.add_argument("--checkpoint", help="checkpoint file produced by train")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--color-mode", choices=["rgb", "grayscale"], default=None)
    p.add_argument("--resize-to", type=int, default=None)
    p.add_argument("--out", help="output directory (default: DATA_ROOT/run)")
    p.set_defaults(handler=_cmd_eval)

    p = add_parser("report", help="re-render report files from a scores.csv dump")
    p.add_argument("--scores", help="scores.csv path (default: DATA_ROOT/run/scores.csv)")
    p.add_argument("--checkpoint", help="checkpoint for the model columns (optional)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="output directory (default: alongside --scores)")
    p.set_defaults(handler=_cmd_report)

    p = add_parser("serve", help="run the annotation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument(
        "--static",
        help="annotator UI bundle directory (default: ./frontend/dist when present)",
    )
    p.set_defaults(handler=_cmd_serve)

    return parser


def _data_root(args) -> Path:
    if args.data_root:
        return Path(args.data_root)
    env = os.environ.get("FPAD_DATA_ROOT")
    if env:
        return Path(env)
    return Path.cwd()


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    return _data_root(args) / "manifest.jsonl"


def _load_manifest(args):
    from .registry import Manifest

    path = _manifest_path(args)
    if not path.exists():
        raise FpadError(f"manifest {path} does not exist; run ingest or synth-gen first")
    return Manifest.load(path)


def _thread_count(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        return args.threads
    return os.cpu_count() or 1


# --- handlers ---


def _cmd_ingest(args) -> int:
    from .registry import Kind, Manifest, Species, ingest_directory

    manifest = Manifest.load_or_create(_manifest_path(args))
    species = Species.parse(args.species)
    log.info(
        "command=ingest dir=%s species=%s sensor=%s kind=%s manifest=%s",
        args.dir, species.value, args.sensor, args.kind, manifest.path,
    )
    records = ingest_directory(
        manifest,
        args.dir,
        species=species,
        sensor=args.sensor,
        kind=Kind(args.kind),
        subject_id=args.subject,
        session=args.session,
    )
    print(f"ingested {len(records)} records into {manifest.path}")
    return 0


def _cmd_blur_scan(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from . import figures, imops
    from .registry import Kind, QUALITY_REJECTED

    manifest = _load_manifest(args)
    fingertips = sorted(
        (r for r in manifest.records if r.kind is Kind.SINGLE_FINGERTIP), key=lambda r: r.id
    )
    if not fingertips:
        raise FpadError("no SingleFingertip records to scan")
    threads = _thread_count(args)
    log.info(
        "command=blur-scan n=%d removal_fraction=%s threads=%d",
        len(fingertips), args.removal_fraction, threads,
    )

    def score_one(rec):
        img = imops.load_png(manifest.root / rec.path)
        return imops.laplacian_variance(imops.to_grayscale(img))

    if threads == 1:
        values = [score_one(r) for r in fingertips]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(score_one, fingertips))

    threshold = imops.select_blur_threshold(values, args.removal_fraction)
    report = imops.BlurReport.build(
        [(r.id, v) for r, v in zip(fingertips, values)], threshold
    )
    n_flagged = 0
    for rec, value in zip(fingertips, values):
        rec.blur_score = value
        if value < threshold:
            rec.quality = QUALITY_REJECTED
            n_flagged += 1
    manifest.save()

    out = Path(args.out) if args.out else _data_root(args) / "reports"
    report.write_csv(out / "blur_scores.csv")
    report.write_sidecar(out / "blur_threshold.json")
    figures.save_blur_curve(report, out / "blur_curve.png")
    print(
        f"scored {len(fingertips)} fingertips; threshold {threshold:g} "
        f"flags {n_flagged} ({100.0 * report.removed_fraction:.1f}%) as rejected"
    )
    return 0


def _cmd_patchify(args) -> int:
    from .patches import PatchSpec, patchify_manifest

    manifest = _load_manifest(args)
    spec = PatchSpec(seed=args.seed) if args.patch_size is None else PatchSpec(
        patch_size=args.patch_size, seed=args.seed
    )
    log.info("command=patchify patch_size=%d seed=%d", spec.patch_size, spec.seed)
    records = patchify_manifest(manifest, spec, out_dir=args.out_dir)
    print(f"extracted {len(records)} patches into {manifest.root / args.out_dir}")
    return 0


def _cmd_synth_gen(args) -> int:
    from .patches import generate_procedural_dataset
    from .registry import Manifest, Species

    manifest = Manifest.load_or_create(_manifest_path(args))
    spoof = Species.parse(args.spoof_species)
    log.info(
        "command=synth-gen n=%d size=%d spoof=%s unknown_n=%d seed=%d",
        args.n, args.size, spoof.value, args.unknown_n, args.seed,
    )
    records = generate_procedural_dataset(
        manifest, n_live=args.n, n_spoof=args.n, spoof_species=spoof,
        image_size=args.size, seed=args.seed,
    )
    if args.unknown_n > 0:
        unknown = Species.parse(args.unknown_species)
        records += generate_procedural_dataset(
            manifest, n_live=0, n_spoof=args.unknown_n, spoof_species=unknown,
            image_size=args.size, seed=args.seed,
        )
    print(f"generated {len(records)} images under {manifest.root}")
    return 0


def _cmd_split(args) -> int:
    from .registry import Split, SplitPlan, assign_splits

    manifest = _load_manifest(args)
    plan = SplitPlan(
        train_fraction=args.train_fraction,
        validation_fraction=args.val_fraction,
        subject_disjoint=not args.per_record,
        seed=args.seed,
    )
    log.info(
        "command=split train=%s val=%s subject_disjoint=%s seed=%d",
        plan.train_fraction, plan.validation_fraction, plan.subject_disjoint, plan.seed,
    )
    assign_splits(manifest, plan)
    manifest.save()
    counts = {s: sum(1 for r in manifest.records if r.split is s) for s in Split}
    print(
        "split assigned: "
        + " ".join(f"{s.value}={counts[s]}" for s in Split if counts[s])
    )
    return 0


def _parse_config_file(path) -> dict:
    values = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(value, to_type):
    if to_type is bool:
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected boolean, got {value!r}")
    try:
        return to_type(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value {value!r}: {exc}") from exc


def _resolve_train_config(args) -> "TrainConfig":
    from .model import TINY, DenseNetConfig
    from .training import ColorMode, TrainConfig

    file_values = _parse_config_file(args.config) if args.config else {}
    known = {"epochs", "batch_size", "lr", "color_mode", "resize_to", "arch", "seed",
             "momentum", "weight_decay", "max_rotation", "flip_probability", "zoom_range"}
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def pick(name, flag_value, to_type, default):
        if flag_value is not None:
            return flag_value
        if name in file_values:
            return _coerce(file_values[name], to_type)
        return default

    arch = pick("arch", args.arch, str, "tiny")
    color_mode = ColorMode(pick("color_mode", args.color_mode, str, "rgb"))
    channels = 1 if color_mode is ColorMode.GRAYSCALE else 3
    if arch == "tiny":
        model = DenseNetConfig(
            block_layers=TINY.block_layers, input_size=TINY.input_size, input_channels=channels
        )
    elif arch == "full":
        model = DenseNetConfig(input_channels=channels)
    else:
        raise ConfigError(f"arch must be tiny or full, got {arch!r}")
    resize_to = pick("resize_to", args.resize_to, int, None)
    if resize_to is not None:
        import dataclasses

        model = dataclasses.replace(model, input_size=resize_to)

    from .patches import AugmentSpec

    augment = AugmentSpec(
        max_rotation=pick("max_rotation", None, float, 45.0),
        flip_probability=pick("flip_probability", None, float, 0.5),
        zoom_range=pick("zoom_range", None, float, 0.1),
    )
    return TrainConfig(
        model=model,
        epochs=pick("epochs", args.epochs, int, 20),
        batch_size=pick("batch_size", args.batch_size, int, 32),
        lr=pick("lr", args.lr, float, 0.1),
        momentum=pick("momentum", None, float, 0.9),
        weight_decay=pick("weight_decay", None, float, 0.0),
        augment=augment,
        seed=pick("seed", args.seed if args.seed != 0 else None, int, 0),
        color_mode=color_mode,
        resize_to=resize_to,
    )


def _cmd_train(args) -> int:
    import json

    from .model import save_checkpoint
    from .training import train

    manifest = _load_manifest(args)
    config = _resolve_train_config(args)
    log.info(
        "command=train epochs=%d batch_size=%d lr=%g seed=%d color_mode=%s arch=%s",
        config.epochs, config.batch_size, config.lr, config.seed,
        config.color_mode.value, config.model.block_layers,
    )
    model, history = train(config, manifest)
    out = Path(args.out) if args.out else _data_root(args) / "run"
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    save_checkpoint(model, ckpt)
    (out / "history.json").write_text(
        json.dumps([h.to_json() for h in history], indent=2) + "\n", encoding="utf-8"
    )
    if history:
        last = history[-1]
        print(
            f"trained {config.epochs} epochs; final train_loss {last.train_loss:.4f}, "
            f"val_accuracy {last.val_accuracy:.4f}; checkpoint {ckpt}"
        )
    else:
        print(f"epochs=0: wrote initialized checkpoint {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    import dataclasses

    from . import figures
    from .metrics import compute_deer, compute_report
    from .errors import MetricsError
    from .model import load_checkpoint
    from .protocol import (
        _patch_count,
        describe_model,
        write_report_csv,
        write_report_text,
        write_scores_csv,
    )
    from .registry import Split
    from .training import ColorMode, score

    if not args.checkpoint:
        raise FpadError("eval needs --checkpoint; run `fpad train` first and pass its model.ckpt")
    if not Path(args.checkpoint).exists():
        raise FpadError(f"checkpoint {args.checkpoint} does not exist")
    manifest = _load_manifest(args)
    model = load_checkpoint(args.checkpoint)
    color_mode = (
        ColorMode(args.color_mode)
        if args.color_mode
        else (ColorMode.GRAYSCALE if model.config.input_channels == 1 else ColorMode.RGB)
    )
    log.info(
        "command=eval checkpoint=%s threshold=%s color_mode=%s",
        args.checkpoint, args.threshold, color_mode.value,
    )
    scored = score(model, manifest, Split.TEST, color_mode=color_mode, resize_to=args.resize_to)
    if not scored:
        raise FpadError("Test split has no patches to score")
    report = compute_report(scored, args.threshold)
    try:
        deer, deer_threshold = compute_deer(scored)
        report = dataclasses.replace(report, deer=deer, deer_threshold=deer_threshold)
    except MetricsError:
        pass
    out = Path(args.out) if args.out else _data_root(args) / "run"
    counts = {
        "train": _patch_count(manifest, Split.TRAIN),
        "val": _patch_count(manifest, Split.VALIDATION),
        "test": _patch_count(manifest, Split.TEST),
    }
    desc = describe_model(model)
    write_scores_csv(scored, out / "scores.csv")
    write_report_csv(report, desc, counts, out / "report.csv")
    write_report_text(report, desc, counts, out / "report.txt")
    figures.save_score_histogram(scored, args.threshold, out / "score_hist.png")
    try:
        figures.save_det_curve(scored, out / "det_curve.png")
    except MetricsError:
        pass
    figures.save_apcer_bars(report, out / "apcer_bars.png")
    print((out / "report.txt").read_text(encoding="utf-8"))
    return 0


def _cmd_report(args) -> int:
    import dataclasses

    from . import figures
    from .errors import MetricsError
    from .metrics import compute_deer, compute_report
    from .model import read_checkpoint_header
    from .protocol import read_scores_csv, write_report_csv, write_report_text
    from .registry import Split

    scores_path = Path(args.scores) if args.scores else _data_root(args) / "run" / "scores.csv"
    if not scores_path.exists():
        raise FpadError(f"scores dump {scores_path} does not exist; run eval first")
    scored = read_scores_csv(scores_path)
    if not scored:
        raise FpadError(f"{scores_path} holds no scored samples")
    log.info("command=report scores=%s threshold=%s", scores_path, args.threshold)
    report = compute_report(scored, args.threshold)
    try:
        deer, deer_threshold = compute_deer(scored)
        report = dataclasses.replace(report, deer=deer, deer_threshold=deer_threshold)
    except MetricsError:
        pass
    desc = {}
    if args.checkpoint:
        from .model import DenseNetConfig, conv_layer_count

        header = read_checkpoint_header(args.checkpoint)
        cfg = DenseNetConfig.from_json(header["config"])
        desc = {
            "model": f"DenseNet-{conv_layer_count(cfg)} (k={cfg.growth_rate})",
            "input": f"{cfg.input_size}x{cfg.input_size}x{cfg.input_channels}",
            "params": header["param_count"],
        }
    counts = {"train": 0, "val": 0, "test": sum(1 for s in scored if s.split is Split.TEST)}
    manifest_path = _manifest_path(args)
    if manifest_path.exists():
        from .protocol import _patch_count
        from .registry import Manifest

        manifest = Manifest.load(manifest_path)
        counts["train"] = _patch_count(manifest, Split.TRAIN)
        counts["val"] = _patch_count(manifest, Split.VALIDATION)
    out = Path(args.out) if args.out else scores_path.parent
    write_report_csv(report, desc, counts, out / "report.csv")
    write_report_text(report, desc, counts, out / "report.txt")
    figures.save_score_histogram(scored, args.threshold, out / "score_hist.png")
    try:
        figures.save_det_curve(scored, out / "det_curve.png")
    except MetricsError:
        pass
    figures.save_apcer_bars(report, out / "apcer_bars.png")
    history_path = scores_path.parent / "history.json"
    if history_path.exists():
        import json

        from .training import EpochStats

        history = [EpochStats(**h) for h in json.loads(history_path.read_text(encoding="utf-8"))]
        if history:
            figures.save_training_history(history, out / "training_history.png")
    print((out / "report.txt").read_text(encoding="utf-8"))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .annotation.service import create_app

    manifest_path = _manifest_path(args)
    if not manifest_path.exists():
        raise FpadError(f"manifest {manifest_path} does not exist; run ingest first")
    static = Path(args.static) if args.static else Path.cwd() / "frontend" / "dist"
    app = create_app(manifest_path, static_dir=static if static.is_dir() else None)
    log.info("command=serve host=%s port=%d static=%s", args.host, args.port, static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    main()
