"""
spider-recon command line

    python -m src.cli.main <command> [options]

Exit codes: 0 success, 2 usage error, 3 missing or unreadable files,
4 invalid configuration or inputs, 1 anything else.
"""
import argparse
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pydantic
import structlog

from src.cli.manifest import RunManifest, finalize_manifest, manifest_path, write_manifest
from src.core.config import ExperimentConfig, build_experiment_config, flatten_config, get_settings, load_kv_file
from src.core.exceptions import (
    CheckpointError,
    ConfigError,
    DomainError,
    GeometryError,
    ShapeError,
    SpiderReconError,
    ValidationError,
    VolumeFormatError,
)
from src.core.logger import setup_logging

logger = structlog.get_logger(__name__)

PROG = "spider-recon"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3, 4
PNG_NOTE = "PNG previews use per-image min-max scaling to 8 bits"


def parse_dims(text: str) -> Tuple[int, int, int]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        values = [int(p) for p in parts]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"dims must be integers, got {text!r}") from e
    if len(values) == 1:
        values *= 3
    if len(values) != 3 or min(values) < 2:
        raise argparse.ArgumentTypeError(f"dims must be N or NX,NY,NZ with every side >= 2, got {text!r}")
    return tuple(values)


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value experiment config file")
    common.add_argument("--workers", type=int, help="worker cap (default: SPIDER_WORKERS or 1)")
    common.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--precision", choices=["float32", "float64"], help="numeric precision for the model")

    parser = argparse.ArgumentParser(prog=PROG, description="Biplanar X-ray to CT reconstruction with joint segmentation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("phantom", parents=[common], help="generate a phantom population")
    p.add_argument("--spec", type=Path, help="phantom family file (default: built-in head-like family)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dims", type=parse_dims)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0, help="draw from a perturbed (out-of-domain) family")
    p.add_argument("--prefix", default="subject")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate pa/lat DRRs for every volume")
    p.add_argument("--volumes", type=Path, required=True)
    p.add_argument("--geometry", type=Path, help="config file with detector.* keys (overrides --config)")
    p.add_argument("--no-png", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="train the model on a simulated dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--volumes", type=Path, help="directory with volume/label files (default: --data)")
    p.add_argument("--lambda-seg", type=float)
    p.add_argument("--decoder", choices=["shared", "two_branch", "two_stage"])
    p.add_argument("--freeze", choices=["encoder", "decoder", "none"], default="none")
    p.add_argument("--classes-included", type=parse_int_list)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a volume from a DRR pair")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--pa", type=Path, required=True)
    p.add_argument("--lat", type=Path, required=True)
    p.add_argument("--dims", type=parse_dims)
    p.add_argument("--out", type=Path, required=True, help="output prefix")

    p = sub.add_parser("eval", parents=[common], help="compare a reconstruction with ground truth")
    p.add_argument("--pred", type=Path, required=True, help="prefix of <p>_volume.spvol / <p>_labels.spvol")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--mesh", action="store_true", help="also export smoothed OBJ meshes per class")
    p.add_argument("--out", type=Path, required=True, help="metrics CSV")

    p = sub.add_parser("baseline-fbp", parents=[common], help="two-view filtered backprojection")
    p.add_argument("--pa", type=Path, required=True)
    p.add_argument("--lat", type=Path, required=True)
    p.add_argument("--geometry", type=Path, help="geometry.json written by simulate (default: next to --pa)")
    p.add_argument("--dims", type=parse_dims)
    p.add_argument("--out", type=Path, required=True, help="output prefix")

    p = sub.add_parser("ablate", parents=[common], help="decoder-topology or structure ablation suite")
    p.add_argument("suite", choices=["decoders", "structures"])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--volumes", type=Path)
    p.add_argument("--seeds", type=parse_int_list, default=[0, 1, 2])
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("transfer", parents=[common], help="frozen-decoder transfer to a new subject")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--data", type=Path, required=True, help="directory holding the subject's DRRs and volumes")
    p.add_argument("--volumes", type=Path)
    p.add_argument("--freeze", choices=["decoder", "encoder", "both"], default="both")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--out", type=Path, required=True)
    return parser


class Context:
    """Resolved settings shared by every command"""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        settings = get_settings()
        self.args = args
        self.argv = list(argv)
        self.workers = args.workers if args.workers is not None else settings.workers
        self.precision = args.precision or settings.precision
        self.file_entries: Dict[str, object] = load_kv_file(args.config) if args.config else {}
        if self.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {self.workers}")

    def experiment_config(self, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
        merged = {"train.precision": self.precision}
        merged.update(overrides or {})
        return build_experiment_config(self.file_entries, merged)

    def manifest(self, config: Optional[ExperimentConfig], inputs: Sequence[Path], seed: Optional[int] = None,
                 notes: Sequence[str] = ()) -> RunManifest:
        return RunManifest(
            command=self.args.command,
            argv=self.argv,
            config=flatten_config(config) if config is not None else {},
            inputs=[str(p) for p in inputs if p is not None],
            seed=seed,
            workers=self.workers,
            precision=self.precision,
            notes=list(notes),
        )


def _prefixed(prefix: Path, suffix: str) -> Path:
    return prefix.parent / f"{prefix.name}{suffix}"


def _save_mid_slices(prefix: Path, values: np.ndarray) -> List[Path]:
    from src.volume.io import save_png

    nx, ny, nz = values.shape
    slices = {"sagittal": values[nx // 2, :, :], "coronal": values[:, ny // 2, :], "axial": values[:, :, nz // 2]}
    paths = []
    for name, image in slices.items():
        path = _prefixed(prefix, f"_mid_{name}.png")
        save_png(path, image)
        paths.append(path)
    return paths


def cmd_phantom(ctx: Context) -> List[Path]:
    from src.training.dataset import SPEC_FILE, labels_path, save_split, volume_path
    from src.volume.io import save_volume
    from src.volume.phantom import (
        default_phantom_spec, dump_phantom_spec, load_phantom_spec, make_population, perturbed_family, subject_counts,
    )

    args = ctx.args
    overrides = {"volume.dims": list(args.dims)} if args.dims else {}
    config = ctx.experiment_config(overrides)
    spec = load_phantom_spec(args.spec) if args.spec else default_phantom_spec()
    if args.perturb > 0:
        spec = perturbed_family(spec, args.perturb, args.seed)
    spec.check()
    out = Path(args.out)
    mpath = manifest_path(out, is_dir=True)
    write_manifest(mpath, ctx.manifest(config, [args.spec], seed=args.seed))

    subjects, split = make_population(spec, subject_counts(args.count), config.volume.dims, config.volume.spacing,
                                      master_seed=args.seed, id_prefix=args.prefix)
    outputs = []
    for subject_id, grid, labels in subjects:
        save_volume(volume_path(out, subject_id), grid)
        save_volume(labels_path(out, subject_id), labels)
        outputs += [volume_path(out, subject_id), labels_path(out, subject_id)]
    save_split(out, split)
    (out / SPEC_FILE).write_text(dump_phantom_spec(spec), encoding="utf-8")
    outputs += [out / "split.json", out / SPEC_FILE]
    finalize_manifest(mpath, ctx.manifest(config, [args.spec], seed=args.seed), outputs)
    return outputs


def cmd_simulate(ctx: Context) -> List[Path]:
    from src.projector.geometry import BiplanarGeometry
    from src.training.dataset import (
        GEOMETRY_FILE, SPEC_FILE, SPLIT_FILE, projection_path, save_geometry, save_projection, simulate_pair,
    )
    from src.volume.io import load_volume

    args = ctx.args
    if args.geometry:
        ctx.file_entries = {**ctx.file_entries, **load_kv_file(args.geometry)}
    config = ctx.experiment_config()
    volumes_dir, out = Path(args.volumes), Path(args.out)
    sources = sorted(volumes_dir.glob("*_volume.spvol"))
    if not sources:
        raise FileNotFoundError(f"no *_volume.spvol files in {volumes_dir}")
    notes = [] if args.no_png else [PNG_NOTE]
    mpath = manifest_path(out, is_dir=True)
    write_manifest(mpath, ctx.manifest(config, [volumes_dir, args.geometry], notes=notes))

    geometry = None
    outputs = []
    for source in sources:
        subject_id = source.name[: -len("_volume.spvol")]
        grid = load_volume(source)
        if geometry is None:
            geometry = BiplanarGeometry.build(grid.dims, grid.spacing, config.detector)
        p_pa, p_lat = simulate_pair(grid, geometry, ctx.workers)
        for view, projection in (("pa", p_pa), ("lat", p_lat)):
            path = projection_path(out, subject_id, view)
            save_projection(path, projection, preview=not args.no_png)
            outputs.append(path)
        logger.info("subject_simulated", subject=subject_id)
    save_geometry(out, geometry)
    outputs.append(out / GEOMETRY_FILE)
    if out.resolve() != volumes_dir.resolve():
        for name in (SPLIT_FILE, SPEC_FILE):
            if (volumes_dir / name).exists():
                shutil.copyfile(volumes_dir / name, out / name)
                outputs.append(out / name)
    finalize_manifest(mpath, ctx.manifest(config, [volumes_dir, args.geometry], notes=notes), outputs)
    return outputs


def _training_config(ctx: Context, geometry, extra: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    args = ctx.args
    overrides: Dict[str, object] = {
        "volume.dims": list(geometry.dims),
        "volume.spacing": list(geometry.spacing),
        "detector.nu": geometry.detector.nu,
        "detector.nv": geometry.detector.nv,
        "train.epochs": getattr(args, "epochs", None),
        "train.seed": getattr(args, "seed", None),
        "train.lambda_seg": getattr(args, "lambda_seg", None),
        "decoder.topology": getattr(args, "decoder", None),
        "train.classes_included": getattr(args, "classes_included", None),
    }
    overrides.update(extra or {})
    return ctx.experiment_config(overrides)


def _check_population(data_dir: Path, config: ExperimentConfig) -> None:
    from src.training.dataset import load_population_spec

    spec = load_population_spec(data_dir)
    if spec is not None and spec.class_count + 1 != config.decoder.num_classes:
        raise ConfigError(f"phantom family has {spec.class_count} structures, decoder.num_classes must be "
                          f"{spec.class_count + 1} (got {config.decoder.num_classes})")


def cmd_train(ctx: Context) -> List[Path]:
    from src.field.model import SpiderModel
    from src.training.dataset import load_geometry, load_split, load_subjects
    from src.training.trainer import FreezeMask, train

    args = ctx.args
    geometry = load_geometry(args.data)
    config = _training_config(ctx, geometry)
    _check_population(args.data, config)
    out = Path(args.out)
    mpath = manifest_path(out, is_dir=False)
    write_manifest(mpath, ctx.manifest(config, [args.data, args.volumes, args.config], seed=config.train.seed))

    split = load_split(args.data)
    subjects = load_subjects(args.data, split.train, geometry, args.volumes)
    val_subjects = load_subjects(args.data, split.val, geometry, args.volumes)
    model = SpiderModel(config, geometry)
    model, log = train(config, geometry, subjects, val_subjects, FreezeMask.named(args.freeze), model, ctx.workers)
    model.save(out)
    runlog = out.parent / f"{out.stem}.runlog.csv"
    echo = log.save(runlog)
    outputs = [out, runlog, echo]
    finalize_manifest(mpath, ctx.manifest(config, [args.data, args.volumes, args.config], seed=config.train.seed),
                      outputs)
    return outputs


def cmd_reconstruct(ctx: Context) -> List[Path]:
    from src.field.model import SpiderModel
    from src.training.dataset import load_drr
    from src.training.reconstruct import reconstruct
    from src.volume.io import save_volume

    args = ctx.args
    model = SpiderModel.load(args.ckpt, precision=ctx.precision)
    dims = args.dims or model.geometry.dims
    prefix = Path(args.out)
    mpath = manifest_path(prefix, is_dir=False)
    manifest = ctx.manifest(model.config, [args.ckpt, args.pa, args.lat], seed=model.config.train.seed, notes=[PNG_NOTE])
    write_manifest(mpath, manifest)
    drr_pa = load_drr(args.pa, model.geometry)
    drr_lat = load_drr(args.lat, model.geometry)
    volume, labels = reconstruct(model, drr_pa, drr_lat, dims, workers=ctx.workers)
    outputs = [_prefixed(prefix, "_volume.spvol"), _prefixed(prefix, "_labels.spvol")]
    save_volume(outputs[0], volume)
    save_volume(outputs[1], labels)
    outputs += _save_mid_slices(prefix, volume.values)
    finalize_manifest(mpath, manifest, outputs)
    return outputs


def _load_prefix(prefix: Path):
    from src.volume.io import load_volume

    volume = load_volume(_prefixed(prefix, "_volume.spvol"))
    labels = load_volume(_prefixed(prefix, "_labels.spvol"))
    return volume, labels


def cmd_eval(ctx: Context) -> List[Path]:
    from src.evaluation.mesh import laplacian_smooth, mask_mesh, save_obj
    from src.evaluation.metrics import evaluate_pair, present_classes

    args = ctx.args
    out = Path(args.out)
    mpath = manifest_path(out, is_dir=False)
    manifest = ctx.manifest(None, [args.pred, args.truth])
    write_manifest(mpath, manifest)
    pred_volume, pred_labels = _load_prefix(args.pred)
    truth_volume, truth_labels = _load_prefix(args.truth)
    report = evaluate_pair(pred_volume, pred_labels, truth_volume, truth_labels)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([report.to_row(pred=str(args.pred), truth=str(args.truth))]).to_csv(out, index=False)
    outputs = [out]
    if args.mesh:
        for c in present_classes(pred_labels, truth_labels):
            for role, labels in (("pred", pred_labels), ("truth", truth_labels)):
                path = out.parent / f"{out.stem}_{role}_c{c}.obj"
                save_obj(path, laplacian_smooth(mask_mesh(labels.mask(c), labels.spacing)))
                outputs.append(path)
    logger.info("evaluation_finished", psnr_db=report.psnr_db, ssim=report.ssim, dice=report.mean_dice)
    finalize_manifest(mpath, manifest, outputs)
    return outputs


def cmd_baseline_fbp(ctx: Context) -> List[Path]:
    from src.projector.fbp import fbp_two_view
    from src.projector.operator import Projection
    from src.training.dataset import load_geometry
    from src.volume.io import read_spvol, save_volume

    args = ctx.args
    geometry_dir = args.geometry.parent if args.geometry else Path(args.pa).parent
    geometry = load_geometry(geometry_dir)
    dims = args.dims or geometry.dims
    spacing = tuple(float(e / d) for e, d in zip(geometry.extent_mm, dims))
    prefix = Path(args.out)
    mpath = manifest_path(prefix, is_dir=False)
    manifest = ctx.manifest(None, [args.pa, args.lat, geometry_dir], notes=[PNG_NOTE])
    write_manifest(mpath, manifest)
    views = []
    for path, pose in ((args.pa, geometry.pose_pa), (args.lat, geometry.pose_lat)):
        array, _, _ = read_spvol(path)
        views.append(Projection(pose=pose, detector=geometry.detector, log_values=array[:, :, 0]))
    volume = fbp_two_view(views[0], views[1], dims, spacing, ctx.workers)
    outputs = [_prefixed(prefix, "_volume.spvol")]
    save_volume(outputs[0], volume)
    outputs += _save_mid_slices(prefix, volume.values)
    finalize_manifest(mpath, manifest, outputs)
    return outputs


def cmd_ablate(ctx: Context) -> List[Path]:
    from src.training.dataset import load_geometry, load_split, load_subjects
    from src.training.experiments import run_decoder_ablation, run_structure_ablation, summarize

    args = ctx.args
    geometry = load_geometry(args.data)
    config = _training_config(ctx, geometry)
    _check_population(args.data, config)
    out = Path(args.out)
    mpath = manifest_path(out, is_dir=True)
    manifest = ctx.manifest(config, [args.data, args.volumes, args.config])
    write_manifest(mpath, manifest)
    split = load_split(args.data)
    test_ids = split.test or split.val
    if not split.train or not test_ids:
        raise ConfigError("ablation needs training subjects and test (or validation) subjects")
    train_subjects = load_subjects(args.data, split.train, geometry, args.volumes)
    test_subjects = load_subjects(args.data, test_ids, geometry, args.volumes)
    runner = run_decoder_ablation if args.suite == "decoders" else run_structure_ablation
    frame = runner(config, geometry, train_subjects, test_subjects, seeds=args.seeds, workers=ctx.workers)
    table = out / f"ablation_{args.suite}.csv"
    summary = out / f"ablation_{args.suite}_summary.csv"
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(table, index=False)
    summarize(frame).to_csv(summary, index=False)
    finalize_manifest(mpath, manifest, [table, summary])
    return [table, summary]


def cmd_transfer(ctx: Context) -> List[Path]:
    from src.field.model import SpiderModel
    from src.training.dataset import load_subject
    from src.training.transfer import run_transfer
    from src.volume.io import save_volume

    args = ctx.args
    out = Path(args.out)
    mpath = manifest_path(out, is_dir=True)
    pretrained = SpiderModel.load(args.ckpt, precision=ctx.precision)
    manifest = ctx.manifest(pretrained.config, [args.ckpt, args.data, args.volumes], seed=pretrained.config.train.seed)
    write_manifest(mpath, manifest)
    subject = load_subject(args.data, args.subject, pretrained.geometry, args.volumes)
    arms = ("decoder", "encoder") if args.freeze == "both" else (args.freeze,)
    results, frame = run_transfer(args.ckpt, subject, args.epochs, arms, ctx.precision, ctx.workers)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for arm, result in results.items():
        prefix = out / f"{args.subject}_freeze_{arm}"
        save_volume(_prefixed(prefix, "_volume.spvol"), result.volume)
        save_volume(_prefixed(prefix, "_labels.spvol"), result.labels)
        outputs += [_prefixed(prefix, "_volume.spvol"), _prefixed(prefix, "_labels.spvol")]
    table = out / "transfer.csv"
    frame.to_csv(table, index=False)
    outputs.append(table)
    finalize_manifest(mpath, manifest, outputs)
    return outputs


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "baseline-fbp": cmd_baseline_fbp,
    "ablate": cmd_ablate,
    "transfer": cmd_transfer,
}

_CONFIG_ERRORS = (ConfigError, ValidationError, ShapeError, GeometryError, DomainError, pydantic.ValidationError)
_IO_ERRORS = (FileNotFoundError, OSError, VolumeFormatError, CheckpointError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    settings = get_settings()
    setup_logging(args.log_level or settings.log_level, settings.log_file, settings.log_json)
    try:
        ctx = Context(args, argv)
        outputs = COMMANDS[args.command](ctx)
    except _CONFIG_ERRORS as e:
        logger.error("invalid_configuration", command=args.command, error=str(e))
        return EXIT_CONFIG
    except _IO_ERRORS as e:
        logger.error("io_failure", command=args.command, error=str(e))
        return EXIT_IO
    except SpiderReconError as e:
        logger.error("command_failed", command=args.command, error=str(e))
        return EXIT_FAILURE
    logger.info("command_finished", command=args.command, outputs=len(outputs))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
