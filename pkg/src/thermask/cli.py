"""Command-line entry point: ``thermask generate | train | evaluate | scenario``.

Settings come from an optional config file of ``key = value`` lines grouped
in sections (``[common]``, ``[generate]``, ``[train]``, ``[train.cae]``,
``[evaluate.detection]``, ``[scenario]`` ...). Keys before the first section
belong to ``[common]``. Command-line flags always win over file values.

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import traceback
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from thermask.dataset import (
    SCHEMA_VERSION,
    BoundingBox,
    DatasetManifest,
    LabelParseError,
    Split,
    SplitError,
    label_name,
    load_manifest,
    split_by_ratio,
    split_by_subject,
    validate,
)
from thermask.evalkit import Detection, evaluate_detections
from thermask.models import CheckpointError, checkpoint_id, load_checkpoint
from thermask.synth import SynthConfig, generate_synthetic_dataset, load_face_boxes, load_rasters, save_dataset
from thermask.training import (
    ScenarioError,
    TrainingScenario,
    TrainSpec,
    crop_faces,
    evaluate_classifier,
    full_frames,
    make_adapter,
    run_scenario,
    train_cae,
    train_classifier,
    train_vit,
)
from thermask.training.scenario import ADAPTERS

log = logging.getLogger("thermask")


class UsageError(Exception):
    """Bad input from the user: exit code 2."""


USER_ERRORS = (
    UsageError,
    ValueError,
    KeyError,
    FileNotFoundError,
    NotADirectoryError,
    PermissionError,
    IsADirectoryError,
    LabelParseError,
    SplitError,
    CheckpointError,
    ScenarioError,
)


# Option table -----------------------------------------------------------------

def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, tuple):
        return text
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _names(text) -> tuple[str, ...]:
    if isinstance(text, tuple):
        return text
    return tuple(v.upper() for v in str(text).replace(" ", "").split(",") if v)


def _choice(*options: str) -> Callable[[Any], str]:
    def convert(text) -> str:
        value = str(text).strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    convert.__name__ = "one of " + "|".join(options)
    return convert


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable[[Any], Any] = str
    default: Any = None
    help: str = ""
    flag: bool = False  # boolean switch without a value

    @property
    def cli(self) -> str:
        return "--" + self.name.replace("_", "-")


GLOBAL_OPTS = [
    Opt("seed", int, 0, "random seed"),
    Opt("out", str, "thermask-out", "output directory"),
    Opt("verbose", _bool, False, "log progress", flag=True),
]

SYNTH_OPTS = [
    Opt("n_images", int, None, "number of images"),
    Opt("image_size", int, None, "square image side in pixels"),
    Opt("class_mix", _floats, None, "FFP2,SURGERY,CLOTH probabilities"),
    Opt("noise_sigma", float, None, "sensor noise, 8-bit intensity units"),
    Opt("blur_radius", float, None, "optical blur sigma in pixels"),
    Opt("mask_contrast", float, None, "mask coolness as a fraction of the skin-background gap"),
    Opt("n_subjects", int, None, "distinct synthetic subjects"),
    Opt("bit_depth", int, None, "8 or 16"),
    Opt("id_prefix", str, None, "image id prefix"),
    Opt("split", _choice("subject", "ratio", "none"), "subject", "how to assign TRAIN/TEST"),
    Opt("test_fraction", float, 0.2, "share of subjects (or images per camera) in TEST"),
    Opt("image_format", _choice("png", "pgm"), "png", "raster file format"),
]

DATA_OPT = Opt("data", str, None, "dataset directory holding manifest.json")
INPUT_OPT = Opt("input", _choice("crops", "frames"), "crops", "face crops (faces.json) or whole frames")

TRAIN_OPTS = [
    DATA_OPT,
    INPUT_OPT,
    Opt("epochs", int, None, "training epochs"),
    Opt("batch_size", int, None, "mini-batch size"),
    Opt("optimizer", _choice("SGD", "MINI_BATCH_GD", "ADAM"), None, "optimizer"),
    Opt("learning_rate", float, None, "learning rate"),
    Opt("patience", int, None, "early-stopping patience in epochs"),
    Opt("augmentation", _names, None, "comma list of H_FLIP,RANDOM_CROP,ROTATION (empty string: none)"),
    Opt("rotation_degrees", float, None, "rotation augmentation range"),
    Opt("val_fraction", float, None, "share of TRAIN held out for validation"),
]

CLASSIFIER_OPTS = [
    Opt("cae", str, None, "path of the trained autoencoder checkpoint"),
    Opt("encoder_init", _choice("FROM_CAE", "RANDOM"), "FROM_CAE", "encoder initialisation (RANDOM = ablation)"),
    Opt("freeze_encoder", _bool, False, "keep the encoder fixed", flag=True),
]

DETECTION_EVAL_OPTS = [
    DATA_OPT,
    Opt("source", _choice("baseline", "predictions"), "baseline", "where detections come from"),
    Opt("predictions", str, None, "JSON file of detections (source=predictions)"),
    Opt("iou_threshold", float, 0.5, "IoU needed for a true positive"),
    Opt("conf_threshold", float, 0.5, "confidence cut for precision/recall"),
]

CLASSIFICATION_EVAL_OPTS = [
    DATA_OPT,
    INPUT_OPT,
    Opt("checkpoint", str, None, "classifier or ViT checkpoint"),
]

SCENARIO_OPTS = [
    DATA_OPT,
    Opt("scenario", str, "all", "scenario name or 'all'"),
    Opt("adapter", str, "baseline", "registered detector adapter"),
    Opt("repetitions", int, 3, "independent runs per scenario"),
    Opt("iou_threshold", float, 0.5, "IoU needed for a true positive"),
    Opt("conf_threshold", float, 0.5, "confidence cut for precision/recall"),
]

COMMAND_OPTS = {
    ("generate", None): SYNTH_OPTS,
    ("train", "cae"): TRAIN_OPTS,
    ("train", "classifier"): TRAIN_OPTS + CLASSIFIER_OPTS,
    ("train", "vit"): TRAIN_OPTS,
    ("evaluate", "detection"): DETECTION_EVAL_OPTS,
    ("evaluate", "classification"): CLASSIFICATION_EVAL_OPTS,
    ("scenario", None): SCENARIO_OPTS,
}


# Parsing ----------------------------------------------------------------------

def _add_opts(parser: argparse.ArgumentParser, opts: list[Opt], suppress: bool = False) -> None:
    for o in opts:
        default = argparse.SUPPRESS if suppress else None
        if o.flag:
            parser.add_argument(o.cli, dest=o.name, action="store_const", const=True, default=default, help=o.help)
        else:
            parser.add_argument(o.cli, dest=o.name, default=default, metavar=o.name.upper(), help=o.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermask", description="Thermal face-mask detection and classification toolkit.")
    parser.add_argument("--config", default=None, help="key=value config file with [sections]")
    _add_opts(parser, GLOBAL_OPTS)
    # globals are accepted after the subcommand too
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    _add_opts(common, GLOBAL_OPTS, suppress=True)

    sub = parser.add_subparsers(dest="command", required=True, metavar="{generate,train,evaluate,scenario}")
    _add_opts(sub.add_parser("generate", parents=[common], help="render a synthetic thermal dataset"), SYNTH_OPTS)

    train = sub.add_parser("train", help="train a model").add_subparsers(dest="target", required=True)
    for target in ("cae", "classifier", "vit"):
        _add_opts(train.add_parser(target, parents=[common]), COMMAND_OPTS[("train", target)])

    evaluate = sub.add_parser("evaluate", help="score predictions on the TEST split").add_subparsers(dest="target", required=True)
    for target in ("detection", "classification"):
        _add_opts(evaluate.add_parser(target, parents=[common]), COMMAND_OPTS[("evaluate", target)])

    _add_opts(sub.add_parser("scenario", parents=[common], help="run transfer-learning scenarios"), SCENARIO_OPTS)
    return parser


def read_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = lambda key: key.strip().replace("-", "_")
    try:
        parser.read_string("[common]\n" + path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    return parser


def resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults < config file < flags, converting and checking every value."""
    key = (args.command, getattr(args, "target", None))
    opts = {o.name: o for o in GLOBAL_OPTS + COMMAND_OPTS[key]}
    all_known = {o.name for group in COMMAND_OPTS.values() for o in group} | {o.name for o in GLOBAL_OPTS}

    file_values: dict[str, str] = {}
    if args.config:
        cfg = read_config(args.config)
        sections = ["common", args.command] + ([f"{args.command}.{key[1]}"] if key[1] else [])
        for section in cfg.sections():
            if section not in sections:
                continue
            for name, value in cfg.items(section):
                if name not in opts:
                    if section == "common" and name in all_known:
                        continue
                    raise UsageError(f"unknown setting {name!r} in [{section}] of {args.config}")
                file_values[name] = value

    settings = {}
    for name, opt in opts.items():
        raw = getattr(args, name, None)
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            settings[name] = opt.default
            continue
        try:
            settings[name] = opt.type(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {name}: {exc}") from None
    return settings


# Output helpers ---------------------------------------------------------------

def write_json(path, payload: dict) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _out_dir(settings) -> Path:
    out = Path(settings["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _require(settings, name: str) -> Any:
    if settings.get(name) in (None, ""):
        raise UsageError(f"missing required setting {name!r} (use --{name.replace('_', '-')} or the config file)")
    return settings[name]


def load_dataset(data_dir) -> tuple[DatasetManifest, dict[str, np.ndarray], dict[str, BoundingBox] | None, Path]:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise UsageError(f"no manifest.json in {root}")
    manifest = load_manifest(manifest_path)
    faces_path = root / "faces.json"
    faces = load_face_boxes(faces_path) if faces_path.is_file() else None
    return manifest, load_rasters(manifest, root), faces, root


def _image_set(settings):
    manifest, rasters, faces, root = load_dataset(_require(settings, "data"))
    if settings["input"] == "frames":
        return full_frames(manifest, rasters)
    if faces is None:
        raise UsageError(f"{root} has no faces.json; use --input frames or supply face boxes")
    data = crop_faces(manifest, faces, rasters)
    if data.skipped:
        print(f"warning: {data.skipped} image(s) without a face box were skipped", file=sys.stderr)
    return data


def _train_spec(settings) -> TrainSpec:
    fields = ("epochs", "batch_size", "optimizer", "learning_rate", "patience", "augmentation", "rotation_degrees", "val_fraction")
    kwargs = {k: settings[k] for k in fields if settings.get(k) is not None}
    return TrainSpec(seed=settings["seed"], **kwargs)


# Commands ---------------------------------------------------------------------

def cmd_generate(settings) -> int:
    out = _out_dir(settings)
    synth_fields = ("n_images", "image_size", "class_mix", "noise_sigma", "blur_radius", "mask_contrast", "n_subjects", "bit_depth", "id_prefix")
    kwargs = {k: settings[k] for k in synth_fields if settings[k] is not None}
    config = SynthConfig(seed=settings["seed"], **kwargs)
    dataset = generate_synthetic_dataset(config)
    manifest = dataset.manifest
    frac = settings["test_fraction"]
    if settings["split"] == "ratio":
        manifest = split_by_ratio(manifest, 1.0 - frac, seed=settings["seed"])
    elif settings["split"] == "subject":
        subjects = sorted({r.subject_id for r in manifest.records})
        if len(subjects) < 2:
            raise UsageError("a subject split needs at least two subjects")
        n_test = min(max(int(np.floor(frac * len(subjects) + 0.5)), 1), len(subjects) - 1)
        order = np.random.default_rng(settings["seed"]).permutation(len(subjects))
        manifest = split_by_subject(manifest, [subjects[i] for i in order[:n_test]])
    problems = validate(manifest)
    if problems:
        raise RuntimeError("generated manifest failed validation: " + "; ".join(problems))
    save_dataset(dataset._replace(manifest=manifest), out, image_format=settings["image_format"])

    classes = Counter(label_name(a.class_label) for a in manifest.annotations)
    cameras = Counter(r.camera for r in manifest.records)
    subsets = Counter(s.value for s in manifest.split.values())
    summary = {
        "schema": SCHEMA_VERSION,
        "kind": "dataset_summary",
        "images": len(manifest.records),
        "classes": dict(sorted(classes.items())),
        "cameras": dict(sorted(cameras.items())),
        "split": dict(sorted(subsets.items())),
        "synth_config": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(config).items()},
    }
    write_json(out / "summary.json", summary)
    print(f"wrote {len(manifest.records)} images to {out}")
    for title, counts in (("class", classes), ("camera", cameras), ("subset", subsets)):
        print(f"  per {title}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return 0


def cmd_train(settings, target: str) -> int:
    from thermask.plots import plot_loss_curves

    spec = _train_spec(settings)
    cae_path = None
    if target == "classifier":
        cae_path = Path(_require(settings, "cae"))
        if not cae_path.is_file():
            raise UsageError(f"autoencoder checkpoint not found: {cae_path} (run 'thermask train cae' first)")
    data = _image_set(settings)
    out = _out_dir(settings)
    ckpt_path = out / f"{target}.ckpt"
    if target == "cae":
        ckpt, runlog = train_cae(data, spec, checkpoint_path=ckpt_path)
    elif target == "classifier":
        from thermask.models import ClassifierConfig

        config = ClassifierConfig(encoder_init=settings["encoder_init"], seed=settings["seed"])
        ckpt, runlog = train_classifier(
            cae_path, data, spec, config, freeze_encoder=bool(settings["freeze_encoder"]), checkpoint_path=ckpt_path
        )
    else:
        ckpt, runlog = train_vit(data, spec, checkpoint_path=ckpt_path)

    runlog.write(out / f"{target}_runlog.jsonl")
    plot_loss_curves(runlog, out / f"{target}_loss.png", title=f"{target} loss")
    summary = {
        "schema": SCHEMA_VERSION,
        "kind": "training",
        "model": target,
        "checkpoint": ckpt_path.name,
        "checkpoint_id": runlog.checkpoint,
        "epochs_completed": runlog.epochs_completed,
        "initial_train_loss": runlog.initial_train_loss,
        "final_train_loss": runlog.train_loss[-1] if runlog.train_loss else None,
        "final_val_loss": runlog.val_loss[-1] if runlog.val_loss and runlog.val_loss[-1] == runlog.val_loss[-1] else None,
        "metadata": ckpt.metadata,
        "notes": runlog.notes,
    }
    write_json(out / f"{target}_train.json", summary)
    print(f"{target}: {runlog.epochs_completed} epochs, loss {runlog.initial_train_loss:.4f} -> {summary['final_train_loss']:.4f}")
    print(f"checkpoint {ckpt_path} (id {runlog.checkpoint})")
    return 0


def _read_predictions(path) -> list[Detection]:
    payload = json.loads(Path(path).read_text())
    rows = payload["detections"] if isinstance(payload, dict) else payload
    return [Detection(r["image_id"], BoundingBox(*map(float, r["box"])), float(r["confidence"])) for r in rows]


def cmd_evaluate(settings, target: str) -> int:
    from thermask.plots import plot_confusion, plot_pr_curve

    if target == "classification":
        ckpt_path = Path(_require(settings, "checkpoint"))
        if not ckpt_path.is_file():
            raise UsageError(f"checkpoint not found: {ckpt_path}")
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.kind not in ("classifier", "vit"):
            raise UsageError(f"{ckpt_path} holds a '{ckpt.kind}' model, not a classifier")
        data = _image_set(settings)
        if len(data.indices(Split.TEST)) == 0 or not data.manifest.split:
            raise UsageError("the dataset has an empty TEST split")
        out = _out_dir(settings)
        report = evaluate_classifier(ckpt, data, Split.TEST)
        payload = {**report.to_dict(), "checkpoint_id": checkpoint_id(ckpt_path), "model": ckpt.kind}
        write_json(out / "classification_report.json", payload)
        plot_confusion(report, out / "confusion.png", title=f"{ckpt.kind} on TEST")
        print(f"accuracy {report.accuracy:.3f}")
        for name, row in payload["per_class"].items():
            print(f"  {name:8s} P={row['p']:.3f} R={row['r']:.3f} F1={row['f1']:.3f}")
        return 0

    manifest, rasters, _, _ = load_dataset(_require(settings, "data"))
    test_ids = manifest.image_ids(Split.TEST)
    if not test_ids:
        raise UsageError("the dataset has an empty TEST split")
    keep = set(test_ids)
    if settings["source"] == "predictions":
        dets = [d for d in _read_predictions(_require(settings, "predictions")) if d.image_id in keep]
    else:
        from thermask.training import baseline_detect

        dets = [d for i in test_ids for d in baseline_detect(rasters[i], i)]
    gts = [a for a in manifest.annotations if a.image_id in keep]
    report = evaluate_detections(dets, gts, settings["iou_threshold"], settings["conf_threshold"])
    out = _out_dir(settings)
    write_json(out / "detection_report.json", {**report.to_dict(), "source": settings["source"]})
    plot_pr_curve(report, out / "pr_curve.png")
    print(f"precision {report.precision:.3f}  recall {report.recall:.3f}  mAP50 {report.map50:.3f}")
    return 0


def format_table(results) -> str:
    header = f"{'Scenario':34s} {'Precision':>17s} {'Recall':>17s} {'mAP50':>17s}"
    lines = [header, "-" * len(header)]
    for r in results:
        cells = [f"{r.aggregate.mean[m]:.3f} ± {r.aggregate.std[m]:.3f}" for m in ("precision", "recall", "map50")]
        lines.append(f"{r.scenario.value:34s} " + " ".join(f"{c:>17s}" for c in cells))
    return "\n".join(lines)


def cmd_scenario(settings) -> int:
    name = settings["scenario"]
    scenarios = list(TrainingScenario) if name == "all" else [TrainingScenario.parse(name)]
    if settings["adapter"] not in ADAPTERS:
        raise UsageError(f"unknown adapter {settings['adapter']!r}; registered adapters: {', '.join(sorted(ADAPTERS))}")
    manifest, rasters, _, _ = load_dataset(_require(settings, "data"))
    spec = TrainSpec(repetitions=settings["repetitions"], seed=settings["seed"])
    adapter = make_adapter(settings["adapter"])
    results = [
        run_scenario(adapter, s, manifest, rasters, spec, settings["iou_threshold"], settings["conf_threshold"])
        for s in scenarios
    ]
    out = _out_dir(settings)
    payload = {
        "schema": SCHEMA_VERSION,
        "kind": "scenario_table",
        "adapter": settings["adapter"],
        "repetitions": settings["repetitions"],
        "scenarios": [r.to_dict() for r in results],
    }
    write_json(out / "scenario_report.json", payload)
    print(format_table(results))
    return 0


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = resolve_settings(args)
    logging.basicConfig(level=logging.INFO if settings["verbose"] else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        return cmd_generate(settings)
    if args.command == "train":
        return cmd_train(settings, args.target)
    if args.command == "evaluate":
        return cmd_evaluate(settings, args.target)
    return cmd_scenario(settings)


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:  # argparse usage errors already use code 2
        return int(exc.code or 0)
    except USER_ERRORS as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"thermask: error: {message}", file=sys.stderr)
        return 2
    except Exception:
        print("thermask: internal error", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
