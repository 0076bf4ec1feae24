"""Batch command-line entry points for the full pipeline.

One process, one command per invocation. Every command reads an optional
config document (YAML or JSON, sections mirroring the module config types),
derives per-stage sub-seeds from the single global seed, writes its
artifacts under the chosen output directory, and records a ``run.json`` with
the seed, effective config, config hash, and wall-clock timings. Metric
files never contain timings, so reruns with the same config and seed are
byte-identical.

Environment overrides: ``PDFUSE_OUTDIR`` (output directory) and
``PDFUSE_WORKERS`` (worker count). Explicit flags beat the environment,
which beats the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .direction_discovery import MODES, FitHyper, cosine, fit_direction
from .errors import ConfigError, FormatError, PdfuseError
from .evaluation import augment_test_controls, compare_unimodal, evaluate, kfold_split
from .face_features import (
    EXPRESSIONS,
    FaceBackboneConfig,
    FaceModel,
    FaceTrainOptions,
    expression_index,
    extract_face_features,
    train_expression_classifier,
)
from .fusion import DiagnosisModels, FusionTrainConfig, HybridFusionParams, train_fusion
from .gait_features import (
    GaitModelConfig,
    TrainOptions,
    classifier_from_arrays,
    classifier_to_arrays,
    load_keypoints,
    preprocess,
    train_gait_classifier,
)
from .io import (
    config_hash,
    load_checkpoint,
    load_direction,
    load_image,
    load_latent,
    save_checkpoint,
    save_direction,
    save_image,
    save_latent,
)
from .latent_editing import InversionConfig, LatentVector, edit_latent, invert
from .manifest import (
    LABEL_CONTROL,
    LABEL_PD,
    DatasetManifest,
    FaceImageRef,
    SubjectRecord,
    load_manifest,
)
from .seeding import derive_seed
from .synthetic_bench import BenchmarkSpec, ToyGenerator, build_benchmark, load_generator_spec

_RUN_RECORD_VERSION = 1
_METRICS_VERSION = 1


@dataclass(frozen=True)
class DirectionSettings:
    """Config section for the direction-discovery stage."""

    mode: str = "standard"
    learning_rate: float = 0.01
    max_epochs: int = 2000
    tolerance: float = 1e-8
    l2: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"config section 'direction': mode must be one of {MODES}")


@dataclass(frozen=True)
class EvaluationSettings:
    k: int = 5
    fold_indices: tuple[int, ...] | None = None


@dataclass
class PipelineConfig:
    """All stage settings plus the global seed and output directory.

    Stage seeds are not user-settable: every stage derives its own sub-seed
    from the global seed by name, so section dicts reject a ``seed`` key.
    """

    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    direction: DirectionSettings = field(default_factory=DirectionSettings)
    gait_model: GaitModelConfig = field(default_factory=GaitModelConfig)
    gait_train: TrainOptions = field(default_factory=TrainOptions)
    face_model: FaceBackboneConfig = field(default_factory=FaceBackboneConfig)
    face_train: FaceTrainOptions = field(default_factory=FaceTrainOptions)
    fusion_train: FusionTrainConfig = field(default_factory=FusionTrainConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "workers": self.workers,
            "benchmark": self.benchmark.to_dict(),
            "inversion": dataclasses.asdict(self.inversion),
            "direction": dataclasses.asdict(self.direction),
            "gait_model": self.gait_model.to_dict(),
            "gait_train": dataclasses.asdict(self.gait_train),
            "face_model": self.face_model.to_dict(),
            "face_train": dataclasses.asdict(self.face_train),
            "fusion_train": dataclasses.asdict(self.fusion_train),
            "evaluation": dataclasses.asdict(self.evaluation),
        }

    def hash(self) -> str:
        payload = self.to_dict()
        payload.pop("out_dir")  # where artifacts land must not change what they contain
        return config_hash(_jsonable(payload))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _dataclass_section(section: str, cls, defaults, overrides: dict):
    """Build a config dataclass from a section dict, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        if key == "seed":
            raise ConfigError(
                f"config section '{section}': key 'seed' is derived from the global seed; "
                "set the top-level 'seed' instead"
            )
        if key not in fields:
            raise ConfigError(f"config section '{section}': unknown key '{key}'")
        current = getattr(defaults, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return replace(defaults, **kwargs) if kwargs else defaults
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from exc


def _dict_backed_section(section: str, cls, overrides: dict):
    """Same strictness for configs that round-trip through to_dict/from_dict."""
    base = cls().to_dict()
    for key, value in overrides.items():
        if key == "seed":
            raise ConfigError(
                f"config section '{section}': key 'seed' is derived from the global seed; "
                "set the top-level 'seed' instead"
            )
        if key not in base:
            raise ConfigError(f"config section '{section}': unknown key '{key}'")
        base[key] = value
    try:
        return cls.from_dict(base)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from exc


_SECTIONS = (
    "benchmark",
    "inversion",
    "direction",
    "gait_model",
    "gait_train",
    "face_model",
    "face_train",
    "fusion_train",
    "evaluation",
)


def load_pipeline_config(path: str | Path | None = None) -> PipelineConfig:
    """Parse a YAML or JSON config document into a PipelineConfig.

    Unknown sections and unknown keys inside sections are rejected with the
    offending name. A missing document yields all defaults.
    """
    doc: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML/JSON: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping at the top level")
        doc = loaded

    known_scalars = {"seed": int, "out_dir": str, "workers": int}
    for key in doc:
        if key not in known_scalars and key not in _SECTIONS:
            raise ConfigError(f"unknown config section '{key}'")
    scalars = {}
    for key, cast in known_scalars.items():
        if key in doc:
            try:
                scalars[key] = cast(doc[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key '{key}': {exc}") from exc
    for key in _SECTIONS:
        if key in doc and not isinstance(doc[key], dict):
            raise ConfigError(f"config section '{key}' must be a mapping")

    defaults = PipelineConfig()
    try:
        return PipelineConfig(
            **scalars,
            benchmark=_dataclass_section(
                "benchmark", BenchmarkSpec, defaults.benchmark, doc.get("benchmark", {})
            ),
            inversion=_dataclass_section(
                "inversion", InversionConfig, defaults.inversion, doc.get("inversion", {})
            ),
            direction=_dataclass_section(
                "direction", DirectionSettings, defaults.direction, doc.get("direction", {})
            ),
            gait_model=_dict_backed_section("gait_model", GaitModelConfig, doc.get("gait_model", {})),
            gait_train=_dataclass_section(
                "gait_train", TrainOptions, defaults.gait_train, doc.get("gait_train", {})
            ),
            face_model=_dict_backed_section("face_model", FaceBackboneConfig, doc.get("face_model", {})),
            face_train=_dataclass_section(
                "face_train", FaceTrainOptions, defaults.face_train, doc.get("face_train", {})
            ),
            fusion_train=_dataclass_section(
                "fusion_train", FusionTrainConfig, defaults.fusion_train, doc.get("fusion_train", {})
            ),
            evaluation=_dataclass_section(
                "evaluation", EvaluationSettings, defaults.evaluation, doc.get("evaluation", {})
            ),
        )
    except PdfuseError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _apply_common_flags(cfg: PipelineConfig, args) -> PipelineConfig:
    """Resolve seed/out/workers with flag > environment > config precedence."""
    if args.seed is not None:
        cfg.seed = args.seed
    out_env = os.environ.get("PDFUSE_OUTDIR")
    if args.out is not None:
        cfg.out_dir = args.out
    elif out_env:
        cfg.out_dir = out_env
    workers_env = os.environ.get("PDFUSE_WORKERS")
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    elif workers_env:
        try:
            cfg.workers = int(workers_env)
        except ValueError as exc:
            raise ConfigError(f"PDFUSE_WORKERS must be an integer: {exc}") from exc
    if cfg.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {cfg.workers}")
    return cfg


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _prepare_out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_record(out: Path, command: str, cfg: PipelineConfig, timings: dict, artifacts) -> None:
    record = {
        "format_version": _RUN_RECORD_VERSION,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "timings_s": timings,
        "artifacts": sorted(str(a) for a in artifacts),
    }
    _write_json(out / "run.json", record)


def _metrics_payload(cfg: PipelineConfig, body: dict) -> dict:
    out = {"format_version": _METRICS_VERSION, "config_hash": cfg.hash()}
    out.update(body)
    return out


def _absolutize(rec: SubjectRecord, manifest: DatasetManifest) -> SubjectRecord:
    """Rebind a record's paths to absolute ones so mixed-root pools can merge."""
    return SubjectRecord(
        subject_id=rec.subject_id,
        label=rec.label,
        gait_path=str(manifest.resolve(rec.gait_path)),
        faces=tuple(
            FaceImageRef(path=str(manifest.resolve(f.path)), expression=f.expression)
            for f in rec.faces
        ),
        source=rec.source,
    )


def _load_records(path: str) -> list[SubjectRecord]:
    manifest = load_manifest(path)
    return [_absolutize(rec, manifest) for rec in manifest.records]


def _load_gait_checkpoint(path: str):
    kind, arrays, header = load_checkpoint(path)
    if kind != "gait_classifier":
        raise FormatError(f"{path} holds a {kind!r} checkpoint, expected 'gait_classifier'")
    cfg = GaitModelConfig.from_dict(header["config"])
    return classifier_from_arrays(arrays, cfg), cfg


def _load_face_checkpoint(path: str) -> FaceModel:
    kind, arrays, header = load_checkpoint(path)
    if kind != "face_model":
        raise FormatError(f"{path} holds a {kind!r} checkpoint, expected 'face_model'")
    model = FaceModel(FaceBackboneConfig.from_dict(header["config"]), seed=0)
    model.load_state(arrays)
    return model


def _load_fusion_checkpoint(path: str) -> HybridFusionParams:
    kind, arrays, _ = load_checkpoint(path)
    if kind != "fusion":
        raise FormatError(f"{path} holds a {kind!r} checkpoint, expected 'fusion'")
    return HybridFusionParams.from_arrays(arrays)


def _expression_images_from_benchmark(bench_dir: Path, generator: ToyGenerator):
    """Decode the stored per-expression latent samples into a labeled image set."""
    samples_dir = bench_dir / "latent_samples"
    images, labels = [], []
    for name in EXPRESSIONS:
        path = samples_dir / f"{name}.npy"
        if not path.exists():
            raise FormatError(f"benchmark at {bench_dir} is missing latent samples for {name!r}")
        latents = np.load(path)
        for row in latents:
            images.append(generator.forward(LatentVector(row)).pixels)
            labels.append(expression_index(name))
    return np.stack(images), np.asarray(labels)


def _train_face_backbone(bench_dir: Path, cfg: PipelineConfig):
    generator = ToyGenerator(load_generator_spec(bench_dir / "generator.json"))
    images, labels = _expression_images_from_benchmark(bench_dir, generator)
    opts = replace(cfg.face_train, seed=derive_seed(cfg.seed, "train-face"))
    return train_expression_classifier(images, labels, cfg.face_model, opts)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    spec = cfg.benchmark
    if args.n_per_class is not None:
        spec = replace(spec, n_per_class=args.n_per_class)
    if args.gait_frames is not None:
        spec = replace(spec, gait_frames=args.gait_frames)
    spec = replace(spec, seed=derive_seed(cfg.seed, "simulate"))
    cfg.benchmark = spec
    started = time.perf_counter()
    paths = build_benchmark(spec, out / "benchmark")
    elapsed = time.perf_counter() - started
    _write_json(
        paths.root / "provenance.json",
        {"format_version": 1, "config_hash": cfg.hash(), "benchmark": spec.to_dict()},
    )
    metrics = _metrics_payload(
        cfg,
        {
            "n_per_class": spec.n_per_class,
            "n_subjects": 2 * spec.n_per_class,
            "labels": {LABEL_PD: spec.n_per_class, LABEL_CONTROL: spec.n_per_class},
            "images_per_subject": len(EXPRESSIONS),
            "manifest": str(paths.manifest_path.relative_to(out)),
        },
    )
    _write_json(out / "simulate_metrics.json", metrics)
    _write_run_record(
        out, "simulate", cfg, {"total": elapsed}, ["benchmark", "simulate_metrics.json"]
    )
    print(f"benchmark written to {paths.root} ({2 * spec.n_per_class} subjects)")
    return 0


def _cmd_invert(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    inv = replace(cfg.inversion, seed=derive_seed(cfg.seed, "invert"))
    if args.max_iterations is not None:
        inv = replace(inv, max_iterations=args.max_iterations)
    if args.step_size is not None:
        inv = replace(inv, step_size=args.step_size)
    if args.init is not None:
        inv = replace(inv, init=args.init)
    cfg.inversion = inv
    generator = ToyGenerator(load_generator_spec(args.generator_spec))
    target = load_image(args.image)
    warm = load_latent(args.warm_start) if args.warm_start else None
    started = time.perf_counter()
    result = invert(target, generator, config=inv, warm_start=warm)
    elapsed = time.perf_counter() - started
    reconstruction = generator.forward(result.latent)
    mse = float(np.mean((reconstruction.pixels - target.pixels) ** 2))
    save_latent(out / "latent.pdl", result.latent, meta={"config_hash": cfg.hash()})
    save_image(out / "reconstruction.img", reconstruction, meta={"config_hash": cfg.hash()})
    metrics = _metrics_payload(
        cfg,
        {
            "final_loss": result.final_loss,
            "iterations": result.iterations,
            "converged": result.converged,
            "per_pixel_mse": mse,
        },
    )
    _write_json(out / "inversion_metrics.json", metrics)
    _write_run_record(
        out,
        "invert",
        cfg,
        {"total": elapsed},
        ["latent.pdl", "reconstruction.img", "inversion_metrics.json"],
    )
    print(
        f"inverted in {result.iterations} iterations: loss {result.final_loss:.3e}, "
        f"per-pixel mse {mse:.3e}"
    )
    return 0


def _cmd_fit_direction(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    mode = args.mode or cfg.direction.mode
    hyper = FitHyper(
        learning_rate=cfg.direction.learning_rate,
        max_epochs=cfg.direction.max_epochs,
        tolerance=cfg.direction.tolerance,
        l2=cfg.direction.l2,
        seed=derive_seed(cfg.seed, "fit-direction"),
    )
    latents_a = np.load(args.latents_a)
    latents_b = np.load(args.latents_b)
    started = time.perf_counter()
    direction = fit_direction(latents_a, latents_b, args.source, args.target, mode, hyper)
    elapsed = time.perf_counter() - started
    save_direction(out / "direction.json", direction, meta={"config_hash": cfg.hash()})
    body = {"mode": mode, "source": args.source, "target": args.target}
    body.update(direction.diagnostics.to_dict())
    if args.oracle:
        oracle = load_direction(args.oracle)
        similarity = cosine(direction.values, oracle.values)
        body["cosine_to_oracle"] = similarity
        print(f"cosine similarity to oracle: {similarity:.6f}")
    _write_json(out / "fit_metrics.json", _metrics_payload(cfg, body))
    _write_run_record(
        out, "fit-direction", cfg, {"total": elapsed}, ["direction.json", "fit_metrics.json"]
    )
    print(
        f"fitted {args.source} -> {args.target} ({mode}): final loss "
        f"{direction.diagnostics.final_loss:.6e}, degenerate={direction.diagnostics.degenerate}"
    )
    return 0


def _cmd_synthesize(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    generator = ToyGenerator(load_generator_spec(args.generator_spec))
    base = load_latent(args.latent)
    direction = load_direction(args.direction)
    started = time.perf_counter()
    edited = edit_latent(base, direction, args.strength)
    image = generator.forward(edited)
    elapsed = time.perf_counter() - started
    save_latent(out / "edited_latent.pdl", edited, meta={"config_hash": cfg.hash()})
    save_image(out / "synthesized.img", image, meta={"config_hash": cfg.hash()})
    metrics = _metrics_payload(
        cfg,
        {
            "strength": args.strength,
            "source": direction.source,
            "target": direction.target,
            "latent_shift_norm": float(np.linalg.norm(edited.values - base.values)),
        },
    )
    _write_json(out / "synthesize_metrics.json", metrics)
    _write_run_record(
        out,
        "synthesize",
        cfg,
        {"total": elapsed},
        ["edited_latent.pdl", "synthesized.img", "synthesize_metrics.json"],
    )
    print(f"synthesized {direction.source} -> {direction.target} at strength {args.strength}")
    return 0


def _cmd_train_face(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    if args.epochs is not None:
        cfg.face_train = replace(cfg.face_train, epochs=args.epochs)
    started = time.perf_counter()
    model, report = _train_face_backbone(Path(args.benchmark), cfg)
    elapsed = time.perf_counter() - started
    save_checkpoint(
        out / "face.ckpt",
        "face_model",
        model.state(),
        config=cfg.face_model.to_dict(),
        meta={"config_hash": cfg.hash()},
    )
    (out / "face_report.txt").write_text(report.format_table() + "\n")
    metrics = _metrics_payload(
        cfg,
        {
            "model_name": report.model_name,
            "parameter_count": report.parameter_count,
            "parameter_megabytes": report.parameter_megabytes,
            "train_accuracy": report.train_accuracy,
            "test_accuracy": report.test_accuracy,
            "train_size": report.train_size,
            "test_size": report.test_size,
        },
    )
    _write_json(out / "face_metrics.json", metrics)
    _write_run_record(
        out, "train-face", cfg, {"total": elapsed}, ["face.ckpt", "face_report.txt", "face_metrics.json"]
    )
    print(report.format_table())
    return 0


def _cmd_train_gait(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    opts = replace(cfg.gait_train, seed=derive_seed(cfg.seed, "train-gait"))
    if args.epochs is not None:
        opts = replace(opts, epochs=args.epochs)
    cfg.gait_train = opts
    records = _load_records(args.manifest)
    started = time.perf_counter()
    subjects = []
    for rec in records:
        windows = preprocess(load_keypoints(rec.gait_path), cfg.gait_model)
        subjects.append((windows, rec.label_index))
    clf, trace = train_gait_classifier(subjects, cfg.gait_model, opts)
    elapsed = time.perf_counter() - started
    save_checkpoint(
        out / "gait.ckpt",
        "gait_classifier",
        classifier_to_arrays(clf),
        config=cfg.gait_model.to_dict(),
        meta={"config_hash": cfg.hash()},
    )
    metrics = _metrics_payload(
        cfg,
        {
            "n_subjects": len(subjects),
            "n_windows": int(sum(w.shape[0] for w, _ in subjects)),
            "final_loss": trace["loss"][-1],
            "final_train_accuracy": trace["accuracy"][-1],
        },
    )
    _write_json(out / "gait_metrics.json", metrics)
    _write_run_record(out, "train-gait", cfg, {"total": elapsed}, ["gait.ckpt", "gait_metrics.json"])
    print(
        f"trained gait classifier on {len(subjects)} subjects: final loss "
        f"{trace['loss'][-1]:.4f}, train accuracy {trace['accuracy'][-1]:.4f}"
    )
    return 0


def _cmd_train_fusion(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    fusion_cfg = replace(cfg.fusion_train, seed=derive_seed(cfg.seed, "train-fusion"))
    cfg.fusion_train = fusion_cfg
    gait_clf, gait_cfg = _load_gait_checkpoint(args.gait)
    face_model = _load_face_checkpoint(args.face)
    records = _load_records(args.manifest)
    gait_before, face_before = gait_clf.checksum(), face_model.checksum()
    started = time.perf_counter()
    feats_gait, feats_face, labels = [], [], []
    for rec in records:
        windows = preprocess(load_keypoints(rec.gait_path), gait_cfg)
        feats_gait.append(gait_clf.subject_feature(windows))
        images = np.stack([load_image(f.path).pixels for f in rec.faces])
        feats_face.append(extract_face_features(images, face_model))
        labels.append(rec.label_index)
    params, trace = train_fusion(
        np.stack(feats_gait), np.stack(feats_face), np.asarray(labels), fusion_cfg
    )
    elapsed = time.perf_counter() - started
    if gait_clf.checksum() != gait_before or face_model.checksum() != face_before:
        raise PdfuseError("feature extractors changed during fusion training; they must stay frozen")
    save_checkpoint(
        out / "fusion.ckpt",
        "fusion",
        params.arrays(),
        config={
            "gait_dim": params.gait_dim,
            "face_dim": params.face_dim,
            "gait_checksum": gait_before,
            "face_checksum": face_before,
        },
        meta={"config_hash": cfg.hash()},
    )
    metrics = _metrics_payload(
        cfg,
        {
            "n_subjects": len(records),
            "final_loss": trace["loss"][-1],
            "final_train_accuracy": trace["accuracy"][-1],
            "gait_checksum": gait_before,
            "face_checksum": face_before,
            "extractors_frozen": True,
        },
    )
    _write_json(out / "fusion_metrics.json", metrics)
    _write_run_record(out, "train-fusion", cfg, {"total": elapsed}, ["fusion.ckpt", "fusion_metrics.json"])
    print(
        f"trained fusion head on {len(records)} subjects: final loss {trace['loss'][-1]:.4f}, "
        f"train accuracy {trace['accuracy'][-1]:.4f}"
    )
    return 0


def _cmd_evaluate(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    gait_clf, gait_cfg = _load_gait_checkpoint(args.gait)
    face_model = _load_face_checkpoint(args.face)
    fusion_params = _load_fusion_checkpoint(args.fusion)
    models = DiagnosisModels(gait=gait_clf, face=face_model, fusion=fusion_params, gait_cfg=gait_cfg)
    records = _load_records(args.manifest)
    composition = None
    if args.controls:
        records, composition = augment_test_controls(records, _load_records(args.controls))
    started = time.perf_counter()
    report = evaluate(
        models, records, resolve=Path, skip_failures=args.skip_failures, workers=cfg.workers
    )
    elapsed = time.perf_counter() - started
    body = report.to_dict()
    if composition is not None:
        body["test_composition"] = composition
    _write_json(out / "metrics.json", _metrics_payload(cfg, body))
    _write_run_record(out, "evaluate", cfg, {"total": elapsed}, ["metrics.json"])
    print(report.format_table())
    return 0


def _cmd_compare(args, cfg: PipelineConfig) -> int:
    out = _prepare_out(cfg)
    bench_dir = Path(args.benchmark)
    manifest = load_manifest(bench_dir / "manifest.jsonl")
    records = [_absolutize(rec, manifest) for rec in manifest.records]
    flat = DatasetManifest(records=records, root=None)
    if args.k is not None:
        cfg.evaluation = replace(cfg.evaluation, k=args.k)
    if args.fold_indices is not None:
        indices = tuple(int(tok) for tok in args.fold_indices.split(","))
        cfg.evaluation = replace(cfg.evaluation, fold_indices=indices)
    gait_opts = replace(cfg.gait_train, seed=derive_seed(cfg.seed, "train-gait"))
    fusion_cfg = replace(cfg.fusion_train, seed=derive_seed(cfg.seed, "train-fusion"))
    cfg.gait_train, cfg.fusion_train = gait_opts, fusion_cfg
    started = time.perf_counter()
    timings = {}
    if args.face:
        face_model = _load_face_checkpoint(args.face)
    else:
        face_started = time.perf_counter()
        face_model, _ = _train_face_backbone(bench_dir, cfg)
        timings["train_face"] = time.perf_counter() - face_started
    controls = _load_records(args.controls) if args.controls else None
    plan = kfold_split(flat, k=cfg.evaluation.k, seed=derive_seed(cfg.seed, "folds"))
    fold_indices = (
        list(cfg.evaluation.fold_indices) if cfg.evaluation.fold_indices is not None else None
    )
    report = compare_unimodal(
        flat,
        plan,
        face_model,
        gait_cfg=cfg.gait_model,
        gait_opts=gait_opts,
        fusion_cfg=fusion_cfg,
        controls=controls,
        fold_indices=fold_indices,
        workers=cfg.workers,
    )
    timings["total"] = time.perf_counter() - started
    _write_json(out / "comparison.json", _metrics_payload(cfg, report.to_dict()))
    _write_run_record(out, "compare", cfg, timings, ["comparison.json"])
    print(report.format_table())
    return 0


def _report_checkpoint(path: Path) -> str:
    kind, arrays, header = load_checkpoint(path)
    lines = [f"checkpoint kind: {kind}", f"format_version: {header.get('format_version')}"]
    if "config_hash" in header:
        lines.append(f"config_hash: {header['config_hash']}")
    lines.append(f"config: {json.dumps(header.get('config', {}), sort_keys=True)}")
    lines.append("arrays:")
    total = 0
    for name in sorted(arrays):
        shape = "x".join(str(s) for s in arrays[name].shape) or "scalar"
        total += arrays[name].size
        lines.append(f"  {name:<40} {shape}")
    lines.append(f"total parameters: {total}")
    return "\n".join(lines)


def _report_direction(path: Path, oracle_path: str | None) -> str:
    direction = load_direction(path)
    lines = [
        f"direction: {direction.source} -> {direction.target} (dim {direction.dim})",
    ]
    if direction.diagnostics is not None:
        for key, value in direction.diagnostics.to_dict().items():
            lines.append(f"  {key:<14} {value}")
    if oracle_path:
        oracle = load_direction(oracle_path)
        lines.append(f"cosine similarity to oracle: {cosine(direction.values, oracle.values):.6f}")
    return "\n".join(lines)


def _report_manifest(path: Path) -> str:
    manifest = load_manifest(path)
    counts: dict[str, int] = {}
    for rec in manifest.records:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    lines = [f"manifest: {len(manifest)} subjects"]
    for label in sorted(counts):
        lines.append(f"  {label:<8} {counts[label]}")
    return "\n".join(lines)


def _cmd_report(args, cfg: PipelineConfig) -> int:
    path = Path(args.artifact)
    if not path.exists():
        raise FormatError(f"artifact {path} does not exist")
    if path.suffix == ".ckpt":
        print(_report_checkpoint(path))
        return 0
    if path.suffix == ".jsonl":
        print(_report_manifest(path))
        return 0
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        if obj.get("kind") == "direction":
            print(_report_direction(path, args.oracle))
        else:
            print(json.dumps(obj, sort_keys=True, indent=2))
        return 0
    raise FormatError(f"cannot report on {path}: unrecognized artifact type")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, workers: bool = True):
    sub.add_argument("--config", help="YAML or JSON config document")
    sub.add_argument("--seed", type=int, help="global seed (stages derive named sub-seeds)")
    sub.add_argument("--out", help="output directory (env PDFUSE_OUTDIR)")
    if workers:
        sub.add_argument("--workers", type=int, help="worker threads (env PDFUSE_WORKERS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdfuse",
        description=(
            "Multimodal Parkinson's screening pipeline on synthetic ground truth. "
            "Class index 0 is PD and prediction ties break toward PD (conservative "
            "screening posture)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build the synthetic two-class benchmark")
    _add_common(p, workers=False)
    p.add_argument("--n-per-class", type=int, help="subjects per class")
    p.add_argument("--gait-frames", type=int, help="frames per gait sequence")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("invert", help="recover the latent behind an image")
    _add_common(p, workers=False)
    p.add_argument("--image", required=True, help="target image (.img)")
    p.add_argument("--generator-spec", required=True, help="generator spec (generator.json)")
    p.add_argument("--warm-start", help="latent file to start from (.pdl)")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--init", choices=("zeros", "random", "warm"))
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("fit-direction", help="fit a latent direction between two clusters")
    _add_common(p, workers=False)
    p.add_argument("--latents-a", required=True, help="source-class latents (.npy, n x d)")
    p.add_argument("--latents-b", required=True, help="target-class latents (.npy, n x d)")
    p.add_argument("--source", required=True, help="source expression tag")
    p.add_argument("--target", required=True, help="target expression tag")
    p.add_argument("--mode", choices=MODES, help="objective variant")
    p.add_argument("--oracle", help="oracle direction to print cosine similarity against")
    p.set_defaults(func=_cmd_fit_direction)

    p = sub.add_parser("synthesize", help="move a latent along a direction and decode it")
    _add_common(p, workers=False)
    p.add_argument("--latent", required=True, help="base latent (.pdl)")
    p.add_argument("--direction", required=True, help="direction file (.json)")
    p.add_argument("--strength", type=float, required=True, help="edit strength")
    p.add_argument("--generator-spec", required=True, help="generator spec (generator.json)")
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("train-face", help="train the expression backbone on benchmark samples")
    _add_common(p, workers=False)
    p.add_argument("--benchmark", required=True, help="benchmark directory from `simulate`")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train_face)

    p = sub.add_parser("train-gait", help="train the gait classifier on a manifest")
    _add_common(p, workers=False)
    p.add_argument("--manifest", required=True, help="dataset manifest (.jsonl)")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train_gait)

    p = sub.add_parser("train-fusion", help="train the fusion head over frozen extractors")
    _add_common(p, workers=False)
    p.add_argument("--manifest", required=True, help="dataset manifest (.jsonl)")
    p.add_argument("--gait", required=True, help="gait checkpoint (.ckpt)")
    p.add_argument("--face", required=True, help="face checkpoint (.ckpt)")
    p.set_defaults(func=_cmd_train_fusion)

    p = sub.add_parser("evaluate", help="score a manifest with trained models")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="test manifest (.jsonl)")
    p.add_argument("--gait", required=True)
    p.add_argument("--face", required=True)
    p.add_argument("--fusion", required=True)
    p.add_argument("--controls", help="control manifest appended to the test pool")
    p.add_argument(
        "--skip-failures",
        action="store_true",
        help="exclude subjects with missing modalities instead of aborting",
    )
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="gait-only vs face-only vs fusion under one fold plan")
    _add_common(p)
    p.add_argument("--benchmark", required=True, help="benchmark directory from `simulate`")
    p.add_argument("--face", help="reuse a face checkpoint instead of training one")
    p.add_argument("--controls", help="control manifest appended to every test fold")
    p.add_argument("--k", type=int, help="fold count")
    p.add_argument("--fold-indices", help="comma-separated subset of folds to run")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="pretty-print a stored artifact")
    p.add_argument("--artifact", required=True, help="checkpoint, direction, metrics, or manifest")
    p.add_argument("--oracle", help="oracle direction for cosine comparison")
    p.set_defaults(func=_cmd_report)

    return parser


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return args.func(args, PipelineConfig())
    cfg = load_pipeline_config(getattr(args, "config", None))
    cfg = _apply_common_flags(cfg, args)
    return args.func(args, cfg)


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except PdfuseError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
