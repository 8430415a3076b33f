"""Command-line entry point wiring the pipeline stages together.

Commands: scan, split, crop, gsd, train, eval, viz, run. `run` executes a
stage subset in pipeline order against one work directory; each completed
stage leaves a `stage.done` marker keyed by a content hash of its config
slice and input artifacts, so reruns skip finished work unless --force.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MissingArtifactError, SurfakeError
from .seeding import substream_seed

log = logging.getLogger("surfake")

STAGE_ORDER = ("scan", "split", "crop", "gsd", "train", "eval", "viz")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4


# --- run configuration ---------------------------------------------------------

@dataclass
class ScanParams:
    layout: str = "ffpp"
    compression: str = "c23"


@dataclass
class SplitParams:
    official_dir: str | None = None


@dataclass
class CropParams:
    stride: int = 10
    detector: str = "fallback"  # "fallback" or "cascade:<xml-path>"
    factor: float = 1.3
    out_size: int = 224


@dataclass
class GsdParams:
    backend: str = "synthetic:0"  # "synthetic:<seed>" or "pretrained:<model-path>"
    raw_sidecar: bool = False


@dataclass
class TrainParams:
    backbone: str = "tinycnn"
    input_mode: str = "gsd"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    forgery: str = "all"
    use_pretrained: bool = False
    seed: int | None = None  # default: derived from the root seed


@dataclass
class EvalParams:
    threshold: float = 0.5
    which: str = "best"  # or "final"
    video_level: bool = False


@dataclass
class VizParams:
    cap: int = 500
    perplexity: float = 30.0


@dataclass
class RunConfig:
    dataset_root: str = ""
    work_dir: str = ""
    seed: int = 0
    scan: ScanParams = field(default_factory=ScanParams)
    split: SplitParams = field(default_factory=SplitParams)
    crop: CropParams = field(default_factory=CropParams)
    gsd: GsdParams = field(default_factory=GsdParams)
    train: TrainParams = field(default_factory=TrainParams)
    eval: EvalParams = field(default_factory=EvalParams)
    viz: VizParams = field(default_factory=VizParams)


def _from_dict(cls, raw: dict, context: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{context}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        factory = fields[name].default_factory
        if factory is not dataclasses.MISSING and dataclasses.is_dataclass(factory):
            kwargs[name] = _from_dict(factory, value, f"{context}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return _from_dict(RunConfig, raw, "config")


def _validate_config(config: RunConfig, stages: list[str]) -> None:
    if not config.work_dir:
        raise ConfigError("work_dir must be set")
    if "scan" in stages:
        root = Path(config.dataset_root)
        if not config.dataset_root or not root.is_dir():
            raise ConfigError(f"dataset_root does not exist: {config.dataset_root!r}")
    if config.train.input_mode not in ("rgb", "gsd", "rgb_gsd"):
        raise ConfigError(f"unknown input_mode {config.train.input_mode!r}")
    if config.eval.which not in ("best", "final"):
        raise ConfigError(f"eval.which must be 'best' or 'final', got {config.eval.which!r}")


# --- stage cache ----------------------------------------------------------------

def _hash_bytes(*chunks: bytes) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def _hash_tree(path: Path) -> str:
    """Content hash of a file, or of a directory's sorted (name, content) list."""
    if path.is_file():
        return _hash_bytes(path.read_bytes())
    digest = hashlib.sha256()
    for sub in sorted(path.rglob("*")):
        if sub.is_file() and sub.name != "stage.done":
            digest.update(str(sub.relative_to(path)).encode())
            digest.update(sub.read_bytes())
    return digest.hexdigest()


def _signature(config_slice, inputs: list[Path]) -> str:
    parts = [json.dumps(config_slice, sort_keys=True, default=str).encode()]
    for path in inputs:
        parts.append(_hash_tree(Path(path)).encode())
    return _hash_bytes(*parts)


class Pipeline:
    """Owns one work directory and runs stages in order with caching."""

    def __init__(self, config: RunConfig, force: bool = False, jobs: int = 1):
        self.config = config
        self.force = force
        self.jobs = max(1, jobs)
        self.work = Path(config.work_dir)

    # artifact locations
    @property
    def manifest_path(self) -> Path:
        return self.work / "scan" / "manifest.jsonl"

    @property
    def split_path(self) -> Path:
        return self.work / "split" / "split.json"

    @property
    def crop_dir(self) -> Path:
        return self.work / "crop" / "features"

    @property
    def gsd_dir(self) -> Path:
        return self.work / "gsd" / "features"

    @property
    def ckpt_dir(self) -> Path:
        return self.work / "train" / "ckpt"

    @property
    def results_dir(self) -> Path:
        return self.work / "eval" / "results"

    def run(self, stages: list[str]) -> None:
        from filelock import FileLock

        for stage in stages:
            if stage not in STAGE_ORDER:
                raise ConfigError(f"unknown stage {stage!r}; known: {list(STAGE_ORDER)}")
        ordered = [s for s in STAGE_ORDER if s in stages]
        _validate_config(self.config, ordered)
        self.work.mkdir(parents=True, exist_ok=True)
        with FileLock(str(self.work / ".lock")):
            for stage in ordered:
                self._run_stage(stage)

    def _run_stage(self, stage: str) -> None:
        stage_dir = self.work / stage
        marker = stage_dir / "stage.done"
        config_slice = dataclasses.asdict(getattr(self.config, stage))
        config_slice["_root_seed"] = self.config.seed
        inputs = self._stage_inputs(stage)
        for path in inputs:
            if not Path(path).exists():
                raise MissingArtifactError(
                    f"stage {stage!r} needs missing input {path} "
                    f"(run the earlier stage that produces it)", [str(path)])
        signature = _signature(config_slice, inputs)
        if marker.is_file() and not self.force:
            recorded = json.loads(marker.read_text()).get("signature")
            if recorded == signature:
                log.info("stage %s: cache hit, skipping", stage)
                return
            log.info("stage %s: inputs or config changed, rerunning", stage)
        stage_dir.mkdir(parents=True, exist_ok=True)
        getattr(self, f"_stage_{stage}")()
        marker.write_text(json.dumps({"signature": signature}))
        log.info("stage %s: done", stage)

    def _stage_inputs(self, stage: str) -> list[Path]:
        if stage == "scan":
            return []
        if stage == "split":
            return [self.manifest_path]
        if stage == "crop":
            return [self.manifest_path]
        if stage == "gsd":
            return [self.crop_dir]
        if stage == "train":
            return [self.manifest_path, self.split_path, self.crop_dir, self.gsd_dir]
        if stage in ("eval", "viz"):
            return [self.manifest_path, self.split_path, self.crop_dir, self.gsd_dir,
                    self.ckpt_dir]
        raise ConfigError(f"unknown stage {stage!r}")

    def _stage_scan(self) -> None:
        from .ingestion import save_manifest, scan_dataset

        manifest = scan_dataset(self.config.dataset_root, self.config.scan.layout,
                                self.config.scan.compression)
        save_manifest(manifest, self.manifest_path)

    def _stage_split(self) -> None:
        from .ingestion import load_manifest, make_splits, save_split

        manifest = load_manifest(self.manifest_path)
        split = make_splits(manifest, substream_seed(self.config.seed, "split"),
                            official_dir=self.config.split.official_dir)
        save_split(split, self.split_path)

    def _make_detector(self):
        from .facecrop import CascadeDetector, CenteredBoxDetector

        spec = self.config.crop.detector
        if spec == "fallback":
            return CenteredBoxDetector()
        if spec.startswith("cascade:"):
            return CascadeDetector(spec.split(":", 1)[1])
        raise ConfigError(f"unknown detector {spec!r}")

    def _stage_crop(self) -> None:
        from .facecrop import detect_face, enlarge_and_crop, save_crop
        from .ingestion import load_manifest, sample_frames

        params = self.config.crop
        manifest = load_manifest(self.manifest_path)
        out_dir = self.crop_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        stats = {}

        def process(rec):
            detector = self._make_detector()  # one instance per worker
            skipped = 0
            for frame in sample_frames(rec.path, params.stride):
                box = detect_face(frame.image, detector)
                if box is None:
                    skipped += 1
                    continue
                crop = enlarge_and_crop(frame.image, box, params.factor, params.out_size,
                                        source=(rec.video_id, frame.frame_index))
                save_crop(crop, out_dir)
            return rec.video_id, skipped

        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                for vid, skipped in pool.map(process, manifest.records):
                    stats[vid] = skipped
        else:
            for rec in manifest.records:
                vid, skipped = process(rec)
                stats[vid] = skipped
        (self.work / "crop" / "skip_stats.json").write_text(
            json.dumps(stats, sort_keys=True, indent=1))

    def _stage_gsd(self) -> None:
        from .facecrop import load_crop_image
        from .gsd import encode_gsd, estimate_gsd, save_encoded_gsd, save_gsd_raw

        params = self.config.gsd
        out_dir = self.gsd_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        crops = sorted(self.crop_dir.glob("*_rgb.png"))
        if not crops:
            raise MissingArtifactError(f"no crops found under {self.crop_dir}",
                                       [str(self.crop_dir)])

        def process(path):
            backend = make_gsd_backend(params.backend)  # per worker; backends not shared
            base = path.name[: -len("_rgb.png")]
            video_id, frame_index = base.rsplit("_", 1)
            gsd_map = estimate_gsd(load_crop_image(path), backend)
            encoded = encode_gsd(gsd_map)
            save_encoded_gsd(encoded, out_dir, video_id, int(frame_index))
            if params.raw_sidecar:
                save_gsd_raw(gsd_map, out_dir / f"{base}_gsd.raw")

        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                list(pool.map(process, crops))
        else:
            for path in crops:
                process(path)

    def _train_config(self):
        from .training import TrainConfig

        params = self.config.train
        seed = params.seed if params.seed is not None else substream_seed(self.config.seed, "train")
        return TrainConfig(
            backbone=params.backbone, input_mode=params.input_mode, epochs=params.epochs,
            batch_size=params.batch_size, learning_rate=params.learning_rate,
            momentum=params.momentum, weight_decay=params.weight_decay, seed=seed)

    def _sample_source(self):
        from .ingestion import load_manifest, load_split
        from .training import ManifestSampleSource

        return ManifestSampleSource(
            load_manifest(self.manifest_path), load_split(self.split_path),
            self.config.train.input_mode, self.config.train.backbone,
            rgb_dir=self.crop_dir, gsd_dir=self.gsd_dir, forgery=self.config.train.forgery)

    def _stage_train(self) -> None:
        from .training import train

        checkpoint = train(self._train_config(), None, self._sample_source(),
                           use_pretrained=self.config.train.use_pretrained)
        checkpoint.save(self.ckpt_dir)

    def _stage_eval(self) -> None:
        from .evaluation import evaluate
        from .training import Checkpoint

        checkpoint = Checkpoint.load(self.ckpt_dir)
        evaluate(checkpoint, None, self._sample_source(), out_dir=self.results_dir,
                 threshold=self.config.eval.threshold, which=self.config.eval.which,
                 video_level=self.config.eval.video_level)

    def _stage_viz(self) -> None:
        from .evaluation import embed_2d, plot_embedding
        from .gsd import decode_gsd, log_visualize, render_colormap
        from .training import Checkpoint, extract_activations

        out_dir = self.work / "viz"
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = Checkpoint.load(self.ckpt_dir)
        source = self._sample_source()
        samples = source.samples("test")
        if not samples:
            raise MissingArtifactError("no test samples to visualize", [])
        activations = extract_activations(checkpoint, samples)
        points = embed_2d(activations, substream_seed(self.config.seed, "embedding"),
                          perplexity=self.config.viz.perplexity)
        labels = [s.label for s in samples]
        forgeries = [s.provenance[2] for s in samples]
        for forgery in sorted({f for f, lab in zip(forgeries, labels) if lab == "fake"}):
            keep = [i for i, (f, lab) in enumerate(zip(forgeries, labels))
                    if lab == "real" or f == forgery]
            plot_embedding(points[keep], [labels[i] for i in keep],
                           [forgeries[i] for i in keep], out_dir / f"tsne_{forgery}.png",
                           cap=self.config.viz.cap,
                           seed=substream_seed(self.config.seed, "embedding-subsample"),
                           title=f"activations, forgery {forgery}")
        # log-channel anomaly views for a handful of test descriptor maps
        from .gsd import load_encoded_gsd
        from PIL import Image

        for path in sorted(self.gsd_dir.glob("*_gsd.png"))[:8]:
            gray = log_visualize(decode_gsd(load_encoded_gsd(path).image))
            Image.fromarray(render_colormap(gray)).save(
                out_dir / path.name.replace("_gsd.png", "_loggsd.png"))


def make_gsd_backend(spec: str):
    """Parse 'synthetic:<seed>' or 'pretrained:<model-path>' backend specs."""
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        from .synthetic import SyntheticEstimator

        return SyntheticEstimator.from_seed(int(arg or "0"))
    if kind == "pretrained":
        from .gsd import PretrainedEstimator

        if not arg:
            raise ConfigError("pretrained backend needs a model path: pretrained:<path>")
        return PretrainedEstimator(arg)
    raise ConfigError(f"unknown descriptor backend {spec!r}")


# --- commands --------------------------------------------------------------------

def _cmd_scan(args) -> int:
    from .ingestion import save_manifest, scan_dataset

    manifest = scan_dataset(args.root, args.layout, args.compression)
    save_manifest(manifest, args.output)
    print(f"{len(manifest.records)} records ({manifest.rejects} rejects) -> {args.output}")
    return EXIT_OK


def _cmd_split(args) -> int:
    from .ingestion import load_manifest, make_splits, save_split

    manifest = load_manifest(args.manifest)
    split = make_splits(manifest, args.seed, official_dir=args.official)
    save_split(split, args.output)
    counts = {name: sum(1 for s in split.assignment.values() if s == name)
              for name in ("train", "val", "test")}
    print(f"split {counts} -> {args.output}")
    return EXIT_OK


def _cmd_crop(args) -> int:
    config = RunConfig(work_dir=str(Path(args.output).parent),
                       crop=CropParams(stride=args.stride, detector=args.detector,
                                       factor=args.factor, out_size=args.out_size))
    pipe = Pipeline(config, jobs=args.jobs)

    from .facecrop import detect_face, enlarge_and_crop, save_crop
    from .ingestion import load_manifest, sample_frames

    manifest = load_manifest(args.manifest)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    detector = pipe._make_detector()
    total, skipped = 0, 0
    for rec in manifest.records:
        for frame in sample_frames(rec.path, args.stride):
            box = detect_face(frame.image, detector)
            if box is None:
                skipped += 1
                continue
            crop = enlarge_and_crop(frame.image, box, args.factor, args.out_size,
                                    source=(rec.video_id, frame.frame_index))
            save_crop(crop, out_dir)
            total += 1
    print(f"{total} crops ({skipped} frames skipped, no face) -> {out_dir}")
    return EXIT_OK


def _cmd_gsd(args) -> int:
    from .facecrop import load_crop_image
    from .gsd import encode_gsd, estimate_gsd, save_encoded_gsd, save_gsd_raw

    crops_dir = Path(args.crops)
    crops = sorted(crops_dir.glob("*_rgb.png"))
    if not crops:
        raise MissingArtifactError(f"no crops found under {crops_dir}", [str(crops_dir)])
    backend = make_gsd_backend(args.backend)
    out_dir = Path(args.output)
    for path in crops:
        base = path.name[: -len("_rgb.png")]
        video_id, frame_index = base.rsplit("_", 1)
        gsd_map = estimate_gsd(load_crop_image(path), backend)
        save_encoded_gsd(encode_gsd(gsd_map), out_dir, video_id, int(frame_index))
        if args.raw:
            save_gsd_raw(gsd_map, out_dir / f"{base}_gsd.raw")
    print(f"{len(crops)} descriptor maps -> {out_dir}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .ingestion import load_manifest, load_split
    from .training import ManifestSampleSource, TrainConfig, train

    config = TrainConfig.from_file(args.config)
    source = ManifestSampleSource(
        load_manifest(args.manifest), load_split(args.split), config.input_mode,
        config.backbone, rgb_dir=args.features, gsd_dir=args.features,
        forgery=args.forgery)
    checkpoint = train(config, None, source, use_pretrained=args.pretrained)
    checkpoint.save(args.output)
    best = (f"best epoch {checkpoint.best_epoch}"
            if checkpoint.best_epoch else "no epochs run")
    print(f"trained {config.backbone}/{config.input_mode} for {config.epochs} epochs "
          f"({best}) -> {args.output}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .ingestion import load_manifest, load_split
    from .training import Checkpoint, ManifestSampleSource

    checkpoint = Checkpoint.load(args.ckpt)
    source = ManifestSampleSource(
        load_manifest(args.manifest), load_split(args.split), checkpoint.input_mode,
        checkpoint.backbone, rgb_dir=args.features, gsd_dir=args.features,
        forgery=args.forgery)
    report = evaluate(checkpoint, None, source, out_dir=args.output,
                      threshold=args.threshold, which=args.which,
                      video_level=args.video_level)
    for forgery, entry in report.per_forgery.items():
        print(f"{forgery}: accuracy {entry['accuracy']:.3f}  auc {entry['auc']:.3f}")
    print(f"average: accuracy {report.averages['accuracy']:.3f}  "
          f"auc {report.averages['auc']:.3f} -> {args.output}")
    return EXIT_OK


def _cmd_viz(args) -> int:
    config = RunConfig(work_dir=args.work, seed=args.seed)
    Pipeline(config)._stage_viz()
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    if not stages:
        raise ConfigError("no stages requested")
    Pipeline(config, force=args.force, jobs=args.jobs).run(stages)
    print(f"stages {stages} complete in {config.work_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfake",
        description="surface-descriptor deepfake detection pipeline")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="discover dataset videos into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--layout", default="ffpp")
    p.add_argument("--compression", default="c23")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("split", help="leakage-free train/val/test assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--official", default=None,
                   help="directory with official train/val/test.json files; takes precedence")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("crop", help="sample frames and extract face crops")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--detector", default="fallback")
    p.add_argument("--factor", type=float, default=1.3)
    p.add_argument("--out-size", type=int, default=224)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_crop)

    p = sub.add_parser("gsd", help="extract encoded surface-descriptor maps from crops")
    p.add_argument("--crops", required=True)
    p.add_argument("--backend", required=True,
                   help="synthetic:<seed> or pretrained:<model-path>")
    p.add_argument("--raw", action="store_true", help="also write raw float sidecars")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gsd)

    p = sub.add_parser("train", help="train a real/fake classifier")
    p.add_argument("--config", required=True, help="JSON file with TrainConfig fields")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--forgery", default="all")
    p.add_argument("--pretrained", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--forgery", default="all")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--which", default="best", choices=["best", "final"])
    p.add_argument("--video-level", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("viz", help="embedding and log-channel diagnostic plots")
    p.add_argument("--work", required=True, help="pipeline work directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_viz)

    p = sub.add_parser("run", help="run pipeline stages against one work dir")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", default=",".join(STAGE_ORDER))
    p.add_argument("--seed", type=int, default=None, help="override the config root seed")
    p.add_argument("--force", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_MISSING
    except SurfakeError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("unexpected failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
