"""Experiment configuration, orchestration and the six-way comparison."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import cnn, rf, svm
from ._parallel import ordered_map
from .dataset import Dataset, load_dataset, resize_area, stratified_split
from .errors import ArgumentError, DemgradeError, StratifyError
from .metrics import comparison_report, confusion_matrix, score
from .persistence import save_model
from .pgm import write_pgm
from .watershed import WatershedParams, watershed_features

logger = logging.getLogger(__name__)

MODEL_KINDS = ("rf", "svm", "cnn")
DEFAULT_RATIOS = {"rf": (0.8, 0.0, 0.2), "svm": (0.8, 0.0, 0.2), "cnn": (0.7, 0.1, 0.2)}


@dataclass(frozen=True)
class SvmSettings:
    kernel: svm.KernelParams = field(default_factory=svm.KernelParams)
    strategy: str = "ovo"
    max_passes: int = 1000
    standardize: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_root: str = ""
    model: str = "svm"
    watershed: bool = False
    watershed_params: WatershedParams = field(default_factory=WatershedParams)
    augment: bool = False
    resolution: tuple[int, int] = (32, 32)
    rf: rf.RfConfig = field(default_factory=rf.RfConfig)
    svm: SvmSettings = field(default_factory=SvmSettings)
    cnn: cnn.CnnConfig = field(default_factory=cnn.CnnConfig)
    ratios: tuple[float, float, float] | None = None  # None -> per-model protocol
    split_seed: int = 0
    output_dir: str = "runs"
    average: str = "macro"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ArgumentError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if min(self.resolution) < 8:
            raise ArgumentError(f"resolution must be at least 8x8, got {self.resolution}")
        if self.average not in ("macro", "weighted"):
            raise ArgumentError("average must be 'macro' or 'weighted'")

    @property
    def split_ratios(self):
        return tuple(self.ratios) if self.ratios is not None else DEFAULT_RATIOS[self.model]

    @property
    def run_name(self):
        return ("WS+" if self.watershed else "") + self.model.upper()

    def to_dict(self):
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        d["ratios"] = None if self.ratios is None else list(self.ratios)
        return d

    def hash(self):
        """SHA-256 of the canonical config, excluding where outputs go."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        if "watershed_params" in d:
            d["watershed_params"] = WatershedParams(**d["watershed_params"])
        if "rf" in d:
            d["rf"] = rf.RfConfig(**d["rf"])
        if "svm" in d:
            s = dict(d["svm"])
            if "kernel" in s:
                s["kernel"] = svm.KernelParams(**s["kernel"])
            d["svm"] = SvmSettings(**s)
        if "cnn" in d:
            d["cnn"] = cnn.CnnConfig(**d["cnn"])
        if "resolution" in d:
            d["resolution"] = tuple(d["resolution"])
        if d.get("ratios") is not None:
            d["ratios"] = tuple(d["ratios"])
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunReport:
    run_name: str
    config_hash: str
    split_sizes: dict
    degenerate_count: int
    scorecard: object
    confusion_matrix: list
    confusion_matrix_path: str | None = None
    model_path: str | None = None
    timings: dict = field(default_factory=dict)
    history: dict | None = None

    def deterministic_dict(self):
        """Everything except wall-clock timings."""
        return {
            "run_name": self.run_name,
            "config_hash": self.config_hash,
            "split_sizes": self.split_sizes,
            "degenerate_count": self.degenerate_count,
            "scorecard": self.scorecard.to_dict(),
            "confusion_matrix": self.confusion_matrix,
            "confusion_matrix_path": self.confusion_matrix_path,
            "model_path": self.model_path,
            "history": self.history,
        }

    def to_dict(self):
        return {**self.deterministic_dict(), "timings": self.timings}


@contextmanager
def _phase(name, timings=None):
    start = time.perf_counter()
    try:
        yield
    except DemgradeError as exc:
        if exc.phase is None:
            exc.tagged(name)
        raise
    except Exception as exc:
        raise DemgradeError(f"{type(exc).__name__}: {exc}").tagged(name) from exc
    finally:
        if timings is not None:
            timings[name] = round(time.perf_counter() - start, 4)


# -- features ----------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSet:
    images: np.ndarray  # (N, C, H, W) uint8: raw or overlay (C=2 with augment)
    degenerate: np.ndarray  # per-sample flag
    spec: dict

    def flat(self):
        return self.images.reshape(len(self.images), -1).astype(np.float64) / 255.0

    def tensors(self):
        return self.images.astype(np.float32) / 255.0


def feature_spec(cfg: ExperimentConfig):
    return {
        "resolution": list(cfg.resolution),
        "watershed": cfg.watershed,
        "watershed_params": cfg.watershed_params.to_dict(),
        "augment": cfg.augment,
    }


def extract_features(images, spec) -> FeatureSet:
    """Resize every image and, when requested, apply the watershed overlay."""
    w, h = spec["resolution"]
    params = WatershedParams(**spec["watershed_params"])

    def one(img):
        small = resize_area(img, w, h)
        if not spec["watershed"]:
            return small[None], False
        overlay, degenerate = watershed_features(small, params)
        if spec["augment"]:
            return np.stack([small, overlay]), degenerate
        return overlay[None], degenerate

    out = ordered_map(one, images)
    return FeatureSet(
        np.stack([o[0] for o in out]).astype(np.uint8),
        np.array([o[1] for o in out], dtype=bool),
        spec,
    )


# -- model dispatch ----------------------------------------------------------


def _train(cfg: ExperimentConfig, feats: FeatureSet, y, split):
    tr = np.array(split.train, dtype=np.int64)
    if cfg.model == "rf":
        return rf.fit_forest(feats.flat()[tr], y[tr], cfg.rf), None
    if cfg.model == "svm":
        return svm.fit_multiclass(
            feats.flat()[tr], y[tr], cfg.svm.kernel, cfg.svm.strategy, cfg.svm.max_passes, cfg.svm.standardize
        ), None
    va = np.array(split.validation, dtype=np.int64)
    T = feats.tensors()
    model = cnn.init_model(input_shape=T.shape[1:], seed=cfg.cnn.seed, config=cfg.cnn)
    model, history = cnn.train(model, T[tr], y[tr], T[va], y[va], cfg.cnn)
    return model, history.to_dict()


def predict_features(model, feats: FeatureSet, rows=None):
    rows = np.arange(len(feats.images)) if rows is None else np.asarray(rows, dtype=np.int64)
    if isinstance(model, rf.ForestModel):
        return rf.predict(model, feats.flat()[rows])
    if isinstance(model, svm.SvmModel):
        return svm.predict(model, feats.flat()[rows])
    return cnn.predict(model, feats.tensors()[rows])


def _round_history(h):
    if h is None:
        return None
    return {k: [None if v != v else round(float(v), 6) for v in vals] for k, vals in h.items()}


def _check_splittable(ds: Dataset, ratios, seed):
    present = np.unique(ds.labels)
    if len(present) < 2:
        name = ds.class_names[int(present[0])]
        raise StratifyError(f"only class {name} is present; a classifier needs at least two", class_name=name)
    return stratified_split(ds.labels, ratios, seed, ds.class_names)


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None, features: FeatureSet | None = None) -> RunReport:
    """Ingest, extract features, split, train, evaluate and persist one run.

    ``dataset`` and ``features`` may be passed in to share work between runs;
    they must have been produced from ``cfg``'s dataset and feature spec.
    """
    timings = {}
    with _phase("ingest", timings):
        ds = dataset if dataset is not None else load_dataset(cfg.dataset_root)
    with _phase("features", timings):
        feats = features if features is not None else extract_features(ds.images, feature_spec(cfg))
        if feats.spec != feature_spec(cfg):
            raise ArgumentError("precomputed features do not match the run configuration")
    y = ds.labels
    with _phase("split", timings):
        split = _check_splittable(ds, cfg.split_ratios, cfg.split_seed)
    with _phase("train", timings):
        model, history = _train(cfg, feats, y, split)
    with _phase("evaluate", timings):
        test = np.array(split.test, dtype=np.int64)
        pred = predict_features(model, feats, test)
        cm = confusion_matrix(y[test], pred, len(ds.class_names))
        card = score(cm)
    report = RunReport(
        run_name=cfg.run_name,
        config_hash=cfg.hash(),
        split_sizes={"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
        degenerate_count=int(feats.degenerate.sum()),
        scorecard=card,
        confusion_matrix=cm.counts.tolist(),
        history=_round_history(history),
    )
    with _phase("persist", timings):
        out = Path(cfg.output_dir) / cfg.run_name.lower().replace("+", "-")
        out.mkdir(parents=True, exist_ok=True)
        save_model(
            model,
            out / "model",
            metadata={"features": feats.spec, "config_hash": report.config_hash, "class_names": list(ds.class_names)},
        )
        (out / "confusion.csv").write_text(cm.to_csv(ds.class_names))
        write_pgm(out / "confusion.pgm", cm.to_heatmap())
        (out / "split.json").write_text(json.dumps(split.as_dict()) + "\n")
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "scorecard.json").write_text(json.dumps(card.to_dict(), indent=2, sort_keys=True) + "\n")
        report.model_path = (out / "model").as_posix()
        report.confusion_matrix_path = (out / "confusion.csv").as_posix()
        report.timings = timings
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    logger.info("%s: accuracy %.4f (%s)", cfg.run_name, card.accuracy, out)
    return report


def compare_all(base: ExperimentConfig, dataset: Dataset | None = None):
    """Run RF/SVM/CNN with and without watershed features and tabulate them.

    Splits for both protocols are checked before any training so an
    unsplittable dataset fails fast. Finished runs stay on disk if a later
    run fails; the partial table is written before the error propagates.
    """
    with _phase("ingest"):
        ds = dataset if dataset is not None else load_dataset(base.dataset_root)
    with _phase("split"):
        for kind in MODEL_KINDS:
            ratios = tuple(base.ratios) if base.ratios is not None else DEFAULT_RATIOS[kind]
            _check_splittable(ds, ratios, base.split_seed)
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = {}
    reports = []
    try:
        for kind in MODEL_KINDS:
            for ws in (False, True):
                cfg = replace(base, model=kind, watershed=ws)
                spec = feature_spec(cfg)
                key = json.dumps(spec, sort_keys=True)
                if key not in cache:
                    with _phase("features"):
                        cache[key] = extract_features(ds.images, spec)
                reports.append(run_experiment(cfg, ds, cache[key]))
    finally:
        if reports:
            _write_comparison(out, reports, base.average)
    return comparison_report([(r.run_name, r.scorecard) for r in reports], base.average), reports


def _write_comparison(out: Path, reports, average):
    table = comparison_report([(r.run_name, r.scorecard) for r in reports], average)
    (out / "comparison.csv").write_text(table.to_csv())
    (out / "comparison.txt").write_text(table.to_text())
    cards = {r.run_name: r.scorecard.to_dict() for r in reports}
    (out / "scorecards.json").write_text(json.dumps(cards, indent=2, sort_keys=True) + "\n")
    return table
