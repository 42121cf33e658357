"""Experiment orchestration: annotate, correct, train, report.

One experiment = one output directory of artifacts: the dataset (when
simulated), the prediction files, the annotation journal, a label-quality
stats row, the training curve, and final metrics.  Given identical seeds a
re-run into a fresh directory reproduces identical artifacts (wall-clock
fields aside).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileformats as ff
from .annotation import (
    AnnotationError,
    AnnotationRun,
    AnnotationSet,
    ConsensusPolicy,
    CorrectionQueue,
    annotation_stats,
    apply_correction,
    baseline_view,
    build_queue,
)
from .domain import ClassSpace, Dataset, Sample, validate_dataset
from .estimator import check_prototypes
from .simulator import (
    AnnotatorModel,
    CorrectorModel,
    GeneratorConfig,
    annotation_set_from_models,
    annotation_set_from_pair,
    calibrate_to_table1,
    generate_dataset,
    uniform_noise_confusion,
)
from .trainer import TrainConfig, lambda_sweep, train_baseline, train_hcl

STATUS_COMPLETED = "completed"
STATUS_AWAITING = "awaiting-corrections"

DEFAULT_CALIBRATION = {
    "consistency": 0.4402,
    "ccp": 0.9297,
    "easy_class_fraction": 0.2,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Resolved experiment description; see from_dict for the JSON shape."""

    dataset: dict = field(default_factory=lambda: {"source": "simulate", "generator": {}})
    annotators: dict = field(default_factory=lambda: {"source": "simulate", "calibration": dict(DEFAULT_CALIBRATION)})
    policy: str = "unanimous-pair"
    corrector: dict = field(default_factory=lambda: {"kind": "oracle", "error_rate": 0.0})
    train: dict = field(default_factory=dict)
    seed: int = 42

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {"dataset", "annotators", "policy", "corrector", "train", "seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            dataset=dict(d.get("dataset") or {"source": "simulate", "generator": {}}),
            annotators=dict(d.get("annotators") or {"source": "simulate", "calibration": dict(DEFAULT_CALIBRATION)}),
            policy=d.get("policy", "unanimous-pair"),
            corrector=dict(d.get("corrector") or {"kind": "oracle", "error_rate": 0.0}),
            train=dict(d.get("train") or {}),
            seed=int(d.get("seed", 42)),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        src = self.dataset.get("source")
        if src not in ("simulate", "ingest"):
            raise ConfigError(f"dataset.source must be 'simulate' or 'ingest', got {src!r}")
        asrc = self.annotators.get("source")
        if asrc not in ("simulate", "files"):
            raise ConfigError(f"annotators.source must be 'simulate' or 'files', got {asrc!r}")
        policy = ConsensusPolicy(self.policy)
        if asrc == "simulate" and "models" in self.annotators:
            n = len(self.annotators["models"])
            if n == 0:
                raise ConfigError("annotators.models is empty")
            if n != policy.n_annotators:
                raise ConfigError(
                    f"policy {self.policy!r} needs {policy.n_annotators} annotators, got {n}"
                )
        kind = self.corrector.get("kind")
        if kind not in ("oracle", "service"):
            raise ConfigError(f"corrector.kind must be 'oracle' or 'service', got {kind!r}")
        TrainConfig.from_dict({**self.train, "seed": self.train.get("seed", self.seed)})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the master seed, rederiving every component seed."""
        cfg = ExperimentConfig(
            dataset=dict(self.dataset),
            annotators=dict(self.annotators),
            policy=self.policy,
            corrector=dict(self.corrector),
            train=dict(self.train),
            seed=int(seed),
        )
        if cfg.dataset.get("source") == "simulate":
            cfg.dataset["generator"] = {**cfg.dataset.get("generator", {})}
            cfg.dataset["generator"].pop("seed", None)
        cfg.annotators.pop("seed", None)
        cfg.corrector.pop("seed", None)
        cfg.train = {k: v for k, v in cfg.train.items() if k != "seed"}
        return cfg

    def resolved(self) -> dict:
        """Full config echo with every derived seed made explicit."""
        out = {
            "dataset": dict(self.dataset),
            "annotators": dict(self.annotators),
            "policy": self.policy,
            "corrector": dict(self.corrector),
            "train": self.train_config().as_dict(),
            "seed": self.seed,
        }
        if out["dataset"].get("source") == "simulate":
            gen = {**out["dataset"].get("generator", {})}
            gen.setdefault("seed", self.seed)
            out["dataset"]["generator"] = gen
        out["annotators"].setdefault("seed", self.annotator_seed())
        out["corrector"].setdefault("seed", self.corrector_seed())
        return out

    def annotator_seed(self) -> int:
        return int(self.annotators.get("seed", self.seed + 1000))

    def corrector_seed(self) -> int:
        return int(self.corrector.get("seed", self.seed + 2000))

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": self.train.get("seed", self.seed)})


@dataclass
class ExperimentData:
    train: Dataset
    test: Dataset | None
    prototypes: np.ndarray | None
    simulated: bool


@dataclass
class ExperimentResult:
    status: str
    out_dir: Path
    metrics: dict = field(default_factory=dict)


def _load_dataset(config: ExperimentConfig) -> ExperimentData:
    spec = config.dataset
    if spec.get("source") == "simulate":
        gen = {**spec.get("generator", {})}
        gen.setdefault("seed", config.seed)
        train, test, prototypes = generate_dataset(GeneratorConfig(**gen))
        return ExperimentData(train, test, prototypes, simulated=True)

    def require(key: str) -> str:
        if key not in spec:
            raise ConfigError(f"ingest dataset needs {key!r}")
        return spec[key]

    names = ff.read_class_names(Path(require("class_names")))
    class_space = ClassSpace(names)

    def load_split(feat_key: str, gt_key: str) -> Dataset | None:
        if feat_key not in spec or spec[feat_key] is None:
            return None
        feat_path = Path(spec[feat_key])
        if not feat_path.exists():
            raise FileNotFoundError(f"feature file not found: {feat_path}")
        ids, X = ff.read_features(feat_path)
        gt: dict[str, int] = {}
        if spec.get(gt_key):
            gt_path = Path(spec[gt_key])
            if not gt_path.exists():
                raise FileNotFoundError(f"ground-truth file not found: {gt_path}")
            gt = ff.read_labels(gt_path)
        samples = [Sample(id=sid, features=X[i], ground_truth=gt.get(sid)) for i, sid in enumerate(ids)]
        dataset = Dataset(samples, class_space)
        problems = validate_dataset(samples, class_space)
        if problems:
            raise ConfigError(f"{feat_path}: invalid dataset: {problems[:3]}")
        return dataset

    train = load_split("train_features", "train_ground_truth")
    if train is None:
        raise ConfigError("ingest dataset needs 'train_features'")
    test = load_split("test_features", "test_ground_truth")
    prototypes = None
    if spec.get("prototypes"):
        proto_path = Path(spec["prototypes"])
        if not proto_path.exists():
            raise FileNotFoundError(f"prototype file not found: {proto_path}")
        _, Q = ff.read_features(proto_path)
        prototypes = check_prototypes(Q)
        if Q.shape[0] != class_space.k:
            raise ConfigError(f"prototype bank has {Q.shape[0]} rows for k={class_space.k}")
    return ExperimentData(train, test, prototypes, simulated=False)


def _annotate(config: ExperimentConfig, data: ExperimentData) -> AnnotationSet:
    spec = config.annotators
    policy = ConsensusPolicy(config.policy)
    if spec.get("source") == "files":
        paths = [Path(p) for p in spec.get("predictions", [])]
        if not paths:
            raise ConfigError("annotators.predictions is empty")
        annset = ff.read_predictions(paths, spec.get("ids"))
        if len(annset.annotator_ids) != policy.n_annotators:
            raise ConfigError(
                f"policy {config.policy!r} needs {policy.n_annotators} annotators, "
                f"prediction files contain {len(annset.annotator_ids)}"
            )
        return annset

    seed = config.annotator_seed()
    k = data.train.k
    if "models" in spec:
        models = []
        for i, m in enumerate(spec["models"]):
            models.append(
                AnnotatorModel(
                    id=m.get("id", f"ann-{i}"),
                    confusion=uniform_noise_confusion(k, float(m["accuracy"])),
                    seed=int(m.get("seed", seed + i)),
                )
            )
        return annotation_set_from_models(models, data.train.samples)
    cal = {**DEFAULT_CALIBRATION, **spec.get("calibration", {})}
    if policy.n_annotators != 2:
        raise ConfigError("calibrated simulated annotators support the two-annotator policy only")
    pair = calibrate_to_table1(
        float(cal["consistency"]),
        float(cal["ccp"]),
        k,
        seed=seed,
        easy_class_fraction=float(cal.get("easy_class_fraction", 0.0)),
        easy_consistency=float(cal.get("easy_consistency", 0.93)),
        easy_ccp=float(cal.get("easy_ccp", 0.995)),
    )
    return annotation_set_from_pair(pair, data.train.samples)


def _resolve_queue(
    config: ExperimentConfig, data: ExperimentData, run: AnnotationRun, queue: CorrectionQueue
) -> str:
    if config.corrector.get("kind") != "oracle":
        return STATUS_COMPLETED if queue.is_drained() else STATUS_AWAITING
    corrector = CorrectorModel(
        error_rate=float(config.corrector.get("error_rate", 0.0)),
        seed=config.corrector_seed(),
    )
    pending = list(queue.pending)
    if pending:
        gts = []
        for sid in pending:
            gt = data.train[sid].ground_truth
            if gt is None:
                raise AnnotationError(
                    f"oracle corrector needs ground truth, sample {sid!r} has none"
                )
            gts.append(gt)
        labels = corrector.correct_many(pending, np.asarray(gts, dtype=np.int64), data.train.k)
        for sid, label in zip(pending, labels):
            apply_correction(run, queue, sid, int(label), "oracle")
    return STATUS_COMPLETED


def _weights_checksum(W: np.ndarray, b: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(W, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return h.hexdigest()


def _write_dataset_artifacts(out: Path, data: ExperimentData) -> None:
    train = data.train
    ff.write_features(out / "train_features.hclf", train.ids, train.X)
    ff.write_class_names(out / "classes.json", list(train.class_space.names))
    if train.has_full_ground_truth():
        ff.write_labels(out / "train_labels.jsonl", {s.id: s.ground_truth for s in train.samples})
    if data.test is not None:
        ff.write_features(out / "test_features.hclf", data.test.ids, data.test.X)
        if data.test.has_full_ground_truth():
            ff.write_labels(
                out / "test_labels.jsonl", {s.id: s.ground_truth for s in data.test.samples}
            )
    if data.prototypes is not None:
        ff.write_features(
            out / "prototypes.hclf", list(train.class_space.names), data.prototypes
        )


def _annotation_phase(
    config: ExperimentConfig, data: ExperimentData, out: Path, resume_journal: Path | None
) -> tuple[AnnotationRun, CorrectionQueue, str]:
    train = data.train
    names = list(train.class_space.names)
    metas = {s.id: s.meta for s in train.samples if s.meta}
    if resume_journal is not None:
        run, queue, journal_names, _ = ff.replay_journal(resume_journal)
        if journal_names and journal_names != names:
            raise ConfigError("journal class names disagree with the dataset's")
        if set(run.order) != set(train.ids):
            raise ConfigError("journal covers a different sample set than the dataset")
        status = STATUS_COMPLETED if queue.is_drained() else STATUS_AWAITING
    else:
        annset = _annotate(config, data)
        run, queue = build_queue(train, annset, ConsensusPolicy(config.policy))
        status = _resolve_queue(config, data, run, queue)
    ff.write_predictions(out / "predictions.jsonl", AnnotationSet(run.annotator_ids, run.predictions))
    ff.write_journal(out / "journal.jsonl", run, names, metas)

    if run.is_complete() and train.has_full_ground_truth():
        stats = annotation_stats(run, {s.id: s.ground_truth for s in train.samples})
        ff.write_json(out / "annotation_stats.json", _report(config, {"stats": stats.as_dict()}))
        rows = [
            ["n", stats.n],
            ["consistency_rate", f"{stats.consistency_rate:.4f}"],
            ["ccp", f"{stats.ccp:.4f}"],
            ["final_accuracy", f"{stats.final_accuracy:.4f}"],
        ] + [[f"accuracy[{a}]", f"{v:.4f}"] for a, v in stats.per_annotator_accuracy.items()]
        ff.atomic_write_text(out / "annotation_stats.txt", ff.format_table(["quantity", "value"], rows))
    return run, queue, status


def _eval_set(data: ExperimentData):
    if data.test is not None and data.test.has_full_ground_truth():
        return data.test.X, data.test.y
    return None


def _report(config: ExperimentConfig, payload: dict) -> dict:
    """Every report artifact embeds the fully resolved config and seed."""
    return {"config": config.resolved(), **payload}


def run_simulate(config: ExperimentConfig, out_dir: str | Path) -> ExperimentResult:
    """Generate and persist dataset artifacts only (no annotation, no training)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(config)
    ff.write_json(out / "config.json", config.resolved())
    _write_dataset_artifacts(out, data)
    return ExperimentResult(
        status=STATUS_COMPLETED,
        out_dir=out,
        metrics={"n_train": data.train.n, "n_test": 0 if data.test is None else data.test.n},
    )


def run_annotation(
    config: ExperimentConfig, out_dir: str | Path, resume_journal: str | Path | None = None
) -> ExperimentResult:
    """Annotate (and oracle-correct) without training; persists the journal."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(config)
    ff.write_json(out / "config.json", config.resolved())
    if data.simulated:
        _write_dataset_artifacts(out, data)
    run, queue, status = _annotation_phase(
        config, data, out, Path(resume_journal) if resume_journal else None
    )
    ff.write_json(out / "status.json", _report(config, {"status": status, "pending": queue.n_pending}))
    return ExperimentResult(status=status, out_dir=out, metrics={"pending": queue.n_pending})


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, resume_journal: str | Path | None = None
) -> ExperimentResult:
    """Annotate, correct, train, report.  Artifacts land in ``out_dir``.

    With a service corrector and an undrained queue, stops after persisting
    the journal and returns the awaiting status; ``resume_journal`` lets a
    completed journal (after human correction) drive the training phase.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(config)
    ff.write_json(out / "config.json", config.resolved())
    if data.simulated:
        _write_dataset_artifacts(out, data)
    run, queue, status = _annotation_phase(
        config, data, out, Path(resume_journal) if resume_journal else None
    )
    if status == STATUS_AWAITING:
        ff.write_json(out / "status.json", _report(config, {"status": status, "pending": queue.n_pending}))
        return ExperimentResult(status=status, out_dir=out, metrics={"pending": queue.n_pending})

    if data.prototypes is None:
        raise ConfigError("training needs a prototype bank (simulate one or pass dataset.prototypes)")
    model, report = train_hcl(data.train, run, data.prototypes, config.train_config(), eval_set=_eval_set(data))
    ff.write_json(out / "train_report.json", _report(config, {"report": report.as_dict()}))
    ff.write_curve_csv(out / "train_curve.csv", report.as_dict()["epochs"])
    metrics = {
        "final_test_accuracy": report.final_test_accuracy,
        "final_train_accuracy": report.epochs[-1].train_accuracy,
        "final_objective": report.epochs[-1].objective,
        "weights_sha256": _weights_checksum(model.W, model.b),
    }
    ff.write_json(out / "metrics.json", _report(config, {"metrics": metrics}))
    ff.write_json(out / "status.json", _report(config, {"status": STATUS_COMPLETED, "pending": 0}))
    return ExperimentResult(status=STATUS_COMPLETED, out_dir=out, metrics=metrics)


def run_baseline_suite(config: ExperimentConfig, out_dir: str | Path) -> ExperimentResult:
    """Train the corrected-label objective plus every comparison view on one split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(config)
    ff.write_json(out / "config.json", config.resolved())
    if data.simulated:
        _write_dataset_artifacts(out, data)
    run, queue, status = _annotation_phase(config, data, out, None)
    if status == STATUS_AWAITING:
        raise ConfigError("baseline suite needs a drained queue (use the oracle corrector)")
    if data.prototypes is None:
        raise ConfigError("baseline suite needs a prototype bank")
    eval_set = _eval_set(data)
    if eval_set is None:
        raise ConfigError("baseline suite needs a test split with ground truth")
    tc = config.train_config()

    results = {}
    _, report = train_hcl(data.train, run, data.prototypes, tc, eval_set=eval_set)
    results["HCL"] = report.final_test_accuracy
    for kind in ("FSL", "VL", "HL"):
        view = baseline_view(run, data.train, kind)
        _, rep = train_baseline(view, tc, data.train.k, eval_set=eval_set)
        results[kind] = rep.final_test_accuracy
    for annotator in run.annotator_ids:
        view = baseline_view(run, data.train, "ONLY", annotator_id=annotator)
        _, rep = train_baseline(view, tc, data.train.k, eval_set=eval_set)
        results[f"ONLY({annotator})"] = rep.final_test_accuracy

    ff.write_json(out / "baselines.json", _report(config, {"results": results}))
    rows = [[name, f"{acc:.4f}"] for name, acc in results.items()]
    ff.atomic_write_text(out / "baselines.txt", ff.format_table(["method", "test_accuracy"], rows))
    return ExperimentResult(status=STATUS_COMPLETED, out_dir=out, metrics=results)


def run_lambda_sweep(
    config: ExperimentConfig, out_dir: str | Path, grid: list[float]
) -> ExperimentResult:
    """One full training per blend weight on a shared annotated split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_dataset(config)
    ff.write_json(out / "config.json", config.resolved())
    if data.simulated:
        _write_dataset_artifacts(out, data)
    run, queue, status = _annotation_phase(config, data, out, None)
    if status == STATUS_AWAITING:
        raise ConfigError("sweep needs a drained queue (use the oracle corrector)")
    if data.prototypes is None:
        raise ConfigError("sweep needs a prototype bank")
    rows = lambda_sweep(data.train, run, data.prototypes, config.train_config(), grid, eval_set=_eval_set(data))
    ff.write_json(out / "sweep.json", _report(config, {"rows": rows}))
    table = [[r["lambda"], f"{r['final_test_accuracy']:.4f}"] for r in rows]
    ff.atomic_write_text(out / "sweep.txt", ff.format_table(["lambda", "test_accuracy"], table))
    lines = ["lambda,final_test_accuracy,final_train_accuracy,final_objective"]
    for r in rows:
        lines.append(
            f"{r['lambda']!r},{r['final_test_accuracy']!r},"
            f"{r['final_train_accuracy']!r},{r['final_objective']!r}"
        )
    ff.atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    return ExperimentResult(status=STATUS_COMPLETED, out_dir=out, metrics={"rows": rows})
