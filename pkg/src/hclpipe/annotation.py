"""Consensus detection, the correction queue, and baseline dataset views.

The labeling protocol: every sample gets a prediction from each annotator.
Where the annotators agree (consistency flag s=0) the shared label is
accepted as supervision immediately; where they disagree (s=1) the sample
is queued for a corrector, whose label is trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import ClassSpace, Dataset, HclRecord

POLICY_MODES = {"unanimous-pair": 2, "majority-of-three": 3}


class AnnotationError(ValueError):
    pass


class UnknownSampleError(AnnotationError):
    """Correction submitted for an id that was never queued."""


class CorrectionConflictError(AnnotationError):
    """Correction submitted for an id already resolved with a different label."""


@dataclass(frozen=True)
class ConsensusPolicy:
    """How annotator agreement is decided.

    ``unanimous-pair``: two annotators, consensus iff they output the same
    label.  ``majority-of-three``: three annotators, consensus iff at least
    two agree (the majority label wins); only a three-way disagreement is
    routed to correction.
    """

    mode: str = "unanimous-pair"

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise AnnotationError(f"unknown consensus policy {self.mode!r}")

    @property
    def n_annotators(self) -> int:
        return POLICY_MODES[self.mode]


def detect_consensus(
    predictions: list[int], policy: ConsensusPolicy
) -> tuple[int, int | None]:
    """Return (s, consensus_label): s=0 with the agreed label, or s=1 with None."""
    preds = [int(p) for p in predictions]
    if len(preds) != policy.n_annotators:
        raise AnnotationError(
            f"policy {policy.mode!r} needs {policy.n_annotators} predictions, got {len(preds)}"
        )
    if policy.mode == "unanimous-pair":
        a, b = preds
        return (0, a) if a == b else (1, None)
    # majority-of-three
    for label in preds:
        if preds.count(label) >= 2:
            return 0, label
    return 1, None


@dataclass
class AnnotationSet:
    """Per-annotator predictions for every sample in a dataset."""

    annotator_ids: list[str]
    predictions: dict[str, dict[str, int]]  # sample_id -> annotator_id -> label

    def labels_for(self, sample_id: str) -> list[int]:
        per = self.predictions[sample_id]
        return [per[a] for a in self.annotator_ids]

    def validate(self, dataset: Dataset) -> None:
        k = dataset.k
        for sid in dataset.ids:
            per = self.predictions.get(sid)
            if per is None:
                raise AnnotationError(f"missing predictions for sample {sid!r}")
            for a in self.annotator_ids:
                if a not in per:
                    raise AnnotationError(f"annotator {a!r} has no prediction for {sid!r}")
                if not 0 <= int(per[a]) < k:
                    raise AnnotationError(
                        f"prediction {per[a]} for {sid!r} by {a!r} outside [0, {k})"
                    )


@dataclass
class CorrectionQueue:
    """Discrepancy samples awaiting a corrected label, in dataset order.

    Backed by an insertion-ordered dict so membership tests and removals
    stay O(1) at any queue size; ``pending`` materializes the ordered view.
    """

    _pending: dict[str, None] = field(default_factory=dict)
    resolved: dict[str, int] = field(default_factory=dict)

    @property
    def pending(self) -> list[str]:
        return list(self._pending)

    def enqueue(self, sample_id: str) -> None:
        self._pending[sample_id] = None

    def is_pending(self, sample_id: str) -> bool:
        return sample_id in self._pending

    def pending_slice(self, offset: int, limit: int) -> list[str]:
        out = []
        for i, sid in enumerate(self._pending):
            if i >= offset + limit:
                break
            if i >= offset:
                out.append(sid)
        return out

    @property
    def n_pending(self) -> int:
        return len(self._pending)

    def is_drained(self) -> bool:
        return not self._pending


@dataclass
class AnnotationRun:
    """The evolving (and eventually complete) labeling of one dataset."""

    policy: ConsensusPolicy
    annotator_ids: list[str]
    k: int
    order: list[str]  # dataset order of all sample ids
    predictions: dict[str, dict[str, int]]
    records: dict[str, HclRecord] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.order)

    def is_complete(self) -> bool:
        return len(self.records) == self.n

    def counts(self) -> dict[str, int]:
        s0 = sum(1 for r in self.records.values() if r.s == 0)
        return {"s0": s0, "s1": len(self.records) - s0, "total": self.n}

    def consistency_rate(self) -> float:
        c = self.counts()
        return c["s0"] / c["total"]


def build_queue(
    dataset: Dataset, annotations: AnnotationSet, policy: ConsensusPolicy
) -> tuple[AnnotationRun, CorrectionQueue]:
    """Split a dataset into immediate consensus records and a correction queue."""
    if len(annotations.annotator_ids) != policy.n_annotators:
        raise AnnotationError(
            f"policy {policy.mode!r} needs {policy.n_annotators} annotators, "
            f"got {len(annotations.annotator_ids)}"
        )
    annotations.validate(dataset)
    run = AnnotationRun(
        policy=policy,
        annotator_ids=list(annotations.annotator_ids),
        k=dataset.k,
        order=list(dataset.ids),
        predictions={sid: dict(annotations.predictions[sid]) for sid in dataset.ids},
    )
    queue = CorrectionQueue()
    for sid in dataset.ids:
        s, label = detect_consensus(annotations.labels_for(sid), policy)
        if s == 0:
            run.records[sid] = HclRecord(sid, int(label), 0, "consensus")
        else:
            queue.enqueue(sid)
    return run, queue


def apply_correction(
    run: AnnotationRun,
    queue: CorrectionQueue,
    sample_id: str,
    label: int,
    provenance: str = "human",
) -> HclRecord:
    """Resolve one queued sample with a corrected label.

    Idempotent: resubmitting the same (id, label) is a no-op success.
    Resubmitting a different label for an already-resolved id is a conflict.
    """
    label = int(label)
    if not 0 <= label < run.k:
        raise AnnotationError(f"label {label} outside [0, {run.k})")
    if sample_id in queue.resolved:
        if queue.resolved[sample_id] == label:
            return run.records[sample_id]
        raise CorrectionConflictError(
            f"sample {sample_id!r} already corrected to {queue.resolved[sample_id]}, "
            f"refusing {label}"
        )
    if not queue.is_pending(sample_id):
        raise UnknownSampleError(f"sample {sample_id!r} is not awaiting correction")
    record = HclRecord(sample_id, label, 1, provenance)
    run.records[sample_id] = record
    del queue._pending[sample_id]
    queue.resolved[sample_id] = label
    return record


@dataclass(frozen=True)
class AnnotationStats:
    """Label-quality summary of a complete run against ground truth."""

    n: int
    consistency_rate: float
    ccp: float  # accuracy of consensus labels among s=0 samples
    final_accuracy: float  # accuracy of all resolved labels
    per_annotator_accuracy: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "consistency_rate": self.consistency_rate,
            "ccp": self.ccp,
            "final_accuracy": self.final_accuracy,
            "per_annotator_accuracy": dict(self.per_annotator_accuracy),
        }


def corrected_accuracy_identity(consistency_rate: float, ccp: float) -> float:
    """Final label accuracy with a perfect corrector: c * ccp + (1 - c).

    Consensus samples are right with probability ccp; every discrepancy
    sample is fixed exactly.
    """
    return consistency_rate * ccp + (1.0 - consistency_rate)


def annotation_stats(run: AnnotationRun, ground_truth: dict[str, int]) -> AnnotationStats:
    """Consistency rate, consensus precision, and final accuracy of a run."""
    if not run.is_complete():
        raise AnnotationError(
            f"run incomplete: {run.n - len(run.records)} of {run.n} samples unresolved"
        )
    missing = [sid for sid in run.order if sid not in ground_truth]
    if missing:
        raise AnnotationError(f"ground truth missing for {len(missing)} samples, e.g. {missing[0]!r}")
    n = run.n
    n_s0 = 0
    n_s0_correct = 0
    n_correct = 0
    agree: dict[str, int] = {a: 0 for a in run.annotator_ids}
    for sid in run.order:
        rec = run.records[sid]
        gt = int(ground_truth[sid])
        if rec.label == gt:
            n_correct += 1
        if rec.s == 0:
            n_s0 += 1
            if rec.label == gt:
                n_s0_correct += 1
        for a in run.annotator_ids:
            if run.predictions[sid][a] == gt:
                agree[a] += 1
    return AnnotationStats(
        n=n,
        consistency_rate=n_s0 / n,
        ccp=(n_s0_correct / n_s0) if n_s0 else float("nan"),
        final_accuracy=n_correct / n,
        per_annotator_accuracy={a: agree[a] / n for a in run.annotator_ids},
    )


BASELINE_KINDS = ("FSL", "HL", "VL", "ONLY")


@dataclass(frozen=True)
class LabeledView:
    """A training view: feature rows paired with the labels a baseline trains on."""

    name: str
    ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)


def baseline_view(
    run: AnnotationRun,
    dataset: Dataset,
    kind: str,
    annotator_id: str | None = None,
) -> LabeledView:
    """Build the (sample, label) pairs a comparison baseline trains on.

    FSL: every sample with its ground-truth label.  HL: only discrepancy
    (s=1) samples with their corrected labels.  VL: only consensus (s=0)
    samples with their consensus labels.  ONLY: every sample with one
    annotator's raw predictions, ignoring consistency.
    """
    if kind not in BASELINE_KINDS:
        raise AnnotationError(f"unknown baseline kind {kind!r}")
    if not run.is_complete() and kind in ("HL", "VL"):
        raise AnnotationError("run must be complete to build HL/VL views")
    if kind == "FSL":
        if not dataset.has_full_ground_truth():
            raise AnnotationError("FSL view requires ground truth for every sample")
        ids = list(dataset.ids)
        y = dataset.y.copy()
        name = "FSL"
    elif kind == "ONLY":
        if annotator_id is None or annotator_id not in run.annotator_ids:
            raise AnnotationError(f"ONLY view needs one of {run.annotator_ids}")
        ids = list(dataset.ids)
        y = np.array([run.predictions[sid][annotator_id] for sid in ids], dtype=np.int64)
        name = f"ONLY({annotator_id})"
    else:
        want = 1 if kind == "HL" else 0
        ids = [sid for sid in run.order if run.records[sid].s == want]
        y = np.array([run.records[sid].label for sid in ids], dtype=np.int64)
        name = kind
    rows = [dataset.position(sid) for sid in ids]
    return LabeledView(name=name, ids=tuple(ids), X=dataset.X[rows], y=y)


def hcl_arrays(
    run: AnnotationRun, dataset: Dataset
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a complete run into trainer inputs (X, labels, s flags)."""
    if not run.is_complete():
        raise AnnotationError("run must be complete to assemble training arrays")
    rows = [dataset.position(sid) for sid in run.order]
    y = np.array([run.records[sid].label for sid in run.order], dtype=np.int64)
    s = np.array([run.records[sid].s for sid in run.order], dtype=np.int64)
    return dataset.X[rows], y, s


def class_space_of(run: AnnotationRun, names: list[str]) -> ClassSpace:
    cs = ClassSpace(names)
    if cs.k != run.k:
        raise AnnotationError(f"class space has {cs.k} names but run has k={run.k}")
    return cs
