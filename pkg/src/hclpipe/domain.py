"""Core data types shared by every stage of the pipeline.

All containers here are value objects: once constructed they are never
mutated, so they can be shared freely across threads.  Heavy numeric state
(feature matrices, weight matrices) lives in plain float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("consensus", "human", "oracle")


class DomainError(ValueError):
    """Raised when a domain invariant is violated at construction time."""


@dataclass(frozen=True)
class ClassSpace:
    """The label space: k dense integer ids [0, k) with a sidecar name table."""

    names: tuple[str, ...]

    def __init__(self, names):
        object.__setattr__(self, "names", tuple(str(n) for n in names))
        if self.k <= 2:
            raise DomainError(f"need more than 2 classes, got {self.k}")
        if any(not n for n in self.names):
            raise DomainError("class names must be non-empty")
        if len(set(self.names)) != self.k:
            raise DomainError("class names must be unique")

    @property
    def k(self) -> int:
        return len(self.names)

    def contains(self, label: int) -> bool:
        return 0 <= int(label) < self.k


@dataclass(frozen=True)
class Sample:
    """One data point: frozen feature vector plus optional ground truth.

    ``meta`` may carry display hints for the correction UI (image URLs,
    captions); nothing in the core ever interprets it.
    """

    id: str
    features: np.ndarray
    ground_truth: int | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise DomainError(f"sample {self.id!r}: features must be 1-D")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)


class Dataset:
    """An ordered collection of samples over one class space.

    Caches the stacked feature matrix and the ground-truth vector; missing
    ground truth is encoded as -1 in ``y`` and reported via ``gt_mask``.
    """

    def __init__(self, samples: list[Sample], class_space: ClassSpace):
        if not samples:
            raise DomainError("dataset must contain at least one sample")
        self.samples = list(samples)
        self.class_space = class_space
        self.ids = [s.id for s in self.samples]
        if len(set(self.ids)) != len(self.ids):
            raise DomainError("sample ids must be unique")
        self._index = {sid: i for i, sid in enumerate(self.ids)}
        self.X = np.stack([s.features for s in self.samples]).astype(np.float64)
        self.X.setflags(write=False)
        self.y = np.array(
            [-1 if s.ground_truth is None else int(s.ground_truth) for s in self.samples],
            dtype=np.int64,
        )
        self.y.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.class_space.k

    @property
    def gt_mask(self) -> np.ndarray:
        return self.y >= 0

    def has_full_ground_truth(self) -> bool:
        return bool(np.all(self.gt_mask))

    def position(self, sample_id: str) -> int:
        return self._index[sample_id]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, sample_id: str) -> Sample:
        return self.samples[self._index[sample_id]]


@dataclass(frozen=True)
class HclRecord:
    """Resolved supervision for one sample.

    ``s`` is the consistency flag: 0 when the annotators agreed (label is
    their consensus), 1 when they disagreed (label came from a corrector).
    """

    sample_id: str
    label: int
    s: int
    provenance: str

    def __post_init__(self):
        if self.s not in (0, 1):
            raise DomainError(f"consistency flag must be 0 or 1, got {self.s}")
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")
        if self.s == 0 and self.provenance != "consensus":
            raise DomainError("s=0 records must have consensus provenance")
        if self.s == 1 and self.provenance == "consensus":
            raise DomainError("s=1 records cannot have consensus provenance")
        if self.label < 0:
            raise DomainError("label must be a nonnegative class id")


@dataclass(frozen=True)
class LinearModel:
    """A linear classifier over frozen features: logits(x) = W @ x + b."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
            raise DomainError(f"bad parameter shapes W{W.shape}, b{b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise DomainError("model parameters must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, k: int, d: int) -> "LinearModel":
        return cls(np.zeros((k, d)), np.zeros(k))


def logits(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Score vector W @ x + b for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.d:
        raise DomainError(f"feature dimension {x.shape} does not match model d={model.d}")
    return model.W @ x + model.b


def logits_batch(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Score matrix (n, k) for a stacked feature matrix (n, d)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DomainError(f"feature matrix {X.shape} does not match model d={model.d}")
    return X @ model.W.T + model.b


def validate_dataset(samples: list[Sample], class_space: ClassSpace) -> list[str]:
    """Report-style validation: returns violations, empty list means valid.

    Checks a shared feature dimension, finite features, and ground-truth
    labels inside [0, k).
    """
    violations: list[str] = []
    if not samples:
        violations.append("dataset is empty")
        return violations
    d = samples[0].features.shape[0]
    for s in samples:
        if s.features.shape[0] != d:
            violations.append(
                f"sample {s.id!r}: feature dimension {s.features.shape[0]} != {d}"
            )
        if not np.all(np.isfinite(s.features)):
            violations.append(f"sample {s.id!r}: non-finite feature entry")
        if s.ground_truth is not None and not class_space.contains(s.ground_truth):
            violations.append(
                f"sample {s.id!r}: label {s.ground_truth} outside [0, {class_space.k})"
            )
    seen: set[str] = set()
    for s in samples:
        if s.id in seen:
            violations.append(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
    return violations
