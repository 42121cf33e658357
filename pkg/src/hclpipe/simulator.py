"""Synthetic desk-scale worlds for exercising the pipeline end to end.

Generates class-conditional Gaussian features with well-separated means,
confusion-matrix annotators (optionally correlated through a shared error
component), and correction oracles.  All per-sample randomness is keyed by
(seed, sample id) through a counter-based hash, so draws are order
independent and changing one component's seed never perturbs another's
output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .annotation import AnnotationSet
from .domain import ClassSpace, Dataset, Sample

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SimulationError(ValueError):
    pass


class CalibrationError(SimulationError):
    """No correlated-annotator parameters can hit the requested targets."""


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _hash_ids(sample_ids) -> np.ndarray:
    out = np.empty(len(sample_ids), dtype=np.uint64)
    for i, sid in enumerate(sample_ids):
        digest = hashlib.sha256(str(sid).encode("utf-8")).digest()
        out[i] = np.uint64(int.from_bytes(digest[:8], "little"))
    return out


def keyed_uniforms(seed: int, sample_ids, n_draws: int) -> np.ndarray:
    """(len(ids), n_draws) uniforms in [0, 1), keyed by (seed, sample id).

    Counter-based: independent of call order and safe to regenerate for any
    subset of ids.
    """
    ids64 = _hash_ids(sample_ids)
    seed64 = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        base = _splitmix64(ids64 ^ seed64)
        out = np.empty((len(sample_ids), n_draws), dtype=np.float64)
        for j in range(n_draws):
            words = _splitmix64(base + np.uint64(j + 1) * _GOLDEN)
            out[:, j] = (words >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return out


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """Class-conditional Gaussian worlds.

    Each class is a two-mode cluster: mean +/- ``bimodal_offset`` along a
    class-specific direction, plus isotropic noise.  The modes keep classes
    linearly separable while making the class mean an imperfect summary of
    the class geometry, the way a text embedding is an imperfect summary of
    an image cluster.
    """

    k: int = 10
    d: int = 32
    n_train: int = 5000
    n_test: int = 1000
    separation: float = 5.0
    sigma: float = 1.0
    bimodal_offset: float = 3.5
    seed: int = 42
    prototype_mode: str = "class-means"  # or "random"

    def __post_init__(self):
        if self.k <= 2:
            raise SimulationError(f"need more than 2 classes, got {self.k}")
        if self.n_train < 1 or self.n_test < 1:
            raise SimulationError("n_train and n_test must be at least 1")
        if not self.separation > 0 or not self.sigma > 0:
            raise SimulationError("separation and sigma must be positive")
        if self.bimodal_offset < 0:
            raise SimulationError("bimodal_offset must be nonnegative")
        if self.prototype_mode not in ("class-means", "random"):
            raise SimulationError(f"unknown prototype_mode {self.prototype_mode!r}")


def _draw_means(rng: np.random.Generator, k: int, d: int, separation: float) -> np.ndarray:
    for _ in range(200):
        M = rng.normal(size=(k, d))
        diffs = M[:, None, :] - M[None, :, :]
        dists = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= separation:
            return M
    raise SimulationError(
        f"could not place {k} class means at pairwise distance >= {separation} in d={d}"
    )


def generate_dataset(config: GeneratorConfig) -> tuple[Dataset, Dataset, np.ndarray]:
    """Synthesize (train, test, prototypes).

    Class means are standard-normal draws rejected until every pair is at
    least ``separation`` apart; features are mean + isotropic noise.  The
    prototype bank defaults to the true class means, standing in for
    per-class reference embeddings; ``prototype_mode="random"`` replaces it
    with uninformative noise for ablations.
    """
    ss = np.random.SeedSequence(config.seed)
    s_means, s_train, s_test, s_proto = ss.spawn(4)
    rng_means = np.random.default_rng(s_means)
    means = _draw_means(rng_means, config.k, config.d, config.separation)
    modes = rng_means.normal(size=(config.k, config.d))
    modes /= np.linalg.norm(modes, axis=1, keepdims=True)

    class_space = ClassSpace([f"class-{i:02d}" for i in range(config.k)])

    def make_split(seq, n: int, prefix: str) -> Dataset:
        rng = np.random.default_rng(seq)
        y = rng.integers(0, config.k, size=n)
        sign = rng.integers(0, 2, size=n) * 2 - 1
        X = (
            means[y]
            + config.bimodal_offset * sign[:, None] * modes[y]
            + rng.normal(0.0, config.sigma, size=(n, config.d))
        )
        samples = [
            Sample(id=f"{prefix}-{i:05d}", features=X[i], ground_truth=int(y[i]))
            for i in range(n)
        ]
        return Dataset(samples, class_space)

    train = make_split(s_train, config.n_train, "train")
    test = make_split(s_test, config.n_test, "test")
    if config.prototype_mode == "random":
        prototypes = np.random.default_rng(s_proto).normal(size=(config.k, config.d))
    else:
        prototypes = means.copy()
    return train, test, prototypes


# ---------------------------------------------------------------------------
# annotators
# ---------------------------------------------------------------------------


def identity_confusion(k: int) -> np.ndarray:
    return np.eye(k)


def uniform_noise_confusion(k: int, accuracy: float) -> np.ndarray:
    """Diagonal ``accuracy``, remaining mass spread evenly over wrong labels."""
    if not 0 <= accuracy <= 1:
        raise SimulationError(f"accuracy must lie in [0, 1], got {accuracy}")
    C = np.full((k, k), (1.0 - accuracy) / (k - 1))
    np.fill_diagonal(C, accuracy)
    return C


@dataclass(frozen=True)
class AnnotatorModel:
    """A labeler drawing predictions from a per-true-class confusion row."""

    id: str
    confusion: np.ndarray
    seed: int = 0

    def __post_init__(self):
        C = np.asarray(self.confusion, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise SimulationError("confusion matrix must be square")
        if np.any(C < 0):
            raise SimulationError("confusion matrix has a negative entry")
        if np.max(np.abs(C.sum(axis=1) - 1.0)) > 1e-9:
            raise SimulationError("confusion matrix rows must sum to 1")
        C.setflags(write=False)
        object.__setattr__(self, "confusion", C)

    @property
    def k(self) -> int:
        return self.confusion.shape[0]

    def predict(self, sample_ids, y: np.ndarray) -> np.ndarray:
        """Vectorized draws from confusion rows, keyed by (seed, sample id)."""
        y = np.asarray(y, dtype=np.int64)
        u = keyed_uniforms(self.seed, sample_ids, 1)[:, 0]
        cum = np.cumsum(self.confusion, axis=1)[y]
        preds = (u[:, None] >= cum).sum(axis=1)
        return np.minimum(preds, self.k - 1).astype(np.int64)


def _wrong_label(y: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """Uniform draw over the k-1 labels different from y, from one uniform."""
    w = np.floor(u * (k - 1)).astype(np.int64)
    w = np.minimum(w, k - 2)
    return w + (w >= y)


def annotate(samples: list[Sample], annotator: AnnotatorModel) -> dict[str, int]:
    """Predictions for samples with ground truth; deterministic per (seed, id)."""
    ids = [s.id for s in samples]
    gts = [s.ground_truth for s in samples]
    if any(g is None for g in gts):
        raise SimulationError("annotate requires ground truth on every sample")
    preds = annotator.predict(ids, np.asarray(gts, dtype=np.int64))
    return {sid: int(p) for sid, p in zip(ids, preds)}


@dataclass(frozen=True)
class CorrelatedAnnotatorPair:
    """Two annotators coupled through a shared error component.

    Per sample: with probability ``rho_correct`` both output the true label;
    with ``rho_wrong`` both output the same uniformly-drawn wrong label;
    otherwise each draws independently (true label with its own ``acc``,
    else a uniform wrong label).  Independent confusion-matrix annotators
    cannot reach high consensus precision at moderate consistency rates, so
    the shared component is the knob calibration searches over.

    All four probabilities accept either a scalar or a length-k vector:
    per-class values model datasets where some classes are unambiguous
    (annotators nearly always agree on them) and others contested.
    """

    id_a: str
    id_b: str
    k: int
    rho_correct: np.ndarray
    rho_wrong: np.ndarray
    acc_a: np.ndarray
    acc_b: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_correct", "rho_wrong", "acc_a", "acc_b"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (self.k,)).copy()
            if np.any(v < 0) or np.any(v > 1):
                raise SimulationError(f"{name} must lie in [0, 1]")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if np.any(self.rho_correct + self.rho_wrong > 1 + 1e-12):
            raise SimulationError("rho_correct + rho_wrong exceeds 1")

    @property
    def annotator_ids(self) -> list[str]:
        return [self.id_a, self.id_b]

    def predict_pair(self, sample_ids, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=np.int64)
        u = keyed_uniforms(self.seed, sample_ids, 4)
        u_branch, u_shared, u_a, u_b = u.T
        shared_wrong = _wrong_label(y, u_shared, self.k)
        rc = self.rho_correct[y]
        rw = self.rho_wrong[y]

        def independent(u_i: np.ndarray, acc_all: np.ndarray) -> np.ndarray:
            acc = acc_all[y]
            hit = u_i < acc
            # conditional remainder of u_i is uniform on [0, 1) again
            denom = np.where(acc < 1.0, 1.0 - acc, 1.0)
            rescaled = np.clip((u_i - acc) / denom, 0.0, 1.0 - 1e-12)
            return np.where(hit, y, _wrong_label(y, rescaled, self.k))

        both_correct = u_branch < rc
        both_wrong = (~both_correct) & (u_branch < rc + rw)
        pred_a = np.where(both_correct, y, np.where(both_wrong, shared_wrong, independent(u_a, self.acc_a)))
        pred_b = np.where(both_correct, y, np.where(both_wrong, shared_wrong, independent(u_b, self.acc_b)))
        return pred_a.astype(np.int64), pred_b.astype(np.int64)

    def marginal(self, annotator_id: str) -> AnnotatorModel:
        """The single-annotator confusion matrix implied by the pair."""
        acc = {self.id_a: self.acc_a, self.id_b: self.acc_b}[annotator_id]
        r = 1.0 - self.rho_correct - self.rho_wrong
        diag = self.rho_correct + r * acc
        C = np.empty((self.k, self.k))
        for c in range(self.k):
            C[c, :] = (1.0 - diag[c]) / (self.k - 1)
            C[c, c] = diag[c]
        return AnnotatorModel(id=annotator_id, confusion=C, seed=self.seed)


def annotation_set_from_pair(pair: CorrelatedAnnotatorPair, samples: list[Sample]) -> AnnotationSet:
    ids = [s.id for s in samples]
    y = np.asarray([s.ground_truth for s in samples], dtype=np.int64)
    pred_a, pred_b = pair.predict_pair(ids, y)
    return AnnotationSet(
        annotator_ids=[pair.id_a, pair.id_b],
        predictions={
            sid: {pair.id_a: int(a), pair.id_b: int(b)}
            for sid, a, b in zip(ids, pred_a, pred_b)
        },
    )


def annotation_set_from_models(models: list[AnnotatorModel], samples: list[Sample]) -> AnnotationSet:
    ids = [s.id for s in samples]
    preds = {sid: {} for sid in ids}
    for m in models:
        got = annotate(samples, m)
        for sid in ids:
            preds[sid][m.id] = got[sid]
    return AnnotationSet(annotator_ids=[m.id for m in models], predictions=preds)


# ---------------------------------------------------------------------------
# correctors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrectorModel:
    """Simulated corrector: true label with probability 1 - error_rate.

    ``error_rate=0`` is the trusted-correction assumption the estimator's
    guarantees rest on; positive rates exist for robustness experiments.
    """

    error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.error_rate < 1:
            raise SimulationError(f"error_rate must lie in [0, 1), got {self.error_rate}")

    def correct_many(self, sample_ids, y: np.ndarray, k: int) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        u = keyed_uniforms(self.seed, sample_ids, 2)
        err = u[:, 0] < self.error_rate
        return np.where(err, _wrong_label(y, u[:, 1], k), y).astype(np.int64)

    def correct(self, sample: Sample, k: int) -> int:
        if sample.ground_truth is None:
            raise SimulationError(f"sample {sample.id!r} has no ground truth to correct from")
        return int(self.correct_many([sample.id], np.array([sample.ground_truth]), k)[0])


# ---------------------------------------------------------------------------
# calibration against observed annotation profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairProfile:
    consistency_rate: float
    ccp: float
    final_accuracy: float  # with a perfect corrector
    acc_a: float
    acc_b: float


def simulate_pair_profile(
    pair: CorrelatedAnnotatorPair, n: int, seed: int = 123
) -> PairProfile:
    """Empirical (consistency, consensus precision, corrected accuracy) at size n."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9]))
    y = rng.integers(0, pair.k, size=n)
    ids = [f"cal-{i:06d}" for i in range(n)]
    pred_a, pred_b = pair.predict_pair(ids, y)
    consistent = pred_a == pred_b
    n_c = int(consistent.sum())
    ccp = float(np.mean(pred_a[consistent] == y[consistent])) if n_c else float("nan")
    final = 1.0 - float(np.mean(consistent & (pred_a != y)))
    return PairProfile(
        consistency_rate=n_c / n,
        ccp=ccp,
        final_accuracy=final,
        acc_a=float(np.mean(pred_a == y)),
        acc_b=float(np.mean(pred_b == y)),
    )


def _pair_params_for(c_target: float, ccp_target: float, k: int):
    """Closed-form (rho_correct, rho_wrong, acc) candidates over an acc grid.

    In the independent branch two annotators of accuracy a agree with
    probability g = a^2 + (1-a)^2 / (k-1), and agree-and-correct with a^2.
    Matching the target consistency and consensus precision fixes the branch
    weights:  r = (1 - c) / (1 - g),  rho_correct = ccp * c - r * a^2,
    rho_wrong = 1 - r - rho_correct.  Feasible when all three lie in [0, 1].
    """
    candidates = []
    for a in np.linspace(0.01, 0.99, 197):
        g = a * a + (1 - a) ** 2 / (k - 1)
        if g >= 1.0:
            continue
        r = (1.0 - c_target) / (1.0 - g)
        if r > 1.0 + 1e-12:
            continue
        u = ccp_target * c_target - r * a * a
        v = 1.0 - r - u
        if u < -1e-12 or v < -1e-12:
            continue
        candidates.append((min(u, v), float(a), max(u, 0.0), max(v, 0.0)))
    return candidates


def _solve_group(c: float, ccp: float, k: int) -> tuple[float, float, float]:
    candidates = _pair_params_for(c, ccp, k)
    if not candidates:
        raise CalibrationError(f"targets (c={c:.4f}, ccp={ccp:.4f}) infeasible for k={k}")
    _, acc, rho_c, rho_w = max(candidates)
    return rho_c, rho_w, acc


def calibrate_to_table1(
    c_target: float,
    ccp_target: float,
    k: int,
    *,
    annotator_ids: tuple[str, str] = ("ann-a", "ann-b"),
    seed: int = 0,
    n_check: int = 50000,
    tol: float = 0.01,
    easy_class_fraction: float = 0.0,
    easy_consistency: float = 0.93,
    easy_ccp: float = 0.995,
) -> CorrelatedAnnotatorPair:
    """Build an annotator pair whose simulated profile matches the targets.

    Searches the shared-error/independent-noise parameterization in closed
    form, then verifies by simulation at ``n_check`` that both the
    consistency rate and the consensus precision land within ``tol``.

    With ``easy_class_fraction`` > 0 the first round(k * fraction) classes
    become near-unanimous (``easy_consistency`` / ``easy_ccp``) and the
    remaining classes absorb the rest of the disagreement budget so the
    overall profile still matches the targets.  Per-class consistency
    spread is what real annotator pairs exhibit; it also starves the
    corrected-only training view of easy classes.
    """
    if not 0 < c_target <= 1 or not 0 <= ccp_target <= 1:
        raise CalibrationError(f"targets out of range: c={c_target}, ccp={ccp_target}")
    if not 0 <= easy_class_fraction < 1:
        raise CalibrationError(f"easy_class_fraction must lie in [0, 1), got {easy_class_fraction}")

    n_easy = int(round(k * easy_class_fraction))
    if n_easy == 0:
        rho_c, rho_w, acc = _solve_group(c_target, ccp_target, k)
        params = (rho_c, rho_w, acc, acc)
    else:
        w_e = n_easy / k
        c_hard = (c_target - w_e * easy_consistency) / (1 - w_e)
        hit_hard = c_target * ccp_target - w_e * easy_consistency * easy_ccp
        if not 0 < c_hard <= 1 or hit_hard < 0:
            raise CalibrationError(
                f"easy-class split infeasible for targets (c={c_target}, ccp={ccp_target})"
            )
        ccp_hard = hit_hard / (1 - w_e) / c_hard
        if not 0 <= ccp_hard <= 1:
            raise CalibrationError(
                f"easy-class split implies ccp={ccp_hard:.4f} on contested classes"
            )
        e = _solve_group(easy_consistency, easy_ccp, k)
        h = _solve_group(c_hard, ccp_hard, k)
        easy_mask = np.arange(k) < n_easy
        params = tuple(
            np.where(easy_mask, e[i], h[i]) for i in (0, 1, 2)
        ) + (np.where(easy_mask, e[2], h[2]),)

    pair = CorrelatedAnnotatorPair(
        id_a=annotator_ids[0],
        id_b=annotator_ids[1],
        k=k,
        rho_correct=params[0],
        rho_wrong=params[1],
        acc_a=params[2],
        acc_b=params[3],
        seed=seed,
    )
    profile = simulate_pair_profile(pair, n_check, seed=seed)
    if abs(profile.consistency_rate - c_target) > tol or abs(profile.ccp - ccp_target) > tol:
        raise CalibrationError(
            f"calibration check failed: simulated (c={profile.consistency_rate:.4f}, "
            f"ccp={profile.ccp:.4f}) vs targets ({c_target}, {ccp_target})"
        )
    return pair


def dataset_with_labels_only(n: int, k: int, seed: int, prefix: str = "lbl") -> Dataset:
    """A featureless stand-in dataset (d=1) for annotation-only experiments."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1ab]))
    y = rng.integers(0, k, size=n)
    class_space = ClassSpace([f"class-{i:02d}" for i in range(k)])
    samples = [
        Sample(id=f"{prefix}-{i:06d}", features=np.ones(1), ground_truth=int(y[i]))
        for i in range(n)
    ]
    return Dataset(samples, class_space)
