"""Loss, conditional label-distribution estimation, and the corrected-label risk.

The training objective treats the two halves of an annotated dataset
differently: samples whose annotators disagreed carry a trusted corrected
label and contribute an ordinary supervised term, while samples whose
annotators agreed contribute an expectation of the loss under an estimated
conditional label distribution (a convex blend of prototype-similarity
probabilities and the model's own softmax).

The module also houses exhaustive-enumeration oracles over tiny discrete
joint distributions.  These compute the ordinary classification risk and
its corrected-label rewriting by brute force, so tests can check that the
two agree to floating-point precision on randomized inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .domain import LinearModel, logits_batch


class EmptyPartitionWarning(UserWarning):
    """One side of the consistent/inconsistent split was empty; its term was dropped."""


RISK_WEIGHTINGS = ("partition-means", "prior-weighted")


@dataclass(frozen=True)
class BlendConfig:
    """Mixing weight and softmax temperature for the label-distribution estimate.

    ``lam`` weights the prototype-similarity distribution; ``1 - lam``
    weights the model's own softmax.  ``tau`` scales cosine similarities
    before the softmax (default 100 gives confident but stable estimates).
    """

    lam: float = 1.0
    tau: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def target_vector(k: int, i: int) -> np.ndarray:
    """The +/-1 regression target for class i: +1 at i, -1 elsewhere."""
    if not 0 <= i < k:
        raise ValueError(f"target class {i} outside [0, {k})")
    t = -np.ones(k)
    t[i] = 1.0
    return t


def loss(f: np.ndarray, i: int) -> float:
    """Squared-error loss against the +/-1 target for class i.

    (1/k) * sum_j (1 - f_j * t_j)^2 with t the target vector: penalizes
    under-activation of the target class and over-activation of the rest.
    """
    f = np.asarray(f, dtype=np.float64)
    t = target_vector(f.shape[0], i)
    return float(np.mean((1.0 - f * t) ** 2))


def loss_grad(f: np.ndarray, i: int) -> np.ndarray:
    """Gradient of ``loss`` in f: (2/k) * (f - t), using t_j^2 = 1."""
    f = np.asarray(f, dtype=np.float64)
    t = target_vector(f.shape[0], i)
    return (2.0 / f.shape[0]) * (f - t)


def loss_rows(F: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row supervised loss for a logit matrix F (n, k) and labels y (n,)."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    base = np.sum((1.0 + F) ** 2, axis=1)
    picked = F[np.arange(F.shape[0]), y]
    return (base - 4.0 * picked) / F.shape[1]


def soft_loss_rows(F: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Per-row expected loss sum_i P_i * loss(f, i).

    Expanding the squares collapses the double sum to
    (1/k) * [sum_j (1 + f_j)^2 - 4 * <P, f>], valid because each row of P
    sums to one.
    """
    F = np.asarray(F, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    base = np.sum((1.0 + F) ** 2, axis=1)
    return (base - 4.0 * np.sum(P * F, axis=1)) / F.shape[1]


# ---------------------------------------------------------------------------
# conditional label-distribution estimation
# ---------------------------------------------------------------------------


def check_prob_vector(p: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector: nonnegative entries summing to 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("probability vector must be 1-D")
    if np.any(p < 0):
        raise ValueError("probability vector has a negative entry")
    if abs(float(p.sum()) - 1.0) > atol:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return p


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def p_model(f: np.ndarray) -> np.ndarray:
    """Model-based label distribution: softmax of the classifier logits."""
    return softmax(np.asarray(f, dtype=np.float64), axis=-1)


def check_prototypes(Q: np.ndarray) -> np.ndarray:
    """Validate a prototype bank: one nonzero d-vector per class."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2:
        raise ValueError("prototype bank must be a (k, d) matrix")
    norms = np.linalg.norm(Q, axis=1)
    if np.any(norms == 0):
        raise ValueError("prototype bank contains a zero row")
    return Q


def cosine_similarities(X: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of X against every prototype row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Q = check_prototypes(Q)
    xn = np.linalg.norm(X, axis=1)
    if np.any(xn == 0):
        raise ValueError("cosine similarity undefined for a zero feature vector")
    qn = np.linalg.norm(Q, axis=1)
    return (X / xn[:, None]) @ (Q / qn[:, None]).T


def p_similarity(x: np.ndarray, Q: np.ndarray, tau: float = 100.0) -> np.ndarray:
    """Prototype-similarity label distribution.

    Softmax over temperature-scaled cosine similarities between the feature
    vector and each class prototype.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sims = cosine_similarities(np.asarray(x, dtype=np.float64), Q)
    out = softmax(tau * sims, axis=-1)
    return out[0] if np.asarray(x).ndim == 1 else out


def blend(p_sim: np.ndarray, p_mod: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * p_sim + (1 - lam) * p_mod.

    Endpoints are exact: lam=1 returns p_sim unchanged, lam=0 returns p_mod.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    p_sim = np.asarray(p_sim, dtype=np.float64)
    p_mod = np.asarray(p_mod, dtype=np.float64)
    if p_sim.shape != p_mod.shape:
        raise ValueError("blend inputs must have the same shape")
    if lam == 1.0:
        return p_sim.copy()
    if lam == 0.0:
        return p_mod.copy()
    return lam * p_sim + (1.0 - lam) * p_mod


def estimate_p_hat(
    F: np.ndarray, X: np.ndarray, prototypes: np.ndarray, cfg: BlendConfig
) -> np.ndarray:
    """Row-wise estimated conditional label distribution for consistent samples.

    Treated as a constant by the trainer: gradients never flow through it.
    """
    if cfg.lam == 1.0:
        return softmax(cfg.tau * cosine_similarities(X, prototypes), axis=-1)
    pm = softmax(np.asarray(F, dtype=np.float64), axis=-1)
    if cfg.lam == 0.0:
        return pm
    ps = softmax(cfg.tau * cosine_similarities(X, prototypes), axis=-1)
    return cfg.lam * ps + (1.0 - cfg.lam) * pm


# ---------------------------------------------------------------------------
# empirical corrected-label risk
# ---------------------------------------------------------------------------


def empirical_hcl_risk(
    model: LinearModel,
    X_h: np.ndarray,
    y_h: np.ndarray,
    X_v: np.ndarray,
    prototypes: np.ndarray | None = None,
    cfg: BlendConfig | None = None,
    *,
    p_hat: np.ndarray | None = None,
    risk_weighting: str = "partition-means",
) -> float:
    """Empirical risk over the corrected (X_h, y_h) and consistent (X_v) splits.

    The corrected split contributes its mean supervised loss; the consistent
    split contributes the mean expected loss under the estimated label
    distribution (``p_hat`` if given, else the blend of prototype-similarity
    and model softmax).  With ``risk_weighting="partition-means"`` each split is
    averaged by its own size and the two means added; ``"prior-weighted"``
    divides both sums by the combined size, which weights each split by its
    empirical prior.  An empty split drops its term with a warning; both
    empty is an error.
    """
    if risk_weighting not in RISK_WEIGHTINGS:
        raise ValueError(f"unknown risk_weighting {risk_weighting!r}")
    X_h = np.asarray(X_h, dtype=np.float64).reshape(-1, model.d) if np.size(X_h) else np.zeros((0, model.d))
    X_v = np.asarray(X_v, dtype=np.float64).reshape(-1, model.d) if np.size(X_v) else np.zeros((0, model.d))
    n_h, n_v = X_h.shape[0], X_v.shape[0]
    if n_h == 0 and n_v == 0:
        raise ValueError("both partitions are empty")
    if n_h == 0:
        warnings.warn("corrected partition is empty; dropping its term", EmptyPartitionWarning)
    if n_v == 0:
        warnings.warn("consistent partition is empty; dropping its term", EmptyPartitionWarning)

    sum_h = 0.0
    if n_h:
        F_h = logits_batch(model, X_h)
        sum_h = float(np.sum(loss_rows(F_h, np.asarray(y_h, dtype=np.int64))))
    sum_v = 0.0
    if n_v:
        F_v = logits_batch(model, X_v)
        if p_hat is None:
            if prototypes is None:
                raise ValueError("need prototypes (or explicit p_hat) for the consistent split")
            p_hat = estimate_p_hat(F_v, X_v, prototypes, cfg or BlendConfig())
        p_hat = np.asarray(p_hat, dtype=np.float64)
        if p_hat.shape != (n_v, model.k):
            raise ValueError(f"p_hat shape {p_hat.shape} does not match ({n_v}, {model.k})")
        sum_v = float(np.sum(soft_loss_rows(F_v, p_hat)))

    if risk_weighting == "prior-weighted":
        return (sum_h + sum_v) / (n_h + n_v)
    total = 0.0
    if n_h:
        total += sum_h / n_h
    if n_v:
        total += sum_v / n_v
    return total


# ---------------------------------------------------------------------------
# exhaustive-enumeration oracles on tiny discrete joints
# ---------------------------------------------------------------------------

MAX_ORACLE_POINTS = 6


@dataclass(frozen=True)
class DiscreteJoint:
    """A fully-enumerated joint P(x, y, Y, s) over a finite input set.

    ``points`` holds the feature vectors of the finite inputs, row-aligned
    with axis 0 of ``table`` (shape (n_x, k, k, 2): axes are input, true
    label y, recorded label Y, consistency flag s).  The trusted-correction
    constraint requires P(y=i, Y=j, s=1 | x) = 0 whenever j != i: whenever
    a correction happened, the recorded label is the true one.
    """

    points: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        tbl = np.asarray(self.table, dtype=np.float64)
        if pts.ndim != 2 or tbl.ndim != 4:
            raise ValueError("points must be (n_x, d) and table (n_x, k, k, 2)")
        n_x, k, k2, two = tbl.shape
        if pts.shape[0] != n_x or k != k2 or two != 2:
            raise ValueError(f"bad table shape {tbl.shape} for {pts.shape[0]} points")
        if n_x > MAX_ORACLE_POINTS:
            raise ValueError(f"oracle joints support at most {MAX_ORACLE_POINTS} points")
        if np.any(tbl < 0):
            raise ValueError("joint table has a negative entry")
        if abs(float(tbl.sum()) - 1.0) > 1e-12:
            raise ValueError(f"joint table sums to {tbl.sum()!r}, not 1")
        off = ~np.eye(k, dtype=bool)
        if np.any(tbl[:, :, :, 1][:, off] > 0):
            raise ValueError("trusted-correction constraint violated: P(y=i, Y=j!=i, s=1) > 0")
        pts.setflags(write=False)
        tbl.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "table", tbl)

    @property
    def n_x(self) -> int:
        return self.table.shape[0]

    @property
    def k(self) -> int:
        return self.table.shape[1]

    def p_x(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2, 3))


def random_joint(
    rng: np.random.Generator, n_x: int, k: int, d: int = 3, s1_scale: float = 1.0
) -> DiscreteJoint:
    """Sample a random constraint-satisfying joint.

    Draws a positive table, zeroes the forbidden cells (s=1 with recorded
    label different from the true one), and renormalizes.  ``s1_scale``
    scales the mass initially placed on s=1 cells (0 removes them).
    """
    pts = rng.normal(size=(n_x, d))
    tbl = rng.uniform(0.05, 1.0, size=(n_x, k, k, 2))
    tbl[:, :, :, 1] *= s1_scale
    off = ~np.eye(k, dtype=bool)
    tbl[:, :, :, 1][:, off] = 0.0
    tbl /= tbl.sum()
    return DiscreteJoint(pts, tbl)


def oracle_decomposition(joint: DiscreteJoint) -> float:
    """Max discrepancy of the total-probability decomposition, by enumeration.

    For every input x and class i, compares P(y=i | x) against
    P(Y=i, s=1 | x) + sum_m P(y=i | Y=m, s=0, x) * P(Y=m, s=0 | x), with
    zero-probability conditionals contributing zero.  Under the
    trusted-correction constraint the two sides agree exactly.
    """
    worst = 0.0
    p_x = joint.p_x()
    for xi in range(joint.n_x):
        if p_x[xi] == 0.0:
            continue
        cond = joint.table[xi] / p_x[xi]  # (k, k, 2): P(y, Y, s | x)
        for i in range(joint.k):
            lhs = float(cond[i, :, :].sum())
            rhs = float(cond[:, i, 1].sum())  # P(Y=i, s=1 | x)
            for m in range(joint.k):
                p_Ym_s0 = float(cond[:, m, 0].sum())
                if p_Ym_s0 > 0.0:
                    p_y_given = float(cond[i, m, 0]) / p_Ym_s0
                    rhs += p_y_given * p_Ym_s0
            worst = max(worst, abs(lhs - rhs))
    return worst


def oracle_risk_rewrite(
    joint: DiscreteJoint, model: LinearModel
) -> tuple[float, float, float]:
    """Ordinary risk vs. its corrected-label rewriting, both by enumeration.

    Returns (R, R_rewritten, |difference|).  R integrates the supervised
    loss against P(x, y); the rewriting takes the supervised loss on the
    (x, Y, s=1) measure plus the expected loss under P(y | Y, s=0, x) on the
    (x, Y, s=0) measure.  The trusted-correction constraint makes the two
    equal; the returned gap measures only floating-point error.
    """
    F = logits_batch(model, joint.points)  # (n_x, k)
    k = joint.k
    L = (np.sum((1.0 + F) ** 2, axis=1, keepdims=True) - 4.0 * F) / k  # L[x, i]

    p_xy = joint.table.sum(axis=(2, 3))  # P(x, y=i)
    risk_ordinary = float(np.sum(p_xy * L))

    p_xY_s1 = joint.table[:, :, :, 1].sum(axis=1)  # P(x, Y=m, s=1)
    term_s1 = float(np.sum(p_xY_s1 * L))

    p_xY_s0 = joint.table[:, :, :, 0].sum(axis=1)  # P(x, Y=m, s=0)
    term_s0 = 0.0
    for xi in range(joint.n_x):
        for m in range(k):
            mass = p_xY_s0[xi, m]
            if mass == 0.0:
                continue
            cond_y = joint.table[xi, :, m, 0] / mass  # P(y=i | Y=m, s=0, x)
            term_s0 += mass * float(cond_y @ L[xi])

    risk_rewritten = term_s1 + term_s0
    return risk_ordinary, risk_rewritten, abs(risk_ordinary - risk_rewritten)
