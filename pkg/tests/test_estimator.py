import numpy as np
import pytest

from hclpipe.domain import LinearModel
from hclpipe.estimator import (
    BlendConfig,
    DiscreteJoint,
    EmptyPartitionWarning,
    blend,
    check_prob_vector,
    empirical_hcl_risk,
    loss,
    loss_grad,
    loss_rows,
    oracle_decomposition,
    oracle_risk_rewrite,
    p_model,
    p_similarity,
    random_joint,
    soft_loss_rows,
    target_vector,
)


def reference_loss(f, i):
    """Independent oracle: the squared-target sum written out termwise."""
    k = len(f)
    total = 0.0
    for j in range(k):
        t = 1.0 if j == i else -1.0
        total += (1.0 - f[j] * t) ** 2
    return total / k


def fd_gradient(f, i, h=1e-5):
    """Central finite differences of the loss."""
    g = np.zeros_like(f)
    for j in range(len(f)):
        up, down = f.copy(), f.copy()
        up[j] += h
        down[j] -= h
        g[j] = (loss(up, i) - loss(down, i)) / (2 * h)
    return g


class TestLoss:
    def test_zero_at_exact_target(self):
        for k in (2, 5, 11):
            t = target_vector(k, k // 2)
            assert loss(t, k // 2) == 0.0

    def test_one_at_zero_logits(self):
        for k in (2, 7):
            assert loss(np.zeros(k), 0) == 1.0

    def test_hand_expanded_two_class(self):
        # ((1 - 0.5)^2 + (1 - 0.5)^2) / 2
        assert loss(np.array([0.5, -0.5]), 0) == pytest.approx(0.25, abs=1e-15)

    def test_matches_reference_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 12))
            f = rng.normal(size=k)
            i = int(rng.integers(k))
            assert loss(f, i) == pytest.approx(reference_loss(f, i), rel=1e-12)

    def test_nonnegative_and_zero_only_at_target(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            k = int(rng.integers(2, 9))
            f = rng.normal(size=k)
            i = int(rng.integers(k))
            value = loss(f, i)
            assert value >= 0.0
            if not np.array_equal(f, target_vector(k, i)):
                assert value > 0.0

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            loss(np.zeros(3), 3)
        with pytest.raises(ValueError):
            loss(np.zeros(3), -1)


class TestLossGrad:
    def test_zero_at_minimum(self):
        t = target_vector(4, 1)
        np.testing.assert_array_equal(loss_grad(t, 1), np.zeros(4))

    def test_direct_substitution(self):
        np.testing.assert_array_equal(loss_grad(np.zeros(2), 0), np.array([-1.0, 1.0]))

    @pytest.mark.parametrize("k", [2, 10, 100])
    def test_finite_difference_oracle(self, k):
        rng = np.random.default_rng(k)
        for _ in range(50):
            f = rng.normal(size=k)
            i = int(rng.integers(k))
            analytic = loss_grad(f, i)
            numeric = fd_gradient(f, i)
            rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
            assert rel < 1e-6


class TestLossRows:
    def test_consistent_with_scalar_loss(self):
        rng = np.random.default_rng(5)
        F = rng.normal(size=(20, 6))
        y = rng.integers(0, 6, size=20)
        rows = loss_rows(F, y)
        for i in range(20):
            assert rows[i] == pytest.approx(loss(F[i], int(y[i])), rel=1e-12)

    def test_soft_rows_reduce_to_hard_on_one_hot(self):
        rng = np.random.default_rng(6)
        F = rng.normal(size=(15, 4))
        y = rng.integers(0, 4, size=15)
        P = np.eye(4)[y]
        np.testing.assert_allclose(soft_loss_rows(F, P), loss_rows(F, y), rtol=1e-12)

    def test_soft_rows_match_explicit_mixture(self):
        rng = np.random.default_rng(7)
        F = rng.normal(size=(10, 5))
        P = rng.dirichlet(np.ones(5), size=10)
        expected = [
            sum(P[i, c] * loss(F[i], c) for c in range(5)) for i in range(10)
        ]
        np.testing.assert_allclose(soft_loss_rows(F, P), expected, rtol=1e-12)


class TestPModel:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(p_model(np.zeros(3)), np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_stable_under_large_logits(self):
        p = p_model(np.array([1000.0, 0.0]))
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-300)

    def test_direct_evaluation(self):
        f = np.array([1.0, 2.0, 3.0])
        e = np.exp(f)
        np.testing.assert_allclose(p_model(f), e / e.sum(), rtol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            p_model(np.array([np.nan, 0.0]))


class TestPSimilarity:
    def test_dominant_when_aligned(self):
        k, d = 5, 8
        Q = np.zeros((k, d))
        Q[0, 0] = 2.0
        for i in range(1, k):
            Q[i, i] = 1.0  # orthogonal to x
        x = np.array([3.0] + [0.0] * (d - 1))
        p = p_similarity(x, Q, tau=100.0)
        expected_top = np.exp(100.0) / (np.exp(100.0) + (k - 1))
        assert p[0] == pytest.approx(expected_top, rel=1e-12)

    def test_uniform_when_cosines_equal(self):
        Q = np.stack([np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([2.0, 0.0])])
        p = p_similarity(np.array([5.0, 0.0]), Q, tau=37.0)
        np.testing.assert_allclose(p, np.full(3, 1 / 3), atol=1e-15)

    def test_matches_hand_computed_cosines(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=8)
        Q = rng.normal(size=(4, 8))
        sims = np.array(
            [x @ q / (np.linalg.norm(x) * np.linalg.norm(q)) for q in Q]
        )
        z = 100.0 * sims
        expected = np.exp(z - z.max())
        expected /= expected.sum()
        np.testing.assert_allclose(p_similarity(x, Q, 100.0), expected, atol=1e-9, rtol=0)

    def test_zero_feature_vector_rejected(self):
        Q = np.eye(3)
        with pytest.raises(ValueError):
            p_similarity(np.zeros(3), Q, 100.0)

    def test_zero_prototype_row_rejected(self):
        Q = np.eye(3)
        Q[1] = 0.0
        with pytest.raises(ValueError):
            p_similarity(np.ones(3), Q, 100.0)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            p_similarity(np.ones(3), np.eye(3), 0.0)

    def test_argmax_invariant_across_temperatures(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            x = rng.normal(size=6)
            Q = rng.normal(size=(4, 6))
            tops = {int(np.argmax(p_similarity(x, Q, tau))) for tau in (1.0, 10.0, 100.0)}
            assert len(tops) == 1


class TestBlend:
    def test_endpoints_exact(self):
        p_sim = np.array([0.7, 0.2, 0.1])
        p_mod = np.array([0.1, 0.1, 0.8])
        np.testing.assert_array_equal(blend(p_sim, p_mod, 1.0), p_sim)
        np.testing.assert_array_equal(blend(p_sim, p_mod, 0.0), p_mod)

    def test_midpoint(self):
        out = blend(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        np.testing.assert_array_equal(out, np.array([0.5, 0.5]))

    def test_lambda_out_of_range(self):
        p = np.array([0.5, 0.5])
        for lam in (-0.1, 1.1):
            with pytest.raises(ValueError):
                blend(p, p, lam)

    def test_convex_envelope(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            k = int(rng.integers(3, 8))
            p_sim = rng.dirichlet(np.ones(k))
            p_mod = rng.dirichlet(np.ones(k))
            lam = float(rng.uniform())
            out = blend(p_sim, p_mod, lam)
            check_prob_vector(out)
            assert np.all(out >= np.minimum(p_sim, p_mod) - 1e-15)
            assert np.all(out <= np.maximum(p_sim, p_mod) + 1e-15)


class TestBlendConfig:
    def test_validation(self):
        BlendConfig(lam=0.0, tau=1.0)
        with pytest.raises(ValueError):
            BlendConfig(lam=1.5)
        with pytest.raises(ValueError):
            BlendConfig(tau=0.0)


def _model_with_logits(rows: np.ndarray) -> tuple[LinearModel, np.ndarray]:
    """A (model, X) pair where logits_batch(model, X) equals `rows` exactly:
    X is one-hot so each row of X picks one column of W."""
    n, k = rows.shape
    W = rows.T.copy()  # k x n
    X = np.eye(n)
    return LinearModel(W, np.zeros(k)), X


class TestEmpiricalRisk:
    def test_reduces_to_supervised_mean_when_consistent_empty(self):
        rows = np.array([[0.5, -0.5], [0.0, 0.0], [1.0, -1.0]])
        model, X = _model_with_logits(rows)
        y = np.array([0, 1, 0])
        with pytest.warns(EmptyPartitionWarning):
            value = empirical_hcl_risk(model, X, y, np.zeros((0, 3)))
        assert value == pytest.approx(np.mean([loss(rows[i], y[i]) for i in range(3)]), rel=1e-12)

    def test_one_hot_p_hat_collapses_to_supervised(self):
        rows = np.array([[0.2, -0.3], [0.9, 0.1], [-0.4, 0.4], [0.0, 1.0]])
        model, X = _model_with_logits(rows)
        y_h = np.array([0])
        consensus = np.array([1, 0, 1])
        p_hat = np.eye(2)[consensus]
        value = empirical_hcl_risk(model, X[:1], y_h, X[1:], p_hat=p_hat)
        expected = loss(rows[0], 0) + np.mean(
            [loss(rows[1 + i], consensus[i]) for i in range(3)]
        )
        assert value == pytest.approx(expected, rel=1e-12)

    def test_two_sample_hand_computation(self):
        # one corrected sample, one consensus sample, k=2, everything
        # hand-set; the expected number is the termwise sum
        rows = np.array([[0.5, -0.5], [0.25, 0.75]])
        model, X = _model_with_logits(rows)
        p_hat = np.array([[0.6, 0.4]])
        expected_h = reference_loss(rows[0], 1)
        expected_v = 0.6 * reference_loss(rows[1], 0) + 0.4 * reference_loss(rows[1], 1)
        value = empirical_hcl_risk(model, X[:1], np.array([1]), X[1:], p_hat=p_hat)
        assert value == pytest.approx(expected_h + expected_v, rel=1e-12)

    def test_both_partitions_empty_rejected(self):
        model = LinearModel.zeros(2, 3)
        with pytest.raises(ValueError):
            empirical_hcl_risk(model, np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros((0, 3)))

    def test_prior_weighted_variant(self):
        rows = np.array([[0.5, -0.5], [0.25, 0.75], [0.1, 0.2]])
        model, X = _model_with_logits(rows)
        p_hat = np.array([[0.6, 0.4], [0.5, 0.5]])
        y_h = np.array([1])
        split_means = empirical_hcl_risk(model, X[:1], y_h, X[1:], p_hat=p_hat)
        prior = empirical_hcl_risk(
            model, X[:1], y_h, X[1:], p_hat=p_hat, risk_weighting="prior-weighted"
        )
        sum_h = reference_loss(rows[0], 1)
        sum_v = 0.6 * reference_loss(rows[1], 0) + 0.4 * reference_loss(rows[1], 1)
        sum_v += 0.5 * reference_loss(rows[2], 0) + 0.5 * reference_loss(rows[2], 1)
        assert split_means == pytest.approx(sum_h / 1 + sum_v / 2, rel=1e-12)
        assert prior == pytest.approx((sum_h + sum_v) / 3, rel=1e-12)

    def test_blend_path_matches_explicit_p_hat(self):
        rng = np.random.default_rng(12)
        model = LinearModel(rng.normal(size=(3, 5)), rng.normal(size=3))
        X_v = rng.normal(size=(4, 5))
        Q = rng.normal(size=(3, 5))
        cfg = BlendConfig(lam=0.3, tau=50.0)
        F = X_v @ model.W.T + model.b
        p_hat = np.stack(
            [
                blend(p_similarity(X_v[i], Q, 50.0), p_model(F[i]), 0.3)
                for i in range(4)
            ]
        )
        with pytest.warns(EmptyPartitionWarning):
            via_blend = empirical_hcl_risk(
                model, np.zeros((0, 5)), np.zeros(0, dtype=int), X_v, prototypes=Q, cfg=cfg
            )
        with pytest.warns(EmptyPartitionWarning):
            via_p_hat = empirical_hcl_risk(
                model, np.zeros((0, 5)), np.zeros(0, dtype=int), X_v, p_hat=p_hat
            )
        assert via_blend == pytest.approx(via_p_hat, rel=1e-12)


class TestDiscreteJoint:
    def test_random_joint_is_valid(self):
        rng = np.random.default_rng(13)
        joint = random_joint(rng, n_x=3, k=4)
        assert joint.table.sum() == pytest.approx(1.0, abs=1e-12)
        off = ~np.eye(4, dtype=bool)
        assert np.all(joint.table[:, :, :, 1][:, off] == 0.0)

    def test_constraint_violation_rejected(self):
        rng = np.random.default_rng(14)
        table = rng.uniform(0.1, 1.0, size=(2, 3, 3, 2))
        table /= table.sum()  # forbidden cells left positive
        with pytest.raises(ValueError, match="trusted-correction"):
            DiscreteJoint(rng.normal(size=(2, 3)), table)

    def test_negative_or_unnormalized_rejected(self):
        rng = np.random.default_rng(15)
        joint = random_joint(rng, 2, 3)
        bad = joint.table.copy()
        bad[0, 0, 0, 0] = -0.1
        with pytest.raises(ValueError):
            DiscreteJoint(joint.points, bad)
        with pytest.raises(ValueError):
            DiscreteJoint(joint.points, joint.table * 2.0)

    def test_too_many_points_rejected(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ValueError):
            random_joint(rng, 7, 3)


class TestOracleDecomposition:
    def test_decomposition_exact_on_random_joints(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            joint = random_joint(rng, int(rng.integers(1, 4)), int(rng.integers(3, 5)))
            assert oracle_decomposition(joint) <= 1e-12

    def test_no_discrepancy_branch(self):
        # all mass on s=0: reduces to the law of total probability over the
        # recorded label
        rng = np.random.default_rng(18)
        joint = random_joint(rng, 3, 4, s1_scale=0.0)
        assert joint.table[:, :, :, 1].sum() == 0.0
        assert oracle_decomposition(joint) <= 1e-12


class TestOracleRiskRewrite:
    def test_rewriting_matches_on_random_joints(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            k = int(rng.integers(3, 6))
            joint = random_joint(rng, int(rng.integers(1, 5)), k)
            model = LinearModel(rng.normal(size=(k, 3)), rng.normal(size=k))
            _, _, gap = oracle_risk_rewrite(joint, model)
            assert gap <= 1e-10

    def test_all_discrepancy_reduces_to_supervised(self):
        # P(s=1)=1 everywhere: the rewriting is the plain supervised risk on
        # the recorded label, computed here independently
        rng = np.random.default_rng(20)
        k, n_x = 4, 3
        table = np.zeros((n_x, k, k, 2))
        diag = np.eye(k, dtype=bool)
        table[:, :, :, 1][:, diag] = rng.uniform(0.1, 1.0, size=(n_x, k))
        table /= table.sum()
        joint = DiscreteJoint(rng.normal(size=(n_x, 3)), table)
        model = LinearModel(rng.normal(size=(k, 3)), rng.normal(size=k))
        R, R_hcl, gap = oracle_risk_rewrite(joint, model)
        assert gap <= 1e-12
        supervised = 0.0
        for xi in range(n_x):
            f = model.W @ joint.points[xi] + model.b
            for m in range(k):
                supervised += table[xi, m, m, 1] * loss(f, m)
        assert R_hcl == pytest.approx(supervised, rel=1e-12)

    def test_one_hot_consistent_conditionals_reduce_to_supervised(self):
        # P(s=0)=1 and P(y | Y, s=0, x) one-hot at the recorded label
        rng = np.random.default_rng(21)
        k, n_x = 3, 2
        table = np.zeros((n_x, k, k, 2))
        diag = np.eye(k, dtype=bool)
        table[:, :, :, 0][:, diag] = rng.uniform(0.1, 1.0, size=(n_x, k))
        table /= table.sum()
        joint = DiscreteJoint(rng.normal(size=(n_x, 3)), table)
        model = LinearModel(rng.normal(size=(k, 3)), rng.normal(size=k))
        R, R_hcl, gap = oracle_risk_rewrite(joint, model)
        assert gap <= 1e-12
        supervised = 0.0
        for xi in range(n_x):
            f = model.W @ joint.points[xi] + model.b
            for m in range(k):
                supervised += table[xi, m, m, 0] * loss(f, m)
        assert R == pytest.approx(supervised, rel=1e-12)
