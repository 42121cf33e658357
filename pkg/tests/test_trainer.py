import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.linear_model import LogisticRegression

from hclpipe.annotation import baseline_view, hcl_arrays
from hclpipe.domain import LinearModel
from hclpipe.estimator import loss_rows
from hclpipe.optim import AdamW
from hclpipe.simulator import AnnotatorModel, annotate, uniform_noise_confusion
from hclpipe.trainer import (
    HclLinearClassifier,
    TrainConfig,
    evaluate,
    lambda_sweep,
    train_baseline,
    train_hcl,
)


class TestTrainConfig:
    def test_defaults_match_training_protocol(self):
        cfg = TrainConfig()
        assert cfg.epochs == 30
        assert cfg.batch_size == 64
        assert cfg.learning_rate == 5e-4
        assert cfg.weight_decay == 1e-4
        assert cfg.lr_decay_factor == 0.1
        assert cfg.lr_decay_every == 5
        assert cfg.seed == 42
        assert cfg.lam == 1.0
        assert cfg.tau == 100.0

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lr_decay_factor=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lam=1.2)
        with pytest.raises(ValueError):
            TrainConfig(risk_weighting="bogus")

    def test_dict_round_trip_uses_lambda_alias(self):
        cfg = TrainConfig(lam=0.25)
        d = cfg.as_dict()
        assert d["lambda"] == 0.25 and "lam" not in d
        assert TrainConfig.from_dict(d) == cfg


def _toy_supervised(n=400, k=3, d=6, seed=0, spread=4.0):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(k, d)) * spread
    y = rng.integers(0, k, size=n)
    X = means[y] + rng.normal(size=(n, d))
    return X, y, means


class TestHclLinearClassifier:
    def test_sklearn_protocol(self):
        clf = HclLinearClassifier(epochs=2, lam=0.5)
        params = clf.get_params()
        assert params["lam"] == 0.5
        cloned = clone(clf)
        assert cloned.get_params() == params
        clf.set_params(lam=0.75)
        assert clf.lam == 0.75

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            HclLinearClassifier().predict(np.zeros((2, 3)))

    def test_supervised_fit_learns_separable_data(self):
        X, y, _ = _toy_supervised()
        clf = HclLinearClassifier(epochs=10, n_classes=3)
        clf.fit(X, y)
        assert clf.score(X, y) >= 0.95
        assert clf.coef_.shape == (3, 6)
        assert clf.predict(X[:5]).shape == (5,)
        proba = clf.predict_proba(X[:5])
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic_given_seed(self):
        X, y, _ = _toy_supervised()
        a = HclLinearClassifier(epochs=5, n_classes=3, seed=7).fit(X, y)
        b = HclLinearClassifier(epochs=5, n_classes=3, seed=7).fit(X, y)
        np.testing.assert_array_equal(a.coef_, b.coef_)
        np.testing.assert_array_equal(a.intercept_, b.intercept_)
        assert a.report_.metrics() == b.report_.metrics()

    def test_different_seed_changes_trajectory(self):
        X, y, _ = _toy_supervised()
        a = HclLinearClassifier(epochs=3, n_classes=3, seed=1).fit(X, y)
        b = HclLinearClassifier(epochs=3, n_classes=3, seed=2).fit(X, y)
        assert not np.array_equal(a.coef_, b.coef_)

    def test_consensus_rows_need_prototypes(self):
        X, y, _ = _toy_supervised(n=50)
        s = np.zeros(50, dtype=int)
        with pytest.raises(ValueError, match="prototypes"):
            HclLinearClassifier(epochs=1, n_classes=3).fit(X, y, s=s)

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError):
            HclLinearClassifier(epochs=1).fit(np.zeros((0, 3)), np.zeros(0, dtype=int))

    def test_uniform_init_differs_from_zeros(self):
        X, y, _ = _toy_supervised(n=100)
        a = HclLinearClassifier(epochs=1, n_classes=3, init="uniform", init_scale=0.05).fit(X, y)
        b = HclLinearClassifier(epochs=1, n_classes=3).fit(X, y)
        assert not np.array_equal(a.coef_, b.coef_)


class TestEvaluate:
    def test_perfect_model(self):
        X = np.eye(4)
        y = np.arange(4)
        model = LinearModel(np.eye(4) * 10.0, np.zeros(4))
        assert evaluate(model, X, y) == 1.0

    def test_zero_model_predicts_lowest_index(self):
        # all logits tie at 0, argmax resolves to class 0: accuracy equals
        # the class-0 prevalence
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 3))
        y = rng.integers(0, 3, size=40)
        model = LinearModel.zeros(3, 3)
        assert evaluate(model, X, y) == pytest.approx(np.mean(y == 0))

    def test_matches_manual_recount(self):
        rng = np.random.default_rng(3)
        model = LinearModel(rng.normal(size=(4, 5)), rng.normal(size=4))
        X = rng.normal(size=(10, 5))
        y = rng.integers(0, 4, size=10)
        hits = 0
        for i in range(10):
            scores = [model.W[c] @ X[i] + model.b[c] for c in range(4)]
            best = max(range(4), key=lambda c: (scores[c], -c))
            hits += int(best == y[i])
        assert evaluate(model, X, y) == hits / 10

    def test_requires_ground_truth(self):
        model = LinearModel.zeros(3, 2)
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((2, 2)), np.array([0, -1]))
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestSingleBatchStep:
    def test_small_step_never_increases_batch_objective(self):
        rng = np.random.default_rng(4)
        failures = 0
        for _ in range(100):
            k, d, nb = int(rng.integers(3, 8)), int(rng.integers(2, 10)), 16
            W = rng.normal(size=(k, d))
            b = rng.normal(size=k)
            Xb = rng.normal(size=(nb, d))
            yb = rng.integers(0, k, size=nb)
            T = 2.0 * np.eye(k)[yb] - 1.0

            def objective():
                return float(np.mean(loss_rows(Xb @ W.T + b, yb)))

            before = objective()
            F = Xb @ W.T + b
            G = (2.0 / k) * (F - T) / nb
            opt = AdamW([W, b], lr=1e-4, weight_decay=0.0)
            opt.step([G.T @ Xb, G.sum(axis=0)])
            failures += int(objective() > before)
        assert failures == 0


class TestTrainHcl:
    def test_reaches_high_accuracy_with_oracle_corrections(self, default_world, default_run):
        train, test, prototypes = default_world
        cfg = TrainConfig(epochs=8)
        model, report = train_hcl(train, default_run, prototypes, cfg, eval_set=(test.X, test.y))
        assert report.final_test_accuracy >= 0.95
        assert len(report.epochs) == 8
        # independent separability oracle: a convex fit on the true labels
        # confirms a high-accuracy linear solution exists
        oracle = LogisticRegression(max_iter=500).fit(train.X, train.y)
        assert oracle.score(test.X, test.y) >= 0.95

    def test_same_seed_reports_identical(self, default_world, default_run):
        train, test, prototypes = default_world
        cfg = TrainConfig(epochs=3)
        m1, r1 = train_hcl(train, default_run, prototypes, cfg, eval_set=(test.X, test.y))
        m2, r2 = train_hcl(train, default_run, prototypes, cfg, eval_set=(test.X, test.y))
        np.testing.assert_array_equal(m1.W, m2.W)
        np.testing.assert_array_equal(m1.b, m2.b)
        assert r1.metrics() == r2.metrics()

    def test_report_echoes_config(self, default_world, default_run):
        train, test, prototypes = default_world
        cfg = TrainConfig(epochs=2, lam=0.5)
        _, report = train_hcl(train, default_run, prototypes, cfg)
        assert report.config["lambda"] == 0.5
        assert report.config["n_train"] == train.n


class TestTrainBaseline:
    def test_fsl_on_separable_data(self, default_world, default_run):
        train, test, _ = default_world
        view = baseline_view(default_run, train, "FSL")
        _, report = train_baseline(view, TrainConfig(epochs=8), train.k, eval_set=(test.X, test.y))
        assert report.final_test_accuracy >= 0.97

    def test_noisy_annotator_underperforms_fsl(self):
        rng = np.random.default_rng(5)
        k, d, n = 5, 12, 1200
        means = rng.normal(size=(k, d)) * 2.2
        y = rng.integers(0, k, size=n)
        X = means[y] + rng.normal(size=(n, d))
        y_test = rng.integers(0, k, size=600)
        X_test = means[y_test] + rng.normal(size=(600, d))
        cfg = TrainConfig(epochs=10)

        clean = HclLinearClassifier.from_config(cfg, n_classes=k).fit(
            X, y, eval_set=(X_test, y_test)
        )
        from hclpipe.domain import ClassSpace, Dataset, Sample

        ds = Dataset(
            [Sample(f"s{i}", X[i], int(y[i])) for i in range(n)],
            ClassSpace([f"c{i}" for i in range(k)]),
        )
        noisy_model = AnnotatorModel("half", uniform_noise_confusion(k, 0.5), seed=9)
        preds = annotate(ds.samples, noisy_model)
        y_noisy = np.array([preds[f"s{i}"] for i in range(n)])
        noisy = HclLinearClassifier.from_config(cfg, n_classes=k).fit(
            X, y_noisy, eval_set=(X_test, y_test)
        )
        assert noisy.report_.final_test_accuracy < clean.report_.final_test_accuracy

    def test_hl_view_trains_on_exactly_its_rows(self, default_world, default_run):
        train, _, _ = default_world
        view = baseline_view(default_run, train, "HL")
        _, report = train_baseline(view, TrainConfig(epochs=1), train.k)
        assert report.config["n_train"] == view.n
        assert view.n == sum(1 for r in default_run.records.values() if r.s == 1)

    def test_empty_view_rejected(self, default_world, default_run):
        train, _, _ = default_world
        view = baseline_view(default_run, train, "HL")
        empty = type(view)(name="HL", ids=(), X=np.zeros((0, train.d)), y=np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            train_baseline(empty, TrainConfig(epochs=1), train.k)


class TestLambdaSweep:
    def test_rows_and_individual_reproducibility(self, default_world, default_run):
        train, test, prototypes = default_world
        cfg = TrainConfig(epochs=2)
        rows = lambda_sweep(
            train, default_run, prototypes, cfg, [0.0, 0.5, 1.0], eval_set=(test.X, test.y)
        )
        assert [r["lambda"] for r in rows] == [0.0, 0.5, 1.0]
        again = lambda_sweep(
            train, default_run, prototypes, cfg, [0.5], eval_set=(test.X, test.y)
        )
        assert again[0] == rows[1]

    def test_single_point_equals_plain_run(self, default_world, default_run):
        train, test, prototypes = default_world
        cfg = TrainConfig(epochs=2)
        rows = lambda_sweep(train, default_run, prototypes, cfg, [1.0], eval_set=(test.X, test.y))
        _, report = train_hcl(train, default_run, prototypes, cfg, eval_set=(test.X, test.y))
        assert rows[0]["final_test_accuracy"] == report.final_test_accuracy

    def test_grid_validation(self, default_world, default_run):
        train, _, prototypes = default_world
        with pytest.raises(ValueError):
            lambda_sweep(train, default_run, prototypes, TrainConfig(epochs=1), [])
        with pytest.raises(ValueError):
            lambda_sweep(train, default_run, prototypes, TrainConfig(epochs=1), [1.5])


class TestHclArrays:
    def test_partition_matches_records(self, default_world, default_run):
        train, _, _ = default_world
        X, y, s = hcl_arrays(default_run, train)
        assert X.shape == (train.n, train.d)
        counts = default_run.counts()
        assert int((s == 0).sum()) == counts["s0"]
        assert int((s == 1).sum()) == counts["s1"]
