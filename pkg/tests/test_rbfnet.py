import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusedfaces.errors import DimensionMismatch, InvalidConfig, SchemaViolation, SingularSystem, TooFewPoints
from fusedfaces.rbfnet import (
    RbfConfig,
    RbfModel,
    activation_matrix,
    activations,
    classify,
    classify_many,
    compute_widths,
    dumps_model,
    kmeans,
    kmeans_trace,
    load_model,
    loads_model,
    one_hot,
    ridge_gradient,
    ridge_loss,
    save_model,
    solve_output_weights,
    train_rbf,
)

from oracles import central_difference_gradient, exhaustive_kmeans_optimum, kernel_form_ridge


class TestKMeans:
    def test_k_equals_n(self, rng):
        pts = rng.standard_normal((7, 3))
        result = kmeans_trace(pts, 7, seed=1)
        assert result.distortion == 0.0
        np.testing.assert_array_equal(np.sort(result.centers, axis=0), np.sort(pts, axis=0))

    def test_identical_points(self):
        pts = np.tile([0.3, -1.2], (6, 1))
        result = kmeans_trace(pts, 3, seed=5)
        np.testing.assert_array_equal(result.centers, np.tile([0.3, -1.2], (3, 1)))
        assert result.iterations == 1
        assert result.distortion == 0.0

    def test_two_blobs(self):
        rng = np.random.default_rng(4)
        a = np.array([-10.0, -10.0]) + 0.1 * rng.uniform(-1, 1, (6, 2))
        b = np.array([10.0, 10.0]) + 0.1 * rng.uniform(-1, 1, (6, 2))
        pts = np.vstack([a, b])
        result = kmeans_trace(pts, 2, seed=0)
        centers = result.centers[np.argsort(result.centers[:, 0])]
        np.testing.assert_allclose(centers[0], a.mean(axis=0), atol=0.1)
        np.testing.assert_allclose(centers[1], b.mean(axis=0), atol=0.1)
        assert result.distortion == pytest.approx(exhaustive_kmeans_optimum(pts, 2), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_distortion_never_increases(self, seed, k):
        pts = np.random.default_rng(seed).standard_normal((15, 2))
        result = kmeans_trace(pts, k, seed=seed, restarts=3)
        for history in result.histories:
            assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(history, history[1:]))

    def test_empty_cluster_reseeded(self):
        # a far-away duplicate center collects nothing on the first pass
        pts = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
        result = kmeans_trace(pts, 3, seed=2)
        assert len(set(result.assignments.tolist())) == 3

    def test_seeded_determinism(self, rng):
        pts = rng.standard_normal((20, 3))
        a = kmeans(pts, 4, seed=11, restarts=3)
        b = kmeans(pts.copy(), 4, seed=11, restarts=3)
        assert a[0].tobytes() == b[0].tobytes()
        np.testing.assert_array_equal(a[1], b[1])

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans(np.zeros((2, 2)), 3)

    def test_mixed_dimensions(self):
        with pytest.raises(DimensionMismatch):
            kmeans([[0.0, 1.0], [1.0]], 1)


class TestWidths:
    def test_single_center(self):
        np.testing.assert_array_equal(compute_widths([[1.0, 2.0]]), [1.0])

    def test_two_centers(self):
        np.testing.assert_allclose(compute_widths([[0.0], [2.0]], "p_nearest", 1), [2.0, 2.0])

    def test_collinear(self):
        np.testing.assert_allclose(compute_widths([[0.0], [1.0], [3.0]], "p_nearest", 1), [1.0, 1.0, 2.0])

    def test_global_max(self):
        c = [[0.0], [1.0], [3.0]]
        np.testing.assert_allclose(compute_widths(c, "global_max"), [3 / math.sqrt(6)] * 3)

    def test_duplicates_fall_back(self):
        np.testing.assert_allclose(compute_widths([[0.0], [0.0], [4.0]], "p_nearest", 1), [4.0, 4.0, 4.0])
        np.testing.assert_array_equal(compute_widths([[1.0], [1.0]], "p_nearest", 1), [1.0, 1.0])


def _model(centers, widths, weights, labels=(1, 2), threshold=0.5):
    return RbfModel(np.asarray(centers, float), np.asarray(widths, float), np.asarray(weights, float),
                    labels, RbfConfig(reject_threshold=threshold))


class TestActivations:
    def test_at_center(self):
        m = _model([[1.0, 2.0]], [0.7], np.zeros((2, 2)))
        np.testing.assert_array_equal(activations(m, [1.0, 2.0]), [1.0, 1.0])

    def test_gaussian_value(self):
        sigma = 0.8
        m = _model([[0.0, 0.0]], [sigma], np.zeros((2, 2)))
        x = [sigma * math.sqrt(2), 0.0]
        assert activations(m, x)[0] == pytest.approx(math.exp(-1), rel=1e-12)
        assert math.exp(-1) == pytest.approx(0.367879, abs=1e-6)

    def test_far_tail(self):
        m = _model([[0.0]], [1.0], np.zeros((2, 2)))
        phi = activations(m, [100.0])
        assert phi[0] < 1e-300 and phi[1] == 1.0

    def test_dimension_mismatch(self):
        m = _model([[0.0]], [1.0], np.zeros((2, 2)))
        with pytest.raises(DimensionMismatch):
            activations(m, [0.0, 1.0])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    def test_range(self, x):
        centers = np.array([[0.0, 0.0, 0.0], [1.0, -1.0, 2.0]])
        phi = activation_matrix(centers, [1.0, 3.0], np.array([x]))[0]
        assert np.all(phi[:2] <= 1.0) and np.all(phi[:2] >= 0.0)
        assert phi[2] == 1.0


class TestTraining:
    def test_exact_interpolation(self, rng):
        x = rng.standard_normal((12, 4))
        labels = [1, 2, 3] * 4
        model = train_rbf(x, labels, RbfConfig(num_centers=12, ridge_lambda=0.0))
        phi = activation_matrix(model.centers, model.widths, x)
        y = one_hot(labels, [1, 2, 3])
        assert np.linalg.norm(phi @ model.weights - y, axis=1).max() < 1e-6
        assert [d.label for d in classify_many(model, x)] == labels

    def test_two_points_one_dimension(self):
        x = np.array([[-1.0], [1.0]])
        cfg = RbfConfig(num_centers=2, width_p=1)
        model = train_rbf(x, [7, 9], cfg)
        assert classify(model, [-1.0]).label == 7
        assert classify(model, [1.0]).label == 9
        # widths: each center sits 2 away from the other
        np.testing.assert_allclose(model.widths, [2.0, 2.0])
        e = math.exp(-0.5)
        order = np.argsort(model.centers[:, 0])
        phi = np.array([[1.0, e, 1.0], [e, 1.0, 1.0]])
        expected = kernel_form_ridge(phi, np.eye(2), 1e-6)
        got = model.weights[np.r_[order, 2]]
        np.testing.assert_allclose(got, expected, atol=1e-8)

    def test_conflicting_duplicates(self):
        x = np.array([[0.0], [0.0], [3.0], [-3.0]])
        labels = [1, 2, 1, 2]
        model = train_rbf(x, labels, RbfConfig(num_centers=3, width_p=1, ridge_lambda=1e-6))
        scores = classify(model, [0.0]).scores
        np.testing.assert_allclose(scores, [0.5, 0.5], atol=1e-3)

    def test_singular_without_ridge(self):
        x = np.array([[0.0], [0.0], [0.0], [1.0]])
        # three identical rows; with 2 centers + bias the 4x3 design has rank 2
        with pytest.raises(SingularSystem, match="ridge"):
            train_rbf(x, [1, 2, 1, 2], RbfConfig(num_centers=2, width_p=1, ridge_lambda=0.0))

    def test_ridge_optimality(self, rng):
        x = rng.standard_normal((25, 3))
        labels = rng.integers(1, 4, 25).tolist()
        model = train_rbf(x, labels, RbfConfig(num_centers=6, ridge_lambda=0.1))
        phi = activation_matrix(model.centers, model.widths, x)
        y = one_hot(labels, sorted(set(labels)))
        assert np.abs(ridge_gradient(phi, y, model.weights, 0.1)).max() < 1e-6
        np.testing.assert_allclose(model.weights, kernel_form_ridge(phi, y, 0.1), atol=1e-8)

    def test_gradient_matches_finite_differences(self, rng):
        phi = rng.random((8, 4))
        y = one_hot(rng.integers(0, 3, 8), [0, 1, 2])
        w = rng.standard_normal((4, 3))
        analytic = ridge_gradient(phi, y, w, 0.3)
        numeric = central_difference_gradient(lambda v: ridge_loss(phi, y, v, 0.3), w)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4)

    def test_permutation_invariance(self, rng):
        x = rng.standard_normal((30, 3)) + np.repeat(np.eye(3) * 4, 10, axis=0)
        labels = np.repeat([1, 2, 3], 10)
        perm = rng.permutation(30)
        cfg = RbfConfig(num_centers=6)
        a = train_rbf(x, labels, cfg)
        b = train_rbf(x[perm], labels[perm], cfg)
        probes = rng.standard_normal((20, 3)) * 3
        assert [d.label for d in classify_many(a, probes)] == [d.label for d in classify_many(b, probes)]

    def test_default_center_count(self, rng):
        x = rng.standard_normal((20, 2))
        model = train_rbf(x, [1, 2] * 10)
        assert len(model.centers) == 4

    @pytest.mark.parametrize("features, labels", [
        (np.zeros((0, 2)), []),
        (np.zeros((3, 2)), [1, 1, 1]),
        (np.zeros((2, 2)), [1, 2, 3]),
    ])
    def test_bad_inputs(self, features, labels):
        with pytest.raises((TooFewPoints, DimensionMismatch)):
            train_rbf(features, labels, RbfConfig(num_centers=1))

    def test_config_invariants(self):
        with pytest.raises(InvalidConfig):
            RbfConfig(num_centers=2, width_p=2)
        with pytest.raises(InvalidConfig):
            RbfConfig(ridge_lambda=-1)
        with pytest.raises(InvalidConfig):
            RbfConfig(width_mode="mean")
        RbfConfig(num_centers=1, width_p=3)  # P is ignored for a single unit


class TestClassify:
    def test_accepts_training_point(self, rng):
        x = rng.standard_normal((6, 2))
        model = train_rbf(x, [1, 1, 2, 2, 3, 3], RbfConfig(num_centers=6, ridge_lambda=0.0))
        d = classify(model, x[2])
        assert d.accepted and d.label == 2
        assert d.scores.max() == pytest.approx(1.0, abs=1e-6)

    def test_threshold_rejects_everything(self, rng):
        x = rng.standard_normal((6, 2))
        model = train_rbf(x, [1, 1, 2, 2, 3, 3], RbfConfig(num_centers=6, ridge_lambda=0.0,
                                                           reject_threshold=1.1))
        assert all(not d.accepted for d in classify_many(model, x))

    def test_threshold_above_one_rejects_overshooting_scores(self):
        model = _model([[0.0]], [1.0], np.array([[1.5, 0.0], [0.0, 0.0]]), labels=(1, 2), threshold=1.1)
        d = classify(model, [0.0])
        assert d.scores[0] > 1.1 and not d.accepted

    def test_tie_goes_to_lowest_label(self):
        weights = np.array([[0.0, 0.0, 0.0], [0.2, 0.8, 0.8]])
        model = _model([[0.0]], [1.0], weights, labels=(1, 2, 5))
        d = classify(model, [0.0])
        assert d.scores[1] == d.scores[2]
        assert d.label == 2


class TestSerialization:
    def test_round_trip_bytes(self, rng, tmp_path):
        x = rng.standard_normal((10, 3))
        model = train_rbf(x, [1, 2] * 5, RbfConfig(num_centers=4, kmeans_seed=2**62), fingerprint={"seed": 1})
        save_model(model, tmp_path / "a.json")
        again = load_model(tmp_path / "a.json")
        save_model(again, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert again.config == model.config
        np.testing.assert_array_equal(again.weights, model.weights)
        probe = rng.standard_normal(3)
        np.testing.assert_array_equal(classify(again, probe).scores, classify(model, probe).scores)

    def test_rejects_foreign_file(self):
        with pytest.raises(SchemaViolation):
            loads_model('{"format": "fusedfaces-eigenspace", "version": 1}')
        with pytest.raises(SchemaViolation):
            loads_model(dumps_model(_model([[0.0]], [1.0], np.zeros((2, 2)))).replace('"version":1', '"version":2'))


def test_exhaustive_oracle_hand_case():
    # {0, 1} vs {10}: distortion 0.25 + 0.25
    assert exhaustive_kmeans_optimum([[0.0], [1.0], [10.0]], 2) == pytest.approx(0.5)
    assert exhaustive_kmeans_optimum([[0.0], [2.0]], 1) == pytest.approx(2.0)


class TestTrainingProperties:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(6, 30), lam=st.floats(1e-4, 10.0))
    def test_ridge_gradient_vanishes(self, seed, n, lam):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 3))
        labels = [1, 2] + rng.integers(1, 4, n - 2).tolist()
        model = train_rbf(x, labels, RbfConfig(num_centers=4, ridge_lambda=lam))
        phi = activation_matrix(model.centers, model.widths, x)
        y = one_hot(labels, model.class_labels)
        assert np.abs(ridge_gradient(phi, y, model.weights, lam)).max() < 1e-6

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_decisions_ignore_sample_order(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((18, 2))
        labels = np.repeat([1, 2, 3], 6)
        perm = rng.permutation(18)
        cfg = RbfConfig(num_centers=5, kmeans_seed=int(rng.integers(1000)))
        a, b = train_rbf(x, labels, cfg), train_rbf(x[perm], labels[perm], cfg)
        probes = rng.standard_normal((10, 2)) * 2
        assert [d.label for d in classify_many(a, probes)] == [d.label for d in classify_many(b, probes)]
        assert dumps_model(a) == dumps_model(b)
