import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mijoint.errors import DataError, TrainingError
from mijoint.svm import fit_scaler, primal_objective, svm_predict, train_svm


def subgradient_oracle(z, y, C, iters=12000):
    """Plain subgradient descent on the primal hinge objective; best iterate wins."""
    n, d = z.shape
    w, b = np.zeros(d), 0.0
    best = (np.inf, w, b)
    base = 5.0 / (1.0 + C * n)
    for t in range(1, iters + 1):
        m = y * (z @ w + b)
        act = m < 1
        obj = 0.5 * w @ w + C * np.sum(1 - m[act])
        if obj < best[0]:
            best = (obj, w.copy(), b)
        step = base / np.sqrt(t)
        w = w - step * (w - C * (y[act, None] * z[act]).sum(axis=0))
        b = b + step * C * y[act].sum()
    return best


def random_problem(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(20, 201))
    y = np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
    shift = rng.standard_normal(3) * rng.uniform(0.2, 1.5)
    x = rng.standard_normal((n, 3)) * rng.uniform(0.5, 3.0, size=3) + y[:, None] * shift
    return x, y


class TestSymmetricPair:
    x = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    y = np.array([-1.0, 1.0])

    def test_boundary_at_zero(self):
        m = train_svm(self.x, self.y)
        labels, _ = svm_predict(m, [[0.5, 0, 0], [-0.5, 0, 0]])
        assert labels.tolist() == [1, -1]

    def test_tie_goes_positive(self):
        labels, dec = svm_predict(train_svm(self.x, self.y), [0.0, 0.0, 0.0])
        assert dec[0] == pytest.approx(0.0, abs=1e-12)
        assert labels[0] == 1

    def test_opposite_decisions(self):
        _, dec = svm_predict(train_svm(self.x, self.y), self.x)
        assert dec[0] == pytest.approx(-dec[1], abs=1e-6)


class TestOracle:
    @pytest.mark.parametrize("seed", range(6))
    def test_objective_matches_subgradient(self, seed):
        x, y = random_problem(seed)
        m = train_svm(x, y)
        z = m.transform(x)
        oracle_obj, _, _ = subgradient_oracle(z, y, 1.0)
        ours = primal_objective(m.weights, m.bias, z, y, 1.0)
        assert ours <= oracle_obj * (1 + 1e-3)
        assert ours == pytest.approx(oracle_obj, rel=1e-3)

    @pytest.mark.parametrize("seed", range(3))
    def test_labels_match_oracle_model(self, seed):
        x, y = random_problem(seed)
        m = train_svm(x, y)
        _, w, b = subgradient_oracle(m.transform(x), y, 1.0)
        probe = np.random.default_rng(50 + seed).standard_normal((20, 3)) * x.std(axis=0) + x.mean(axis=0)
        labels, dec = svm_predict(m, probe)
        oracle_labels = np.where(m.transform(probe) @ w + b >= 0, 1, -1)
        sure = np.abs(dec) > 1e-3
        np.testing.assert_array_equal(labels[sure], oracle_labels[sure])

    def test_scaler_matches_numpy(self):
        x, y = random_problem(0)
        mean, scale = fit_scaler(x)
        np.testing.assert_allclose((x - mean) / scale, (x - x.mean(0)) / x.std(0), atol=1e-12)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_dual_feasible(self, seed):
        x, y = random_problem(seed, n=60)
        m = train_svm(x, y, C=0.7)
        assert np.all(m.dual_coef >= 0) and np.all(m.dual_coef <= 0.7)
        assert abs(np.sum(m.dual_coef * y)) < 1e-9

    def test_duplication_with_half_c(self):
        x, y = random_problem(3, n=80)
        a = train_svm(x, y, C=1.0, tol=1e-10)
        b = train_svm(np.concatenate([x, x]), np.concatenate([y, y]), C=0.5, tol=1e-10)
        probe = np.random.default_rng(0).standard_normal((30, 3))
        np.testing.assert_allclose(a.decision_function(probe), b.decision_function(probe), atol=1e-6)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
    def test_affine_invariance(self, seed, scale, shift):
        x, y = random_problem(seed, n=50)
        probe = np.random.default_rng(seed + 1).standard_normal((25, 3)) * x.std(0) + x.mean(0)
        a = train_svm(x, y)
        b = train_svm(x * scale + shift, y)
        la, da = svm_predict(a, probe)
        lb, _ = svm_predict(b, probe * scale + shift)
        sure = np.abs(da) > 1e-6
        np.testing.assert_array_equal(la[sure], lb[sure])

    def test_separable_set_fits_perfectly(self):
        rng = np.random.default_rng(4)
        y = np.repeat([-1.0, 1.0], 30)
        x = rng.standard_normal((60, 3)) * 0.1 + y[:, None] * [3.0, 0.0, 0.0]
        m = train_svm(x, y)
        labels, _ = svm_predict(m, x)
        assert np.array_equal(labels, y)
        margins = y * m.decision_function(x)
        assert np.all(margins >= 1 - 1e-3)

    def test_converges_within_budget(self):
        x, y = random_problem(5, n=200)
        assert train_svm(x, y).converged


class TestErrors:
    def test_single_class(self):
        with pytest.raises(TrainingError):
            train_svm(np.ones((4, 3)), np.ones(4))

    def test_non_finite(self):
        x = np.zeros((4, 3))
        x[0, 0] = np.nan
        with pytest.raises(DataError):
            train_svm(x, np.array([-1.0, 1, -1, 1]))

    def test_bad_labels(self):
        with pytest.raises(DataError):
            train_svm(np.zeros((4, 3)), np.array([0, 1, 0, 1]))

    def test_misaligned(self):
        with pytest.raises(DataError):
            train_svm(np.zeros((4, 3)), np.array([-1.0, 1.0]))
