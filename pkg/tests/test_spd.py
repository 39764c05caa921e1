import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from catpose.errors import InvalidInputError
from catpose.spd import (
    LossTerms,
    LossWeights,
    assemble_depth,
    chamfer_distance,
    check_assign,
    estimate_size,
    loss_adv_discriminator,
    loss_adv_generator,
    loss_corr,
    loss_depth_l1,
    loss_entropy,
    loss_reg,
    spd_apply,
    total_loss,
)

CUBE_CORNERS = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])


def _row_stochastic(rng, n, m):
    w = rng.uniform(size=(n, m))
    return w / w.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Deformation and assignment
# --------------------------------------------------------------------------


class TestSpdApply:
    def test_identity_assignment(self, rng):
        prior = rng.uniform(-0.5, 0.5, size=(16, 3))
        out = spd_apply(prior, np.zeros_like(prior), np.eye(16))
        np.testing.assert_array_equal(out, prior)

    def test_constant_offset(self, rng):
        prior = rng.uniform(-0.5, 0.5, size=(16, 3))
        c = np.array([0.1, -0.2, 0.05])
        out = spd_apply(prior, np.tile(c, (16, 1)), np.eye(16))
        np.testing.assert_allclose(out, prior + c, atol=1e-15)

    def test_matches_matmul_oracle(self, rng):
        prior = rng.uniform(-0.5, 0.5, size=(20, 3))
        deform = rng.normal(0, 0.05, size=(20, 3))
        assign = _row_stochastic(rng, 30, 20)
        oracle = np.zeros((30, 3))
        for i in range(30):
            for j in range(20):
                oracle[i] += assign[i, j] * (prior[j] + deform[j])
        np.testing.assert_allclose(spd_apply(prior, deform, assign), oracle, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        prior = rng.uniform(size=(8, 3))
        with pytest.raises(InvalidInputError):
            spd_apply(prior, np.zeros((7, 3)), np.eye(8))
        with pytest.raises(InvalidInputError):
            spd_apply(prior, np.zeros((8, 3)), np.eye(7))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_m=st.integers(4, 8))
    def test_output_in_convex_hull(self, seed, n_m):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-0.5, 0.5, size=(n_m, 3)) + rng.normal(0, 0.05, size=(n_m, 3))
        out = spd_apply(pts, np.zeros_like(pts), _row_stochastic(rng, 5, n_m))
        for p in out:
            # feasibility of p = sum w_j x_j with w >= 0, sum w = 1
            a_eq = np.vstack([pts.T, np.ones(n_m)])
            res = linprog(np.zeros(n_m), A_eq=a_eq, b_eq=np.append(p, 1.0), bounds=(0, None))
            assert res.status == 0

    def test_check_assign(self):
        check_assign(np.full((3, 4), 0.25), n_prior=4)
        with pytest.raises(InvalidInputError):
            check_assign(np.full((3, 4), 0.3))
        with pytest.raises(InvalidInputError):
            check_assign(np.array([[1.5, -0.5]]))


class TestAssembleDepth:
    def test_flat_shape(self):
        np.testing.assert_array_equal(assemble_depth(np.zeros((4, 3)), 1.5), [1.5] * 4)

    def test_offsets(self):
        sp = np.array([[0, 0, -0.1], [0, 0, 0.0], [0, 0, 0.1]])
        np.testing.assert_allclose(assemble_depth(sp, 2.0), [1.9, 2.0, 2.1], atol=1e-15)

    def test_elementwise_oracle(self, rng):
        sp = rng.normal(size=(25, 3))
        zt = rng.uniform(0.5, 3)
        expected = [sp[i, 2] + zt for i in range(25)]
        np.testing.assert_array_equal(assemble_depth(sp, zt), expected)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(-5, 5))
    def test_commutes_with_shift(self, seed, c):
        rng = np.random.default_rng(seed)
        sp = rng.normal(size=(10, 3))
        zt = rng.uniform(0.5, 3)
        np.testing.assert_allclose(assemble_depth(sp, zt + c), assemble_depth(sp, zt) + c, atol=1e-12)


class TestEstimateSize:
    def test_unit_cube(self):
        np.testing.assert_array_equal(estimate_size(CUBE_CORNERS, np.zeros((8, 3))), [1, 1, 1])

    def test_doubled(self):
        np.testing.assert_array_equal(estimate_size(CUBE_CORNERS, CUBE_CORNERS), [2, 2, 2])

    def test_scan_oracle(self, rng):
        prior = rng.uniform(-0.5, 0.5, size=(40, 3))
        deform = rng.normal(0, 0.1, size=(40, 3))
        pts = prior + deform
        expected = [max(p[k] for p in pts) - min(p[k] for p in pts) for k in range(3)]
        np.testing.assert_allclose(estimate_size(prior, deform), expected, atol=1e-15)


# --------------------------------------------------------------------------
# Chamfer distance
# --------------------------------------------------------------------------


def _chamfer_oracle(a, b):
    def one_side(x, y):
        total = 0.0
        for p in x:
            total += min(float(np.sum((p - q) ** 2)) for q in y)
        return total / len(x)

    return one_side(a, b) + one_side(b, a)


class TestChamfer:
    def test_identical(self, rng):
        a = rng.normal(size=(10, 3))
        assert chamfer_distance(a, a) == 0.0

    def test_single_points(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
        assert chamfer_distance(a, b) == pytest.approx(_chamfer_oracle(a, b), abs=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            chamfer_distance(np.zeros((0, 3)), np.zeros((1, 3)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), m=st.integers(1, 20))
    def test_symmetric_and_non_negative(self, seed, n, m):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-12)
        assert chamfer_distance(a, b) >= 0
        assert chamfer_distance(np.vstack([a, a]), b) >= 0


# --------------------------------------------------------------------------
# Loss terms
# --------------------------------------------------------------------------


class TestDepthLoss:
    def test_zero(self):
        assert loss_depth_l1([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_symmetric_error(self):
        assert loss_depth_l1([1.1, 0.9], [1.0, 1.0]) == pytest.approx(0.1, abs=1e-15)

    def test_oracle(self, rng):
        a, b = rng.normal(size=30), rng.normal(size=30)
        assert loss_depth_l1(a, b) == pytest.approx(sum(abs(x - y) for x, y in zip(a, b)) / 30, rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            loss_depth_l1([1.0, 2.0], [1.0])


class TestAdversarial:
    def test_perfect_discriminator(self):
        assert loss_adv_discriminator(1.0, 0.0) == 0.0

    def test_half(self):
        assert loss_adv_discriminator(0.5, 0.5) == 0.5

    def test_discriminator_oracle(self, rng):
        real, fake = rng.normal(size=8), rng.normal(size=8)
        expected = sum((r - 1) ** 2 for r in real) / 8 + sum(f**2 for f in fake) / 8
        assert loss_adv_discriminator(real, fake) == pytest.approx(expected, rel=1e-14)

    def test_generator(self, rng):
        assert loss_adv_generator(1.0) == 0.0
        assert loss_adv_generator(0.0) == 1.0
        fake = rng.normal(size=8)
        assert loss_adv_generator(fake) == pytest.approx(sum((f - 1) ** 2 for f in fake) / 8, rel=1e-14)


class TestCorrespondence:
    def test_zero(self, rng):
        p = rng.normal(size=(5, 3))
        assert loss_corr(p, p) == 0.0

    def test_single_coordinate(self):
        assert loss_corr([[0.5, 0.0, 0.0]], [[0.0, 0.0, 0.0]]) == 0.125 / 3

    def test_oracle(self, rng):
        a, b = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        vals = []
        for d in (a - b).ravel():
            vals.append(0.5 * d * d if abs(d) < 1 else abs(d) - 0.5)
        assert loss_corr(a, b) == pytest.approx(sum(vals) / len(vals), rel=1e-13)


class TestEntropyAndReg:
    def test_one_hot(self):
        assert loss_entropy(np.eye(4)) == 0.0

    def test_uniform(self):
        assert loss_entropy(np.full((3, 4), 0.25)) == pytest.approx(np.log(4), abs=1e-15)

    def test_entropy_oracle(self, rng):
        m = _row_stochastic(rng, 6, 5)
        assert loss_entropy(m) == pytest.approx(-sum(np.log(max(row)) for row in m) / 6, rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 10))
    def test_entropy_bounds(self, seed, m):
        rng = np.random.default_rng(seed)
        w = _row_stochastic(rng, 4, m)
        assert 0.0 <= loss_entropy(w) <= np.log(m) + 1e-12

    def test_reg_zero(self):
        assert loss_reg(np.zeros((3, 4))) == 0.0

    def test_reg_one_hot(self):
        assert loss_reg(np.eye(5)[[0, 2, 4]]) == pytest.approx(1 / 5, abs=1e-15)

    def test_reg_oracle(self, rng):
        m = _row_stochastic(rng, 6, 5)
        assert loss_reg(m) == pytest.approx(sum(x * x for x in m.ravel()) / 30, rel=1e-14)


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss(LossTerms()) == 0.0

    def test_published_weights(self):
        assert total_loss([1.0] * 7, LossWeights()) == pytest.approx(7.2101, abs=1e-12)

    def test_dot_product_oracle(self, rng):
        t = rng.uniform(size=7)
        w = rng.uniform(size=7)
        expected = sum(a * b for a, b in zip(t, w))
        assert total_loss(LossTerms(*t), LossWeights(*w)) == pytest.approx(expected, rel=1e-14)

    def test_negative_weight(self):
        with pytest.raises(InvalidInputError):
            LossWeights(z=-1.0)

    def test_wrong_length(self):
        with pytest.raises(InvalidInputError):
            total_loss([1.0] * 6)

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(0, 6), a=st.floats(-10, 10), b=st.floats(-10, 10))
    def test_linear_in_each_term(self, k, a, b):
        base = np.linspace(0.1, 0.7, 7)
        ta, tb = base.copy(), base.copy()
        ta[k], tb[k] = a, b
        w = LossWeights().as_array()[k]
        assert total_loss(ta) - total_loss(tb) == pytest.approx(w * (a - b), abs=1e-9)
