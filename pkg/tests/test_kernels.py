"""Kernel evaluation, Gram utilities, and effective-dimension diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpbandit.errors import NumericalError, OracleInputError
from bpbandit.kernels import (ContextPoint, KernelSpec, composite_kernel,
                              effective_dimension, gram,
                              information_gain_bound, kernel_eval)

vec = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)
small_set = st.sets(st.integers(0, 9), max_size=5).map(frozenset)


def pt(user=None, sel=frozenset(), item=None, itemvec=None):
    return ContextPoint(user_features=user, selected=sel, item=item,
                        item_features=itemvec)


class TestKernelEval:
    def test_jaccard_examples(self):
        spec = KernelSpec("jaccard_set")
        a = pt(sel=frozenset({0, 1}))
        b = pt(sel=frozenset({1, 2}))
        assert kernel_eval(spec, a, b) == pytest.approx(1.0 / 3.0)
        assert kernel_eval(spec, pt(), pt()) == 1.0

    def test_rbf_self_similarity_is_one(self):
        spec = KernelSpec("rbf", operand="item", bandwidth=2.0)
        x = pt(itemvec=np.array([0.3, -1.0]))
        assert kernel_eval(spec, x, x) == 1.0

    def test_composite_matches_hand_computed_parts(self):
        spec = composite_kernel(1.0, 1.0, 1.0, bandwidth=0.5)
        x = pt(user=np.array([1.0, 2.0]), sel=frozenset({0}),
               item=1, itemvec=np.array([0.0, 1.0]))
        y = pt(user=np.array([0.5, -1.0]), sel=frozenset({0, 2}),
               item=3, itemvec=np.array([1.0, 1.0]))
        lin = 1.0 * 0.5 + 2.0 * (-1.0)
        rbf = math.exp(-0.5 * 1.0)
        jac = 1.0 / 2.0
        assert kernel_eval(spec, x, y) == pytest.approx(lin + rbf + jac)

    def test_product_kernel(self):
        spec = KernelSpec("product", children=(
            KernelSpec("rbf", operand="item", bandwidth=1.0),
            KernelSpec("jaccard_set")))
        x = pt(sel=frozenset({0}), itemvec=np.array([0.0]))
        y = pt(sel=frozenset({0, 1}), itemvec=np.array([1.0]))
        assert kernel_eval(spec, x, y) == pytest.approx(math.exp(-1.0) * 0.5)

    def test_dimension_mismatch_rejected(self):
        spec = KernelSpec("linear", operand="item")
        with pytest.raises(OracleInputError):
            kernel_eval(spec, pt(itemvec=np.zeros(2)), pt(itemvec=np.zeros(3)))

    def test_candidate_inside_history_rejected(self):
        with pytest.raises(OracleInputError):
            pt(sel=frozenset({1, 2}), item=2)

    @settings(max_examples=60)
    @given(vec, vec, small_set, small_set, vec, vec)
    def test_symmetry(self, u1, u2, s1, s2, i1, i2):
        specs = [
            KernelSpec("linear", operand="user"),
            KernelSpec("rbf", operand="item", bandwidth=0.7),
            KernelSpec("jaccard_set"),
            composite_kernel(0.5, 2.0, 1.0, bandwidth=1.3),
        ]
        x = pt(user=u1, sel=s1, itemvec=i1)
        y = pt(user=u2, sel=s2, itemvec=i2)
        for spec in specs:
            assert kernel_eval(spec, x, y) == pytest.approx(
                kernel_eval(spec, y, x), abs=1e-12)


class TestGram:
    def test_singleton(self):
        spec = KernelSpec("linear", operand="user")
        x = pt(user=np.array([2.0]))
        K = gram(spec, [x])
        assert K.shape == (1, 1)
        assert K[0, 0] == 4.0

    def test_far_rbf_points_nearly_orthogonal(self):
        spec = KernelSpec("rbf", operand="item", bandwidth=1.0)
        pts = [pt(itemvec=np.array([0.0])), pt(itemvec=np.array([100.0]))]
        K = gram(spec, pts)
        assert K[0, 1] < 1e-12

    def test_matches_pairwise_loop(self):
        rng = np.random.default_rng(0)
        spec = composite_kernel(1.0, 1.0, 1.0, bandwidth=0.8)
        pts = [pt(user=rng.normal(size=3),
                  sel=frozenset(int(v) for v in rng.choice(8, size=rng.integers(0, 4),
                                                           replace=False)),
                  itemvec=rng.normal(size=2)) for _ in range(10)]
        K = gram(spec, pts)
        for i in range(10):
            for j in range(10):
                assert K[i, j] == pytest.approx(kernel_eval(spec, pts[i], pts[j]),
                                                abs=1e-12)

    @pytest.mark.parametrize("kind", ["linear", "rbf", "jaccard", "composite"])
    def test_gram_matrices_are_psd(self, kind):
        rng = np.random.default_rng(3)
        spec = {
            "linear": KernelSpec("linear", operand="user"),
            "rbf": KernelSpec("rbf", operand="item", bandwidth=0.5),
            "jaccard": KernelSpec("jaccard_set"),
            "composite": composite_kernel(1.0, 1.0, 1.0, bandwidth=0.5),
        }[kind]
        pts = [pt(user=rng.normal(size=3),
                  sel=frozenset(int(v) for v in rng.choice(10, size=rng.integers(0, 5),
                                                           replace=False)),
                  itemvec=rng.normal(size=3)) for _ in range(12)]
        K = gram(spec, pts)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


class TestEffectiveDimension:
    def test_identity_matrix(self):
        assert effective_dimension(np.eye(15), 1.0) == pytest.approx(7.5)

    def test_huge_ridge_kills_it(self):
        K = np.diag([1.0, 2.0, 3.0])
        assert effective_dimension(K, 1e12) < 1e-11

    def test_eigen_form_equals_trace_form(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(20, 20))
        K = A @ A.T
        lam = 0.7
        direct = np.trace(K @ np.linalg.inv(K + lam * np.eye(20)))
        assert effective_dimension(K, lam) == pytest.approx(direct, abs=1e-10)

    def test_linear_kernel_bounded_by_feature_dimension(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 5))
        K = X @ X.T
        for lam in (0.1, 1.0, 10.0):
            assert effective_dimension(K, lam) <= 5.0 + 1e-9

    def test_nonincreasing_in_ridge(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(15, 15))
        K = A @ A.T
        vals = [effective_dimension(K, lam) for lam in (0.1, 0.5, 1.0, 5.0, 20.0)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_nondecreasing_under_appending_points(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 4))
        K = X @ X.T
        vals = [effective_dimension(K[:t, :t], 1.0) for t in range(2, 31)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_non_psd_rejected(self):
        K = np.array([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(NumericalError):
            effective_dimension(K, 1.0)
        with pytest.raises(OracleInputError):
            effective_dimension(np.eye(3), 0.0)


class TestInformationGain:
    def test_zero_matrix(self):
        assert information_gain_bound(np.zeros((5, 5)), 1.0) == 0.0

    def test_identity(self):
        assert information_gain_bound(np.eye(9), 1.0) == \
            pytest.approx(9 * math.log(2.0))

    def test_dominates_effective_dimension(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            A = rng.normal(size=(12, 12))
            K = A @ A.T
            lam = float(rng.uniform(0.1, 5.0))
            assert information_gain_bound(K, lam) >= \
                effective_dimension(K, lam) - 1e-12


class TestKernelSpecValidation:
    def test_bad_bandwidth(self):
        with pytest.raises(OracleInputError):
            KernelSpec("rbf", operand="item", bandwidth=0.0)

    def test_bad_sum_weights(self):
        with pytest.raises(OracleInputError):
            KernelSpec("sum", weights=(1.0, -1.0),
                       children=(KernelSpec("jaccard_set"),
                                 KernelSpec("jaccard_set")))

    def test_unknown_kind_and_operand(self):
        with pytest.raises(OracleInputError):
            KernelSpec("poly")
        with pytest.raises(OracleInputError):
            KernelSpec("linear", operand="frobnicate")

    def test_serialization_round_trip(self):
        spec = composite_kernel(0.7, 1.3, 2.0, bandwidth=0.9)
        back = KernelSpec.from_dict(spec.to_dict())
        assert back == spec
        x = pt(user=np.array([1.0, 0.0, 0.0]), sel=frozenset({1}),
               itemvec=np.array([0.5, 0.5, 0.0]))
        y = pt(user=np.array([0.0, 1.0, 0.0]), sel=frozenset({1, 3}),
               itemvec=np.array([0.5, -0.5, 0.2]))
        assert kernel_eval(back, x, y) == kernel_eval(spec, x, y)
