import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssl_iqa.core import PROB_EPS, clamped_gap_prob, gap_prob
from ssl_iqa.objectives import (
    ObjectiveConfig,
    accuracy_loss,
    accuracy_loss_with_grad,
    diversity_pairwise,
    diversity_pairwise_with_grad,
    diversity_to_ensemble,
    diversity_to_ensemble_with_grad,
    diversity_variance,
    diversity_variance_with_grad,
    prob_average,
    semi_loss,
    semi_objective,
)

# hand evaluation with mpmath (40 digits), frozen
ACC_EXAMPLE = 0.6121102608144298944607499943
TO_ENS_EXAMPLE = -0.0372275077653091320718180048
PROB_AVG_EXAMPLE = 0.7386249340259103963998586814

score_arrays = arrays(
    np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)),
    elements=st.floats(-5, 5),
)


def _probs(sx, sy):
    return clamped_gap_prob(np.asarray(sx) - np.asarray(sy))[0]


class TestAccuracyLoss:
    def test_large_gap_agreement_is_near_zero(self):
        sx = np.full((1, 4), 50.0)
        sy = np.zeros((1, 4))
        # each fidelity term bottoms out at 1 - sqrt(1 - eps) ~ eps / 2 under the clamp
        assert accuracy_loss(sx, sy, [1.0], lam=1.0) <= (1 + 1.0) * PROB_EPS

    def test_lambda_zero_is_ensemble_term_only(self):
        sx, sy = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        assert accuracy_loss(sx, sy, [1.0], lam=0.0) == pytest.approx(1 - math.sqrt(0.5), abs=1e-15)

    def test_hand_example(self):
        sx, sy = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        assert accuracy_loss(sx, sy, [1.0], lam=1.0) == pytest.approx(ACC_EXAMPLE, abs=1e-13)

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy_loss(np.empty((0, 3)), np.empty((0, 3)), [])

    @given(score_arrays, st.randoms())
    def test_head_relabeling(self, sx, rnd):
        sy = np.roll(sx, 1, axis=0) * 0.5
        labels = (np.arange(len(sx)) % 2).astype(float)
        perm = list(range(sx.shape[1]))
        rnd.shuffle(perm)
        a = accuracy_loss(sx, sy, labels)
        b = accuracy_loss(sx[:, perm], sy[:, perm], labels)
        assert a == pytest.approx(b, abs=1e-12)

    @given(score_arrays)
    def test_swap_and_flip_labels(self, sx):
        sy = -0.3 * sx[::-1]
        labels = (np.arange(len(sx)) % 2).astype(float)
        a = accuracy_loss(sx, sy, labels)
        b = accuracy_loss(sy, sx, 1.0 - labels)
        assert a == pytest.approx(b, abs=1e-12)

    def test_duplicated_pair_doubles_summed_gradient(self, rng):
        sx, sy = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        _, g1, _ = accuracy_loss_with_grad(sx, sy, [1.0])
        _, g2, _ = accuracy_loss_with_grad(np.vstack([sx, sx]), np.vstack([sy, sy]), [1.0, 1.0])
        # batch mean halves each pair's weight; the pair now appears twice
        np.testing.assert_allclose(g2.sum(axis=0), g1.sum(axis=0), rtol=1e-14)


class TestDiversity:
    def test_pairwise_examples(self):
        assert diversity_pairwise(np.full((3, 4), 0.3)) == 0.0
        assert diversity_pairwise([[1.0, 0.0]]) == -1.0
        with pytest.raises(ValueError):
            diversity_pairwise([[0.5]])

    def test_pairwise_permutation(self, rng):
        p = rng.random((5, 4))
        assert diversity_pairwise(p) == pytest.approx(diversity_pairwise(p[:, [2, 0, 3, 1]]), abs=1e-15)

    def test_variance_examples(self):
        assert diversity_variance(np.ones((4, 3))) == 0.0
        assert diversity_variance([[0.0, 2.0]]) == -1.0
        s = np.array([[0.1, 0.4, -2.0]])
        assert diversity_variance(s + 7.0) == pytest.approx(diversity_variance(s), abs=1e-12)
        with pytest.raises(ValueError):
            diversity_variance(np.empty((0, 2)))

    def test_to_ensemble_examples(self):
        p = np.full((2, 3), 0.8)
        assert diversity_to_ensemble(p, [0.8, 0.8]) == 0.0
        sx, sy = np.array([[0.4]]), np.array([[0.1]])
        ens = gap_prob(sx.mean(axis=1) - sy.mean(axis=1))
        assert diversity_to_ensemble(gap_prob(sx - sy), ens) == 0.0
        sx, sy = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        ens = gap_prob(sx.mean(axis=1) - sy.mean(axis=1))
        assert ens[0] == 0.5
        assert diversity_to_ensemble(gap_prob(sx - sy), ens) == pytest.approx(TO_ENS_EXAMPLE, abs=1e-13)

    @given(score_arrays)
    @settings(max_examples=200)
    def test_ranges(self, sx):
        sy = np.roll(sx, 1, axis=1) * 0.7
        probs = _probs(sx, sy)
        ens = clamped_gap_prob((sx - sy).mean(axis=1))[0]
        assert -1.0 <= diversity_pairwise(probs) <= 0.0
        assert -1.0 <= diversity_to_ensemble(probs, ens) <= 0.0
        assert diversity_variance(sx) <= 0.0

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 1)), elements=st.floats(-5, 5)),
           st.integers(1, 8))
    def test_identical_heads_give_zero(self, col, m):
        sx = np.repeat(col, m, axis=1)
        sy = np.repeat(col[::-1] * 0.5, m, axis=1)
        probs = _probs(sx, sy)
        ens = clamped_gap_prob((sx - sy).mean(axis=1))[0]
        if m >= 2:
            assert diversity_pairwise(probs) == 0.0
        assert diversity_variance(sx) == pytest.approx(0.0, abs=1e-24)
        assert diversity_to_ensemble(probs, ens) == pytest.approx(0.0, abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("fn", [
        lambda sx, sy: accuracy_loss_with_grad(sx, sy, np.array([1.0, 0.0, 1.0, 1.0]), 0.7),
        diversity_pairwise_with_grad,
        diversity_variance_with_grad,
        diversity_to_ensemble_with_grad,
    ])
    def test_finite_differences(self, fn, rng):
        sx, sy = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        _, gx, gy = fn(sx, sy)
        h = 1e-6
        for arr, grad in ((sx, gx), (sy, gy)):
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = fn(sx, sy)[0]
                arr[idx] = old - h
                down = fn(sx, sy)[0]
                arr[idx] = old
                fd[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-10)

    def test_value_twins_agree(self, rng):
        sx, sy = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        probs = _probs(sx, sy)
        ens = clamped_gap_prob((sx - sy).mean(axis=1))[0]
        assert diversity_pairwise_with_grad(sx, sy)[0] == pytest.approx(diversity_pairwise(probs), abs=1e-14)
        assert diversity_to_ensemble_with_grad(sx, sy)[0] == pytest.approx(
            diversity_to_ensemble(probs, ens), abs=1e-14)
        assert diversity_variance_with_grad(sx, sy)[0] == pytest.approx(
            diversity_variance(np.vstack([sx, sy])), abs=1e-14)


class TestCombination:
    def test_semi_loss_examples(self):
        assert semi_loss(0.4, -0.5, 0.0) == 0.4
        assert semi_loss(0.4, -0.5, 0.06) == pytest.approx(0.37, abs=1e-15)
        assert semi_loss(0.4, 0.0, 3.0) == 0.4
        with pytest.raises(ValueError):
            semi_loss(0.4, -0.5, -1.0)

    @given(st.floats(0, 5), st.floats(-1, 0), st.floats(0, 1), st.floats(0, 1))
    def test_affine_in_gamma(self, acc, div, g1, g2):
        slope = (semi_loss(acc, div, g2) - semi_loss(acc, div, g1))
        assert slope == pytest.approx(div * (g2 - g1), abs=1e-12)

    def test_prob_average(self):
        assert prob_average([0.3, 0.3, 0.3]) == pytest.approx(0.3)
        assert prob_average([1.0, 0.0]) == 0.5
        s2 = math.sqrt(2)
        avg = prob_average(gap_prob(np.array([2 * s2, 0.0])))
        ens = gap_prob(np.mean([2 * s2, 0.0]))
        assert avg == pytest.approx(PROB_AVG_EXAMPLE, abs=1e-14)
        assert float(ens) == pytest.approx(0.8413447460685429, abs=1e-14)
        symmetric = gap_prob(np.array([s2, -s2]))
        assert prob_average(symmetric) == pytest.approx(0.5, abs=1e-15)

    def test_config_validation(self):
        assert ObjectiveConfig().lam == 1.0
        assert ObjectiveConfig().gamma == 0.06
        assert ObjectiveConfig().diversity == "pairwise_fidelity"
        with pytest.raises(ValueError):
            ObjectiveConfig(gamma=-0.1)
        with pytest.raises(ValueError):
            ObjectiveConfig(diversity="entropy")

    def test_gamma_zero_ignores_diversity_variant(self, rng):
        sx, sy = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        ux, uy = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        out = [semi_objective(sx, sy, [1, 0, 1], ux, uy, ObjectiveConfig(gamma=0.0, diversity=v))
               for v in ("pairwise_fidelity", "variance", "to_ensemble")]
        for r in out[1:]:
            assert r.total == out[0].total
            np.testing.assert_array_equal(r.d_div_x, 0.0)
