import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from augloss import losses
from augloss.losses import LossSpec

LN2 = math.log(2)


def simplex(k, rng):
    return rng.dirichlet(np.ones(k))


def posterior_strategy(k_min=2, k_max=8):
    return st.integers(k_min, k_max).flatmap(
        lambda k: arrays(np.float64, k, elements=st.floats(0.01, 10.0)).map(lambda v: v / v.sum())
    )


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        assert losses.ce_loss([0, 1, 0], 1) == pytest.approx(-math.log(1 - 1e-7), abs=1e-12)
        assert losses.ce_loss([0, 1, 0], 1) <= 1e-6

    def test_uniform(self):
        assert losses.ce_loss(np.full(10, 0.1), 3) == pytest.approx(math.log(10), abs=1e-12)

    def test_half(self):
        assert losses.ce_loss([0.5, 0.5], 0) == pytest.approx(LN2, abs=1e-12)

    @pytest.mark.parametrize("y", [-1, 3, 2.5])
    def test_bad_index(self, y):
        with pytest.raises(ValueError):
            losses.ce_loss([0.2, 0.3, 0.5], y)


class TestFocal:
    def test_gamma_zero_is_ce(self):
        assert losses.focal_loss([0.5, 0.5], 0, 0.0) == pytest.approx(LN2, abs=1e-12)

    def test_one_hot(self):
        assert losses.focal_loss([1.0, 0.0], 0, 2.0) <= 1e-6

    def test_gamma_two(self):
        assert losses.focal_loss([0.5, 0.5], 0, 2.0) == pytest.approx(0.25 * LN2, abs=1e-12)

    def test_negative_gamma(self):
        with pytest.raises(ValueError):
            losses.focal_loss([0.5, 0.5], 0, -1.0)

    def test_equals_ce_on_random_draws(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            k = int(rng.integers(2, 12))
            p = simplex(k, rng)
            y = int(rng.integers(k))
            assert abs(losses.focal_loss(p, y, 0.0) - losses.ce_loss(p, y)) <= 1e-12


class TestActivePassive:
    def test_nce_uniform(self):
        for k in (2, 3, 10):
            assert losses.nce_loss(np.full(k, 1 / k), k - 1) == pytest.approx(1 / k, abs=1e-12)

    def test_nce_two_class(self):
        expected = -math.log(0.8) / (-math.log(0.8) - math.log(0.2))
        assert losses.nce_loss([0.8, 0.2], 0) == pytest.approx(expected, abs=1e-12)
        assert losses.nce_loss([0.8, 0.2], 0) == pytest.approx(0.121765, abs=1e-6)

    def test_rce(self):
        assert losses.rce_loss([0.5, 0.25, 0.25], 0, 4.0) == pytest.approx(2.0, abs=1e-12)
        assert losses.rce_loss(np.full(10, 0.1), 0, 4.0) == pytest.approx(3.6, abs=1e-12)
        assert losses.rce_loss([0, 1, 0], 1, 4.0) == 0.0

    def test_rce_bad_delta(self):
        with pytest.raises(ValueError):
            losses.rce_loss([0.5, 0.5], 0, 0.0)

    def test_nce_rce_composition(self):
        assert losses.nce_rce_loss([0.8, 0.2], 0, 1.0, 0.1, 4.0) == pytest.approx(0.201765, abs=1e-6)
        assert losses.nce_rce_loss([1.0, 0.0, 0.0], 0, 1.0, 0.1) <= 1e-6

    @pytest.mark.parametrize("b1,b2", [(0, 1), (1, -0.1)])
    def test_bad_betas(self, b1, b2):
        with pytest.raises(ValueError):
            losses.nce_rce_loss([0.5, 0.5], 0, b1, b2)

    @given(posterior_strategy())
    def test_nce_sums_to_one(self, p):
        vals = [losses.nce_loss(p, y) for y in range(len(p))]
        assert all(0 <= v <= 1 for v in vals)
        assert sum(vals) == pytest.approx(1.0, abs=1e-9)

    @given(posterior_strategy(), st.floats(0.1, 10))
    def test_rce_closed_form(self, p, delta):
        y = int(np.argmax(p))
        assert abs(losses.rce_loss(p, y, delta) - delta * (1 - p[y])) <= 1e-12


class TestAlpha:
    def test_alpha_one_is_ce(self):
        assert losses.alpha_loss([0.5, 0.5], 0, 1.0) == pytest.approx(LN2, abs=1e-12)

    def test_alpha_half(self):
        assert losses.alpha_loss([0.5, 0.5], 0, 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_alpha_two(self):
        assert losses.alpha_loss([0.5, 0.5], 0, 2.0) == pytest.approx(2 * (1 - math.sqrt(0.5)), abs=1e-12)

    def test_alpha_infinite(self):
        assert losses.alpha_loss([0.7, 0.3], 0, math.inf) == pytest.approx(0.3, abs=1e-12)

    def test_large_alpha_approaches_limit(self):
        assert losses.alpha_loss([0.7, 0.3], 0, 1e8) == pytest.approx(0.3, abs=1e-6)

    @pytest.mark.parametrize("a", [0.0, -1.0])
    def test_bad_alpha(self, a):
        with pytest.raises(ValueError):
            losses.alpha_loss([0.5, 0.5], 0, a)

    def test_limit_branch_on_random_draws(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            k = int(rng.integers(2, 12))
            p = simplex(k, rng)
            y = int(rng.integers(k))
            ce = losses.ce_loss(p, y)
            assert abs(losses.alpha_loss(p, y, 1 + 1e-10) - ce) <= 1e-9
            assert abs(losses.alpha_loss(p, y, 1 - 1e-10) - ce) <= 1e-9
            q = min(max(p[y], 1e-7), 1 - 1e-7)
            assert abs(losses.alpha_loss(p, y, 0.5) - (1 / q - 1)) <= 1e-12 * max(1.0, 1 / q)


class TestJensenShannon:
    def test_identical_members(self):
        p = [0.2, 0.3, 0.5]
        assert losses.js_consistency([p, p, p]) == pytest.approx(0.0, abs=1e-15)

    def test_distinct_one_hots(self):
        assert losses.js_consistency(np.eye(3)) == pytest.approx(math.log(3), abs=1e-12)

    def test_two_class_brute_force(self):
        P = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        brute = (2 * math.log(1 / (2 / 3)) + math.log(1 / (1 / 3))) / 3
        assert losses.js_consistency(P) == pytest.approx(brute, abs=1e-12)
        assert losses.js_consistency(P) == pytest.approx(oracles.js(P), abs=1e-12)

    def test_mismatched_k(self):
        with pytest.raises(ValueError):
            losses.stack_tuple([0.5, 0.5], [[0.2, 0.3, 0.5]])

    @given(st.integers(2, 6).flatmap(lambda k: st.lists(
        arrays(np.float64, k, elements=st.floats(0.0, 1.0)).filter(lambda v: v.sum() > 0.01),
        min_size=3, max_size=3)))
    def test_bounds_and_symmetry(self, rows):
        P = np.array([r / r.sum() for r in rows])
        v = losses.js_consistency(P)
        assert -1e-12 <= v <= math.log(3) + 1e-12
        assert v == pytest.approx(losses.js_consistency(P[[2, 0, 1]]), abs=1e-12)
        assert v == pytest.approx(oracles.js(P.tolist()), abs=1e-9)


class TestObjective:
    def test_lambda_zero(self):
        P = [[0.5, 0.5], [0.9, 0.1], [0.1, 0.9]]
        spec = LossSpec("focal", gamma=2.0, lam=0.0)
        assert losses.augloss_objective(P, 0, spec) == losses.focal_loss(P[0], 0, 2.0)

    def test_equal_members(self):
        p = [0.6, 0.4]
        spec = LossSpec("alpha", alpha=3.0)
        assert losses.augloss_objective([p, p, p], 1, spec) == pytest.approx(
            losses.alpha_loss(p, 1, 3.0), abs=1e-15)

    def test_composed_value(self):
        P = [[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]]
        spec = LossSpec("ce", lam=12.0)
        expected = LN2 + 12 * oracles.js(P)
        assert losses.augloss_objective(P, 0, spec) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_lambda(self):
        rng = np.random.default_rng(3)
        P = rng.dirichlet(np.ones(5), size=3)
        vals = [losses.augloss_objective(P, 2, LossSpec("nce_rce", lam=lam)) for lam in (0, 1, 5, 12, 50)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("family", losses.FAMILIES)
    def test_identical_one_hots_near_zero(self, family):
        P = np.tile(np.eye(4)[1], (3, 1))
        assert 0 <= losses.augloss_objective(P, 1, LossSpec(family)) <= 1e-6

    @pytest.mark.parametrize("family", losses.FAMILIES)
    @given(posterior_strategy(3, 6))
    @settings(max_examples=30)
    def test_nonnegative(self, family, p):
        P = np.stack([p, p[::-1], np.roll(p, 1)])
        assert losses.augloss_objective(P, 0, LossSpec(family)) >= 0

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LossSpec("gce")
        with pytest.raises(ValueError):
            LossSpec("focal", gamma=6)
        with pytest.raises(ValueError):
            LossSpec("ce", lam=-1)
        assert LossSpec("NCE+RCE").family == "nce_rce"
        assert LossSpec().delta == 4 and LossSpec().lam == 12


FAMILY_PARAMS = [
    ("ce", {}),
    ("focal", {"gamma": 2.0}),
    ("focal", {"gamma": 0.5}),
    ("nce_rce", {"beta1": 1.0, "beta2": 0.1, "delta": 4.0}),
    ("alpha", {"alpha": 2.0}),
    ("alpha", {"alpha": 0.5}),
    ("alpha", {"alpha": math.inf}),
]


class TestGradient:
    def test_uniform_ce_single_row(self):
        g = losses.loss_gradient(LossSpec("ce", lam=0), np.zeros(10), 0)
        expected = np.full(10, 0.1)
        expected[0] -= 1
        np.testing.assert_allclose(g[0], expected, atol=1e-15)

    def test_minimum_has_zero_gradient(self):
        z = np.array([[30.0, 0.0, 0.0]])
        g = losses.loss_gradient(LossSpec("ce", lam=0), z, 0)
        assert np.abs(g).max() < 1e-6

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            losses.loss_gradient(LossSpec(), [[0.0, np.nan]], 0)

    @pytest.mark.parametrize("family,hp", FAMILY_PARAMS)
    @pytest.mark.parametrize("lam", [0.0, 12.0])
    def test_matches_finite_differences(self, family, hp, lam):
        rng = np.random.default_rng(hash((family, lam, str(hp))) % 2**32)
        spec = LossSpec(family, lam=lam, **hp)
        worst = 0.0
        for _ in range(20):
            z = rng.normal(scale=2.0, size=(3, 6))
            y = int(rng.integers(6))
            analytic = losses.loss_gradient(spec, z, y)
            numeric = oracles.central_difference(
                lambda x: oracles.objective_from_logits(x, y, family, hp, lam), z.tolist())
            worst = max(worst, oracles.max_relative_error(analytic.tolist(), numeric))
        assert worst < 1e-4

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(4, 3, 5))
        y = np.array([0, 1, 2, 3])
        spec = LossSpec("nce_rce", lam=12)
        vals, grads = losses.objective_and_logit_grad(spec, Z, y)
        for i in range(4):
            np.testing.assert_allclose(grads[i], losses.loss_gradient(spec, Z[i], int(y[i])), atol=1e-14)
            assert vals[i] == pytest.approx(losses.augloss_objective(losses.softmax(Z[i]), int(y[i]), spec))

    @pytest.mark.parametrize("family,hp", FAMILY_PARAMS[:5] + [("alpha", {"alpha": 3.0})])
    def test_minimizer_is_one_hot_at_label(self, family, hp):
        spec = LossSpec(family, lam=0, **hp)
        rng = np.random.default_rng(7)
        for _ in range(20):
            z = rng.normal(size=(1, 5))
            y = 2
            for _ in range(5000):
                # normalized steps, since focal gradients vanish near the optimum
                g = losses.loss_gradient(spec, z, y)
                z = z - 0.2 * g / np.linalg.norm(g)
                if losses.softmax(z)[0, y] > 0.99:
                    break
            assert losses.softmax(z)[0, y] > 0.99
