import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odbayes.core import ConvergenceError, InfeasibleError, MarginData
from odbayes.priors import (
    calibrate_beta,
    dirichlet_params,
    entropy,
    extended_furness,
    furness_balance,
    gravity_proportions,
    log_entropy_weight,
    log_relative_weight,
    logit_proportions,
    mean_proportion_cost,
)

from conftest import TWO_ZONE_P, ZONE4_COSTS

# exp(-0.1 c) / sum, evaluated independently for the four-zone costs
GRAVITY_01 = np.array(
    [
        [0.1296570141391307, 0.05825865185366755, 0.02893039032923146, 0.01939262057731945],
        [0.05271460812152841, 0.1296570141391307, 0.04769814990546119, 0.02617729968827429],
        [0.03714735649743044, 0.04769814990546119, 0.10615418482797302, 0.08691169568658562],
        [0.01587733484942432, 0.02893039032923146, 0.07864095432217719, 0.10615418482797302],
    ]
)


class TestGravity:
    def test_uniform_at_zero(self, costs):
        assert np.allclose(gravity_proportions(costs, 0.0), 1 / 16)

    def test_four_zone(self, costs):
        p = gravity_proportions(costs, 0.1)
        np.testing.assert_allclose(p, GRAVITY_01, rtol=1e-13)
        assert round(mean_proportion_cost(p, costs), 2) == 8.51

    def test_no_overflow(self, costs):
        p = gravity_proportions(costs * 1e3, 5.0)
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12

    def test_logit_matches_gravity(self, costs):
        np.testing.assert_allclose(
            logit_proportions(costs[:, :, None], [-0.1]), gravity_proportions(costs, 0.1)
        )
        assert np.allclose(logit_proportions(costs[:, :, None], [0.0]), 1 / 16)

    def test_logit_two_covariates(self, costs):
        x = np.stack([costs, np.log(costs)], axis=-1)
        w = np.exp(-0.1 * costs - 0.5 * np.log(costs))
        np.testing.assert_allclose(logit_proportions(x, [-0.1, -0.5]), w / w.sum())


class TestMeanCost:
    def test_constant(self):
        assert mean_proportion_cost(np.full((3, 3), 1 / 9), np.full((3, 3), 7.0)) == pytest.approx(7.0)

    def test_degenerate(self, costs):
        p = np.zeros((4, 4))
        p[0, 0] = 1
        assert mean_proportion_cost(p, costs) == 3.0


class TestCalibrate:
    def test_four_zone(self, costs):
        assert calibrate_beta(costs, 8.51) == pytest.approx(0.1, abs=1e-3)

    def test_uniform_target(self, costs):
        assert calibrate_beta(costs, costs.mean()) == pytest.approx(0.0, abs=1e-9)

    def test_target_10(self, costs):
        beta = calibrate_beta(costs, 10.0)
        assert beta == pytest.approx(0.056518757106919316, abs=1e-8)
        assert mean_proportion_cost(gravity_proportions(costs, beta), costs) == pytest.approx(10.0)

    @pytest.mark.parametrize("target", [100.0, 3.0, 24.0, 1.0])
    def test_out_of_range(self, costs, target):
        with pytest.raises(ValueError):
            calibrate_beta(costs, target)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(3.05, 23.9))
    def test_round_trip(self, target):
        beta = calibrate_beta(ZONE4_COSTS, target)
        got = mean_proportion_cost(gravity_proportions(ZONE4_COSTS, beta), ZONE4_COSTS)
        assert abs(got - target) < 1e-6


class TestFurness:
    def test_uniform(self, zone4):
        b = furness_balance(zone4, np.full((4, 4), 1 / 16))
        expect = np.outer(zone4.origins, zone4.destinations) / zone4.total
        np.testing.assert_allclose(b.cells, expect, rtol=1e-12)
        prod = b.row_factors[:, None] * b.col_factors[None, :]
        assert np.allclose(prod, prod[0, 0])

    def test_two_zone(self, two_zone):
        # root of x (x - 20) = (2/3)(40 - x)(60 - x)
        b = furness_balance(two_zone, TWO_ZONE_P)
        assert b.cells[0, 0] == pytest.approx(28.488578017961046, abs=1e-7)
        assert round(b.cells[0, 0], 2) == 28.49

    def test_four_zone(self, zone4, costs):
        b = furness_balance(zone4, gravity_proportions(costs, 0.1))
        assert b.regional_cost(costs) == pytest.approx(8.70, abs=0.01)
        assert b.cells[0, 0] == pytest.approx(157, abs=1)
        assert b.residual < 1e-10

    def test_factor_identity(self, zone4, costs):
        p = gravity_proportions(costs, 0.1)
        b = furness_balance(zone4, p)
        o, d = zone4.origins, zone4.destinations
        rebuilt = b.row_factors[:, None] * o[:, None] * b.col_factors[None, :] * d[None, :] * p
        np.testing.assert_allclose(rebuilt, b.cells, rtol=1e-9)
        assert b.row_factors[0] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.integers(1, 50), min_size=3, max_size=3),
        st.lists(st.floats(0.01, 1.0), min_size=9, max_size=9),
        st.permutations([0, 1, 2]),
    )
    def test_residual_property(self, o, w, perm):
        d = [o[k] for k in perm]
        m = MarginData(o, d)
        b = furness_balance(m, np.array(w).reshape(3, 3))
        assert b.residual < 1e-10
        np.testing.assert_allclose(b.cells.sum(1), o, rtol=1e-8)

    def test_unreachable_zone(self):
        p = np.array([[0.0, 0.0], [0.5, 0.5]])
        with pytest.raises(InfeasibleError):
            furness_balance(MarginData([1, 1], [1, 1]), p)

    def test_incompatible_zero_pattern(self):
        # only diagonal allowed but margins force off-diagonal mass
        p = np.array([[0.5, 0.0], [0.0, 0.5]])
        with pytest.raises(ConvergenceError):
            furness_balance(MarginData([2, 1], [1, 2]), p, max_iter=200)


class TestWeights:
    def test_entropy(self):
        assert entropy(np.full((2, 2), 0.25)) == pytest.approx(math.log(4))
        assert entropy([[1.0, 0.0], [0.0, 0.0]]) == 0.0
        assert entropy(TWO_ZONE_P) == pytest.approx(1.2798542258336676, rel=1e-12)

    def test_log_entropy_weight(self):
        assert log_entropy_weight([[7, 0], [0, 0]]) == pytest.approx(0.0)
        assert log_entropy_weight([[1, 1], [1, 1]]) == pytest.approx(math.log(24))

    def test_relative_weight(self):
        t = np.array([[3, 1], [0, 2]])
        assert log_relative_weight(t, t) == pytest.approx(6.0)
        with pytest.raises(ValueError):
            log_relative_weight(t, [[0, 1], [1, 1]])

    def test_dirichlet_params(self):
        assert dirichlet_params(1.0, (2, 2)).tolist() == [[1, 1], [1, 1]]
        with pytest.raises(ValueError):
            dirichlet_params(0.0, (2, 2))


class TestExtendedFurness:
    def test_fixed_point(self, two_zone):
        seed = np.array([[10.0, 20.0], [30.0, 40.0]])
        r = extended_furness(two_zone, seed, 1.0)
        np.testing.assert_allclose(r.cells.sum(1), two_zone.origins, rtol=1e-8)
        np.testing.assert_allclose(r.cells.sum(0), two_zone.destinations, rtol=1e-8)
        num = r.cells + seed
        np.testing.assert_allclose(r.proportions, num / num.sum(), atol=1e-8)

    def test_flat_prior_fixed_point(self, zone4):
        r = extended_furness(zone4)
        np.testing.assert_allclose(r.proportions, r.cells / zone4.total, atol=1e-9)

    def test_large_seed_limit(self, two_zone):
        seed = TWO_ZONE_P * 1e9
        r = extended_furness(two_zone, seed, 1.0)
        b = furness_balance(two_zone, TWO_ZONE_P)
        np.testing.assert_allclose(r.cells, b.cells, rtol=1e-6)

    def test_negative_numerator(self, two_zone):
        with pytest.raises(ConvergenceError, match="negative"):
            extended_furness(MarginData([5, 0], [5, 0]), None, 0.5)
