import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from glmmgibbs.certify import (
    Certificate,
    DenominatorNonpositive,
    SOutOfRange,
    WrongPriorClass,
    alpha_lower_bound,
    certify,
    check_corollary_improper,
    check_corollary_proper,
    check_general,
    check_proposition_alt,
    delta,
    find_witness_s,
    hypoth_terms,
    hypoth_value,
    improper_branch_constants,
)
from glmmgibbs.io import load_schema
from glmmgibbs.model import GlmmDesign, PriorSpec, build_model
from glmmgibbs.synthetic import incidence, one_way_model, random_model


def with_prior(model, a, b):
    prior = PriorSpec(model.prior.mu_beta, model.sigma_beta, a, b)
    return build_model(model.design, prior)


def design_full_rank_z(n=10, q=4, seed=0):
    """Z with q independent columns (q = rank(Z)) in a single block."""
    rng = np.random.default_rng(seed)
    return GlmmDesign(rng.standard_normal(n), rng.standard_normal((n, 2)), [rng.standard_normal((n, q))])


def gamma_ratio_ref(x, d):
    return float(np.exp(gammaln(x + d) - gammaln(x)))


class TestCorollaryProper:
    def test_one_way_certified(self):
        model = one_way_model(a=0.5)
        rep = check_corollary_proper(model)
        assert rep.passed
        # a_0 - (5 - 10 + 2)/2 = 0.5 + 1.5 and min(a_i + q_i/2) - 1 = 3 - 1
        assert rep.margins["a0_vs_rank"] == pytest.approx(2.0)
        assert rep.margins["min_shape_vs_deficiency"] == pytest.approx(2.0)
        assert certify(model).route == "Corollary1"

    def test_small_n_needs_a0_above_one(self):
        design = GlmmDesign(np.array([1.0, -0.5]), np.ones((2, 1)), [np.eye(2)])
        model = build_model(design, PriorSpec(np.zeros(1), 1.0, [0.5, 0.5], [1.0, 1.0]))
        rep = check_corollary_proper(model)
        assert not rep.passed
        assert rep.margins["a0_vs_rank"] == pytest.approx(-0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 5.0), st.integers(2, 6))
    def test_full_rank_z_second_condition_vacuous(self, a1, q):
        model = build_model(design_full_rank_z(n=10, q=q), PriorSpec(np.zeros(2), 1.0, [1.0, a1], [1.0, 1.0]))
        rep = check_corollary_proper(model)
        assert rep.margins["min_shape_vs_deficiency"] == pytest.approx(a1 + q / 2 - 1)
        assert rep.margins["min_shape_vs_deficiency"] > 0

    def test_wrong_prior_class(self):
        model = with_prior(one_way_model(), [0.0, 0.5], [0.0, 1.0])
        with pytest.raises(WrongPriorClass):
            check_corollary_proper(model)
        with pytest.raises(WrongPriorClass):
            check_proposition_alt(model)
        with pytest.raises(WrongPriorClass):
            check_corollary_improper(one_way_model())


class TestCorollaryImproper:
    def base(self, a1, b0=0.0, b1=0.0):
        return build_model(design_full_rank_z(n=10, q=4), PriorSpec(np.zeros(2), 1.0, [0.0, a1], [b0, b1]))

    def test_all_hold(self):
        rep = check_corollary_improper(self.base(-0.5))
        assert rep.passed
        assert rep.margins["error_rate"] > 0

    def test_shape_boundary_is_strict(self):
        # a_1 + q_1/2 = 1 equals (q - rank(Z))/2 + 1 = 1: the strict inequality fails
        rep = check_corollary_improper(self.base(-1.0))
        assert rep.margins["min_shape_vs_deficiency"] == pytest.approx(0.0)
        assert not rep.passed

    def test_error_rate_condition(self):
        model = self.base(-0.5)
        sse = model.derived.sse
        rep = check_corollary_improper(self.base(-0.5, b0=-sse / 2 - 0.1))
        assert rep.margins["error_rate"] < 0 and not rep.passed

    def test_zero_shape_zero_rate_fails(self):
        rep = check_corollary_improper(self.base(0.0))
        assert rep.margins["block_rates"] == 0.0 and not rep.passed


class TestPropositionAlt:
    def test_pass_with_slack(self):
        model = with_prior(one_way_model(), [2.0, 1.5], [1.0, 1.0])
        rep = check_proposition_alt(model)
        assert rep.passed and rep.margins["min_a_vs_one"] == pytest.approx(0.5)

    def test_boundary(self):
        assert not check_proposition_alt(with_prior(one_way_model(), [1.0, 2.0], [1.0, 1.0])).passed

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.0001, 20.0))
    def test_common_shape_sweep(self, a):
        assert check_proposition_alt(with_prior(one_way_model(), [a, a], [1.0, 1.0])).passed

    def test_route_when_corollary_fails(self):
        rng = np.random.default_rng(0)
        z = [rng.standard_normal((3, 6)) for _ in range(2)]
        design = GlmmDesign(rng.standard_normal(3), rng.standard_normal((3, 2)), z)
        model = build_model(design, PriorSpec(np.zeros(2), 1.0, [1.5] * 3, [1.0] * 3))
        cert = certify(model)
        assert cert.margins["Corollary1.min_shape_vs_deficiency"] < 0
        assert cert.route == "Proposition4_1"


class TestHypoth:
    def test_first_term_at_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            model = random_model(rng, int(rng.integers(4, 15)), 3, [2, 3], duplicate_z=True)
            a0, n, rank_z = model.prior.a[0], model.n, model.derived.rank_z
            first, _ = hypoth_terms(model, 1.0)
            assert first == pytest.approx(rank_z / (2 * a0 + n - 2), rel=1e-12)

    def test_second_term_bound_at_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model = random_model(rng, 5, 2, [3, 4], duplicate_z=True)
            _, second = hypoth_terms(model, 1.0)
            d = model.q - model.derived.rank_z
            bound = d / min(2 * model.prior.a[1:] + np.array(model.q_sizes) - 2)
            assert second <= bound * (1 + 1e-12)

    def test_full_rank_z_second_term_zero(self):
        model = one_way_model()
        for s in (0.1, 0.5, 1.0):
            first, second = hypoth_terms(model, s)
            assert second == 0.0
            assert hypoth_value(model, s) == first

    def test_general_formula(self):
        model = random_model(np.random.default_rng(3), 6, 2, [2, 3], duplicate_z=True)
        s = 0.37
        shapes = model.shapes
        tc = model.derived.block_trace_complement
        first = gamma_ratio_ref(shapes[0], -s) * (model.derived.rank_z / 2) ** s
        second = sum(gamma_ratio_ref(shapes[i + 1], -s) * (tc[i] / 2) ** s for i in range(2) if tc[i] > 1e-9)
        assert hypoth_terms(model, s) == pytest.approx((first, second), rel=1e-12)

    @pytest.mark.parametrize("s", [0.0, -0.1, 1.01])
    def test_s_range(self, s):
        with pytest.raises(SOutOfRange):
            hypoth_value(one_way_model(), s)

    def test_s_below_s_tilde(self):
        # a_0 + N/2 = 0.5 makes s_tilde = 0.5
        model = with_prior(one_way_model(), [-4.5, 1.0], [1.0, 1.0])
        with pytest.raises(SOutOfRange):
            hypoth_value(model, 0.5)
        hypoth_value(model, 0.49)


class TestWitness:
    def test_corollary_model_has_witness(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            model = random_model(rng, 10, 3, [3, 2])
            if check_corollary_proper(model).passed:
                s, value = find_witness_s(model)
                assert value < 1 and value <= hypoth_value(model, 1.0) + 1e-15

    def test_search_respects_s_tilde(self):
        model = with_prior(one_way_model(), [-4.5, 1.0], [1.0, 1.0])
        found = find_witness_s(model)
        if found is not None:
            assert 0 < found[0] < 0.5

    def test_none_when_first_term_too_large(self):
        # rank(Z) = N = 40 with a_0 + N/2 = 1.5: the first term exceeds 1 for every admissible s
        rng = np.random.default_rng(5)
        design = GlmmDesign(rng.standard_normal(40), rng.standard_normal((40, 1)),
                            [rng.standard_normal((40, 40))])
        model = build_model(design, PriorSpec(np.zeros(1), 1.0, [-18.5, 1.0], [1.0, 1.0]))
        grid = np.linspace(1e-4, 1.0, 200)
        assert min(hypoth_value(model, s) for s in grid) >= 1
        assert find_witness_s(model) is None
        assert certify(model).route == "Failed"

    def test_general_route_precedence(self):
        design = GlmmDesign(np.array([1.0, -0.5]), np.ones((2, 1)), [np.eye(2)])
        model = build_model(design, PriorSpec(np.zeros(1), 1.0, [0.5, 0.5], [1.0, 1.0]))
        cert = certify(model)
        assert cert.route == "Proposition3_1_search"
        assert hypoth_value(model, cert.witness_s) < 1
        rep, found = check_general(model)
        assert rep.passed and found[0] == cert.witness_s


class TestAlphaAndConstants:
    def model(self):
        return random_model(np.random.default_rng(6), 12, 3, [3, 2], duplicate_z=True)

    def test_delta_crosses_one_at_bound(self):
        model = self.model()
        s = find_witness_s(model)[0]
        bound = alpha_lower_bound(model, s)
        assert bound > 0
        assert delta(model, s, 2 * bound) < 1
        assert delta(model, s, 0.5 * bound) >= 1
        assert delta(model, s, bound) == pytest.approx(1.0, rel=1e-12)

    def test_denominator(self):
        rng = np.random.default_rng(5)
        design = GlmmDesign(rng.standard_normal(40), rng.standard_normal((40, 1)),
                            [rng.standard_normal((40, 40))])
        model = build_model(design, PriorSpec(np.zeros(1), 1.0, [-18.5, 1.0], [1.0, 1.0]))
        with pytest.raises(DenominatorNonpositive):
            alpha_lower_bound(model, 0.5)

    def test_all_rates_positive(self):
        model = self.model()
        s = find_witness_s(model)[0]
        consts = improper_branch_constants(model, s)
        assert consts.c == 0.25 and consts.b_zero == [] and consts.rho_prime == 0.0
        assert consts.alpha > alpha_lower_bound(model, s)
        assert consts.rho < 1

    def test_midpoint_rule(self):
        model = build_model(design_full_rank_z(n=10, q=4), PriorSpec(np.zeros(2), 1.0, [1.0, -1.0], [1.0, 0.0]))
        s = find_witness_s(model)[0]
        consts = improper_branch_constants(model, s)
        assert consts.c == 0.25 and consts.b_zero == [1]
        factor = gamma_ratio_ref(-1.0 + 2.0, 0.25) * gamma_ratio_ref(2.0, -0.25)
        assert consts.rh12_max == pytest.approx(factor, rel=1e-12)
        assert consts.rh12_max < 1
        model = build_model(design_full_rank_z(n=10, q=4), PriorSpec(np.zeros(2), 1.0, [1.0, -0.2], [1.0, 0.0]))
        assert improper_branch_constants(model, find_witness_s(model)[0]).c == pytest.approx(0.1)


class TestCertificate:
    def test_round_trip_and_schema(self):
        schema = load_schema("certificate")
        rng = np.random.default_rng(7)
        for _ in range(10):
            model = random_model(rng, int(rng.integers(3, 12)), 3, [2, 3], duplicate_z=bool(rng.integers(2)))
            cert = certify(model)
            data = json.loads(json.dumps(cert.to_dict()))
            jsonschema.validate(data, schema)
            assert Certificate.from_dict(data) == cert

    def test_certified_routes_have_positive_margins(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            model = random_model(rng, int(rng.integers(3, 12)), 3, [2, 3],
                                 a=rng.uniform(-1, 2, 3), b=rng.uniform(0, 2, 3))
            cert = certify(model)
            if cert.certified:
                own = {k: v for k, v in cert.margins.items() if k.startswith(cert.route + ".")}
                assert own and all(v > 0 for v in own.values())

    def test_failed_error_rate(self):
        model = one_way_model()
        model = with_prior(model, [0.5, 0.5], [-model.derived.sse, 1.0])
        cert = certify(model)
        assert cert.route == "Failed" and not cert.certified
        assert cert.margins["Corollary2.error_rate"] < 0
