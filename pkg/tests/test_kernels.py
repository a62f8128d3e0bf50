"""Martingale kernels, Lipschitz-Markov certification, path measures, the limit family."""

import math

import numpy as np
import pytest

from conftest import dilation_of, lp_transport_cost, random_measure
from rootchain.kernels import (
    KernelError,
    MartingaleKernel,
    PathMeasure,
    chain_to_path_measure,
    compose,
    counterexample,
    hinge,
    is_lipschitz_markov,
    is_markov,
    is_martingale,
    lip1_test_family,
    lipschitz_conditional,
    lq_inequality_check,
    marginal,
    path_upcrossings,
    pushforward,
    threshold_functional,
    validate_kernel,
    w1_profile,
)
from rootchain.measures import DiscreteMeasure, w1
from rootchain.strassen import feasible_coupling

D0 = DiscreteMeasure.point_mass(0.0)
PM1 = DiscreteMeasure.uniform([-1.0, 1.0])


def binomial_split(atoms) -> MartingaleKernel:
    """x -> (delta_{x-1} + delta_{x+1}) / 2 on each source atom."""
    atoms = np.asarray(atoms, float)
    return MartingaleKernel(
        atoms, tuple(DiscreteMeasure.uniform([x - 1.0, x + 1.0]) for x in atoms)
    )


@pytest.fixture
def crossing_kernel() -> MartingaleKernel:
    """Martingale kernel whose conditional CDFs cross: W1 gap 2.5 over source gap 2."""
    return MartingaleKernel(
        np.array([-1.0, 1.0]),
        (
            DiscreteMeasure.uniform([-3.0, 1.0]),
            DiscreteMeasure(np.array([0.0, 4.0]), np.array([0.75, 0.25])),
        ),
    )


class TestValidateKernel:
    def test_identity_passes(self):
        report = validate_kernel(MartingaleKernel.identity(np.array([-1.0, 0.5, 2.0])))
        assert report.passed
        assert max(report.deviations) == 0.0

    def test_centered_split_passes(self):
        K = MartingaleKernel(np.array([0.0]), (PM1,))
        assert validate_kernel(K).passed

    def test_shifted_target_fails_with_deviation_one(self):
        K = MartingaleKernel(np.array([0.0]), (DiscreteMeasure.point_mass(1.0),))
        report = validate_kernel(K)
        assert not report.passed
        assert report.deviations[0] == pytest.approx(1.0)
        assert report.worst_index == 0

    def test_sources_must_increase(self):
        with pytest.raises(KernelError):
            MartingaleKernel(np.array([1.0, 0.0]), (D0, D0))


class TestPushforward:
    def test_single_source(self):
        K = MartingaleKernel(np.array([0.0]), (PM1,))
        assert pushforward(D0, K) == PM1

    def test_identity(self):
        mu = DiscreteMeasure.uniform([-1.0, 0.0, 2.0])
        assert pushforward(mu, MartingaleKernel.identity(mu.atoms)) == mu

    def test_binomial_mixture(self):
        out = pushforward(PM1, binomial_split(PM1.atoms))
        assert out.atoms.tolist() == [-2.0, 0.0, 2.0]
        assert out.weights == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)

    def test_unmatched_atom_raises(self):
        K = MartingaleKernel(np.array([0.0]), (PM1,))
        with pytest.raises(KernelError):
            pushforward(DiscreteMeasure.point_mass(0.5), K)


class TestCompose:
    def test_identity_is_neutral(self, crossing_kernel):
        I = MartingaleKernel.identity(np.array([-3.0, 0.0, 1.0, 4.0]))
        out = compose(crossing_kernel, I)
        assert np.array_equal(out.sources, crossing_kernel.sources)
        assert all(a == b for a, b in zip(out.targets, crossing_kernel.targets))

    def test_two_step_binomial(self):
        K1 = MartingaleKernel(np.array([0.0]), (PM1,))
        K2 = binomial_split([-1.0, 1.0])
        out = compose(K1, K2)
        row = out.row(0.0)
        assert row.atoms.tolist() == [-2.0, 0.0, 2.0]
        assert row.weights == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
        assert validate_kernel(out).passed

    def test_composition_preserves_lipschitz_markov(self):
        # Two one-step splits, each passing, compose to a passing kernel.
        K1 = binomial_split([-1.0, 0.0, 1.0])
        K2 = binomial_split([-2.0, -1.0, 0.0, 1.0, 2.0])
        assert is_lipschitz_markov(K1)[0] and is_lipschitz_markov(K2)[0]
        ok, _ = is_lipschitz_markov(compose(K1, K2))
        assert ok

    def test_support_mismatch_raises(self, crossing_kernel):
        with pytest.raises(KernelError):
            compose(crossing_kernel, MartingaleKernel.identity(np.array([0.0])))


class TestIsLipschitzMarkov:
    def test_identity_kernel(self):
        ok, cert = is_lipschitz_markov(MartingaleKernel.identity(np.array([0.0, 1.0])))
        assert ok and cert.passed
        assert cert.pairs[0].w1 == pytest.approx(1.0, abs=1e-12)

    def test_crossing_kernel_fails(self, crossing_kernel):
        # Oracle for the W1 value: independent LP coupling cost.
        lp = lp_transport_cost(*crossing_kernel.targets)
        assert lp == pytest.approx(2.5, abs=1e-9)
        ok, cert = is_lipschitz_markov(crossing_kernel)
        assert not ok
        rec = cert.pairs[0]
        assert not rec.fsd_ok
        assert rec.gap == 2.0
        assert rec.w1 == pytest.approx(2.5, abs=1e-12)

    def test_equivalence_with_w1_equality(self):
        # A kernel passes iff every consecutive W1 equals the source gap;
        # checked independently on a batch of LP-built kernels.
        rng = np.random.default_rng(17)
        seen_pass = seen_fail = 0
        for _ in range(40):
            mu = random_measure(rng, max_atoms=3)
            K = feasible_coupling(mu, dilation_of(mu, rng))
            if isinstance(K, MartingaleKernel) and len(K.sources) > 1:
                ok, _ = is_lipschitz_markov(K)
                gaps = np.diff(K.sources)
                profile = w1_profile(K)
                w1_equal = bool(np.all(np.abs(profile - gaps) <= 1e-9 * (1 + gaps)))
                assert ok == w1_equal
                seen_pass += ok
                seen_fail += not ok
        assert seen_pass > 0 and seen_fail > 0


class TestW1Profile:
    def test_identity_gives_gaps(self):
        K = MartingaleKernel.identity(np.array([-1.0, 0.5, 3.0]))
        assert w1_profile(K) == pytest.approx([1.5, 2.5], abs=1e-15)

    def test_crossing_kernel_value(self, crossing_kernel):
        assert w1_profile(crossing_kernel) == pytest.approx([2.5], abs=1e-12)

    def test_universal_lower_bound(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            mu = random_measure(rng, max_atoms=4)
            K = feasible_coupling(mu, dilation_of(mu, rng))
            if not isinstance(K, MartingaleKernel) or len(K.sources) < 2:
                continue
            gaps = np.diff(K.sources)
            assert np.all(w1_profile(K) >= gaps - 1e-12)


class TestLipschitzConditional:
    def test_identity_function_recovers_sources(self, crossing_kernel):
        g, ok = lipschitz_conditional(crossing_kernel, lambda y: y)
        assert g == pytest.approx([-1.0, 1.0], abs=1e-12)
        assert ok

    def test_hinge_at_zero_passes_despite_crossing(self, crossing_kernel):
        # Hinges see only call prices, which are Lip-1 here even though the
        # kernel itself is not: the conditional means pin every hinge's
        # growth.  The failure below needs a test function with two kinks.
        g, ok = lipschitz_conditional(crossing_kernel, hinge(0.0))
        assert g == pytest.approx([2.0, 1.0], abs=1e-12)
        assert ok

    def test_two_kink_dual_function_fails(self, crossing_kernel):
        def f(y):
            return y - 2.0 * np.maximum(y, 0.0) + 2.0 * np.maximum(y - 1.0, 0.0)

        g, ok = lipschitz_conditional(crossing_kernel, f)
        assert not ok
        assert abs(g[1] - g[0]) == pytest.approx(2.5, abs=1e-12)

    def test_full_family_passes_on_certified_kernel(self):
        K = binomial_split([-1.0, 0.0, 1.0])
        assert is_lipschitz_markov(K)[0]
        for name, f in lip1_test_family(K):
            _, ok = lipschitz_conditional(K, f)
            assert ok, name

    def test_family_contains_hinges_and_identities(self, crossing_kernel):
        names = [name for name, _ in lip1_test_family(crossing_kernel)]
        assert "identity" in names and "neg_identity" in names
        assert any(name.startswith("hinge@") for name in names)


class TestChainToPathMeasure:
    def test_single_split(self):
        P = chain_to_path_measure(D0, [MartingaleKernel(np.array([0.0]), (PM1,))], (0.5, 1.0))
        assert P.support.tolist() == [[0.0, -1.0], [0.0, 1.0]]
        assert P.weights.tolist() == [0.5, 0.5]

    def test_two_step_binomial(self):
        chain = [MartingaleKernel(np.array([0.0]), (PM1,)), binomial_split([-1.0, 1.0])]
        P = chain_to_path_measure(D0, chain, (1 / 3, 2 / 3, 1.0))
        assert len(P.weights) == 4
        assert P.weights == pytest.approx([0.25] * 4, abs=1e-15)

    def test_identity_chain_keeps_weights(self):
        mu = DiscreteMeasure.uniform([-1.0, 2.0])
        I = MartingaleKernel.identity(mu.atoms)
        P = chain_to_path_measure(mu, [I, I], (1 / 3, 2 / 3, 1.0))
        assert P.support.tolist() == [[-1.0, -1.0, -1.0], [2.0, 2.0, 2.0]]
        assert P.weights.tolist() == [0.5, 0.5]

    def test_cap_exceeded(self):
        split = binomial_split(np.arange(-10.0, 11.0))
        with pytest.raises(KernelError):
            chain_to_path_measure(
                D0, [split] * 7, tuple(np.linspace(0.125, 1.0, 8)), cap=100
            )

    def test_support_mismatch(self, ):
        K = MartingaleKernel(np.array([0.0]), (PM1,))
        with pytest.raises(KernelError):
            chain_to_path_measure(DiscreteMeasure.point_mass(0.5), [K], (0.5, 1.0))


class TestMarginalAndCheckers:
    @pytest.fixture
    def binomial_path(self) -> PathMeasure:
        chain = [MartingaleKernel(np.array([0.0]), (PM1,)), binomial_split([-1.0, 1.0])]
        return chain_to_path_measure(D0, chain, (1 / 3, 2 / 3, 1.0))

    def test_marginals_match_pushforwards(self, binomial_path):
        assert marginal(binomial_path, 1 / 3) == D0
        assert marginal(binomial_path, 2 / 3) == PM1
        final = marginal(binomial_path, 1.0)
        assert final.atoms.tolist() == [-2.0, 0.0, 2.0]
        assert final.weights == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)

    def test_unknown_time_raises(self, binomial_path):
        with pytest.raises(KernelError):
            marginal(binomial_path, 0.5)

    def test_chain_output_is_martingale_and_markov(self, binomial_path):
        assert is_martingale(binomial_path)
        assert is_markov(binomial_path)

    def test_constant_paths_are_martingale(self):
        mu = DiscreteMeasure.uniform([-1.0, 2.0])
        I = MartingaleKernel.identity(mu.atoms)
        P = chain_to_path_measure(mu, [I], (0.5, 1.0))
        assert is_martingale(P) and is_markov(P)

    def test_counterexample_two_is_not_martingale(self):
        # E[S_2 | S_1 = 1] = 1/2, not 1.
        assert not is_martingale(counterexample(2))


class TestCounterexample:
    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_finite_members_are_markov(self, n):
        assert is_markov(counterexample(n))

    def test_limit_is_not_markov(self):
        # S_2 = 0 on both paths, yet S_3 is determined by S_1.
        assert not is_markov(counterexample(math.inf))

    def test_member_shape(self):
        P = counterexample(4)
        assert P.support.tolist() == [[-1.0, -0.25, -1.0], [1.0, 0.25, 1.0]]
        assert P.weights.tolist() == [0.5, 0.5]

    def test_only_first_member_is_martingale(self):
        assert is_martingale(counterexample(1))
        assert not is_martingale(counterexample(2))
        assert not is_martingale(counterexample(math.inf))

    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_middle_marginal_distance_is_one_over_n(self, n):
        limit = counterexample(math.inf)
        P = counterexample(n)
        t_mid = P.times[1]
        assert w1(marginal(P, t_mid), marginal(limit, t_mid)) == 1.0 / n

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            counterexample(0)


class TestLqInequality:
    def test_limit_violation(self):
        L = counterexample(math.inf)
        X = threshold_functional(L, L.times[0], 0.0, complement=True)
        Y = threshold_functional(L, L.times[0], 0.0)
        lhs, rhs, holds = lq_inequality_check(L, L.times[1], L.times[2], lambda y: y, X, Y)
        assert lhs == pytest.approx(0.5, abs=1e-15)
        assert rhs == pytest.approx(0.0, abs=1e-15)
        assert not holds

    def test_holds_on_lipschitz_markov_chain(self):
        chain = [MartingaleKernel(np.array([0.0]), (PM1,)), binomial_split([-1.0, 1.0])]
        P = chain_to_path_measure(D0, chain, (1 / 3, 2 / 3, 1.0))
        s, t = P.times[1], P.times[2]
        fs = [lambda y: y, hinge(0.0), hinge(-1.0), hinge(1.0)]
        cuts = [-1.0, 0.0, 1.0]
        for f in fs:
            for cx in cuts:
                for cy in cuts:
                    for comp in (False, True):
                        X = threshold_functional(P, s, cx, complement=comp)
                        Y = threshold_functional(P, P.times[0], cy)
                        lhs, rhs, holds = lq_inequality_check(P, s, t, f, X, Y)
                        assert holds, (lhs, rhs)

    def test_zero_functional(self):
        L = counterexample(math.inf)
        zero = lambda path: 0.0
        Y = threshold_functional(L, L.times[0], 0.0)
        lhs, rhs, holds = lq_inequality_check(L, L.times[1], L.times[2], lambda y: y, zero, Y)
        assert lhs == 0.0 and rhs == 0.0 and holds

    def test_rejects_bad_times(self):
        L = counterexample(math.inf)
        with pytest.raises(KernelError):
            lq_inequality_check(L, 0.5, 1.0, lambda y: y, lambda p: 1.0, lambda p: 1.0)


class TestPathUpcrossings:
    def test_double_upcrossing(self):
        assert path_upcrossings(np.array([0.0, 1.0, 0.0, 1.0]), 0.25, 0.75) == 2

    def test_constant_path(self):
        assert path_upcrossings(np.array([0.3, 0.3, 0.3]), 0.25, 0.75) == 0

    def test_single_jump(self):
        assert path_upcrossings(np.array([0.0, 2.0]), 0.5, 1.5) == 1

    def test_requires_a_below_b(self):
        with pytest.raises(ValueError):
            path_upcrossings(np.array([0.0, 1.0]), 1.0, 0.5)

    def test_touching_band_edges_counts(self):
        # Reaching the edges exactly qualifies (closed-interval convention).
        assert path_upcrossings(np.array([0.25, 0.75]), 0.25, 0.75) == 1


class TestKernelSerialization:
    def test_round_trip(self, crossing_kernel):
        data = crossing_kernel.to_dict()
        back = MartingaleKernel.from_dict(data)
        assert np.array_equal(back.sources, crossing_kernel.sources)
        assert all(a == b for a, b in zip(back.targets, crossing_kernel.targets))

    def test_row_lookup(self, crossing_kernel):
        assert crossing_kernel.row(-1.0) == crossing_kernel.targets[0]
        with pytest.raises(KernelError):
            crossing_kernel.row(0.25)

    def test_path_measure_round_trip(self):
        P = counterexample(2)
        back = PathMeasure.from_dict(P.to_dict())
        assert back.times == P.times
        assert np.array_equal(back.support, P.support)
        assert np.array_equal(back.weights, P.weights)
