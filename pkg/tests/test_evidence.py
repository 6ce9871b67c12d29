"""Belief-mass algebra: worked values, laws, and the enumeration oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evloc.evidence import (BeliefMass, DirichletParams, TotalConflictError,
                            combine, combine_many, conflict,
                            dirichlet_from_evidence, mass_audit,
                            masses_from_evidence, oracle_combine, vacuous)
from evloc.validation import ValidationError

TOL = 1e-9
EXACT = 1e-12


def brute_force_conflict(m1: BeliefMass, m2: BeliefMass) -> float:
    """Independent double loop over singleton pairs."""
    total = 0.0
    for a in range(m1.size):
        for c in range(m2.size):
            if a != c:
                total += m1.singletons[a] * m2.singletons[c]
    return total


def random_mass(rng: np.random.Generator, t: int) -> BeliefMass:
    parts = rng.dirichlet(np.ones(t + 1))
    return BeliefMass(singletons=parts[:t], theta=float(parts[t]))


@st.composite
def masses(draw, min_t=2, max_t=5):
    t = draw(st.integers(min_value=min_t, max_value=max_t))
    raw = draw(st.lists(st.floats(min_value=0.01, max_value=10.0),
                        min_size=t + 1, max_size=t + 1))
    parts = np.asarray(raw) / np.sum(raw)
    return BeliefMass(singletons=parts[:t], theta=float(parts[t]))


class TestMassesFromEvidence:
    def test_zero_evidence_is_vacuous(self):
        m = masses_from_evidence([0.0, 0.0])
        assert np.allclose(m.singletons, [0.0, 0.0])
        assert m.theta == 1.0

    def test_worked_two_class_example(self):
        # S = (3+1) + (1+1) = 6, masses e/S, theta = 2/6.
        m = masses_from_evidence([3.0, 1.0])
        assert m.singletons[0] == pytest.approx(0.5, abs=TOL)
        assert m.singletons[1] == pytest.approx(1.0 / 6.0, abs=TOL)
        assert m.theta == pytest.approx(1.0 / 3.0, abs=TOL)

    def test_single_class_frame(self):
        m = masses_from_evidence([9.0])
        assert m.singletons[0] == pytest.approx(0.9, abs=TOL)
        assert m.theta == pytest.approx(0.1, abs=TOL)

    def test_rejects_negative_and_non_finite(self):
        with pytest.raises(ValidationError):
            masses_from_evidence([1.0, -0.5])
        with pytest.raises(ValidationError):
            masses_from_evidence([np.nan, 1.0])
        with pytest.raises(ValidationError):
            masses_from_evidence([])

    def test_theta_is_exactly_t_over_strength(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            t = int(rng.integers(1, 6))
            e = rng.uniform(0.0, 5.0, t)
            m = masses_from_evidence(e)
            strength = e.sum() + t
            assert m.theta == t / strength
            assert abs(m.singletons.sum() + m.theta - 1.0) <= TOL


class TestVacuous:
    def test_values(self):
        m = vacuous(3)
        assert np.all(m.singletons == 0.0) and m.theta == 1.0

    def test_identity_law(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = random_mass(rng, 2)
            fused = combine(vacuous(2), m)
            assert np.all(np.abs(fused.singletons - m.singletons) <= EXACT)
            assert abs(fused.theta - m.theta) <= EXACT

    def test_matches_zero_evidence(self):
        for t in (1, 2, 5):
            z = masses_from_evidence([0.0] * t)
            v = vacuous(t)
            assert np.all(z.singletons == v.singletons) and z.theta == v.theta

    def test_zero_size_rejected(self):
        with pytest.raises(ValidationError):
            vacuous(0)


class TestConflict:
    def test_total_conflict(self):
        m1 = BeliefMass(singletons=np.array([1.0, 0.0]), theta=0.0)
        m2 = BeliefMass(singletons=np.array([0.0, 1.0]), theta=0.0)
        assert conflict(m1, m2) == pytest.approx(1.0, abs=EXACT)

    def test_vacuous_conflicts_with_nothing(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = random_mass(rng, 3)
            assert conflict(vacuous(3), m) == 0.0

    def test_worked_example_and_brute_force(self):
        m = masses_from_evidence([3.0, 1.0])  # {1/2, 1/6, theta 1/3}
        assert conflict(m, m) == pytest.approx(1.0 / 6.0, abs=TOL)
        assert conflict(m, m) == pytest.approx(brute_force_conflict(m, m), abs=EXACT)

    def test_symmetric_and_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            t = int(rng.integers(2, 6))
            a, b = random_mass(rng, t), random_mass(rng, t)
            assert conflict(a, b) == pytest.approx(conflict(b, a), abs=EXACT)
            assert conflict(a, b) == pytest.approx(brute_force_conflict(a, b), abs=EXACT)
            assert 0.0 <= conflict(a, b) <= 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            conflict(vacuous(2), vacuous(3))


class TestCombine:
    def test_worked_self_fusion(self):
        m = masses_from_evidence([3.0, 1.0])
        fused = combine(m, m)
        assert fused.singletons[0] == pytest.approx(0.7, abs=TOL)
        assert fused.singletons[1] == pytest.approx(1.0 / 6.0, abs=TOL)
        assert fused.theta == pytest.approx(2.0 / 15.0, abs=TOL)

    def test_total_conflict_raises(self):
        m1 = BeliefMass(singletons=np.array([1.0, 0.0]), theta=0.0)
        m2 = BeliefMass(singletons=np.array([0.0, 1.0]), theta=0.0)
        with pytest.raises(TotalConflictError):
            combine(m1, m2)

    def test_commutative(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            t = int(rng.integers(2, 6))
            a, b = random_mass(rng, t), random_mass(rng, t)
            ab, ba = combine(a, b), combine(b, a)
            assert np.all(np.abs(ab.singletons - ba.singletons) <= EXACT)
            assert abs(ab.theta - ba.theta) <= EXACT

    def test_associative(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            t = int(rng.integers(2, 6))
            a, b, c = (random_mass(rng, t) for _ in range(3))
            left = combine(combine(a, b), c)
            right = combine(a, combine(b, c))
            assert np.all(np.abs(left.singletons - right.singletons) <= TOL)
            assert abs(left.theta - right.theta) <= TOL

    @settings(max_examples=200, deadline=None)
    @given(masses(), masses())
    def test_normalized_output_property(self, a, b):
        if a.size != b.size:
            return
        fused = combine(a, b)
        assert abs(fused.singletons.sum() + fused.theta - 1.0) <= TOL
        assert fused.theta >= 0 and np.all(fused.singletons >= 0)


class TestCombineMany:
    def test_singleton_sequence(self):
        m = masses_from_evidence([2.0, 5.0])
        out = combine_many([m])
        assert np.all(out.singletons == m.singletons)

    def test_vacuous_chain(self):
        m = masses_from_evidence([2.0, 5.0])
        out = combine_many([vacuous(2), vacuous(2), m])
        assert np.all(np.abs(out.singletons - m.singletons) <= EXACT)
        assert abs(out.theta - m.theta) <= EXACT

    def test_order_independent(self):
        m = masses_from_evidence([3.0, 1.0])
        third = masses_from_evidence([0.5, 2.0])
        orders = [[m, m, third], [third, m, m], [m, third, m]]
        results = [combine_many(seq) for seq in orders]
        for r in results[1:]:
            assert np.all(np.abs(r.singletons - results[0].singletons) <= TOL)
            assert abs(r.theta - results[0].theta) <= TOL

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            combine_many([])

    def test_total_conflict_names_step(self):
        m1 = BeliefMass(singletons=np.array([1.0, 0.0]), theta=0.0)
        m2 = BeliefMass(singletons=np.array([0.0, 1.0]), theta=0.0)
        with pytest.raises(TotalConflictError, match="element 2"):
            combine_many([m1, vacuous(2), m2])


class TestOracleCombine:
    def test_matches_on_worked_examples(self):
        m = masses_from_evidence([3.0, 1.0])
        pairs = [(m, m), (m, vacuous(2)), (masses_from_evidence([0.1, 4.0]), m)]
        for a, b in pairs:
            fast, slow = combine(a, b), oracle_combine(a, b)
            assert np.all(np.abs(fast.singletons - slow.singletons) <= EXACT)
            assert abs(fast.theta - slow.theta) <= EXACT

    def test_vacuous_identity_in_oracle(self):
        m = masses_from_evidence([1.0, 2.0, 3.0])
        out = oracle_combine(m, vacuous(3))
        assert np.all(np.abs(out.singletons - m.singletons) <= EXACT)

    def test_total_conflict_raises_in_oracle(self):
        m1 = BeliefMass(singletons=np.array([1.0, 0.0]), theta=0.0)
        m2 = BeliefMass(singletons=np.array([0.0, 1.0]), theta=0.0)
        with pytest.raises(TotalConflictError):
            oracle_combine(m1, m2)

    @pytest.mark.parametrize("t", [1, 2, 3, 4, 5])
    def test_random_agreement(self, t):
        rng = np.random.default_rng(100 + t)
        for _ in range(100):
            a, b = random_mass(rng, t), random_mass(rng, t)
            fast, slow = combine(a, b), oracle_combine(a, b)
            assert np.all(np.abs(fast.singletons - slow.singletons) <= EXACT)
            assert abs(fast.theta - slow.theta) <= EXACT


class TestDirichlet:
    def test_uniform_prior(self):
        d = dirichlet_from_evidence([0.0, 0.0, 0.0])
        assert np.all(d.alpha == 1.0) and d.strength == 3.0

    def test_worked_example(self):
        d = dirichlet_from_evidence([3.0, 1.0])
        assert np.all(d.alpha == [4.0, 2.0]) and d.strength == 6.0
        assert np.allclose(d.predictive_mean, [2.0 / 3.0, 1.0 / 3.0])

    def test_strength_matches_mass_normalizer(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            t = int(rng.integers(1, 6))
            e = rng.uniform(0.0, 8.0, t)
            d = dirichlet_from_evidence(e)
            m = masses_from_evidence(e)
            assert m.theta == pytest.approx(t / d.strength, abs=EXACT)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValidationError):
            DirichletParams(alpha=np.array([1.0, 0.0]), strength=1.0)
        with pytest.raises(ValidationError):
            DirichletParams(alpha=np.array([1.0, 1.0]), strength=3.0)


class TestBeliefMassInvariants:
    def test_rejects_unnormalized(self):
        with pytest.raises(ValidationError):
            BeliefMass(singletons=np.array([0.6, 0.6]), theta=0.0)

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            BeliefMass(singletons=np.array([1.2, -0.2]), theta=0.0)

    def test_immutable_array(self):
        m = vacuous(2)
        with pytest.raises(ValueError):
            m.singletons[0] = 1.0

    def test_as_array_layout(self):
        m = masses_from_evidence([3.0, 1.0])
        arr = m.as_array()
        assert arr.shape == (3,) and arr[-1] == m.theta

    def test_audit_counts_and_tracks(self):
        with mass_audit() as audit:
            masses_from_evidence([3.0, 1.0])
            combine(masses_from_evidence([1.0, 1.0]), vacuous(2))
        assert audit.count == 4
        assert audit.max_deviation <= TOL
