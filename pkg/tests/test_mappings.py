"""Map catalog tests: evaluation, Jordan *-law checks, perturbation shapes."""

import numpy as np
import pytest

from stablab.algebra import (
    Element,
    element,
    identity,
    op_norm,
    random_element,
    zeros,
)
from stablab.mappings import (
    Identity,
    Negation,
    Perturbation,
    Perturbed,
    Transpose,
    UnitaryConjugation,
    ZeroMap,
    evaluate,
    is_exact_jordan_star,
    multiplicativity_witness,
    phase_permutation_unitary,
    unit_circle_grid,
    unit_direction,
)


class TestEvaluate:
    def test_identity(self):
        x = random_element(3, 3, 1.0)
        assert np.array_equal(evaluate(Identity(3), x).entries, x.entries)

    def test_transpose_forced(self):
        got = evaluate(Transpose(2), element([[0, 1], [0, 0]]))
        assert np.array_equal(got.entries, np.array([[0, 0], [1, 0]], dtype=complex))

    def test_constant_perturbation_adds_offset(self):
        f = Perturbed(
            Identity(2),
            Perturbation(size=0.5, power=0.0, direction=unit_direction(2, "identity"), mode="constant"),
        )
        x = element([[1, 2], [3, 4]])
        expected = x.entries + 0.5 * np.eye(2)
        assert np.allclose(evaluate(f, x).entries, expected, atol=1e-15)
        # the constant mode vanishes at zero by convention
        assert np.array_equal(evaluate(f, zeros(2)).entries, zeros(2).entries)

    def test_affine_perturbation_keeps_offset_at_zero(self):
        f = Perturbed(
            Identity(2),
            Perturbation(size=1.0, power=0.0, direction=unit_direction(2, "identity"), mode="affine"),
        )
        assert np.allclose(evaluate(f, zeros(2)).entries, np.eye(2), atol=1e-15)

    def test_power_perturbation_magnitude(self):
        # defect norm identity: ||f(a) - a|| == size * ||a||^power exactly up
        # to the norm iteration tolerance
        f = Perturbed(
            Identity(3),
            Perturbation(size=0.25, power=1.5, direction=unit_direction(3, "identity"), mode="power"),
        )
        for seed in range(10):
            a = random_element(seed, 3, 2.0)
            gap = op_norm(Element(evaluate(f, a).entries - a.entries))
            expected = 0.25 * op_norm(a) ** 1.5
            assert gap == pytest.approx(expected, rel=1e-10, abs=1e-300)

    def test_power_perturbation_zero_at_zero_for_any_exponent(self):
        for power in (-1.0, 0.0, 2.0):
            f = Perturbed(
                Identity(2),
                Perturbation(size=1.0, power=power, direction=unit_direction(2, "corner"), mode="power"),
            )
            assert np.array_equal(evaluate(f, zeros(2)).entries, zeros(2).entries)

    def test_odd_field_is_odd(self):
        f = Perturbed(
            Identity(3),
            Perturbation(size=0.1, power=2.0, direction=unit_direction(3, "identity"), mode="power", odd=True),
        )
        for seed in range(8):
            a = random_element(seed + 50, 3, 1.0)
            eps_pos = evaluate(f, a).entries - a.entries
            eps_neg = evaluate(f, Element(-a.entries)).entries + a.entries
            assert np.allclose(eps_neg, -eps_pos, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(Exception):
            evaluate(Identity(2), identity(3))


class TestValidation:
    def test_unitary_conjugation_rejects_non_unitary(self):
        with pytest.raises(ValueError):
            UnitaryConjugation(element([[1, 0], [0, 2]]))

    def test_perturbed_does_not_nest(self):
        inner = Perturbed(
            Identity(2),
            Perturbation(size=0.1, power=0.0, direction=unit_direction(2, "identity"), mode="constant"),
        )
        with pytest.raises(ValueError):
            Perturbed(inner, inner.perturbation)

    def test_direction_norm_capped(self):
        with pytest.raises(ValueError):
            Perturbation(size=1.0, power=0.0, direction=element([[2, 0], [0, 0]]), mode="constant")

    def test_direction_dimension_checked(self):
        with pytest.raises(Exception):
            Perturbed(
                Identity(3),
                Perturbation(size=0.1, power=0.0, direction=unit_direction(2, "identity"), mode="constant"),
            )


class TestUnitCircleGrid:
    def test_contains_mandatory_scalars_once(self):
        grid = unit_circle_grid(16)
        for needed in (1, -1, 1j, -1j):
            assert sum(1 for v in grid if abs(v - needed) < 1e-12) == 1
        assert len(grid) == 16  # the four mandatory scalars sit on the grid

    def test_all_unit_modulus(self):
        for v in unit_circle_grid(10):
            assert abs(abs(v) - 1.0) <= 1e-12

    def test_no_extra_phases(self):
        assert sorted(unit_circle_grid(0), key=lambda z: (z.real, z.imag)) == sorted(
            [1, -1, 1j, -1j], key=lambda z: (z.real, z.imag)
        )


class TestJordanStar:
    def test_transpose_is_jordan_star(self):
        # oracle: entrywise identities (a*)^T == (a^T)* and (a^2)^T == (a^T)^2
        rng = np.random.default_rng(8)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        assert np.allclose((a.conj().T).T, (a.T).conj().T)
        assert np.allclose((a @ a).T, a.T @ a.T)
        report = is_exact_jordan_star(Transpose(3), samples=100, seed=31, tol=1e-9)
        assert report.ok
        assert max(report.defects.values()) <= 1e-9

    def test_unitary_conjugation_is_jordan_star(self):
        u = phase_permutation_unitary(3, seed=6)
        # oracle: u a u* u a u* == u a^2 u* because u* u == I
        rng = np.random.default_rng(9)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        ua = u.entries @ a @ u.entries.conj().T
        assert np.allclose(ua @ ua, u.entries @ (a @ a) @ u.entries.conj().T, atol=1e-12)
        report = is_exact_jordan_star(UnitaryConjugation(u), samples=100, seed=32, tol=1e-9)
        assert report.ok

    def test_zero_map_is_jordan_star(self):
        assert is_exact_jordan_star(ZeroMap(3), samples=20, seed=33, tol=1e-12).ok

    def test_constant_perturbation_fails_with_witness(self):
        f = Perturbed(
            Identity(3),
            Perturbation(size=0.1, power=0.0, direction=unit_direction(3, "identity"), mode="constant"),
        )
        report = is_exact_jordan_star(f, samples=100, seed=34, tol=1e-6)
        assert not report.ok
        assert report.witness is not None
        # the defect is on the 0.1 scale of the perturbation
        assert 0.01 <= max(report.defects.values()) <= 1.0

    def test_negation_is_additive_but_not_jordan(self):
        report = is_exact_jordan_star(Negation(3), samples=100, seed=35, tol=1e-9)
        assert not report.ok
        assert report.worst_check == "squares"
        assert report.defects["additivity"] <= 1e-12
        assert report.defects["involution"] <= 1e-12
        assert report.defects["homogeneity"] <= 1e-12

    def test_exact_kinds_additive_and_homogeneous(self):
        for f in (Identity(3), Transpose(3), Negation(3), UnitaryConjugation(phase_permutation_unitary(3, 1))):
            report = is_exact_jordan_star(f, samples=150, seed=36, tol=1e-10)
            assert report.defects["additivity"] <= 1e-10
            assert report.defects["homogeneity"] <= 1e-10

    def test_transpose_not_multiplicative(self):
        for dim in (2, 3, 4):
            witness = multiplicativity_witness(Transpose(dim), seed=40, samples=200)
            assert witness is not None
            a, b, value = witness
            assert value > 0.1
            # replay the witness against a direct computation
            direct = np.linalg.svd((a.entries @ b.entries).T - a.entries.T @ b.entries.T, compute_uv=False)[0]
            assert direct == pytest.approx(value, rel=1e-9)

    def test_unitary_conjugation_is_multiplicative(self):
        u = phase_permutation_unitary(3, seed=2)
        assert multiplicativity_witness(UnitaryConjugation(u), seed=41, samples=200) is None
