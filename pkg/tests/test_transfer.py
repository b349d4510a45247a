import math
import warnings

import numpy as np
import pytest

from thermolab.lattice import Alphabet, AprioriWeights, CylinderFunction, CylinderMeasure, PotentialSpec
from thermolab.transfer import (
    CapacityError,
    ConvergenceWarning,
    DirectSumOperator,
    NotConvergedError,
    StabilityError,
    apply,
    apply_adjoint,
    build_truncated_operator,
    center,
    iterate_norms,
    leading_multiplicity,
    normalize_potential,
    power_iterate,
)

SPINS = Alphabet.spins()
UNIFORM = AprioriWeights.uniform(2)
COUNTING = AprioriWeights.counting(2)
TWO_COSH_1 = 2 * math.cosh(1.0)


def dense_perron(M):
    vals, vecs = np.linalg.eig(M)
    i = int(np.argmax(np.real(vals)))
    lvals, lvecs = np.linalg.eig(M.T)
    j = int(np.argmax(np.real(lvals)))
    h = np.abs(np.real(vecs[:, i]))
    nu = np.abs(np.real(lvecs[:, j]))
    return float(np.real(vals[i])), h / h.max(), nu / nu.sum(), np.sort(np.abs(vals))[::-1]


def test_zero_potential_uniform_rows():
    L = build_truncated_operator(PotentialSpec.constant(0.0), UNIFORM, 3)
    assert np.all(L.coef == 0.5)
    np.testing.assert_array_equal(L.matvec(np.ones(8)), np.ones(8))


def test_zero_potential_counting():
    L = build_truncated_operator(PotentialSpec.constant(0.0), COUNTING, 3)
    np.testing.assert_array_equal(L.matvec(np.ones(8)), 2 * np.ones(8))


def test_ising_rows():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 2)
    for row in L.coef:
        assert sorted(row) == pytest.approx(sorted([math.e, 1 / math.e]))
    np.testing.assert_allclose(L.matvec(np.ones(4)), TWO_COSH_1, rtol=1e-15)


def test_operator_matches_definition():
    # (L phi)(x) = sum_a w(a) exp(f(a x)) phi(a x), word by word
    rng = np.random.default_rng(3)
    A = Alphabet((0.0, 1.0, 2.0))
    w = AprioriWeights((0.2, 0.3, 0.5))
    f = PotentialSpec.tabulated(rng.normal(size=27), 3, 3)
    D = 3
    L = build_truncated_operator(f, w, D, A)
    phi = rng.normal(size=27)
    words = [(a, b, c) for a in range(3) for b in range(3) for c in range(3)]
    index = {wd: i for i, wd in enumerate(words)}
    table = f.table(A)
    oracle = np.array([
        sum(w.values[a] * math.exp(table[index[(a,) + x[:2]]]) * phi[index[(a,) + x[:2]]] for a in range(3))
        for x in words
    ])
    np.testing.assert_allclose(L.matvec(phi), oracle, rtol=1e-13)
    np.testing.assert_allclose(L.to_dense() @ phi, oracle, rtol=1e-13)
    y = rng.random(27)
    np.testing.assert_allclose(L.rmatvec(y), L.to_dense().T @ y, rtol=1e-13)


def test_depth_violation_and_capacity():
    with pytest.raises(StabilityError):
        build_truncated_operator(PotentialSpec.dyson(3.0, 6), COUNTING, 4)
    with pytest.raises(CapacityError):
        build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 12, max_states=1024)


def test_apply_examples():
    L = build_truncated_operator(PotentialSpec.constant(0.0), UNIFORM, 3)
    one = CylinderFunction.constant(1.0, 3)
    np.testing.assert_array_equal(apply(L, one).values, one.values)
    x1 = CylinderFunction.coordinate(SPINS, 3)
    np.testing.assert_array_equal(apply(L, x1).values, 0.0)
    Lising = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 3)
    np.testing.assert_allclose(apply(Lising, x1).values, 2 * math.sinh(1.0) * x1.values, rtol=1e-15)


def test_adjoint_preserves_depth():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 3)
    nu = apply_adjoint(L, CylinderMeasure.uniform(3))
    assert nu.total == pytest.approx(TWO_COSH_1)


def test_power_iterate_trivial():
    sd = power_iterate(build_truncated_operator(PotentialSpec.constant(0.0), UNIFORM, 3))
    assert sd.rho == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(sd.h, 1.0)
    np.testing.assert_allclose(sd.nu, 1 / 8)


def test_power_iterate_ising_dense_oracle():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 4)
    sd = power_iterate(L, 1e-13)
    rho, h, nu, _ = dense_perron(L.to_dense())
    assert sd.converged
    assert sd.rho == pytest.approx(TWO_COSH_1, abs=1e-12)
    assert sd.rho == pytest.approx(rho, abs=1e-12)
    np.testing.assert_allclose(sd.h, h, atol=1e-12)
    np.testing.assert_allclose(sd.nu, nu, atol=1e-12)


def test_ising_conformal_measure_is_free_boundary_chain():
    # not the uniform product: the depth-4 marginal is the free-boundary
    # nearest-neighbour chain, mass 1/2 on x_1 times e^{J x_i x_{i+1}} / (2 cosh J)
    sd = power_iterate(build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 4), 1e-13)
    words = np.array([[(i >> (3 - j)) & 1 for j in range(4)] for i in range(16)]) * 2 - 1
    oracle = 0.5 * np.prod(np.exp(words[:, :-1] * words[:, 1:]) / TWO_COSH_1, axis=1)
    np.testing.assert_allclose(sd.nu, oracle, atol=1e-13)
    assert not np.allclose(sd.nu, 1 / 16)


def test_depth_one_closed_form():
    g = np.array([0.4, -1.1, 0.25])
    w = AprioriWeights((0.5, 0.2, 0.3))
    A = Alphabet((0.0, 1.0, 2.0))
    sd = power_iterate(build_truncated_operator(PotentialSpec.tabulated(g, 3, 1), w, 2, A))
    assert sd.rho == pytest.approx(math.fsum(np.array(w.values) * np.exp(g)), rel=1e-14)


def test_power_iterate_not_converged_returns_flagged():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 4)
    with pytest.warns(ConvergenceWarning):
        sd = power_iterate(L, tol=1e-30, max_iter=3)
    assert not sd.converged
    assert sd.rho > 0


def test_normalize_already_normalized():
    f = PotentialSpec.constant(-math.log(2))
    fbar, res = normalize_potential(f, COUNTING, 3)
    assert res < 1e-14
    np.testing.assert_allclose(fbar.table(SPINS), -math.log(2), atol=1e-14)


def test_normalize_constant_with_normalized_weights():
    fbar, res = normalize_potential(PotentialSpec.constant(0.7), UNIFORM, 3)
    np.testing.assert_allclose(fbar.table(SPINS), 0.0, atol=1e-14)
    assert res < 1e-14


def test_normalize_ising():
    fbar, res = normalize_potential(PotentialSpec.ising(1.0), COUNTING, 4)
    assert res < 1e-10
    L = build_truncated_operator(fbar, COUNTING, 4)
    np.testing.assert_allclose(L.matvec(np.ones(16)), 1.0, atol=1e-12)
    # h is constant for this symmetric potential, so fbar = J x1 x2 - log(2 cosh J)
    table = fbar.table(SPINS).reshape(4, -1)[:, 0]
    np.testing.assert_allclose(table, np.array([1, -1, -1, 1]) - math.log(TWO_COSH_1), atol=1e-12)


def test_normalize_refuses_unconverged():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sd = power_iterate(L, tol=1e-30, max_iter=2)
    with pytest.raises(NotConvergedError):
        normalize_potential(PotentialSpec.ising(1.0), COUNTING, 3, spectral=sd)


def test_multiplicity_ising():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 4)
    sd = power_iterate(L)
    rep = leading_multiplicity(L, sd.rho)
    _, _, _, mods = dense_perron(L.to_dense())
    assert rep.multiplicity == 1
    assert rep.second_modulus == pytest.approx(mods[1], rel=1e-6)
    assert rep.second_modulus == pytest.approx(2 * math.sinh(1.0), rel=1e-6)


def test_multiplicity_direct_sum():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 3)
    S = DirectSumOperator([L, L])
    sd = power_iterate(S)
    assert leading_multiplicity(S, sd.rho).multiplicity == 2


def test_multiplicity_zero_potential_depth_one():
    L = build_truncated_operator(PotentialSpec.constant(0.0), UNIFORM, 1)
    dense = np.sort(np.abs(np.linalg.eigvals(L.to_dense())))[::-1]
    rep = leading_multiplicity(L, 1.0)
    assert rep.multiplicity == 1
    assert dense[1] == pytest.approx(0.0, abs=1e-15)
    assert rep.gap == pytest.approx(1.0, abs=1e-12)


def test_iterate_norms_trivial():
    L = build_truncated_operator(PotentialSpec.constant(0.0), UNIFORM, 2)
    it = iterate_norms(L, CylinderFunction.coordinate(SPINS, 2), 4)
    np.testing.assert_array_equal(it.norms, [1, 0, 0, 0, 0])


def test_iterate_norms_ising_rate():
    fbar, _ = normalize_potential(PotentialSpec.ising(1.0), COUNTING, 3)
    L = build_truncated_operator(fbar, COUNTING, 3)
    nu = power_iterate(L).nu_measure()
    phi = center(CylinderFunction.coordinate(SPINS, 3), nu)
    it = iterate_norms(L, phi, 30)
    # second eigenvalue of the 2x2 chain with p(same) = e/(2 cosh 1)
    P = np.array([[math.e, 1 / math.e], [1 / math.e, math.e]]) / TWO_COSH_1
    t = sorted(np.linalg.eigvals(P))[0]
    assert it.exp_rate == pytest.approx(t, rel=1e-10)
    assert it.exp_rate == pytest.approx(math.tanh(1.0), rel=1e-10)


def test_iterate_norms_rescale():
    L = build_truncated_operator(PotentialSpec.ising(1.0), COUNTING, 3)
    it = iterate_norms(L, np.ones(8), 5, rescale=TWO_COSH_1)
    np.testing.assert_allclose(it.norms, 1.0, rtol=1e-14)
