import itertools
import math

import numpy as np
import pytest

from thermolab.conformal import (
    ConsistencyError,
    KernelQuery,
    block_relative_entropy,
    boundary_sensitivity_scan,
    check_full_support,
    check_h1,
    conditional_conformal,
    kernel_consistency,
    kernel_partition_sum,
    markov_entropy_rate,
    pressure_check,
    relative_entropy_rate,
    specification_kernel,
)
from thermolab.curie_weiss import solve_magnetization
from thermolab.lattice import (
    Alphabet,
    AprioriWeights,
    CylinderFunction,
    CylinderMeasure,
    PotentialSpec,
    Word,
    evaluate_potential,
)
from thermolab.transfer import DirectSumOperator, build_truncated_operator, power_iterate

SPINS = Alphabet.spins()
UNIFORM = AprioriWeights.uniform(2)
COUNTING = AprioriWeights.counting(2)


def spectral(f, w, D):
    L = build_truncated_operator(f, w, D)
    return L, power_iterate(L, 1e-13)


def brute_kernel(f, w, n, event, boundary, alphabet=SPINS):
    """Ratio of explicit path weights prod_i w(a_i) exp(f(a_i .. a_n y))."""
    y = boundary.extended(n + f.depth).symbols
    num = den = 0.0
    for a in itertools.product(range(alphabet.k), repeat=n):
        z = a + y
        weight = 1.0
        for i in range(n):
            weight *= w.values[a[i]] * math.exp(evaluate_potential(f, z[i:i + f.depth], alphabet)[0])
        den += weight
        if a[: event.depth] == event.symbols:
            num += weight
    return num / den


# full support / H1


def test_support_trivial_ratio_one():
    _, sd = spectral(PotentialSpec.constant(0.0), UNIFORM, 4)
    for n in range(1, 5):
        rep = check_full_support(sd.nu_measure(), PotentialSpec.constant(0.0), UNIFORM, sd.rho, n)
        assert rep.ratio == pytest.approx(1.0, abs=1e-14)
        assert rep.passed


def test_support_ising():
    f = PotentialSpec.ising(1.0)
    _, sd = spectral(f, COUNTING, 4)
    dense = np.linalg.eig(build_truncated_operator(f, COUNTING, 4).to_dense().T)
    assert np.max(np.real(dense[0])) == pytest.approx(sd.rho)
    rep = check_full_support(sd.nu_measure(), f, COUNTING, sd.rho, 3)
    assert rep.min_mass > 0 and rep.ratio >= 1.0 and rep.passed


def test_support_names_zero_mass_cylinder():
    masses = np.full(8, 1 / 7)
    masses[5] = 0.0
    rep = check_full_support(CylinderMeasure(3, masses), PotentialSpec.constant(0.0), UNIFORM, 1.0, 3)
    assert not rep.passed
    assert rep.worst_cylinder.symbols == (1, 0, 1)


def test_h1_trivial():
    _, sd = spectral(PotentialSpec.constant(0.0), UNIFORM, 3)
    rep = check_h1(sd.nu_measure(), UNIFORM, PotentialSpec.constant(0.0), sd.rho)
    assert rep.K == pytest.approx(1.0)
    assert rep.max_ratio == pytest.approx(1.0)
    assert rep.passed


def test_h1_constant_normalized_weights():
    f = PotentialSpec.constant(0.8)
    _, sd = spectral(f, UNIFORM, 3)
    rep = check_h1(sd.nu_measure(), UNIFORM, f, sd.rho)
    assert rep.max_ratio == pytest.approx(1.0)
    assert rep.passed


@pytest.mark.parametrize("J", [0.5, 1.0, 2.0])
def test_h1_ising(J):
    f = PotentialSpec.ising(J)
    _, sd = spectral(f, COUNTING, 5)
    rep = check_h1(sd.nu_measure(), COUNTING, f, sd.rho)
    assert rep.passed
    assert rep.max_ratio <= sd.rho * math.exp(J) * (1 + 1e-9)


# conditional conformal measures


def test_conditional_full_indicator():
    L, sd = spectral(PotentialSpec.ising(1.0), COUNTING, 3)
    rep = conditional_conformal(sd.nu_measure(), np.ones(8), L, sd.rho)
    np.testing.assert_allclose(rep.masses, sd.nu, atol=1e-15)
    assert rep.residual == pytest.approx(sd.left_residual, abs=1e-13)
    assert rep.invariant


def test_conditional_half_space_not_invariant():
    L, sd = spectral(PotentialSpec.ising(1.0), COUNTING, 3)
    rep = conditional_conformal(sd.nu_measure(), CylinderFunction.indicator((1,), 3), L, sd.rho)
    assert rep.residual > 0.5
    assert not rep.invariant


def test_conditional_mean_field_mixture():
    # plus and minus phases of the beta = 2 mean-field model as a direct sum
    beta = 2.0
    g = solve_magnetization(beta).gamma
    Lp = build_truncated_operator(PotentialSpec.mean_field(beta, g), COUNTING, 1)
    Lm = build_truncated_operator(PotentialSpec.mean_field(beta, -g), COUNTING, 1)
    S = DirectSumOperator([Lp, Lm])
    sd = power_iterate(S)
    assert sd.rho == pytest.approx(2 * math.cosh(beta * g))
    t = 0.5
    mix = np.concatenate([t * np.array([1 - g, 1 + g]) / 2, (1 - t) * np.array([1 + g, 1 - g]) / 2])
    plus = np.array([1.0, 1.0, 0.0, 0.0])
    rep = conditional_conformal(mix, plus, S, sd.rho)
    np.testing.assert_allclose(rep.masses[:2], [(1 - g) / 2, (1 + g) / 2], atol=1e-15)
    assert rep.residual < 1e-12 and rep.invariant
    assert rep.indicator_mass == pytest.approx(t)


# specification kernels


@pytest.mark.parametrize("event", [(0,), (1, 0), (1, 1, 0)])
def test_kernel_zero_potential(event):
    q = KernelQuery(4, Word(event), Word((1, 0)))
    assert specification_kernel(PotentialSpec.constant(0.0), UNIFORM, q).value == pytest.approx(2.0 ** -len(event))


@pytest.mark.parametrize("n", [1, 2, 4, 6])
@pytest.mark.parametrize("boundary", [(0,), (1,), (0, 1, 1)])
def test_kernel_matches_path_weight_oracle(n, boundary):
    f = PotentialSpec.ising(1.0)
    q = KernelQuery(n, Word((1,)), Word(boundary))
    assert specification_kernel(f, COUNTING, q).value == pytest.approx(
        brute_kernel(f, COUNTING, n, Word((1,)), Word(boundary)), rel=1e-12)


def test_kernel_range_three_against_oracle():
    rng = np.random.default_rng(5)
    f = PotentialSpec.tabulated(rng.normal(size=8), 2, 3)
    w = AprioriWeights((0.3, 0.7))
    for n in (1, 3, 5):
        for b in ((0, 1), (1, 1, 0)):
            q = KernelQuery(n, Word((0, 1)) if n >= 2 else Word((0,)), Word(b))
            assert specification_kernel(f, w, q).value == pytest.approx(brute_kernel(f, w, n, q.event, q.boundary),
                                                                       rel=1e-12)


def test_kernel_ising_boundaries_differ():
    f = PotentialSpec.ising(1.0)
    minus = specification_kernel(f, COUNTING, KernelQuery(4, Word((1,)), Word((0,)))).value
    plus = specification_kernel(f, COUNTING, KernelQuery(4, Word((1,)), Word((1,)))).value
    assert plus > minus
    assert minus == pytest.approx(brute_kernel(f, COUNTING, 4, Word((1,)), Word((0,))), rel=1e-13)


def test_kernel_event_too_deep():
    with pytest.raises(Exception):
        KernelQuery(2, Word((0, 1, 1)), Word((0,)))


def test_partition_sums():
    for f, w in [(PotentialSpec.ising(1.0), COUNTING), (PotentialSpec.dyson(3.0, 6), COUNTING),
                 (PotentialSpec.mean_field(2.0, 0.9575), COUNTING)]:
        for n in (1, 3, 6):
            assert kernel_partition_sum(f, w, n, Word((1, 0, 0))) == pytest.approx(1.0, abs=1e-12)


def test_kernel_consistency_ising():
    f = PotentialSpec.ising(1.0)
    for n in (1, 4, 8):
        _, sd = spectral(f, COUNTING, n + 1)
        mass, avg = kernel_consistency(f, COUNTING, Word((1, 0)) if n > 1 else Word((1,)), n, sd.nu_measure())
        assert avg == pytest.approx(mass, abs=1e-12)


def test_sensitivity_zero_potential():
    t = boundary_sensitivity_scan(PotentialSpec.constant(0.0), UNIFORM, Word((1,)), [Word((0,)), Word((1,))],
                                  [1, 3, 5])
    np.testing.assert_allclose(t.discrepancy, 0.0, atol=1e-15)


def test_sensitivity_ising_decays_like_tanh_power():
    n_list = list(range(1, 13))
    t = boundary_sensitivity_scan(PotentialSpec.ising(1.0), COUNTING, Word((1,)), [Word((0,)), Word((1,))], n_list)
    assert np.all(np.diff(t.discrepancy) < 0)
    # the kernel of x_1 given the spin at n + 1 is a two-state chain: gap tanh(1)^n
    np.testing.assert_allclose(t.discrepancy, math.tanh(1.0) ** np.array(n_list), rtol=1e-10)


def test_sensitivity_mean_field_persists():
    beta = 2.0
    g = solve_magnetization(beta).gamma
    f = PotentialSpec.mean_field(beta, g)
    t = boundary_sensitivity_scan(f, COUNTING, Word((1,)), [Word((0,)), Word((1,))], [1, 2, 4, 8])
    # under a fixed gamma the kernel of x_1 = +1 is e^{bg}/(2 cosh bg)
    np.testing.assert_allclose(t.discrepancy, math.tanh(beta * g), rtol=1e-12)
    assert t.discrepancy.min() > math.tanh(beta * g) / 2


def test_dyson_kernel_interval():
    f = PotentialSpec.dyson(3.0, 6)
    kv = specification_kernel(f, COUNTING, KernelQuery(4, Word((1,)), Word((1, 0))))
    assert kv.lower <= kv.value <= kv.upper <= 1.0
    assert kv.upper - kv.lower <= 2 * kv.value * (math.exp(8 * f.tail_bound) - 1) + 1e-15


# entropy and pressure


def test_product_entropy_is_zero():
    for w in (UNIFORM, AprioriWeights((0.2, 0.8))):
        for n in (1, 3, 6):
            assert block_relative_entropy(CylinderMeasure.product(w, n), w) == 0.0


def test_entropy_of_biased_product():
    ms = [CylinderMeasure.product(AprioriWeights((0.1, 0.9)), n) for n in (2, 3, 4, 5)]
    rep = relative_entropy_rate(ms, UNIFORM)
    oracle = -(0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5))
    assert rep.rate == pytest.approx(oracle, abs=1e-12)
    assert rep.rate == pytest.approx(-0.368, abs=1e-3)


def test_inconsistent_marginals_rejected():
    with pytest.raises(ConsistencyError):
        relative_entropy_rate([CylinderMeasure.product(AprioriWeights((0.1, 0.9)), 2),
                               CylinderMeasure.uniform(3)], UNIFORM)


def test_markov_rate_of_iid():
    P = np.array([[0.3, 0.7], [0.3, 0.7]])
    oracle = -(0.3 * math.log(0.3 / 0.5) + 0.7 * math.log(0.7 / 0.5))
    assert markov_entropy_rate(P, np.array([0.3, 0.7]), UNIFORM) == pytest.approx(oracle)


@pytest.mark.parametrize("J", [0.5, 1.0])
def test_pressure_identity_ising(J):
    pc = pressure_check(PotentialSpec.ising(J), UNIFORM)
    assert pc.log_rho == pytest.approx(math.log(math.cosh(J)), abs=1e-12)
    assert abs(pc.gap) < 1e-6 and abs(pc.gap_exact) < 1e-10
    assert pc.passed


def test_pressure_identity_counting_weights():
    pc = pressure_check(PotentialSpec.ising(1.0), COUNTING)
    assert pc.log_rho == pytest.approx(math.log(2 * math.cosh(1.0)), abs=1e-12)
    assert pc.passed
