"""Dyson potential ``f(x) = sum_{n>=2} x_1 x_n n**-(2+eps)`` on {-1, +1}.

Values are certified intervals: the first ``m`` couplings are summed and the
remainder is bounded by ``tail(m)``.  The checks here sample pairs of points
and compare against the log-type moduli of continuity

    omega(r)       = log(1/r)**-eps          (with the constant 20)
    omega_tilde(r) = log(1/r)**-(eps - 1)

in the metric ``d(x, y) = 2**-N(x, y)``, ``N`` the first index where the
sequences differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import AprioriWeights, Alphabet, CylinderFunction, PotentialSpec, dyson_coupling, dyson_tail
from .rng import stream
from .transfer import build_truncated_operator, center, iterate_norms, normalize_potential, power_iterate

MODULE = "longrange"
MODULUS_CONSTANT = 20.0


@dataclass(frozen=True)
class DysonSpec:
    epsilon: float
    m: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.m < 2:
            raise ValueError("truncation m must be >= 2")

    def coupling(self, n):
        return dyson_coupling(n, self.epsilon)

    @property
    def tail(self) -> float:
        return dyson_tail(self.epsilon, self.m)

    def potential(self) -> PotentialSpec:
        return PotentialSpec.dyson(self.epsilon, self.m)

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interval enclosures ``(lower, upper)`` of ``f`` on rows of ``x``.

        ``x`` holds spins, one configuration per row, with at least ``m``
        columns; only the first ``m`` are used.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        J = self.coupling(np.arange(2, self.m + 1))
        value = x[:, 0] * (x[:, 1 : self.m] @ J)
        t = self.tail
        return value - t, value + t


def _truncated_diff(spec: DysonSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    J = spec.coupling(np.arange(2, spec.m + 1))
    return x[:, 0] * (x[:, 1 : spec.m] @ J) - y[:, 0] * (y[:, 1 : spec.m] @ J)


def _pairs(rng: np.random.Generator, count: int, agree: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Pairs agreeing on the first ``agree`` sites and differing at site ``agree + 1``."""
    x = rng.choice([-1.0, 1.0], size=(count, M))
    y = rng.choice([-1.0, 1.0], size=(count, M))
    y[:, :agree] = x[:, :agree]
    y[:, agree] = -x[:, agree]
    return x, y


@dataclass
class ModulusReport:
    epsilon: float
    truncation: int
    tail: float
    worst_ratio: float
    ratio_by_N: dict[int, float]
    bound: float = MODULUS_CONSTANT

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.bound

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "truncation": self.truncation,
            "tail": self.tail,
            "worst_ratio": self.worst_ratio,
            "ratio_by_N": {str(k): v for k, v in self.ratio_by_N.items()},
            "bound": self.bound,
            "passed": self.passed,
        }


def modulus_check(epsilon: float, pair_count: int, N_list=(1, 2, 5, 10, 20, 50, 100), seed: int = 0,
                  margin: int = 64) -> ModulusReport:
    """Worst ``|f(x) - f(y)| N**eps`` over random pairs agreeing on exactly ``N`` sites.

    ``pair_count`` pairs are drawn for each ``N``.  Configurations are
    truncated at ``M = max(N) + margin`` sites; the unseen remainder of each
    of the two values is at most ``tail(M)``, so the upper end
    ``|diff_M| + 2 tail(M)`` is what enters the ratio.
    """
    N_list = sorted({int(N) for N in N_list})
    if N_list[0] < 1:
        raise ValueError("agreement lengths must be >= 1")
    spec = DysonSpec(epsilon, max(N_list) + margin)
    tail = spec.tail
    ratios = {}
    for i, N in enumerate(N_list):
        x, y = _pairs(stream(seed, MODULE + "/modulus", i), pair_count, N, spec.m)
        diff = np.abs(_truncated_diff(spec, x, y)) + 2.0 * tail
        ratios[N] = float(diff.max() * N**epsilon)
    return ModulusReport(float(epsilon), spec.m, tail, max(ratios.values()), ratios)


def flatness_constant(epsilon: float) -> float:
    """Constant ``C`` with ``sum_j 20 omega(2**-j d) <= C omega_tilde(d)``.

    Shift ``j`` of the two points first differs at ``N + n - j``, so the
    sum is at most ``20 sum_{k > N} k**-eps <= 20 N**(1-eps) / (eps - 1)``,
    which equals ``20 (log 2)**(eps-1) / (eps - 1)`` times
    ``omega_tilde(2**-N) = (N log 2)**-(eps-1)``.
    """
    if not epsilon > 1:
        raise ValueError("flatness needs epsilon > 1")
    return MODULUS_CONSTANT * math.log(2.0) ** (epsilon - 1.0) / (epsilon - 1.0)


def omega_tilde(N, epsilon: float):
    """``omega_tilde(2**-N) = (N log 2)**-(eps - 1)``."""
    return (np.asarray(N, dtype=float) * math.log(2.0)) ** -(epsilon - 1.0)


@dataclass
class FlatnessReport:
    epsilon: float
    n: int
    constant: float
    printed_constant: float
    worst_ratio: float
    worst_ratio_printed: float
    ratio_by_N: dict[int, float]
    mean_by_length: list[float]
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= 1.0

    @property
    def mean_nondecreasing(self) -> bool:
        v = np.asarray(self.mean_by_length)
        return bool(np.all(np.diff(v) >= -1e-15))

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n": self.n,
            "constant": self.constant,
            "printed_constant": self.printed_constant,
            "worst_ratio": self.worst_ratio,
            "worst_ratio_printed": self.worst_ratio_printed,
            "ratio_by_N": {str(k): v for k, v in self.ratio_by_N.items()},
            "mean_by_length": self.mean_by_length,
            "mean_nondecreasing": self.mean_nondecreasing,
            "passed": self.passed,
            "notes": self.notes,
        }


def birkhoff_terms(spec: DysonSpec, z: np.ndarray, n: int) -> np.ndarray:
    """Truncated values ``f_m(sigma^j z)`` for ``j < n``, shape ``(rows, n)``."""
    J = spec.coupling(np.arange(2, spec.m + 1))
    return np.stack([z[:, j] * (z[:, j + 1 : j + spec.m] @ J) for j in range(n)], axis=1)


def birkhoff_flatness_check(epsilon: float, n: int, pair_count: int, seed: int = 0,
                            N_list=(1, 2, 4, 8, 16, 32), margin: int = 64) -> FlatnessReport:
    """Worst ``|S_n f(a x) - S_n f(a y)| / (C omega_tilde(d(x, y)))`` over random pairs.

    ``a`` is a random word of length ``n``; ``(x, y)`` first differ at site
    ``N`` (so ``d(x, y) = 2**-N``).  Each of the ``2n`` values carries a
    truncation error of at most ``tail(m)``, added to the difference.
    Also reported: the ratio against the constant ``log 2 / (eps + 1)``
    that appears in the original chain, and the mean triangle-inequality
    bound ``sum_j |f(sigma^j a x) - f(sigma^j a y)|`` for prefix lengths
    ``1..n`` (the last ``l`` letters of ``a``), nondecreasing in ``l``.
    """
    C = flatness_constant(epsilon)
    printed = math.log(2.0) / (epsilon + 1.0)
    N_list = sorted({int(N) for N in N_list})
    if N_list[0] < 1:
        raise ValueError("N(x, y) must be >= 1")
    spec = DysonSpec(epsilon, max(N_list) + margin)
    tail = spec.tail
    ratios, printed_ratios, by_length = {}, {}, []
    for i, N in enumerate(N_list):
        rng = stream(seed, MODULE + "/flatness", i)
        a = rng.choice([-1.0, 1.0], size=(pair_count, n))
        x, y = _pairs(rng, pair_count, N - 1, spec.m)
        d = birkhoff_terms(spec, np.hstack([a, x]), n) - birkhoff_terms(spec, np.hstack([a, y]), n)
        # suffix sums: prefix a_{n-l+1} .. a_n contributes the last l terms
        gap = np.abs(np.cumsum(d[:, ::-1], axis=1))
        by_length.append(np.cumsum(np.abs(d[:, ::-1]), axis=1).mean(axis=0))
        worst = float(gap[:, -1].max() + 2 * n * tail)
        bound = float(omega_tilde(N, epsilon))
        ratios[N] = worst / (C * bound)
        printed_ratios[N] = worst / (printed * bound)
    notes = [f"constant C = {C:.6g} from 20 sum_k k^-eps <= 20 N^(1-eps)/(eps-1); "
             f"printed constant log2/(eps+1) = {printed:.6g} reported alongside"]
    return FlatnessReport(float(epsilon), int(n), C, printed, max(ratios.values()),
                          max(printed_ratios.values()), ratios, np.mean(by_length, axis=0).tolist(), notes)


@dataclass
class DecayProfile:
    epsilon: float
    D: int
    m: int
    normalization_residual: float
    norms: np.ndarray
    window: tuple[int, int]
    slope: float | None
    target: float
    slack: float
    degenerate: bool
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.slope is not None and self.slope <= self.target + self.slack

    def rows(self, constant: float | None = None):
        """``(n, norm, bound)`` rows; the bound is ``c n**-(eps-1)`` with ``c``
        fitted to touch the norm at the window start unless given."""
        n0 = self.window[0]
        c = constant if constant is not None else self.norms[n0] * n0 ** (self.epsilon - 1.0)
        for n, v in enumerate(self.norms):
            yield n, float(v), (float(c * n ** -(self.epsilon - 1.0)) if n else math.inf)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "D": self.D,
            "m": self.m,
            "normalization_residual": self.normalization_residual,
            "norms": self.norms.tolist(),
            "window": list(self.window),
            "slope": self.slope,
            "target_slope": self.target,
            "slack": self.slack,
            "degenerate": self.degenerate,
            "passed": self.passed,
            "notes": self.notes,
        }


def dyson_decay_profile(epsilon: float, D: int, n_max: int | None = None, phi: CylinderFunction | None = None,
                        window: tuple[int, int] = (2, 10), slack: float = 0.5, tol: float = 1e-12) -> DecayProfile:
    """Sup norms of ``Lbar**n phi`` for the normalized truncated Dyson operator.

    The potential is truncated at ``m = D + 1`` (the largest range a depth
    ``D`` operator resolves), normalized, and ``phi`` (default ``x_1``) is
    centered against the stationary measure of ``Lbar``.  The slope of
    ``log ||Lbar**n phi||`` against ``log n`` over ``window`` is compared
    with ``-(eps - 1)``.
    """
    lo, hi = window
    if hi > D:
        raise ValueError(f"fit window must end at n <= D = {D}")
    n_max = n_max or hi
    alphabet, w = Alphabet.spins(), AprioriWeights.counting(2)
    f = PotentialSpec.dyson(epsilon, D + 1)
    fbar, residual = normalize_potential(f, w, D, tol=tol, alphabet=alphabet)
    Lbar = build_truncated_operator(fbar, w, D, alphabet)
    mu = power_iterate(Lbar, tol=tol).nu_measure()
    phi = phi if phi is not None else CylinderFunction.coordinate(alphabet, D)
    phi = center(phi if phi.depth == D else phi.lift(D), mu)
    notes = ["fit window capped at n <= D: the truncated operator has a spectral gap, "
             "so the polynomial regime is a transient and the asymptotic rate is for the untruncated operator"]
    scale = float(np.max(np.abs(phi.values)))
    if scale <= 1e-14:
        notes.append("observable is constant after centering: all iterates vanish, slope undefined")
        return DecayProfile(float(epsilon), D, D + 1, residual, np.zeros(n_max + 1), (lo, hi), None,
                            -(epsilon - 1.0), slack, True, notes)
    it = iterate_norms(Lbar, phi, n_max, fit_window=(lo, hi))
    return DecayProfile(float(epsilon), D, D + 1, residual, it.norms, (lo, hi), it.poly_slope,
                        -(epsilon - 1.0), slack, False, notes)
