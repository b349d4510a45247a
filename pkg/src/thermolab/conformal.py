"""Diagnostics for conformal measures: support bounds, the domination
hypothesis H1, conditional measures on invariant sets, specification kernels
and the relative entropy rate."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import (
    Alphabet,
    AprioriWeights,
    CylinderFunction,
    CylinderMeasure,
    DepthError,
    LatticeError,
    PotentialSpec,
    Word,
    all_words,
    decode_index,
    marginal,
    project_measure,
    word_index,
)
from .transfer import build_truncated_operator, normalize_potential, power_iterate


class ConsistencyError(LatticeError):
    """Cylinder marginals that are not projections of each other."""


# --------------------------------------------------------------------------
# full support and H1


@dataclass
class SupportReport:
    depth: int
    worst_cylinder: Word
    min_mass: float
    ratio: float
    lower_bound_factor: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "depth": self.depth,
            "worst_cylinder": list(self.worst_cylinder.symbols),
            "min_mass": self.min_mass,
            "ratio": self.ratio,
            "lower_bound_factor": self.lower_bound_factor,
            "passed": self.passed,
        }


def check_full_support(nu: CylinderMeasure, f: PotentialSpec, w: AprioriWeights, rho: float, n: int,
                       alphabet: Alphabet | None = None, tol: float = 1e-9) -> SupportReport:
    """Compare every depth-``n`` mass with ``(min e^f / rho)^n prod_i w(c_i)``."""
    alphabet = alphabet or Alphabet.spins()
    if not 1 <= n <= nu.depth:
        raise DepthError(f"support depth {n} outside [1, {nu.depth}]")
    masses = marginal(nu.normalized(), n).masses
    factor = math.exp(float(np.min(f.table(alphabet)))) / rho
    weights = CylinderMeasure.product(w, n).masses
    bound = factor**n * weights
    ratio = masses / bound
    worst = int(np.argmin(ratio))
    return SupportReport(
        depth=n,
        worst_cylinder=decode_index(worst, nu.k, n),
        min_mass=float(masses.min()),
        ratio=float(ratio[worst]),
        lower_bound_factor=factor,
        passed=bool(ratio[worst] >= 1.0 - tol and masses.min() > 0),
    )


@dataclass
class H1Report:
    max_ratio: float
    K: float
    worst_cylinder: Word | None
    excluded: int
    passed: bool

    def as_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "K": self.K,
            "worst_cylinder": None if self.worst_cylinder is None else list(self.worst_cylinder.symbols),
            "excluded_zero_mass": self.excluded,
            "passed": self.passed,
        }


def check_h1(nu: CylinderMeasure, w: AprioriWeights, f: PotentialSpec, rho: float,
             alphabet: Alphabet | None = None, tol: float = 1e-9) -> H1Report:
    """``max_C (p x nu)(C) / nu(C)`` over depth-``D`` cylinders ``C = (a, C')``,
    against ``K = rho * exp(||f||_inf)``.

    ``(p x nu)(a, C') = w(a) nu(C')`` where ``nu(C')`` is the mass of the
    depth-``D-1`` cylinder ``C'``.
    """
    alphabet = alphabet or Alphabet.spins()
    if nu.depth < 2:
        raise DepthError("H1 check needs a measure of depth >= 2")
    nu = nu.normalized()
    k = nu.k
    shallow = project_measure(nu).masses
    masses = nu.masses.reshape(k, -1)
    product = w.as_array()[:, None] * shallow[None, :]
    positive = masses > 0
    ratio = np.where(positive, product / np.where(positive, masses, 1.0), -np.inf)
    K = rho * math.exp(f.sup_norm(alphabet))
    worst = int(np.argmax(ratio))
    max_ratio = float(ratio.ravel()[worst])
    return H1Report(
        max_ratio=max_ratio,
        K=K,
        worst_cylinder=decode_index(worst, k, nu.depth) if np.isfinite(max_ratio) else None,
        excluded=int((~positive).sum()),
        passed=bool(max_ratio <= K * (1.0 + tol)),
    )


# --------------------------------------------------------------------------
# conditional conformal measures


@dataclass
class ConditionalReport:
    masses: np.ndarray
    residual: float
    indicator_mass: float
    invariant: bool

    def measure(self, depth: int, k: int = 2) -> CylinderMeasure:
        return CylinderMeasure(depth, self.masses, k)

    def as_dict(self) -> dict:
        return {
            "residual": self.residual,
            "indicator_mass": self.indicator_mass,
            "invariant": self.invariant,
        }


def conditional_conformal(nu, indicator, L, rho: float | None = None, tol: float = 1e-9) -> ConditionalReport:
    """``nu(. ∩ B) / nu(B)`` and its residual ``||L* nu_B - rho nu_B||_1``.

    The residual is small exactly when ``B`` is (numerically) invariant; the
    report flags the set as invariant when it is below ``tol``.
    """
    masses = np.asarray(nu.masses if isinstance(nu, CylinderMeasure) else nu, dtype=float)
    ind = np.asarray(indicator.values if isinstance(indicator, CylinderFunction) else indicator, dtype=float)
    if not np.all((ind == 0.0) | (ind == 1.0)):
        raise LatticeError("indicator must be 0/1 valued")
    masses = masses / math.fsum(masses)
    if rho is None:
        rho = math.fsum(L.rmatvec(masses))
    mass_b = math.fsum(masses * ind)
    if mass_b <= 0:
        raise LatticeError("indicator has zero mass under nu")
    nu_b = masses * ind / mass_b
    residual = float(np.sum(np.abs(L.rmatvec(nu_b) - rho * nu_b)))
    return ConditionalReport(nu_b, residual, mass_b, residual < tol)


# --------------------------------------------------------------------------
# specification kernels


@dataclass(frozen=True)
class KernelQuery:
    n: int
    event: Word
    boundary: Word

    def __post_init__(self):
        if self.event.depth > self.n:
            raise DepthError(f"event of depth {self.event.depth} is deeper than the volume {self.n}")


@dataclass
class KernelValue:
    value: float
    lower: float
    upper: float
    working_depth: int


def _kernel_potential(f: PotentialSpec, boundary: Word, alphabet: Alphabet) -> PotentialSpec:
    """Mean-field rule: the boundary's magnetization class fixes the sign of gamma."""
    if f.kind != "mean-field":
        return f
    lab = alphabet.label_array()
    m_b = float(np.mean(lab[list(boundary.symbols)]))
    g = abs(f.gamma)
    if g == 0.0 or abs(m_b) <= g / 2:
        return f.with_gamma(0.0)
    return f.with_gamma(g if abs(m_b - g) < abs(m_b + g) else -g)


def kernel_vectors(f: PotentialSpec, w: AprioriWeights, n: int, events: Sequence[Word],
                   alphabet: Alphabet | None = None):
    """``L^n 1_A`` for each event and ``L^n 1`` as vectors over all depth-``Dw``
    boundaries, ``Dw = max(n, m)``.  A common per-step rescaling cancels in
    the ratio."""
    alphabet = alphabet or Alphabet.spins()
    Dw = max(n, f.depth)
    L = build_truncated_operator(f, w, Dw, alphabet)
    k = alphabet.k
    num = np.stack([CylinderFunction.indicator(e, Dw, k).values for e in events])
    den = np.ones(L.size)
    for _ in range(n):
        den = L.matvec(den)
        scale = den.max()
        den /= scale
        num = np.stack([L.matvec(row) for row in num]) / scale
    return num, den, Dw


def specification_kernel(f: PotentialSpec, w: AprioriWeights, q: KernelQuery,
                         alphabet: Alphabet | None = None) -> KernelValue:
    """``L^n(1_A)(y) / L^n(1)(y)`` at the periodically extended boundary ``y``.

    For the Dyson kind each of the ``n`` potential evaluations in a path
    weight is off by at most the truncation tail ``t``, so the exact kernel
    lies in ``[v e^{-2nt}, v e^{2nt}] ∩ [0, 1]``.
    """
    alphabet = alphabet or Alphabet.spins()
    g = _kernel_potential(f, q.boundary, alphabet)
    num, den, Dw = kernel_vectors(g, w, q.n, [q.event], alphabet)
    y = word_index(q.boundary.extended(Dw), alphabet.k)
    value = float(num[0, y] / den[y])
    lmax = float(np.max(np.abs(alphabet.label_array())))
    spread = math.exp(2 * q.n * lmax**2 * g.tail_bound) if g.kind == "dyson" else 1.0
    return KernelValue(value, value / spread, min(1.0, value * spread), Dw)


def kernel_partition_sum(f: PotentialSpec, w: AprioriWeights, n: int, boundary: Word,
                         alphabet: Alphabet | None = None) -> float:
    """Sum of the kernel over all depth-``n`` cylinder events."""
    alphabet = alphabet or Alphabet.spins()
    k = alphabet.k
    g = _kernel_potential(f, boundary, alphabet)
    events = [Word(tuple(s)) for s in all_words(k, n)]
    num, den, Dw = kernel_vectors(g, w, n, events, alphabet)
    y = word_index(boundary.extended(Dw), k)
    return math.fsum(num[:, y] / den[y])


def kernel_consistency(f: PotentialSpec, w: AprioriWeights, event: Word, n: int, nu: CylinderMeasure,
                       alphabet: Alphabet | None = None) -> tuple[float, float]:
    """``(nu(A), sum_x nu(x) gamma_n(A | sigma^n x))`` for a finite-range potential.

    The kernel at ``y`` depends only on ``y_1 .. y_{m-1}``, so ``nu`` must
    have depth at least ``n + max(m - 1, 1)``.
    """
    alphabet = alphabet or Alphabet.spins()
    k = alphabet.k
    r = max(f.depth - 1, 1)
    if nu.depth < n + r:
        raise DepthError(f"measure depth {nu.depth} < n + {r}")
    num, den, Dw = kernel_vectors(f, w, n, [event], alphabet)
    kernel = num[0] / den
    nu_nr = marginal(nu.normalized(), n + r).masses
    tail = np.arange(k ** (n + r)) % k**r
    avg = math.fsum(nu_nr * kernel[tail * k ** (Dw - r)])
    return nu.normalized().mass(event), avg


@dataclass
class SensitivityTable:
    n_list: list[int]
    boundaries: list[Word]
    event: Word
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    discrepancy: np.ndarray

    @property
    def final_discrepancy(self) -> float:
        return float(self.discrepancy[-1])

    def rows(self):
        """CSV rows: n, boundary-id, event, value, tail-lower, tail-upper."""
        event = "".join(str(s) for s in self.event.symbols)
        for i, n in enumerate(self.n_list):
            for j in range(len(self.boundaries)):
                yield n, j, event, self.values[i, j], self.lower[i, j], self.upper[i, j]


def boundary_sensitivity_scan(f: PotentialSpec, w: AprioriWeights, event: Word, boundaries: Sequence[Word],
                              n_list: Sequence[int], alphabet: Alphabet | None = None) -> SensitivityTable:
    """Kernel values for every (n, boundary); a discrepancy between boundaries
    that persists as ``n`` grows signals more than one conformal measure."""
    alphabet = alphabet or Alphabet.spins()
    vals = np.empty((len(n_list), len(boundaries)))
    lo, hi = np.empty_like(vals), np.empty_like(vals)
    for i, n in enumerate(n_list):
        for j, b in enumerate(boundaries):
            kv = specification_kernel(f, w, KernelQuery(n, event, b), alphabet)
            vals[i, j], lo[i, j], hi[i, j] = kv.value, kv.lower, kv.upper
    disc = vals.max(axis=1) - vals.min(axis=1)
    return SensitivityTable(list(n_list), list(boundaries), event, vals, lo, hi, disc)


# --------------------------------------------------------------------------
# relative entropy rate


def block_relative_entropy(mu: CylinderMeasure, w: AprioriWeights) -> float:
    """``sum_C mu(C) log(mu(C) / p^n(C))`` over depth-``n`` cylinders, ``0 log 0 = 0``."""
    ref = CylinderMeasure.product(w, mu.depth).masses
    pos = mu.masses > 0
    return math.fsum(mu.masses[pos] * np.log(mu.masses[pos] / ref[pos]))


@dataclass
class EntropyRateReport:
    n_list: list[int]
    block_entropies: list[float]
    slope: float
    rate: float
    method: str

    def as_dict(self) -> dict:
        return {
            "n": self.n_list,
            "block_relative_entropy": self.block_entropies,
            "slope": self.slope,
            "entropy_rate": self.rate,
            "method": self.method,
        }


def relative_entropy_rate(measures: Sequence[CylinderMeasure], w: AprioriWeights,
                          consistency_tol: float = 1e-10) -> EntropyRateReport:
    """Minus the growth rate of the block relative entropy, least squares over
    the three largest depths.  Consecutive depths must be projections of each
    other."""
    measures = sorted(measures, key=lambda m: m.depth)
    for a, b in zip(measures, measures[1:]):
        gap = np.max(np.abs(marginal(b, a.depth).masses - a.masses))
        if gap > consistency_tol:
            raise ConsistencyError(f"depth-{b.depth} marginal differs from depth-{a.depth} data by {gap:.3g}")
    n_list = [m.depth for m in measures]
    H = [block_relative_entropy(m, w) for m in measures]
    if len(measures) == 1:
        slope = H[0] / n_list[0]
    else:
        tail = slice(-3, None)
        slope = float(np.polyfit(n_list[tail], H[tail], 1)[0])
    return EntropyRateReport(n_list, H, slope, -slope, "least-squares")


def markov_entropy_rate(P: np.ndarray, pi: np.ndarray, w: AprioriWeights) -> float:
    """Closed form ``-sum_b pi(b) sum_a P(b, a) log(P(b, a) / w(a))``."""
    P = np.asarray(P, float)
    wa = w.as_array()[None, :]
    terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0) / wa), 0.0)
    return -math.fsum((np.asarray(pi)[:, None] * terms).ravel())


@dataclass
class PressureCheck:
    log_rho: float
    entropy_rate: float
    entropy_rate_exact: float
    energy: float
    gap: float
    gap_exact: float
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "log_rho": self.log_rho,
            "entropy_rate_slope": self.entropy_rate,
            "entropy_rate_exact": self.entropy_rate_exact,
            "energy": self.energy,
            "pressure_gap_slope": self.gap,
            "pressure_gap_exact": self.gap_exact,
            "passed": self.passed,
            **self.details,
        }


def pressure_check(f: PotentialSpec, w: AprioriWeights, alphabet: Alphabet | None = None,
                   n_list: Sequence[int] = (2, 3, 4, 5, 6), tol: float = 1e-6) -> PressureCheck:
    """Check ``h(mu_f) + mu_f(f) = log rho`` for a potential of range <= 2.

    The equilibrium state is the stationary measure of the normalized
    operator.  Its entropy rate is computed twice: from the block entropies
    of power-iteration marginals, and in closed form from the one-step
    transition matrix ``P(b, a) = w(a) exp(fbar(a b))``.
    """
    alphabet = alphabet or Alphabet.spins()
    if f.depth > 2:
        raise DepthError("pressure check is implemented for potentials of range <= 2")
    k = alphabet.k
    L = build_truncated_operator(f, w, 1, alphabet)
    sd = power_iterate(L, 1e-14)
    fbar, _ = normalize_potential(f, w, 1, alphabet=alphabet, spectral=sd)
    measures = []
    for n in n_list:
        Ln = build_truncated_operator(fbar, w, n, alphabet)
        measures.append(power_iterate(Ln, 1e-14).nu_measure())
    report = relative_entropy_rate(measures, w)
    mu2 = marginal(measures[-1], 2)
    ftab = f.table(alphabet)
    f2 = np.repeat(ftab, k ** (2 - f.depth))
    energy = math.fsum(mu2.masses * f2)
    # row b = previous symbol, column a = next symbol prepended
    ftab_bar = np.asarray(fbar.table_values).reshape(k, k)
    P = (w.as_array()[:, None] * np.exp(ftab_bar)).T
    P = P / P.sum(axis=1, keepdims=True)
    pi = marginal(measures[0], 1).masses
    h_exact = markov_entropy_rate(P, pi, w)
    log_rho = math.log(sd.rho)
    gap = report.rate + energy - log_rho
    gap_exact = h_exact + energy - log_rho
    return PressureCheck(log_rho, report.rate, h_exact, energy, gap, gap_exact,
                         bool(abs(gap) <= tol and abs(gap_exact) <= tol),
                         {"block_relative_entropy": report.block_entropies, "n": report.n_list})
