"""Markov chain of a normalized transfer operator, Poisson equation and the
functional central limit theorem.

For a normalized potential ``fbar`` (``L 1 = 1``) the kernel
``p(x, [a x]) = w(a) exp(fbar(a x))`` moves a configuration by prepending one
symbol.  At depth ``D`` the state is the window of the ``D`` most recent
symbols, newest first, encoded as a word index; a step is
``i -> a * k**(D-1) + i // k``, i.e. a row of the truncated operator.

Variance convention: with stationary ``mu`` the expression
``mu(v^2) - mu(P v^2)`` vanishes identically, so the variance used to scale
``Y_n`` is ``sigma^2 = mu(v^2) - mu((P v)^2)`` and ``Y_n(t) = S_[nt] /
(sigma sqrt(n))``.  Both readings are reported.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .lattice import (
    Alphabet,
    AprioriWeights,
    CylinderFunction,
    CylinderMeasure,
    DepthError,
    PotentialSpec,
    decode_index,
)
from .rng import stream
from .transfer import TransferMatrix, build_truncated_operator, center, fit_decay, power_iterate

MODULE = "markov-fclt"

TRACE_DTYPE = np.dtype([("step", "<u8"), ("symbol", "<u4"), ("partial_sum", "<f8")])


class NotNormalizedError(ValueError):
    pass


class PoissonDivergence(RuntimeError):
    """No decay of ``||L^n phi||`` was detected: no Poisson solution, no FCLT."""


class DegenerateObservable(ValueError):
    pass


@dataclass
class MarkovKernel:
    """Immutable part of the chain: the normalized operator and its stationary law."""

    L: TransferMatrix
    nu: np.ndarray
    cumulative: np.ndarray
    normalization_residual: float

    @property
    def depth(self) -> int:
        return self.L.depth

    @property
    def k(self) -> int:
        return self.L.k

    def stationary(self) -> CylinderMeasure:
        return CylinderMeasure(self.depth, self.nu, self.k)


def make_kernel(fbar: PotentialSpec | TransferMatrix, w: AprioriWeights | None = None, D: int | None = None,
                alphabet: Alphabet | None = None, tol: float = 1e-9) -> MarkovKernel:
    L = fbar if isinstance(fbar, TransferMatrix) else build_truncated_operator(fbar, w, D, alphabet)
    row_sums = L.coef.sum(axis=1)
    residual = float(np.max(np.abs(row_sums - 1.0)))
    if residual > tol:
        raise NotNormalizedError(f"potential is not normalized: ||L1 - 1||_inf = {residual:.3g} > {tol:g}")
    probs = L.coef / row_sums[:, None]
    cumulative = np.cumsum(probs, axis=1)[:, :-1]
    sd = power_iterate(L, 1e-13)
    return MarkovKernel(L, sd.nu / sd.nu.sum(), cumulative, residual)


def _draw_symbol(cumulative_rows: np.ndarray, u) -> np.ndarray:
    return (np.asarray(u)[..., None] >= cumulative_rows).sum(axis=-1)


def _draw_state(cdf: np.ndarray, u) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


class ChainState:
    """A single chain: window index plus its own random stream."""

    def __init__(self, kernel: MarkovKernel, rng: np.random.Generator):
        self.kernel = kernel
        self.rng = rng
        self._shift = kernel.k ** (kernel.depth - 1)
        self._cdf = np.cumsum(kernel.nu)
        self.index = int(_draw_state(self._cdf, rng.random()))

    @property
    def window(self):
        return decode_index(self.index, self.kernel.k, self.kernel.depth)

    def step(self) -> int:
        a = int(_draw_symbol(self.kernel.cumulative[self.index], self.rng.random()))
        self.index = a * self._shift + self.index // self.kernel.k
        return a


def make_chain(fbar: PotentialSpec | TransferMatrix | MarkovKernel, w: AprioriWeights | None = None,
               D: int | None = None, seed: int = 0, alphabet: Alphabet | None = None, tol: float = 1e-9,
               replica: int = 0) -> ChainState:
    """Chain started from the stationary law (the conformal measure of the
    normalized operator).  Refuses potentials with ``||L 1 - 1|| > tol``."""
    kernel = fbar if isinstance(fbar, MarkovKernel) else make_kernel(fbar, w, D, alphabet, tol)
    return ChainState(kernel, stream(seed, MODULE, replica))


def step(chain: ChainState) -> int:
    return chain.step()


def sample_path(chain: ChainState, phi: CylinderFunction, n: int, trace=None) -> np.ndarray:
    """Partial sums ``S_0 = 0, S_j = sum_{i <= j} phi(Z_i)`` along ``n`` steps.

    With ``trace`` (a binary file object) each step is also written as a
    little-endian record ``(u64 step, u32 symbol, f64 partial sum)``.
    """
    if phi.depth != chain.kernel.depth:
        raise DepthError(f"observable depth {phi.depth} vs chain depth {chain.kernel.depth}")
    values = phi.values
    sums = np.empty(n + 1)
    sums[0] = 0.0
    symbols = np.empty(n, dtype=np.uint32)
    acc = 0.0
    for j in range(1, n + 1):
        symbols[j - 1] = chain.step()
        acc += values[chain.index]
        sums[j] = acc
    if trace is not None:
        rec = np.empty(n, dtype=TRACE_DTYPE)
        rec["step"] = np.arange(1, n + 1)
        rec["symbol"] = symbols
        rec["partial_sum"] = sums[1:]
        trace.write(rec.tobytes())
    return sums


def simulate_partial_sums(kernel: MarkovKernel, phi: CylinderFunction, n: int, replicas: int, seed: int,
                          record: np.ndarray | None = None, block: int = 1024, module: str = MODULE) -> np.ndarray:
    """Vectorized replicas; replica ``r`` consumes exactly the uniforms of
    its own stream in the same order as :func:`sample_path`, so both give the
    same path.  Returns ``S_j`` at the step counts in ``record`` (default: n),
    shape ``(replicas, len(record))``.
    """
    record = np.array([n] if record is None else record, dtype=np.int64)
    gens = [stream(seed, module, r) for r in range(replicas)]
    cdf = np.cumsum(kernel.nu)
    k, shift = kernel.k, kernel.k ** (kernel.depth - 1)
    idx = _draw_state(cdf, np.array([g.random() for g in gens]))
    values = phi.values
    cum = kernel.cumulative
    acc = np.zeros(replicas)
    out = np.zeros((replicas, len(record)))
    out[:, record == 0] = 0.0
    j = 0
    while j < n:
        b = min(block, n - j)
        u = np.stack([g.random(b) for g in gens], axis=1)
        for t in range(b):
            a = (u[t][:, None] >= cum[idx]).sum(axis=1)
            idx = a * shift + idx // k
            acc += values[idx]
            j += 1
            hit = record == j
            if hit.any():
                out[:, hit] = acc[:, None]
    return out


@dataclass
class PoissonSolution:
    v: CylinderFunction
    phi: CylinderFunction
    terms: int
    tail_bound: float
    residual: float
    norms: np.ndarray

    def as_dict(self) -> dict:
        return {
            "terms": self.terms,
            "tail_bound": self.tail_bound,
            "residual": self.residual,
            "sign_convention": "v = sum_{n>=0} L^n phi solves (I - L) v = phi",
        }


def solve_poisson(Lhat: TransferMatrix, phi: CylinderFunction, nu: CylinderMeasure, N_max: int = 100_000,
                  tol: float = 1e-13) -> PoissonSolution:
    """Neumann series ``v = sum_{n=0}^{N} L^n phi`` for the centered ``phi``.

    Stops at the first ``N`` with ``||L^{N+1} phi||_inf < tol``.  The residual
    ``(I - L) v - phi = -L^{N+1} phi`` is computed directly; the tail bound
    extrapolates the last decay ratio geometrically.
    """
    phi_c = center(phi, nu)
    scale = float(np.max(np.abs(phi_c.values)))
    if scale <= 1e-14 * max(1.0, float(np.max(np.abs(phi.values)))):
        raise DegenerateObservable("observable is constant: nothing to solve")
    x = phi_c.values.copy()
    v = x.copy()
    norms = [scale]
    for N in range(0, N_max):
        x = Lhat.matvec(x)
        nx = float(np.max(np.abs(x)))
        norms.append(nx)
        if nx < tol:
            break
        v += x
    else:
        raise PoissonDivergence(
            f"||L^n phi|| = {norms[-1]:.3g} after {N_max} terms: no Poisson solution found, FCLT not attempted"
        )
    residual = float(np.max(np.abs(v - Lhat.matvec(v) - phi_c.values)))
    ratio = norms[-1] / norms[-2] if norms[-2] > 0 else 0.0
    tail = norms[-1] / (1.0 - ratio) if ratio < 1 else math.inf
    return PoissonSolution(CylinderFunction(phi.depth, v, phi.k), phi_c, N + 1, max(tail, residual), residual,
                           np.array(norms))


@dataclass
class VarianceReport:
    sigma2_poisson: float
    sigma2_green_kubo: float
    sigma2_literal: float
    tail: float
    degenerate: bool
    note: str = ("sigma^2 = mu(v^2) - mu((Pv)^2); the literal reading mu(v^2) - mu(P(v^2)) "
                 "vanishes for stationary mu and is reported as sigma2_literal")

    @property
    def agreement(self) -> float:
        return abs(self.sigma2_poisson - self.sigma2_green_kubo)

    def as_dict(self) -> dict:
        return {
            "sigma2_poisson": self.sigma2_poisson,
            "sigma2_green_kubo": self.sigma2_green_kubo,
            "sigma2_literal": self.sigma2_literal,
            "agreement": self.agreement,
            "tail": self.tail,
            "degenerate": self.degenerate,
            "note": self.note,
        }


def asymptotic_variance(Lhat: TransferMatrix, nu: CylinderMeasure, sol: PoissonSolution,
                        degeneracy_tol: float = 1e-10) -> VarianceReport:
    mu = nu.masses / nu.total
    v = sol.v.values
    Pv = Lhat.matvec(v)
    s_poisson = math.fsum(mu * v * v) - math.fsum(mu * Pv * Pv)
    s_literal = math.fsum(mu * v * v) - math.fsum(mu * Lhat.matvec(v * v))
    phi = sol.phi.values
    terms = [math.fsum(mu * phi * phi)]
    x = phi.copy()
    for _ in range(sol.terms):
        x = Lhat.matvec(x)
        terms.append(2.0 * math.fsum(mu * phi * x))
    s_gk = math.fsum(terms)
    tail = 2.0 * float(np.max(np.abs(phi))) * sol.tail_bound + 2.0 * float(np.max(np.abs(v))) * sol.tail_bound
    degenerate = s_poisson <= degeneracy_tol * max(1.0, terms[0])
    return VarianceReport(s_poisson, s_gk, s_literal, tail, degenerate)


@dataclass
class FcltReport:
    replicas: int
    n: int
    sigma2: float
    t_grid: list[float]
    y1: np.ndarray
    ks_statistic: float
    ks_critical: float
    significance: float
    var_y1: float
    var_y1_se: float
    covariances: dict
    var_sn_over_n: float
    passed: bool
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "replicas": self.replicas,
            "n": self.n,
            "sigma2": self.sigma2,
            "t_grid": self.t_grid,
            "ks_statistic": self.ks_statistic,
            "ks_critical": self.ks_critical,
            "significance": self.significance,
            "var_y1": self.var_y1,
            "var_y1_se": self.var_y1_se,
            "covariances": self.covariances,
            "var_sn_over_n": self.var_sn_over_n,
            "passed": self.passed,
            "warnings": self.warnings,
            "scaling": "Y_n(t) = S_[nt] / (sigma sqrt(n)), sigma = sqrt(sigma2)",
        }


def ks_critical_value(replicas: int, significance: float = 0.01) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical value."""
    return float(stats.kstwobign.isf(significance) / math.sqrt(replicas))


def fclt_experiment(kernel: MarkovKernel, phi: CylinderFunction, n: int, replicas: int, seed: int,
                    t_grid=(0.25, 0.5, 0.75, 1.0), sigma2: float | None = None,
                    significance: float = 0.01, k_se: float = 3.0) -> FcltReport:
    """Simulate ``replicas`` stationary paths and test ``Y_n`` against Brownian motion.

    Reports the KS statistic of ``Y_n(1)`` against N(0, 1), the sample
    variance of ``Y_n(1)`` with its standard error, and ``Cov(Y_n(s), Y_n(t))``
    against ``min(s, t)`` on the grid.
    """
    notes = []
    if replicas < 100:
        msg = f"underpowered: {replicas} replicas (< 100)"
        warnings.warn(msg, RuntimeWarning)
        notes.append(msg)
    nu = kernel.stationary()
    phi_c = center(phi, nu)
    if sigma2 is None:
        sol = solve_poisson(kernel.L, phi_c, nu)
        sigma2 = asymptotic_variance(kernel.L, nu, sol).sigma2_poisson
    if not sigma2 > 0:
        raise DegenerateObservable(f"asymptotic variance {sigma2} is not positive")
    t_grid = sorted(set(float(t) for t in t_grid) | {1.0})
    steps = [int(math.floor(n * t)) for t in t_grid]
    sums = simulate_partial_sums(kernel, phi_c, n, replicas, seed, np.array(steps))
    Y = sums / math.sqrt(sigma2 * n)
    y1 = Y[:, t_grid.index(1.0)]
    ks = float(stats.kstest(np.sort(y1), "norm").statistic)
    crit = ks_critical_value(replicas, significance)
    var = float(np.var(y1, ddof=1))
    dev = (y1 - y1.mean()) ** 2
    var_se = float(np.std(dev, ddof=1) / math.sqrt(replicas))
    covs = {}
    ok = ks < crit and abs(var - 1.0) <= k_se * var_se
    for i, s in enumerate(t_grid):
        for j in range(i, len(t_grid)):
            t = t_grid[j]
            prod = (Y[:, i] - Y[:, i].mean()) * (Y[:, j] - Y[:, j].mean())
            c = float(prod.sum() / (replicas - 1))
            se = float(np.std(prod, ddof=1) / math.sqrt(replicas))
            covs[f"{s:g},{t:g}"] = {"cov": c, "se": se, "target": min(s, t)}
            ok = ok and abs(c - min(s, t)) <= k_se * se
    var_sn = float(np.var(sums[:, t_grid.index(1.0)], ddof=1) / n)
    return FcltReport(replicas, n, sigma2, t_grid, y1, ks, crit, significance, var, var_se, covs, var_sn,
                      bool(ok), notes)


@dataclass
class CesaroReport:
    c: np.ndarray
    tail_slope: float
    vanishing: bool

    def as_dict(self) -> dict:
        return {"c": self.c.tolist(), "tail_log_log_slope": self.tail_slope, "vanishing": self.vanishing}


def cesaro_mass_diagnostic(L, nu: CylinderMeasure | np.ndarray, v: CylinderFunction | np.ndarray,
                           N: int) -> CesaroReport:
    """``c_N = (1/N) sum_{n < N} <v, L^n 1>_nu`` for ``N = 1..N``.

    The trajectory is flagged as vanishing when its log-log slope over the
    second half of the range is below -1/2 (a ``1/N`` collapse gives -1, a
    trajectory bounded away from zero gives ~0).
    """
    mu = np.asarray(nu.masses if isinstance(nu, CylinderMeasure) else nu, dtype=float)
    mu = mu / mu.sum()
    vv = np.asarray(v.values if isinstance(v, CylinderFunction) else v, dtype=float)
    if np.any(vv < 0) or not np.any(vv > 0):
        raise ValueError("v must be nonnegative and not identically zero")
    x = np.ones(L.size)
    inner = np.empty(N)
    for n in range(N):
        inner[n] = math.fsum(mu * vv * x)
        x = L.matvec(x)
    c = np.cumsum(inner) / np.arange(1, N + 1)
    half = np.arange(max(N // 2, 1), N + 1)
    if len(half) >= 2 and np.all(c[half - 1] > 0):
        slope = float(np.polyfit(np.log(half), np.log(c[half - 1]), 1)[0])
    else:
        slope = -math.inf if np.any(c <= 0) else 0.0
    return CesaroReport(c, slope, slope < -0.5)


def decay_rate(L, phi: CylinderFunction, n_max: int = 40) -> float | None:
    """Fitted exponential rate ``s`` of ``||L^n phi||_inf``."""
    x = phi.values
    norms = [float(np.max(np.abs(x)))]
    for _ in range(n_max):
        x = L.matvec(x)
        norms.append(float(np.max(np.abs(x))))
    return fit_decay(np.array(norms))[0]
