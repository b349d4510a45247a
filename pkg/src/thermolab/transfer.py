"""Truncated transfer operators and their maximal spectral data.

The depth-``D`` truncation acts on functions of the first ``D`` coordinates:

    (L phi)(x) = sum_a w(a) exp(f(a x)) phi(a x)

Row ``i`` (output word ``x``) has exactly ``k`` nonzeros, in the columns of
the words ``a x_1 ... x_{D-1}``.  The operator is stored as two ``(k**D, k)``
arrays rather than a general sparse matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lattice import (
    Alphabet,
    AprioriWeights,
    CylinderFunction,
    CylinderMeasure,
    DepthError,
    PotentialSpec,
)

DEFAULT_MAX_STATES = 1 << 22


class StabilityError(DepthError):
    """The working depth is too small for the potential's range."""


class CapacityError(RuntimeError):
    """The truncation would exceed the configured memory budget."""


class NotConvergedError(RuntimeError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TransferMatrix:
    depth: int
    k: int
    cols: np.ndarray
    coef: np.ndarray
    m: int = 1
    tail_bound: float = 0.0

    @property
    def size(self) -> int:
        return self.k**self.depth

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.coef, x[self.cols])

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """``y L`` for a row vector ``y`` (the adjoint acting on measures)."""
        k, rest = self.k, self.k ** (self.depth - 1)
        # column (a, u) collects rows u*k + b, b = 0..k-1
        contrib = (y[:, None] * self.coef).reshape(rest, k, k).sum(axis=1)
        return contrib.T.ravel()

    def scaled(self, factor: float) -> "TransferMatrix":
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return TransferMatrix(self.depth, self.k, self.cols, self.coef * factor, self.m, self.tail_bound)

    def to_sparse(self) -> sp.csr_matrix:
        n = self.size
        rows = np.repeat(np.arange(n), self.k)
        return sp.csr_matrix((self.coef.ravel(), (rows, self.cols.ravel())), shape=(n, n))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


@dataclass(frozen=True)
class DirectSumOperator:
    """Block-diagonal operator built from independent blocks.

    Used for test fixtures and for the Curie-Weiss mixture, where the state
    space is a disjoint union of classes that the dynamics never mixes.
    """

    blocks: tuple

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [b.size for b in self.blocks])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        off = self.offsets
        return np.concatenate([b.matvec(x[off[i]:off[i + 1]]) for i, b in enumerate(self.blocks)])

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        off = self.offsets
        return np.concatenate([b.rmatvec(y[off[i]:off[i + 1]]) for i, b in enumerate(self.blocks)])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        off = self.offsets
        for i, b in enumerate(self.blocks):
            out[off[i]:off[i + 1], off[i]:off[i + 1]] = b.to_dense()
        return out


def build_truncated_operator(
    f: PotentialSpec,
    w: AprioriWeights,
    D: int,
    alphabet: Alphabet | None = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> TransferMatrix:
    alphabet = alphabet or Alphabet.spins()
    k = alphabet.k
    if w.k != k:
        raise ValueError(f"weights have {w.k} entries, alphabet has {k}")
    m = f.depth
    if D < 1 or D < m - 1:
        raise StabilityError(f"depth {D} too small for a potential of range {m} (need D >= {m - 1})")
    if k**D > max_states:
        raise CapacityError(f"k**D = {k ** D} states exceeds the budget of {max_states}")
    n = k**D
    idx = np.arange(n, dtype=np.int64)
    a = np.arange(k, dtype=np.int64)
    cols = a[None, :] * k ** (D - 1) + (idx // k)[:, None]
    # potential index of the depth-m word (a, x_1 .. x_{m-1})
    prefix = idx // k ** (D - (m - 1))
    fidx = a[None, :] * k ** (m - 1) + prefix[:, None]
    table = f.table(alphabet)
    coef = w.as_array()[None, :] * np.exp(table[fidx])
    lmax = float(np.max(np.abs(alphabet.label_array())))
    return TransferMatrix(D, k, cols, coef, m, lmax**2 * f.tail_bound if f.kind == "dyson" else 0.0)


def apply(L: TransferMatrix, phi: CylinderFunction) -> CylinderFunction:
    if phi.depth != L.depth or phi.k != L.k:
        raise DepthError(f"function of depth {phi.depth} (k={phi.k}) vs operator depth {L.depth} (k={L.k})")
    return CylinderFunction(L.depth, L.matvec(phi.values), L.k)


def apply_adjoint(L: TransferMatrix, nu: CylinderMeasure) -> CylinderMeasure:
    if nu.depth != L.depth or nu.k != L.k:
        raise DepthError(f"measure of depth {nu.depth} vs operator depth {L.depth}")
    return CylinderMeasure(L.depth, L.rmatvec(nu.masses), L.k)


@dataclass
class SpectralData:
    """Perron data of a positive operator.

    ``h`` is scaled to ``max h = 1`` and ``nu`` to total mass 1.  Residuals
    are ``||L h - rho h||_inf`` and ``||nu L - rho nu||_1``.
    """

    rho: float
    h: np.ndarray
    nu: np.ndarray
    right_residual: float
    left_residual: float
    iterations: int
    converged: bool
    tol: float
    depth: int | None = None
    k: int | None = None

    def h_function(self) -> CylinderFunction:
        return CylinderFunction(self.depth, self.h, self.k)

    def nu_measure(self) -> CylinderMeasure:
        return CylinderMeasure(self.depth, self.nu, self.k)

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "log_rho": math.log(self.rho),
            "right_residual": self.right_residual,
            "left_residual": self.left_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "tol": self.tol,
            "min_h": float(self.h.min()),
            "min_nu": float(self.nu.min()),
            "depth": self.depth,
        }


def power_iterate(L, tol: float = 1e-12, max_iter: int = 100_000) -> SpectralData:
    """Right iteration from the constant function, left from the uniform mass.

    Each step rescales; ``rho`` is the geometric mean of the right quotient
    ``max(L h)`` (with ``max h = 1``) and the left quotient ``sum(nu L)``
    (with ``sum nu = 1``).
    """
    n = L.size
    h = np.ones(n)
    nu = np.full(n, 1.0 / n)
    best = None
    for it in range(1, max_iter + 1):
        Lh = L.matvec(h)
        nuL = L.rmatvec(nu)
        rho_r = float(Lh.max())
        rho_l = math.fsum(nuL)
        rho = math.sqrt(rho_r * rho_l)
        res_r = float(np.max(np.abs(Lh - rho * h)))
        res_l = float(np.sum(np.abs(nuL - rho * nu)))
        if best is None or max(res_r, res_l) < max(best[3], best[4]):
            best = (rho, h, nu, res_r, res_l, it)
        if res_r < tol and res_l < tol:
            return SpectralData(rho, h, nu, res_r, res_l, it, True, tol,
                                getattr(L, "depth", None), getattr(L, "k", None))
        h = Lh / rho_r
        nu = nuL / rho_l
    rho, h, nu, res_r, res_l, it = best
    warnings.warn(
        f"power iteration did not reach tol={tol:g} in {max_iter} steps "
        f"(residuals {res_r:.3g}, {res_l:.3g})",
        ConvergenceWarning,
        stacklevel=2,
    )
    return SpectralData(rho, h, nu, res_r, res_l, it, False, tol,
                        getattr(L, "depth", None), getattr(L, "k", None))


def normalize_potential(
    f: PotentialSpec,
    w: AprioriWeights,
    D: int,
    tol: float = 1e-12,
    alphabet: Alphabet | None = None,
    spectral: SpectralData | None = None,
    max_iter: int = 100_000,
) -> tuple[PotentialSpec, float]:
    """Cohomologous normalized potential ``f + log h - log h o sigma - log rho``.

    ``h`` lives on depth ``D``, so ``h o sigma`` needs ``D + 1`` coordinates
    and the result is tabulated at depth ``max(m, D + 1)``.  Returns the new
    potential and ``||L_fbar 1 - 1||_inf`` at depth ``D``.
    """
    alphabet = alphabet or Alphabet.spins()
    k = alphabet.k
    L = build_truncated_operator(f, w, D, alphabet)
    sd = spectral if spectral is not None else power_iterate(L, tol, max_iter)
    if not sd.converged:
        raise NotConvergedError(
            f"cannot normalize: spectral data not converged (residuals {sd.right_residual:.3g}, "
            f"{sd.left_residual:.3g})"
        )
    M = max(f.depth, D + 1)
    idx = np.arange(k**M, dtype=np.int64)
    log_h = np.log(sd.h)
    ftab = f.table(alphabet)
    table = (
        ftab[idx // k ** (M - f.depth)]
        + log_h[idx // k ** (M - D)]
        - log_h[(idx // k ** (M - D - 1)) % k**D]
        - math.log(sd.rho)
    )
    fbar = PotentialSpec.tabulated(table, k, M)
    Lbar = build_truncated_operator(fbar, w, D, alphabet)
    residual = float(np.max(np.abs(Lbar.matvec(np.ones(Lbar.size)) - 1.0)))
    return fbar, residual


@dataclass
class MultiplicityReport:
    rho: float
    candidates: list[float]
    multiplicity: int
    gap: float
    second_modulus: float
    residuals: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "candidates": self.candidates,
            "multiplicity": self.multiplicity,
            "gap": self.gap,
            "second_modulus": self.second_modulus,
            "residuals": self.residuals,
        }


def _deflated_power(op, op_t, n, rho, tol, max_iter, rng):
    """Power iteration on a deflated operator; returns (lam, r, l, residual, modulus)."""
    r = rng.random(n) + 0.5
    l = rng.random(n) + 0.5
    r /= np.linalg.norm(r)
    l /= np.linalg.norm(l)
    log_growth = []
    lam, res = 0.0, math.inf
    for _ in range(max_iter):
        Lr = op(r)
        nr = float(np.linalg.norm(Lr))
        if nr <= 1e-14 * rho:
            return 0.0, r, l, 0.0, 0.0
        lam = float(l @ Lr) / float(l @ r) if abs(l @ r) > 1e-300 else float(r @ Lr)
        res = float(np.linalg.norm(Lr - lam * r))
        log_growth.append(math.log(nr))
        if res < tol * rho:
            break
        r = Lr / nr
        lL = op_t(l)
        nl = float(np.linalg.norm(lL))
        if nl > 0:
            l = lL / nl
    window = log_growth[-min(len(log_growth), 50):]
    modulus = math.exp(sum(window) / len(window))
    if res < tol * rho:
        modulus = abs(lam)
    return lam, r, l, res, modulus


def leading_multiplicity(L, rho: float, tol: float = 1e-8, max_vectors: int = 4,
                         max_iter: int = 5000, seed: int = 0) -> MultiplicityReport:
    """Geometric multiplicity of ``rho`` by Hotelling deflation.

    Found eigenpairs ``(lam, r, l)`` are removed as ``L - sum lam r l^T / (l^T r)``
    and the deflated operator is re-iterated from a random positive start.
    An eigenvector counts when its residual is below ``tol * rho`` and its
    eigenvalue is within ``tol * rho`` of ``rho``.  The first non-counted
    iteration gives the modulus of the next eigenvalue, hence the gap.
    """
    n = L.size
    rng = np.random.default_rng(seed)
    pairs: list[tuple[float, np.ndarray, np.ndarray]] = []

    def op(x):
        y = L.matvec(x)
        for lam, r, l in pairs:
            y = y - lam * r * (l @ x) / (l @ r)
        return y

    def op_t(y):
        z = L.rmatvec(y)
        for lam, r, l in pairs:
            z = z - lam * l * (y @ r) / (l @ r)
        return z

    candidates, residuals = [], []
    second = 0.0
    for _ in range(max_vectors):
        lam, r, l, res, modulus = _deflated_power(op, op_t, n, rho, tol, max_iter, rng)
        if res < tol * rho and abs(lam - rho) <= tol * rho:
            candidates.append(lam)
            residuals.append(res)
            pairs.append((lam, r, l))
            continue
        second = modulus
        break
    else:
        second = math.nan
    return MultiplicityReport(rho, candidates, len(candidates), rho - second, second, residuals)


@dataclass
class IterateNorms:
    norms: np.ndarray
    rescaled_by: float
    exp_rate: float | None
    poly_slope: float | None

    def as_dict(self) -> dict:
        return {
            "norms": self.norms.tolist(),
            "rescaled_by": self.rescaled_by,
            "exp_rate": self.exp_rate,
            "poly_slope": self.poly_slope,
        }


def fit_decay(norms: np.ndarray, lo: int = 1, hi: int | None = None, floor: float | None = None):
    """Least-squares rates over ``lo <= n <= hi``: ``(s, slope)`` with
    ``log ||L^n phi|| ~ n log s`` and ``~ slope * log n``.  Norms below
    ``floor`` (default: 64 eps times the initial norm) are rounding noise and
    are dropped."""
    hi = len(norms) - 1 if hi is None else min(hi, len(norms) - 1)
    if floor is None:
        floor = 64 * np.finfo(float).eps * max(norms[0], np.finfo(float).tiny)
    n = np.arange(len(norms))
    sel = (n >= max(lo, 1)) & (n <= hi) & (norms > floor)
    if sel.sum() < 2:
        return None, None
    logs = np.log(norms[sel])
    s = math.exp(np.polyfit(n[sel], logs, 1)[0])
    slope = float(np.polyfit(np.log(n[sel]), logs, 1)[0])
    return s, slope


def iterate_norms(L, phi: CylinderFunction | np.ndarray, n_max: int, rescale: float | None = None,
                  fit_window: tuple[int, int] | None = None) -> IterateNorms:
    """``||L^n phi||_inf`` for ``n = 0..n_max``; with ``rescale`` the operator
    is divided by that number at each step (pass ``rho`` to avoid overflow)."""
    x = np.asarray(phi.values if isinstance(phi, CylinderFunction) else phi, dtype=float)
    if isinstance(phi, CylinderFunction) and getattr(L, "depth", phi.depth) != phi.depth:
        raise DepthError(f"function depth {phi.depth} vs operator depth {L.depth}")
    factor = 1.0 / rescale if rescale else 1.0
    norms = np.empty(n_max + 1)
    norms[0] = np.max(np.abs(x))
    for n in range(1, n_max + 1):
        x = L.matvec(x) * factor
        norms[n] = np.max(np.abs(x))
    lo, hi = fit_window if fit_window else (1, n_max)
    s, slope = fit_decay(norms, lo, hi)
    return IterateNorms(norms, rescale or 1.0, s, slope)


def center(phi: CylinderFunction, nu: CylinderMeasure) -> CylinderFunction:
    """``phi - <phi, nu>`` with ``nu`` normalized."""
    mean = nu.integrate(phi) / nu.total
    return CylinderFunction(phi.depth, phi.values - mean, phi.k)
