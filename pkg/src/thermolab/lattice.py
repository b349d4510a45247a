"""Alphabets, words, cylinder containers and potentials.

A configuration ``x = (x_1, x_2, ...)`` of the one-sided shift is only ever
seen through its first ``D`` coordinates.  Words of depth ``D`` are encoded
most-significant-first, so the word ``(w_1, ..., w_D)`` has index
``sum_i w_i * k**(D - i)``.  With this layout prepending a symbol ``a`` and
dropping the last coordinate maps index ``i`` to ``a * k**(D-1) + i // k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class LatticeError(ValueError):
    pass


class InvalidSymbolError(LatticeError):
    pass


class DepthError(LatticeError):
    """Raised on depth underflow or when a word is too short for a potential."""


@dataclass(frozen=True)
class Alphabet:
    labels: tuple[float, ...]

    def __post_init__(self):
        labels = tuple(float(v) for v in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise LatticeError("alphabet needs at least two symbols")
        if len(set(labels)) != len(labels):
            raise LatticeError(f"alphabet labels must be distinct, got {labels}")

    @property
    def k(self) -> int:
        return len(self.labels)

    @classmethod
    def spins(cls) -> "Alphabet":
        """The Ising alphabet, symbol 0 -> -1 and symbol 1 -> +1."""
        return cls((-1.0, 1.0))

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=float)

    def index_of(self, label: float) -> int:
        return self.labels.index(float(label))


@dataclass(frozen=True)
class AprioriWeights:
    """Strictly positive weights of the a priori measure on the alphabet.

    ``normalized=False`` is allowed for the counting measure (all weights 1).
    """

    values: tuple[float, ...]
    normalized: bool = True

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if any(not (v > 0.0) or not math.isfinite(v) for v in values):
            raise LatticeError(f"a priori weights must be finite and > 0, got {values}")
        if self.normalized and abs(math.fsum(values) - 1.0) > 4 * len(values) * np.finfo(float).eps:
            raise LatticeError(f"normalized weights must sum to 1, got {math.fsum(values)!r}")

    @property
    def k(self) -> int:
        return len(self.values)

    @classmethod
    def uniform(cls, k: int) -> "AprioriWeights":
        return cls((1.0 / k,) * k, normalized=True)

    @classmethod
    def counting(cls, k: int) -> "AprioriWeights":
        return cls((1.0,) * k, normalized=False)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class Word:
    symbols: tuple[int, ...]

    def __post_init__(self):
        symbols = tuple(int(s) for s in self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise DepthError("a word has positive depth")
        if min(symbols) < 0:
            raise InvalidSymbolError(f"negative symbol in {symbols}")

    @property
    def depth(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, item):
        return self.symbols[item]

    def extended(self, depth: int) -> "Word":
        """Periodic extension (or truncation) to ``depth`` symbols."""
        reps = -(-depth // self.depth)
        return Word((self.symbols * reps)[:depth])


def _check_symbols(symbols: Sequence[int], k: int) -> None:
    for s in symbols:
        if not 0 <= s < k:
            raise InvalidSymbolError(f"symbol {s} is not in [0, {k})")


def word_index(word: Word | Sequence[int], k: int) -> int:
    symbols = word.symbols if isinstance(word, Word) else tuple(int(s) for s in word)
    _check_symbols(symbols, k)
    index = 0
    for s in symbols:
        index = index * k + s
    return index


def decode_index(index: int, k: int, depth: int) -> Word:
    if not 0 <= index < k**depth:
        raise InvalidSymbolError(f"index {index} out of range for k={k}, D={depth}")
    symbols = []
    for _ in range(depth):
        index, s = divmod(index, k)
        symbols.append(s)
    return Word(tuple(reversed(symbols)))


def all_words(k: int, depth: int) -> np.ndarray:
    """Symbol matrix of shape (k**depth, depth); row ``i`` is the word with index ``i``."""
    idx = np.arange(k**depth, dtype=np.int64)
    powers = k ** np.arange(depth - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % k


@dataclass(frozen=True)
class CylinderFunction:
    depth: int
    values: np.ndarray
    k: int = 2

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.k**self.depth,):
            raise DepthError(
                f"cylinder function of depth {self.depth} over k={self.k} needs "
                f"{self.k ** self.depth} values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, c: float, depth: int, k: int = 2) -> "CylinderFunction":
        return cls(depth, np.full(k**depth, float(c)), k)

    @classmethod
    def coordinate(cls, alphabet: Alphabet, depth: int, position: int = 1) -> "CylinderFunction":
        """The label of the ``position``-th coordinate, e.g. ``phi(x) = x_1``."""
        if not 1 <= position <= depth:
            raise DepthError(f"coordinate {position} not visible at depth {depth}")
        symbols = all_words(alphabet.k, depth)[:, position - 1]
        return cls(depth, alphabet.label_array()[symbols], alphabet.k)

    @classmethod
    def indicator(cls, word: Word | Sequence[int], depth: int, k: int = 2) -> "CylinderFunction":
        """Indicator of the cylinder fixed by ``word`` (of depth <= ``depth``)."""
        symbols = word.symbols if isinstance(word, Word) else tuple(word)
        j = len(symbols)
        if j > depth:
            raise DepthError(f"event of depth {j} deeper than {depth}")
        lead = word_index(symbols, k)
        values = np.zeros(k**depth)
        block = k ** (depth - j)
        values[lead * block:(lead + 1) * block] = 1.0
        return cls(depth, values, k)

    def lift(self, depth: int) -> "CylinderFunction":
        """The same function seen at a larger depth."""
        if depth < self.depth:
            raise DepthError(f"cannot lift depth {self.depth} to {depth}")
        return CylinderFunction(depth, np.repeat(self.values, self.k ** (depth - self.depth)), self.k)

    def __call__(self, word: Word | Sequence[int]) -> float:
        symbols = word.symbols if isinstance(word, Word) else tuple(word)
        return float(self.values[word_index(symbols[: self.depth], self.k)])


@dataclass(frozen=True)
class CylinderMeasure:
    depth: int
    masses: np.ndarray
    k: int = 2
    total: float = field(init=False)

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        if masses.shape != (self.k**self.depth,):
            raise DepthError(
                f"cylinder measure of depth {self.depth} over k={self.k} needs "
                f"{self.k ** self.depth} masses, got shape {masses.shape}"
            )
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise LatticeError("cylinder masses must be finite and nonnegative")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "total", math.fsum(masses))

    @classmethod
    def uniform(cls, depth: int, k: int = 2) -> "CylinderMeasure":
        return cls(depth, np.full(k**depth, float(k) ** -depth), k)

    @classmethod
    def product(cls, weights: AprioriWeights | Sequence[float], depth: int) -> "CylinderMeasure":
        """Product measure with one-site marginal ``weights`` (need not be normalized)."""
        w = weights.as_array() if isinstance(weights, AprioriWeights) else np.asarray(weights, float)
        masses = np.ones(1)
        for _ in range(depth):
            masses = np.outer(masses, w).ravel()
        return cls(depth, masses, len(w))

    def integrate(self, phi: CylinderFunction) -> float:
        """``<phi, m>``; ``phi`` may be shallower than the measure."""
        if phi.depth > self.depth:
            raise DepthError(f"function depth {phi.depth} exceeds measure depth {self.depth}")
        m = self
        while m.depth > phi.depth:
            m = project_measure(m)
        return math.fsum(m.masses * phi.values)

    def normalized(self) -> "CylinderMeasure":
        return CylinderMeasure(self.depth, self.masses / self.total, self.k)

    def mass(self, word: Word | Sequence[int]) -> float:
        symbols = word.symbols if isinstance(word, Word) else tuple(word)
        m = self
        while m.depth > len(symbols):
            m = project_measure(m)
        return float(m.masses[word_index(symbols, self.k)])


def project_measure(m: CylinderMeasure) -> CylinderMeasure:
    """Marginal on the first ``D - 1`` coordinates.

    Each output mass sums the ``k`` children ``C.a`` in increasing index order
    with ``math.fsum``, so the result does not depend on array layout.
    """
    if m.depth < 2:
        raise DepthError("cannot project a depth-1 measure")
    children = m.masses.reshape(-1, m.k)
    out = np.array([math.fsum(row) for row in children]) if m.k > 2 else children[:, 0] + children[:, 1]
    return CylinderMeasure(m.depth - 1, out, m.k)


def marginal(m: CylinderMeasure, depth: int) -> CylinderMeasure:
    while m.depth > depth:
        m = project_measure(m)
    return m


# --------------------------------------------------------------------------
# potentials


def dyson_coupling(n: np.ndarray | int, epsilon: float):
    return np.asarray(n, dtype=float) ** -(2.0 + epsilon)


def dyson_tail(epsilon: float, m: int, exact_terms: int = 4096) -> float:
    """Upper bound for ``sum_{n > m} n**-(2+eps)``.

    The first ``exact_terms`` terms are summed exactly and the remainder is
    bounded by the integral ``int_M^inf x**-s dx``.
    """
    s = 2.0 + epsilon
    upper = m + exact_terms
    head = math.fsum(float(n) ** -s for n in range(m + 1, upper + 1))
    return head + upper ** (1.0 - s) / (s - 1.0)


KINDS = ("constant", "tabulated", "dyson", "mean-field")


@dataclass(frozen=True)
class PotentialSpec:
    """A potential of one of four kinds.

    constant     f == value
    tabulated    f(x) = table[index(x_1..x_m)]
    dyson        f(x) = sum_{n=2}^{m} x_1 x_n / n**(2+epsilon), tail carried separately
    mean-field   f(ax) = label(a) * beta * gamma, for x classified with magnetization gamma
    """

    kind: str
    value: float = 0.0
    m: int = 1
    table_values: tuple[float, ...] | None = None
    epsilon: float | None = None
    beta: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LatticeError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.m < 1:
            raise DepthError("potential depth must be >= 1")
        if self.kind == "tabulated":
            if self.table_values is None:
                raise LatticeError("tabulated potential needs a table")
            object.__setattr__(self, "table_values", tuple(float(v) for v in self.table_values))
        if self.kind == "dyson" and not (self.epsilon is not None and self.epsilon > 0):
            raise LatticeError("dyson potential needs epsilon > 0")
        if self.kind == "mean-field":
            if not (self.beta is not None and self.beta > 0):
                raise LatticeError("mean-field potential needs beta > 0")
            if self.gamma is None or not -1.0 <= self.gamma <= 1.0:
                raise LatticeError("mean-field potential needs a magnetization gamma in [-1, 1]")

    # constructors

    @classmethod
    def constant(cls, c: float) -> "PotentialSpec":
        return cls("constant", value=float(c))

    @classmethod
    def tabulated(cls, table: Sequence[float] | np.ndarray, k: int, m: int) -> "PotentialSpec":
        table = np.asarray(table, dtype=float).ravel()
        if table.shape != (k**m,):
            raise DepthError(f"table for depth {m}, k={k} needs {k ** m} entries, got {table.size}")
        return cls("tabulated", m=m, table_values=tuple(table))

    @classmethod
    def ising(cls, J: float, alphabet: Alphabet | None = None) -> "PotentialSpec":
        """Nearest-neighbour interaction ``f(x) = J x_1 x_2``."""
        alphabet = alphabet or Alphabet.spins()
        words = all_words(alphabet.k, 2)
        lab = alphabet.label_array()
        return cls.tabulated(J * lab[words[:, 0]] * lab[words[:, 1]], alphabet.k, 2)

    @classmethod
    def dyson(cls, epsilon: float, m: int) -> "PotentialSpec":
        return cls("dyson", m=int(m), epsilon=float(epsilon))

    @classmethod
    def mean_field(cls, beta: float, gamma: float) -> "PotentialSpec":
        return cls("mean-field", beta=float(beta), gamma=float(gamma))

    # metadata

    @property
    def depth(self) -> int:
        return self.m if self.kind in ("tabulated", "dyson") else 1

    @property
    def tail_bound(self) -> float:
        if self.kind == "dyson":
            return dyson_tail(self.epsilon, self.m)
        return 0.0

    def table(self, alphabet: Alphabet) -> np.ndarray:
        """Values on the depth-``self.depth`` cylinders, indexed by word index."""
        k, lab = alphabet.k, alphabet.label_array()
        if self.kind == "constant":
            return np.full(k, self.value)
        if self.kind == "tabulated":
            table = np.asarray(self.table_values)
            if table.size != k**self.m:
                raise DepthError(f"table has {table.size} entries, alphabet needs {k ** self.m}")
            return table.copy()
        if self.kind == "mean-field":
            return lab * (self.beta * self.gamma)
        if self.m < 2:
            return np.zeros(k)
        x = lab[all_words(k, self.m)]
        coupling = dyson_coupling(np.arange(2, self.m + 1), self.epsilon)
        return x[:, 0] * (x[:, 1:] @ coupling)

    def sup_norm(self, alphabet: Alphabet) -> float:
        """Upper bound for ``||f||_inf`` of the untruncated potential."""
        if self.kind == "dyson":
            lmax = float(np.max(np.abs(alphabet.label_array())))
            return lmax**2 * (math.fsum(dyson_coupling(np.arange(2, self.m + 1), self.epsilon)) + self.tail_bound)
        return float(np.max(np.abs(self.table(alphabet))))

    def with_gamma(self, gamma: float) -> "PotentialSpec":
        return PotentialSpec.mean_field(self.beta, gamma)


def evaluate_potential(f: PotentialSpec, word: Word | Sequence[int], alphabet: Alphabet) -> tuple[float, float]:
    """Value of ``f`` on the cylinder fixed by ``word`` and a rigorous error bound.

    The bound is zero except for the Dyson kind, where it is the tail
    ``sum_{n > m} |x_1 x_n| / n**(2+eps)`` dropped by the truncation.
    """
    symbols = word.symbols if isinstance(word, Word) else tuple(int(s) for s in word)
    _check_symbols(symbols, alphabet.k)
    if len(symbols) < f.depth:
        raise DepthError(f"{f.kind} potential needs depth {f.depth}, word has {len(symbols)}")
    lab = alphabet.labels
    if f.kind == "constant":
        return f.value, 0.0
    if f.kind == "tabulated":
        return f.table_values[word_index(symbols[: f.m], alphabet.k)], 0.0
    if f.kind == "mean-field":
        return lab[symbols[0]] * f.beta * f.gamma, 0.0
    x1 = lab[symbols[0]]
    value = math.fsum(x1 * lab[symbols[n - 1]] * n ** -(2.0 + f.epsilon) for n in range(2, f.m + 1))
    lmax = max(abs(v) for v in lab)
    return value, lmax**2 * f.tail_bound


def variation(f: PotentialSpec, n: int, alphabet: Alphabet) -> float:
    """Upper bound for ``sup{|f(x) - f(y)| : x_i = y_i, i <= n}``.

    Tabulated potentials are scanned exactly; the Dyson kind uses the
    analytic tail ``2 sum_{j > n} j**-(2+eps)``.  The mean-field potential is
    discontinuous (the magnetization is a tail quantity), so its variation is
    ``2 beta`` for every ``n``.
    """
    if n < 1:
        raise DepthError("variation is defined for n >= 1")
    if f.kind == "constant":
        return 0.0
    if f.kind == "tabulated":
        if n >= f.m:
            return 0.0
        table = np.asarray(f.table_values).reshape(alphabet.k**n, -1)
        return float(np.max(np.ptp(table, axis=1)))
    if f.kind == "mean-field":
        return 2.0 * f.beta * float(np.max(np.abs(alphabet.label_array())))
    lmax = float(np.max(np.abs(alphabet.label_array())))
    return 2.0 * lmax**2 * dyson_tail(f.epsilon, n)
