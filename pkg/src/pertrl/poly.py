"""Dense univariate polynomials, Gaussian moments and Hermite basis changes.

Every value function, dynamics map and cost in the package is a
:class:`Polynomial` in the monomial basis.  Coefficients are stored densely,
index ``i`` holding the coefficient of ``x**i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Polynomial",
    "compose",
    "double_factorial",
    "gaussian_moment",
    "GaussianMomentTable",
    "gaussian_moments",
    "gram_moment_variance",
    "exact_gram",
    "HermiteTransform",
    "hermite_matrix",
    "hermite_c_prime",
]


def _canonical(coeffs: np.ndarray) -> np.ndarray:
    # strip exact zeros only; thresholding would change degrees
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return np.zeros(1)
    return coeffs[: nz[-1] + 1].copy()


class Polynomial:
    """Immutable dense polynomial in the monomial basis.

    Parameters
    ----------
    coeffs : sequence of float
        ``coeffs[i]`` is the coefficient of ``x**i``.  Trailing exact zeros
        are stripped; the zero polynomial is stored as ``[0.0]``.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float] = (0.0,)):
        c = np.array(list(coeffs) if not isinstance(coeffs, np.ndarray) else coeffs, dtype=float)
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c = _canonical(c)
        c.setflags(write=False)
        self._c = c

    # -- constructors -----------------------------------------------------
    @classmethod
    def monomial(cls, power: int, scale: float = 1.0) -> "Polynomial":
        c = np.zeros(power + 1)
        c[power] = scale
        return cls(c)

    @classmethod
    def identity(cls) -> "Polynomial":
        return cls([0.0, 1.0])

    @classmethod
    def constant(cls, value: float) -> "Polynomial":
        return cls([value])

    # -- basic properties -------------------------------------------------
    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return self._c.size - 1

    def is_zero(self) -> bool:
        return self._c.size == 1 and self._c[0] == 0.0

    def coef(self, i: int) -> float:
        return float(self._c[i]) if 0 <= i < self._c.size else 0.0

    def padded(self, length: int, start: int = 0) -> np.ndarray:
        """Coefficients ``start .. start+length-1`` as a zero-padded array."""
        out = np.zeros(length)
        seg = self._c[start : start + length]
        out[: seg.size] = seg
        return out

    def __len__(self) -> int:
        return self._c.size

    def __repr__(self) -> str:
        return f"Polynomial({self._c.tolist()!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._c.size == other._c.size and bool(np.all(self._c == other._c))

    def __hash__(self) -> int:
        return hash(self._c.tobytes())

    # -- arithmetic ------------------------------------------------------
    @staticmethod
    def _lift(other) -> "Polynomial":
        return other if isinstance(other, Polynomial) else Polynomial([float(other)])

    def __add__(self, other) -> "Polynomial":
        o = self._lift(other)
        n = max(self._c.size, o._c.size)
        return Polynomial(self.padded(n) + o.padded(n))

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(-self._c)

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._lift(other) - self

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return Polynomial(np.convolve(self._c, other._c))
        return Polynomial(self._c * float(other))

    __rmul__ = __mul__

    def truncate(self, max_power: int) -> "Polynomial":
        """Drop every coefficient of index greater than ``max_power``."""
        if max_power < 0:
            raise ValueError("max_power must be >= 0")
        return Polynomial(self._c[: max_power + 1])

    def power(self, n: int, truncate_at: int | None = None) -> "Polynomial":
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        out = Polynomial([1.0])
        for _ in range(n):
            out = out * self
            if truncate_at is not None:
                out = out.truncate(truncate_at)
        return out

    def __pow__(self, n: int) -> "Polynomial":
        return self.power(int(n))

    # -- calculus and evaluation -----------------------------------------
    def __call__(self, x):
        """Horner evaluation at a scalar or array."""
        c = self._c
        if isinstance(x, Polynomial):
            return compose(self, x)
        x = np.asarray(x, dtype=float)
        acc = np.full_like(x, c[-1])
        for k in range(c.size - 2, -1, -1):
            acc = acc * x + c[k]
        return acc if acc.ndim else float(acc)

    def derivative(self, order: int = 1) -> "Polynomial":
        c = self._c
        for _ in range(order):
            if c.size == 1:
                return Polynomial([0.0])
            c = c[1:] * np.arange(1, c.size)
        return Polynomial(c)

    def shift(self, x0: float) -> "Polynomial":
        """Return ``q`` with ``q(d) = p(x0 + d)`` by repeated synthetic division."""
        c = self._c.astype(float).copy()
        n = c.size
        # after pass k, c[k] holds the k-th Taylor coefficient
        for k in range(n - 1):
            for j in range(n - 2, k - 1, -1):
                c[j] += x0 * c[j + 1]
        return Polynomial(c)

    def taylor(self, x0: float, order: int, *, include_constant: bool = False) -> np.ndarray:
        """Taylor coefficients about ``x0``: indices 1..order (or 0..order)."""
        q = self.shift(x0)
        if include_constant:
            return q.padded(order + 1)
        return q.padded(order, start=1)

    # -- serialization -----------------------------------------------------
    def to_list(self) -> list[float]:
        return [float(v) for v in self._c]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_json(cls, text: str) -> "Polynomial":
        data = json.loads(text)
        if not isinstance(data, list):
            raise ValueError("polynomial JSON must be an array of coefficients")
        return cls(data)


def compose(outer: Polynomial, inner: Polynomial, truncate_at: int | None = None) -> Polynomial:
    """Return ``outer(inner(x))`` by Horner's scheme in the polynomial ring.

    With ``truncate_at`` every intermediate product is truncated, which gives
    the same result as truncating the exact composition.
    """
    if truncate_at is not None and truncate_at < 0:
        raise ValueError("truncate_at must be >= 0")
    c = outer.coeffs
    acc = Polynomial([c[-1]])
    for k in range(c.size - 2, -1, -1):
        acc = acc * inner + c[k]
        if truncate_at is not None:
            acc = acc.truncate(truncate_at)
    if truncate_at is not None:
        acc = acc.truncate(truncate_at)
    return acc


# ---------------------------------------------------------------------------
# Gaussian moments


def double_factorial(n: int) -> int:
    """``n!!`` for odd ``n`` (and the conventions ``(-1)!! = 0!! = 1``)."""
    n = int(n)
    if n < -1:
        raise ValueError("double factorial needs n >= -1")
    if n > 0 and n % 2 == 0:
        raise ValueError(f"only odd arguments are supported, got {n}")
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def gaussian_moment(p: int, sigma_X2: float) -> float:
    """``E[x**p]`` for ``x ~ N(0, sigma_X2)``."""
    if p < 0:
        raise ValueError("moment order must be >= 0")
    if p % 2:
        return 0.0
    return float(double_factorial(p - 1)) * sigma_X2 ** (p // 2)


@dataclass(frozen=True)
class GaussianMomentTable:
    sigma_X2: float
    moments: tuple[float, ...]

    def __getitem__(self, p: int) -> float:
        return self.moments[p]


def gaussian_moments(P: int, sigma_X2: float) -> GaussianMomentTable:
    if sigma_X2 < 0:
        raise ValueError("variance must be nonnegative")
    return GaussianMomentTable(sigma_X2, tuple(gaussian_moment(p, sigma_X2) for p in range(P + 1)))


def gram_moment_variance(M: int, sigma_X2: float) -> float:
    """``Var(x**(2M))`` under ``N(0, sigma_X2)``: ``[(4M-1)!! - (2M-1)!!**2] sigma^(4M)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    factor = double_factorial(4 * M - 1) - double_factorial(2 * M - 1) ** 2
    return float(factor) * sigma_X2 ** (2 * M)


def exact_gram(max_power: int, include_constant: bool, sigma_X2: float) -> np.ndarray:
    """Exact Gaussian Gram matrix of the monomials ``x^lo .. x^max_power``."""
    if max_power < 1:
        raise ValueError("max_power must be >= 1")
    lo = 0 if include_constant else 1
    powers = np.arange(lo, max_power + 1)
    table = gaussian_moments(2 * max_power, sigma_X2)
    return np.array([[table[i + j] for j in powers] for i in powers], dtype=float)


# ---------------------------------------------------------------------------
# Hermite transform


@dataclass(frozen=True)
class HermiteTransform:
    """Lower-triangular change of basis from monomials to orthonormal Hermite rows.

    ``H[n]`` holds the monomial coefficients of ``h_n(x) = He_n(x/sigma)/sqrt(n!)``
    for ``n = 0..N``; ``H_inv`` expands each monomial in the ``h_n``.
    """

    H: np.ndarray
    H_inv: np.ndarray
    sigma_X2: float

    @property
    def order(self) -> int:
        return self.H.shape[0] - 1

    def rows(self, include_constant: bool = True) -> np.ndarray:
        return self.H if include_constant else self.H[1:, 1:]


def _hermite_e_int(N: int) -> list[list[int]]:
    # probabilists' He_n as exact integer coefficient lists
    rows = [[1], [0, 1]]
    for n in range(1, N):
        nxt = [0] + rows[n]
        prev = rows[n - 1]
        for k, v in enumerate(prev):
            nxt[k] -= n * v
        rows.append(nxt)
    return rows[: N + 1]


def hermite_matrix(N: int, sigma_X2: float) -> HermiteTransform:
    if N < 1:
        raise ValueError("N must be >= 1")
    if sigma_X2 <= 0:
        raise ValueError("sigma_X2 must be positive")
    sigma = math.sqrt(sigma_X2)
    H = np.zeros((N + 1, N + 1))
    for n, row in enumerate(_hermite_e_int(N)):
        norm = math.sqrt(math.factorial(n))
        for k, v in enumerate(row):
            if v:
                H[n, k] = v / (norm * sigma**k)
    # x^n = sigma^n sum_k n!/(k! (n-2k)! 2^k) He_{n-2k}(x/sigma)
    H_inv = np.zeros((N + 1, N + 1))
    for n in range(N + 1):
        for k in range(n // 2 + 1):
            m = n - 2 * k
            w = math.factorial(n) // (math.factorial(k) * math.factorial(m) * 2**k)
            H_inv[n, m] = w * math.sqrt(math.factorial(m)) * sigma**n
    return HermiteTransform(H=H, H_inv=H_inv, sigma_X2=sigma_X2)


def hermite_c_prime(N: int, sigma_X2: float) -> float:
    """Measured ``||H_M|| * ||H^N||`` (last column times last row) of the Hermite map."""
    H = hermite_matrix(N, sigma_X2).H
    return float(np.linalg.norm(H[:, -1]) * np.linalg.norm(H[-1, :]))


def basis_values(x: np.ndarray, powers: Sequence[int]) -> np.ndarray:
    """Rows ``x**p`` for each requested power; shape ``(len(powers), len(x))``."""
    x = np.asarray(x, dtype=float)
    return np.vstack([x**p for p in powers]) if len(powers) else np.zeros((0, x.size))
