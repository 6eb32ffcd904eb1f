"""Multivariate truncated power series (differential algebra).

A :class:`Tps` holds the Taylor coefficients of a function of ``nvars``
deviation variables, truncated at total degree ``order``.  Arithmetic
between series (``+``, ``-``, ``*``, ``/`` by scalars, ``**`` with a real
exponent) returns new series, truncated to the same order, so ordinary
numerical code written with Python operators can be re-run over series to
obtain a polynomial map instead of a single number::

    >>> d = variable(0, nvars=1, order=2)
    >>> ((1 + d) * (1 - d)).coeffs
    {(0,): 1.0, (2,): -1.0}
    >>> evaluate((1 + d) ** -1.5, [0.01])  # ~ 1.01 ** -1.5
    0.98518...

Coefficients are kept in a dense vector over the monomials of degree
``<= order``, ordered graded-lexicographically.  The mapping between that
vector and exponent multi-indices is shared by all series with the same
``(nvars, order)``.
"""

from __future__ import annotations

import json
from functools import lru_cache
from itertools import combinations_with_replacement
from numbers import Real

import numpy as np

__all__ = [
    "Tps",
    "TpsShapeError",
    "TpsDomainError",
    "variable",
    "constant",
    "add",
    "mul",
    "scale",
    "rpow",
    "evaluate",
    "monomials",
    "to_json",
    "from_json",
]

# underflow guard only; no epsilon pruning
_TINY = 1e-300


class TpsShapeError(ValueError):
    """Operands disagree on number of variables or truncation order."""


class TpsDomainError(ArithmeticError):
    """Operation undefined at the expansion point (e.g. a power of a non-positive constant)."""


@lru_cache(maxsize=None)
def monomials(nvars: int, order: int) -> tuple[tuple[int, ...], ...]:
    """Exponent multi-indices of total degree <= order in graded-lex order."""
    out = []
    for deg in range(order + 1):
        level = []
        for combo in combinations_with_replacement(range(nvars), deg):
            e = [0] * nvars
            for v in combo:
                e[v] += 1
            level.append(tuple(e))
        # lexicographic within a degree, largest power of the first variable first
        level.sort(reverse=True)
        out.extend(level)
    return tuple(out)


class _Basis:
    """Index tables for one (nvars, order) pair."""

    def __init__(self, nvars: int, order: int):
        self.nvars = nvars
        self.order = order
        self.exps = monomials(nvars, order)
        self.size = len(self.exps)
        self.index = {e: i for i, e in enumerate(self.exps)}
        self.exp_array = np.array(self.exps, dtype=np.int64).reshape(self.size, nvars)
        self.degree = self.exp_array.sum(axis=1)
        if nvars > 1:
            ii, jj, kk = [], [], []
            for i, ei in enumerate(self.exps):
                for j, ej in enumerate(self.exps):
                    e = tuple(a + b for a, b in zip(ei, ej))
                    k = self.index.get(e)
                    if k is not None:
                        ii.append(i)
                        jj.append(j)
                        kk.append(k)
            self.mul_i = np.array(ii, dtype=np.int64)
            self.mul_j = np.array(jj, dtype=np.int64)
            self.mul_k = np.array(kk, dtype=np.int64)


@lru_cache(maxsize=None)
def _basis(nvars: int, order: int) -> _Basis:
    return _Basis(nvars, order)


def _truncated_product(a: np.ndarray, b: np.ndarray, basis: _Basis) -> np.ndarray:
    if basis.nvars == 1:
        return np.convolve(a, b)[: basis.size]
    return np.bincount(basis.mul_k, weights=a[basis.mul_i] * b[basis.mul_j],
                       minlength=basis.size)


def _cleanup(c: np.ndarray) -> np.ndarray:
    c[np.abs(c) < _TINY] = 0.0
    return c


class Tps:
    """Truncated power series in ``nvars`` variables up to total degree ``order``.

    Instances are immutable; every operation returns a new series.  Plain
    Python numbers are promoted to constant series in mixed arithmetic.
    """

    __slots__ = ("_nvars", "_order", "_c")

    def __init__(self, nvars: int, order: int, coeffs=None):
        if nvars < 1:
            raise ValueError("nvars must be >= 1")
        if order < 0:
            raise ValueError("order must be >= 0")
        basis = _basis(nvars, order)
        self._nvars = nvars
        self._order = order
        if coeffs is None:
            c = np.zeros(basis.size)
        elif isinstance(coeffs, dict):
            c = np.zeros(basis.size)
            for e, v in coeffs.items():
                e = tuple(int(k) for k in e)
                if len(e) != nvars:
                    raise TpsShapeError(f"exponent {e} does not have {nvars} entries")
                if sum(e) > order:
                    continue
                c[basis.index[e]] += float(v)
        else:
            c = np.array(coeffs, dtype=float)
            if c.shape != (basis.size,):
                raise TpsShapeError(f"expected {basis.size} dense coefficients, got shape {c.shape}")
        c.setflags(write=False)
        self._c = c

    @classmethod
    def _wrap(cls, nvars: int, order: int, c: np.ndarray) -> "Tps":
        obj = cls.__new__(cls)
        obj._nvars = nvars
        obj._order = order
        c = _cleanup(c)
        c.setflags(write=False)
        obj._c = c
        return obj

    @property
    def nvars(self) -> int:
        return self._nvars

    @property
    def order(self) -> int:
        return self._order

    @property
    def dense(self) -> np.ndarray:
        """Read-only coefficient vector in graded-lex monomial order."""
        return self._c

    @property
    def coeffs(self) -> dict[tuple[int, ...], float]:
        """Nonzero coefficients keyed by exponent multi-index."""
        exps = _basis(self._nvars, self._order).exps
        return {exps[i]: float(self._c[i]) for i in np.flatnonzero(self._c)}

    @property
    def cons(self) -> float:
        """Constant part (value at the expansion point)."""
        return float(self._c[0])

    def coefficient(self, exponents) -> float:
        idx = _basis(self._nvars, self._order).index.get(tuple(exponents))
        return 0.0 if idx is None else float(self._c[idx])

    def truncate(self, order: int) -> "Tps":
        """Drop every term above ``order``; the result keeps the original order."""
        basis = _basis(self._nvars, self._order)
        c = self._c.copy()
        c[basis.degree > order] = 0.0
        return Tps._wrap(self._nvars, self._order, c)

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other) -> np.ndarray | None:
        if isinstance(other, Tps):
            if other._nvars != self._nvars or other._order != self._order:
                raise TpsShapeError(
                    f"cannot combine Tps(nvars={self._nvars}, order={self._order}) with "
                    f"Tps(nvars={other._nvars}, order={other._order})")
            return other._c
        return None

    def __add__(self, other):
        oc = self._coerce(other)
        if oc is None:
            if not isinstance(other, Real):
                return NotImplemented
            c = self._c.copy()
            c[0] += float(other)
        else:
            c = self._c + oc
        return Tps._wrap(self._nvars, self._order, c)

    __radd__ = __add__

    def __neg__(self):
        return Tps._wrap(self._nvars, self._order, -self._c)

    def __pos__(self):
        return self

    def __sub__(self, other):
        oc = self._coerce(other)
        if oc is None:
            if not isinstance(other, Real):
                return NotImplemented
            c = self._c.copy()
            c[0] -= float(other)
        else:
            c = self._c - oc
        return Tps._wrap(self._nvars, self._order, c)

    def __rsub__(self, other):
        if not isinstance(other, Real):
            return NotImplemented
        c = -self._c
        c[0] += float(other)
        return Tps._wrap(self._nvars, self._order, c)

    def __mul__(self, other):
        oc = self._coerce(other)
        if oc is None:
            if not isinstance(other, Real):
                return NotImplemented
            return Tps._wrap(self._nvars, self._order, self._c * float(other))
        basis = _basis(self._nvars, self._order)
        return Tps._wrap(self._nvars, self._order, _truncated_product(self._c, oc, basis))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tps):
            return self * rpow(other, -1.0)
        if not isinstance(other, Real):
            return NotImplemented
        return Tps._wrap(self._nvars, self._order, self._c / float(other))

    def __rtruediv__(self, other):
        if not isinstance(other, Real):
            return NotImplemented
        return rpow(self, -1.0) * float(other)

    def __pow__(self, p):
        if isinstance(p, Tps):
            return NotImplemented
        return rpow(self, p)

    # -- comparison / misc -------------------------------------------------

    def __eq__(self, other):
        if isinstance(other, Tps):
            return (self._nvars == other._nvars and self._order == other._order
                    and bool(np.array_equal(self._c, other._c)))
        if isinstance(other, Real):
            return bool(self._c[0] == other and not np.any(self._c[1:]))
        return NotImplemented

    def __hash__(self):
        return hash((self._nvars, self._order, self._c.tobytes()))

    def __float__(self):
        return self.cons

    def __call__(self, *point):
        if len(point) == 1 and np.ndim(point[0]) > 0:
            point = point[0]
        return evaluate(self, point)

    def __repr__(self):
        terms = ", ".join(f"{e}: {v:.6g}" for e, v in self.coeffs.items())
        return f"Tps(nvars={self._nvars}, order={self._order}, {{{terms}}})"


# -- functional interface -------------------------------------------------

def variable(index: int, nvars: int, order: int, value: float = 0.0) -> Tps:
    """Identity series ``value + delta_index``."""
    if not 0 <= index < nvars:
        raise IndexError(f"variable index {index} out of range for nvars={nvars}")
    if order < 1:
        raise ValueError("a variable needs order >= 1")
    basis = _basis(nvars, order)
    c = np.zeros(basis.size)
    e = [0] * nvars
    e[index] = 1
    c[basis.index[tuple(e)]] = 1.0
    c[0] = value
    return Tps._wrap(nvars, order, c)


def constant(value: float, nvars: int, order: int) -> Tps:
    c = np.zeros(_basis(nvars, order).size)
    c[0] = value
    return Tps._wrap(nvars, order, c)


def add(a: Tps, b: Tps) -> Tps:
    return a + b


def mul(a: Tps, b: Tps) -> Tps:
    return a * b


def scale(a: Tps, c: float) -> Tps:
    return a * float(c)


def rpow(a: Tps, p: float) -> Tps:
    """``a ** p`` for a series with positive constant part.

    Writes ``a = a0 (1 + u)`` with ``u`` free of a constant term, so that
    ``u ** (order + 1)`` vanishes, and sums the binomial series in ``u``.
    """
    a0 = a.cons
    if not a0 > 0.0:
        raise TpsDomainError(f"power {p} of a series with constant part {a0!r}")
    p = float(p)
    basis = _basis(a._nvars, a._order)
    u = a._c / a0
    u[0] = 0.0
    out = np.zeros(basis.size)
    out[0] = 1.0
    term = np.zeros(basis.size)
    term[0] = 1.0
    binom = 1.0
    for k in range(1, a._order + 1):
        binom *= (p - k + 1) / k
        if binom == 0.0:
            break
        term = _truncated_product(term, u, basis)
        out += binom * term
    return Tps._wrap(a._nvars, a._order, out * a0 ** p)


def evaluate(a: Tps, point) -> float:
    """Value of the polynomial at the deviation vector ``point``."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (a.nvars,):
        raise TpsShapeError(f"point has shape {point.shape}, series has {a.nvars} variables")
    if a.nvars == 1:
        # Horner, highest degree first
        acc = 0.0
        x = float(point[0])
        for c in a.dense[::-1]:
            acc = acc * x + c
        return float(acc)
    basis = _basis(a.nvars, a.order)
    mono = np.prod(point[None, :] ** basis.exp_array, axis=1)
    return float(mono @ a.dense)


# -- serialization --------------------------------------------------------

def to_dict(a: Tps) -> dict:
    return {
        "nvars": a.nvars,
        "order": a.order,
        "terms": [{"exponents": list(e), "coeff": v} for e, v in a.coeffs.items()],
    }


def from_dict(d: dict) -> Tps:
    nvars, order = int(d["nvars"]), int(d["order"])
    basis = _basis(nvars, order)
    c = np.zeros(basis.size)
    for term in d["terms"]:
        e = tuple(int(k) for k in term["exponents"])
        if len(e) != nvars or sum(e) > order:
            raise TpsShapeError(f"exponent {e} invalid for nvars={nvars}, order={order}")
        c[basis.index[e]] = float(term["coeff"])
    return Tps._wrap(nvars, order, c)


def to_json(a: Tps) -> str:
    return json.dumps(to_dict(a))


def from_json(text: str) -> Tps:
    return from_dict(json.loads(text))


def cons(x) -> float:
    """Constant part of a series, or the number itself."""
    return x.cons if isinstance(x, Tps) else float(x)
