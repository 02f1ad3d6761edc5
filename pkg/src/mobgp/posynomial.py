"""Monomials, posynomials and matrices of posynomials.

Posynomials are stored densely over their own (sorted) variable tuple: an
``(n_terms, n_vars)`` exponent matrix and a coefficient vector. Like terms are
merged on construction by exact comparison of exponent rows, so two
posynomials built from the same terms in any order are identical.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError, UnboundVariableError

VarId = str

# switch to log-space evaluation above this |exponent * log(value)|
_LOG_EVAL_THRESHOLD = 500.0


def logsumexp(z: np.ndarray) -> float:
    zmax = float(np.max(z))
    if not np.isfinite(zmax):
        return zmax
    return zmax + math.log(float(np.sum(np.exp(z - zmax))))


def _check_assignment(names: Sequence[VarId], assignment: Mapping[VarId, float]) -> np.ndarray:
    vals = np.empty(len(names))
    for j, name in enumerate(names):
        try:
            v = assignment[name]
        except KeyError:
            raise UnboundVariableError(f"variable {name!r} is not bound") from None
        if not v > 0:
            raise DomainError(f"variable {name!r} must be positive, got {v!r}")
        vals[j] = v
    return vals


class Monomial:
    """``coeff * prod(x_j ** a_j)`` with ``coeff > 0``."""

    __slots__ = ("coeff", "_exps")

    def __init__(self, coeff: float, exponents: Optional[Mapping[VarId, float]] = None):
        coeff = float(coeff)
        if not (coeff > 0 and math.isfinite(coeff)):
            raise DomainError(f"monomial coefficient must be positive and finite, got {coeff!r}")
        exps = exponents or {}
        self.coeff = coeff
        self._exps = tuple(sorted((str(k), float(v) + 0.0) for k, v in exps.items() if v != 0))

    @property
    def exponents(self) -> dict[VarId, float]:
        return dict(self._exps)

    def key(self) -> tuple:
        return self._exps

    def eval(self, assignment: Mapping[VarId, float]) -> float:
        return Posynomial.from_monomials([self]).eval(assignment)

    def as_posynomial(self) -> "Posynomial":
        return Posynomial.from_monomials([self])

    def inverse(self) -> "Monomial":
        return Monomial(1.0 / self.coeff, {k: -v for k, v in self._exps})

    def __mul__(self, other):
        if isinstance(other, Monomial):
            exps = dict(self._exps)
            for k, v in other._exps:
                exps[k] = exps.get(k, 0.0) + v
            return Monomial(self.coeff * other.coeff, exps)
        return self.as_posynomial() * other

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, Monomial) and self.coeff == other.coeff and self._exps == other._exps

    def __hash__(self):
        return hash((self.coeff, self._exps))

    def __repr__(self):
        return f"Monomial({self.coeff!r}, {dict(self._exps)!r})"


class Posynomial:
    """A non-empty sum of monomials with merged like terms. Immutable."""

    __slots__ = ("_vars", "_exps", "_coeffs")

    def __init__(self, variables: Sequence[VarId], exponents, coeffs):
        variables = tuple(variables)
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        exps = np.asarray(exponents, dtype=float).reshape(coeffs.size, len(variables))
        if coeffs.size == 0:
            raise DomainError("a posynomial needs at least one term")
        if exps.shape[0] != coeffs.size:
            raise ShapeError("exponent rows and coefficients disagree in length")
        if not np.all(coeffs > 0) or not np.all(np.isfinite(coeffs)):
            raise DomainError("posynomial coefficients must be positive and finite")
        if len(set(variables)) != len(variables):
            raise DomainError("duplicate variable names")
        exps = exps + 0.0  # -0.0 -> 0.0 so row comparison is exact

        order = sorted(range(len(variables)), key=lambda j: variables[j])
        keep = [j for j in order if np.any(exps[:, j] != 0)]
        variables = tuple(variables[j] for j in keep)
        exps = exps[:, keep]

        if exps.shape[1] == 0:
            exps = np.zeros((1, 0))
            coeffs = np.array([coeffs.sum()])
        elif coeffs.size > 1:
            uniq, inverse = np.unique(exps, axis=0, return_inverse=True)
            coeffs = np.bincount(inverse.reshape(-1), weights=coeffs, minlength=uniq.shape[0])
            exps = uniq
        exps.setflags(write=False)
        coeffs = np.ascontiguousarray(coeffs)
        coeffs.setflags(write=False)
        self._vars = variables
        self._exps = exps
        self._coeffs = coeffs

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "Posynomial":
        return cls((), np.zeros((1, 0)), [c])

    @classmethod
    def variable(cls, name: VarId, power: float = 1.0, coeff: float = 1.0) -> "Posynomial":
        return cls((name,), [[power]], [coeff])

    @classmethod
    def from_monomials(cls, monomials: Iterable[Monomial]) -> "Posynomial":
        monomials = list(monomials)
        names = sorted({k for m in monomials for k, _ in m.key()})
        index = {n: j for j, n in enumerate(names)}
        exps = np.zeros((len(monomials), len(names)))
        for i, m in enumerate(monomials):
            for k, v in m.key():
                exps[i, index[k]] = v
        return cls(names, exps, [m.coeff for m in monomials])

    # -- inspection -------------------------------------------------------
    @property
    def variables(self) -> tuple[VarId, ...]:
        return self._vars

    @property
    def exponent_matrix(self) -> np.ndarray:
        return self._exps

    @property
    def coefficients(self) -> np.ndarray:
        return self._coeffs

    @property
    def terms(self) -> list[Monomial]:
        return [
            Monomial(c, {v: a for v, a in zip(self._vars, row) if a != 0})
            for c, row in zip(self._coeffs, self._exps)
        ]

    def __len__(self) -> int:
        return self._coeffs.size

    @property
    def is_constant(self) -> bool:
        return not self._vars

    @property
    def is_monomial(self) -> bool:
        return self._coeffs.size == 1

    def constant_value(self) -> float:
        if not self.is_constant:
            raise DomainError("posynomial is not constant")
        return float(self._coeffs[0])

    # -- evaluation -------------------------------------------------------
    def eval(self, assignment: Mapping[VarId, float]) -> float:
        if self.is_constant:
            return float(self._coeffs[0])
        xs = _check_assignment(self._vars, assignment)
        scaled = self._exps * np.log(xs)
        if np.max(np.abs(scaled)) > _LOG_EVAL_THRESHOLD:
            with np.errstate(over="ignore"):
                return float(np.exp(logsumexp(np.log(self._coeffs) + scaled.sum(axis=1))))
        return float(self._coeffs @ np.prod(xs**self._exps, axis=1))

    __call__ = eval

    def log_value_grad(self, y: Mapping[VarId, float]) -> tuple[float, dict[VarId, float]]:
        """Value and gradient of ``log p(exp(y))``; variables absent from ``y`` read as 0."""
        yv = np.array([float(y.get(v, 0.0)) for v in self._vars])
        z = np.log(self._coeffs) + self._exps @ yv
        value = logsumexp(z)
        w = np.exp(z - value)
        grad = w @ self._exps
        return value, {v: float(g) for v, g in zip(self._vars, grad)}

    def compile(self, index: Mapping[VarId, int], n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(log c, A)`` with ``A`` laid out over an external variable index."""
        a = np.zeros((len(self), n))
        for j, v in enumerate(self._vars):
            try:
                a[:, index[v]] = self._exps[:, j]
            except KeyError:
                raise UnboundVariableError(f"variable {v!r} is not registered") from None
        return np.log(self._coeffs), a

    # -- algebra ----------------------------------------------------------
    def _aligned(self, names: Sequence[VarId]) -> np.ndarray:
        index = {n: j for j, n in enumerate(names)}
        out = np.zeros((len(self), len(names)))
        for j, v in enumerate(self._vars):
            out[:, index[v]] = self._exps[:, j]
        return out

    def add(self, other: "Posynomial") -> "Posynomial":
        names = sorted(set(self._vars) | set(other._vars))
        exps = np.vstack([self._aligned(names), other._aligned(names)])
        return Posynomial(names, exps, np.concatenate([self._coeffs, other._coeffs]))

    def mul(self, other: "Posynomial") -> "Posynomial":
        names = sorted(set(self._vars) | set(other._vars))
        a, b = self._aligned(names), other._aligned(names)
        exps = (a[:, None, :] + b[None, :, :]).reshape(a.shape[0] * b.shape[0], len(names))
        coeffs = np.outer(self._coeffs, other._coeffs).reshape(-1)
        return Posynomial(names, exps, coeffs)

    def scale(self, c: float) -> "Posynomial":
        if not c > 0:
            raise DomainError(f"scale factor must be positive, got {c!r}")
        return Posynomial(self._vars, self._exps, self._coeffs * c)

    def substitute(self, partial: Mapping[VarId, float]) -> "Posynomial":
        for v, val in partial.items():
            if not val > 0:
                raise DomainError(f"substituted value for {v!r} must be positive, got {val!r}")
        fixed = [j for j, v in enumerate(self._vars) if v in partial]
        if not fixed:
            return self
        vals = np.array([float(partial[self._vars[j]]) for j in fixed])
        factor = np.prod(vals ** self._exps[:, fixed], axis=1)
        free = [j for j in range(len(self._vars)) if j not in set(fixed)]
        return Posynomial([self._vars[j] for j in free], self._exps[:, free], self._coeffs * factor)

    def _coerce(self, other) -> "Posynomial":
        if isinstance(other, Posynomial):
            return other
        if isinstance(other, Monomial):
            return other.as_posynomial()
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Posynomial.constant(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self.add(other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self.mul(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(other))
        if isinstance(other, Monomial):
            return self.mul(other.inverse().as_posynomial())
        if isinstance(other, Posynomial) and other.is_monomial:
            return self.mul(other.terms[0].inverse().as_posynomial())
        return NotImplemented

    # -- comparison / printing -------------------------------------------
    def canonical_terms(self) -> list[Monomial]:
        return sorted(self.terms, key=lambda m: m.key())

    def __eq__(self, other):
        if not isinstance(other, Posynomial):
            return NotImplemented
        return (
            self._vars == other._vars
            and self._exps.shape == other._exps.shape
            and np.array_equal(self._exps, other._exps)
            and np.array_equal(self._coeffs, other._coeffs)
        )

    def __hash__(self):
        return hash((self._vars, self._exps.tobytes(), self._coeffs.tobytes()))

    def __str__(self):
        parts = []
        for m in self.canonical_terms():
            factors = [f"{m.coeff:.17g}"] + [f"{v}^{a:.17g}" for v, a in m.key()]
            parts.append(" * ".join(factors))
        return " + ".join(parts)

    def __repr__(self):
        return f"Posynomial({self})"


def add(p: Posynomial, q: Posynomial) -> Posynomial:
    return p.add(q)


def mul(p: Posynomial, q: Posynomial) -> Posynomial:
    return p.mul(q)


def scale(p: Posynomial, c: float) -> Posynomial:
    return p.scale(c)


def substitute(p: Posynomial, partial: Mapping[VarId, float]) -> Posynomial:
    return p.substitute(partial)


def log_value_grad(p: Posynomial, y: Mapping[VarId, float]):
    return p.log_value_grad(y)


def eval_posy(p: Posynomial, assignment: Mapping[VarId, float]) -> float:
    return p.eval(assignment)


# Optional entries stand for structural zeros, which no posynomial can represent.
Entry = Optional[Posynomial]


def add_entries(a: Entry, b: Entry) -> Entry:
    if a is None:
        return b
    if b is None:
        return a
    return a.add(b)


def mul_entries(a: Entry, b: Entry) -> Entry:
    if a is None or b is None:
        return None
    return a.mul(b)


class PosyMatrix:
    """Dense rectangular grid of optional posynomials (``None`` is zero)."""

    def __init__(self, entries: Sequence[Sequence[Entry]]):
        rows = [list(r) for r in entries]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ShapeError("PosyMatrix entries must form a non-empty rectangle")
        self._entries = tuple(tuple(r) for r in rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self._entries), len(self._entries[0])

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def __getitem__(self, ij: tuple[int, int]) -> Entry:
        i, j = ij
        return self._entries[i][j]

    @classmethod
    def from_numeric(cls, a) -> "PosyMatrix":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if np.any(a < 0):
            raise DomainError("numeric PosyMatrix entries must be nonnegative")
        return cls([[Posynomial.constant(v) if v > 0 else None for v in row] for row in a])

    @classmethod
    def identity(cls, n: int) -> "PosyMatrix":
        return cls.from_numeric(np.eye(n))

    def to_numeric(self, assignment: Mapping[VarId, float] | None = None) -> np.ndarray:
        assignment = assignment or {}
        out = np.zeros(self.shape)
        for i, row in enumerate(self._entries):
            for j, e in enumerate(row):
                if e is not None:
                    out[i, j] = e.eval(assignment)
        return out

    def mat_mul(self, other: "PosyMatrix") -> "PosyMatrix":
        if self.cols != other.rows:
            raise ShapeError(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc: Entry = None
                for t in range(self.cols):
                    acc = add_entries(acc, mul_entries(self[i, t], other[t, j]))
                row.append(acc)
            out.append(row)
        return PosyMatrix(out)

    __matmul__ = mat_mul

    def matvec(self, vec: Sequence[Entry]) -> list[Entry]:
        if len(vec) != self.cols:
            raise ShapeError(f"vector of length {len(vec)} does not match {self.shape}")
        out = []
        for i in range(self.rows):
            acc: Entry = None
            for t in range(self.cols):
                acc = add_entries(acc, mul_entries(self[i, t], vec[t]))
            out.append(acc)
        return out


def mat_mul(a: PosyMatrix, b: PosyMatrix) -> PosyMatrix:
    return a.mat_mul(b)
