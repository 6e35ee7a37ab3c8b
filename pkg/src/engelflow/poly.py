"""Sparse polynomials in four real variables.

Carrier type for every symbolic object in the package.  A polynomial is an
immutable map from exponent 4-tuples to float coefficients.  Term-level
arithmetic is exact in the sense that no coefficient is ever dropped unless
it is exactly zero; approximate comparison is a separate operation.

Term order everywhere (iteration, formatting, random slot enumeration) is
graded lexicographic, highest total degree first and x1 most significant,
which pins down determinism of every reduction built on top.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Exps",
    "Monomial",
    "Poly4",
    "EvalTable",
    "PolyParseError",
    "IDENTITY_TOL",
    "parse_poly",
    "format_poly",
    "random_poly",
    "poly_allclose",
    "exponents_up_to",
    "n_slots",
]

Exps = tuple[int, int, int, int]

VAR_NAMES = ("x1", "x2", "x3", "x4")

# coefficient tolerance used by identity checks across the package
IDENTITY_TOL = 1e-12


class Monomial(NamedTuple):
    exps: Exps
    coef: float


def _grlex_key(e: Exps):
    # graded lex: compare by total degree, then lexicographically with x1
    # most significant.  Sorting descending on this key yields the canonical
    # term order.
    return (e[0] + e[1] + e[2] + e[3], e)


class Poly4:
    """Polynomial in x1..x4 with sparse float coefficients.

    The zero polynomial has an empty term map and degree 0 by convention.
    Instances are treated as immutable; all arithmetic returns new objects.
    """

    __slots__ = ("_terms", "_degree", "_fn")

    def __init__(self, terms: dict | None = None):
        tidy: dict[Exps, float] = {}
        if terms:
            for exps, coef in terms.items():
                e = tuple(int(v) for v in exps)
                if len(e) != 4 or any(v < 0 for v in e):
                    raise ValueError(f"bad exponent tuple {exps!r}")
                c = float(coef)
                if c != 0.0:
                    tidy[e] = c  # type: ignore[index]
        self._terms = tidy
        self._degree = max((sum(e) for e in tidy), default=0)
        self._fn: Callable[[float, float, float, float], float] | None = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero() -> "Poly4":
        return Poly4()

    @staticmethod
    def constant(c: float) -> "Poly4":
        return Poly4({(0, 0, 0, 0): c})

    @staticmethod
    def variable(i: int) -> "Poly4":
        if i not in (1, 2, 3, 4):
            raise ValueError(f"variable index must be 1..4, got {i}")
        e = [0, 0, 0, 0]
        e[i - 1] = 1
        return Poly4({tuple(e): 1.0})

    # -- inspection ---------------------------------------------------

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def terms(self) -> dict[Exps, float]:
        """Copy of the term map."""
        return dict(self._terms)

    def coefficient(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(int(v) for v in exps), 0.0)

    def monomials(self) -> Iterator[Monomial]:
        """Terms in graded-lex order, leading term first."""
        for e in sorted(self._terms, key=_grlex_key, reverse=True):
            yield Monomial(e, self._terms[e])

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly4):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self) -> str:
        return f"Poly4({format_poly(self)!r})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other) -> "Poly4":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out = dict(self._terms)
        for e, c in other._terms.items():
            s = out.get(e, 0.0) + c
            if s == 0.0:
                out.pop(e, None)
            else:
                out[e] = s
        return Poly4(out)

    __radd__ = __add__

    def __neg__(self) -> "Poly4":
        return Poly4({e: -c for e, c in self._terms.items()})

    def __sub__(self, other) -> "Poly4":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Poly4":
        return _coerce(other) + (-self)

    def __mul__(self, other) -> "Poly4":
        if isinstance(other, (int, float)):
            c = float(other)
            if c == 0.0:
                return Poly4()
            return Poly4({e: v * c for e, v in self._terms.items()})
        if not isinstance(other, Poly4):
            return NotImplemented
        out: dict[Exps, float] = {}
        for ea, ca in self._terms.items():
            for eb, cb in other._terms.items():
                e = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2], ea[3] + eb[3])
                s = out.get(e, 0.0) + ca * cb
                if s == 0.0:
                    out.pop(e, None)
                else:
                    out[e] = s
        return Poly4(out)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Poly4":
        if not isinstance(other, (int, float)):
            return NotImplemented
        return self * (1.0 / float(other))

    # -- calculus and evaluation --------------------------------------

    def partial(self, i: int) -> "Poly4":
        """Partial derivative with respect to x_i, i in 1..4."""
        if i not in (1, 2, 3, 4):
            raise ValueError(f"variable index must be 1..4, got {i}")
        k = i - 1
        out: dict[Exps, float] = {}
        for e, c in self._terms.items():
            if e[k] == 0:
                continue
            d = list(e)
            d[k] -= 1
            out[tuple(d)] = c * e[k]  # type: ignore[index]
        return Poly4(out)

    def eval(self, x: Sequence[float]) -> float:
        """Value at a point, accumulated with compensated summation."""
        x1, x2, x3, x4 = (float(v) for v in x)
        vals = []
        for e in sorted(self._terms, key=_grlex_key, reverse=True):
            c = self._terms[e]
            vals.append(c * x1 ** e[0] * x2 ** e[1] * x3 ** e[2] * x4 ** e[3])
        return math.fsum(vals)

    def __call__(self, x: Sequence[float]) -> float:
        return self.eval(x)

    def compiled(self) -> Callable[[float, float, float, float], float]:
        """Scalar evaluator compiled to a Python lambda, cached.

        Positional args are the four coordinates.  Much faster than eval()
        for repeated single-point use; accumulation order is the canonical
        term order, so results are deterministic.
        """
        if self._fn is None:
            parts = []
            for e in sorted(self._terms, key=_grlex_key, reverse=True):
                c = self._terms[e]
                factors = [repr(c)]
                for k, name in enumerate(VAR_NAMES):
                    factors.extend([name] * e[k])
                parts.append("*".join(factors))
            body = " + ".join(parts) if parts else "0.0"
            src = f"lambda x1, x2, x3, x4: {body}"
            self._fn = eval(compile(src, "<poly4>", "eval"), {"__builtins__": {}})
        return self._fn

    def coeff_norm(self) -> float:
        """Euclidean norm of the coefficient vector."""
        return math.sqrt(math.fsum(c * c for c in self._terms.values()))

    def allclose(self, other: "Poly4", tol: float = IDENTITY_TOL) -> bool:
        return poly_allclose(self, other, tol)


def _coerce(obj) -> Poly4:
    if isinstance(obj, Poly4):
        return obj
    if isinstance(obj, (int, float)):
        return Poly4.constant(float(obj))
    return NotImplemented  # type: ignore[return-value]


def poly_allclose(p: Poly4, q: Poly4, tol: float = IDENTITY_TOL) -> bool:
    """Term-map comparison with absolute coefficient tolerance.

    Terms with |coefficient| below tol are treated as absent on both sides.
    """
    keys = set(p.terms()) | set(q.terms())
    for e in keys:
        if abs(p.coefficient(e) - q.coefficient(e)) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# coefficient-slot enumeration and random sampling


def exponents_up_to(degree: int) -> list[Exps]:
    """All exponent tuples of total degree <= degree, graded-lex descending."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    out = []
    for e1 in range(degree + 1):
        for e2 in range(degree + 1 - e1):
            for e3 in range(degree + 1 - e1 - e2):
                for e4 in range(degree + 1 - e1 - e2 - e3):
                    out.append((e1, e2, e3, e4))
    out.sort(key=_grlex_key, reverse=True)
    return out


def n_slots(degree: int) -> int:
    """Number of coefficient slots for total degree <= degree: C(degree+4, 4)."""
    return math.comb(degree + 4, 4)


def random_poly(degree: int, seed: int, scale: float = 1.0) -> Poly4:
    """Dense random polynomial of total degree <= degree.

    Every coefficient slot is drawn independently and uniformly from
    [-scale, scale] by a PCG64 generator, in graded-lex slot order, so the
    draw is reproducible across platforms for a fixed seed.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    slots = exponents_up_to(degree)
    coefs = rng.uniform(-scale, scale, size=len(slots))
    return Poly4({e: float(c) for e, c in zip(slots, coefs)})


# ---------------------------------------------------------------------------
# text form


class PolyParseError(ValueError):
    """Raised on malformed polynomial text; carries the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


_NUMBER_START = set("0123456789.")


def _tokenize(text: str):
    tokens = []  # (kind, value, pos)
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch in "-−":  # ASCII hyphen or unicode minus
            tokens.append(("-", "-", i))
            i += 1
            continue
        if ch in _NUMBER_START:
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise PolyParseError(f"unexpected character {ch!r}", i)
    return tokens


def parse_poly(text: str) -> Poly4:
    """Parse polynomial text into a Poly4.

    Grammar: terms joined by + or -, each term a product of factors joined
    by '*', where a factor is a number or a variable x1..x4 with optional
    '^k' power; '/number' divides the coefficient accumulated so far, which
    also covers fraction coefficients like 3/4.  Whitespace is ignored.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise PolyParseError("empty polynomial text", 0)
    acc: dict[Exps, float] = {}
    i = 0
    n = len(tokens)

    def term_end(j):
        return j >= n or tokens[j][0] in "+-"

    while i < n:
        sign = 1.0
        while i < n and tokens[i][0] in "+-":
            if tokens[i][0] == "-":
                sign = -sign
            i += 1
        if i >= n:
            raise PolyParseError("dangling sign", tokens[-1][2])
        coef = sign
        exps = [0, 0, 0, 0]
        expect_factor = True
        saw_factor = False
        while not term_end(i):
            kind, val, pos = tokens[i]
            if kind in "*/":
                if expect_factor:
                    raise PolyParseError("misplaced operator", pos)
                if kind == "/":
                    i += 1
                    if i >= n or tokens[i][0] != "num":
                        raise PolyParseError("divisor must be a number", pos)
                    d = float(tokens[i][1])
                    if d == 0.0:
                        raise PolyParseError("division by zero", tokens[i][2])
                    coef /= d
                    i += 1
                    # the divisor is the operand; no further factor is owed
                    continue
                i += 1
                expect_factor = True
                continue
            if not expect_factor:
                raise PolyParseError("missing '*' between factors", pos)
            if kind == "num":
                coef *= float(val)
                i += 1
            elif kind == "name":
                if val not in VAR_NAMES:
                    raise PolyParseError(f"unknown variable {val!r}", pos)
                k = VAR_NAMES.index(val)
                power = 1
                i += 1
                if i < n and tokens[i][0] == "^":
                    i += 1
                    if i >= n or tokens[i][0] != "num" or not tokens[i][1].isdigit():
                        p2 = tokens[i][2] if i < n else pos
                        raise PolyParseError("exponent must be a nonnegative integer", p2)
                    power = int(tokens[i][1])
                    i += 1
                exps[k] += power
            else:
                raise PolyParseError(f"unexpected token {val!r}", pos)
            expect_factor = False
            saw_factor = True
        if not saw_factor:
            raise PolyParseError("empty term", tokens[i - 1][2] if i else 0)
        if expect_factor:
            raise PolyParseError("dangling operator", tokens[i - 1][2])
        e = tuple(exps)
        s = acc.get(e, 0.0) + coef
        if s == 0.0:
            acc.pop(e, None)
        else:
            acc[e] = s  # type: ignore[index]
    return Poly4(acc)


def _format_term(e: Exps, c: float) -> str:
    factors = []
    for k, name in enumerate(VAR_NAMES):
        if e[k] == 1:
            factors.append(name)
        elif e[k] >= 2:
            factors.append(f"{name}^{e[k]}")
    a = abs(c)
    if not factors:
        return repr(a)
    if a == 1.0:
        return "*".join(factors)
    return "*".join([repr(a)] + factors)


def format_poly(p: Poly4) -> str:
    """Canonical text form: graded-lex order, explicit '*', '^' for powers >= 2.

    Round-trips exactly: parse_poly(format_poly(p)) == p.
    """
    mons = list(p.monomials())
    if not mons:
        return "0"
    out = []
    for idx, (e, c) in enumerate(mons):
        body = _format_term(e, c)
        if idx == 0:
            out.append(("-" if c < 0 else "") + body)
        else:
            out.append(("- " if c < 0 else "+ ") + body)
    return " ".join(out)


# ---------------------------------------------------------------------------
# batched evaluation


class EvalTable:
    """Vectorized evaluator for a fixed list of polynomials.

    Builds one shared monomial basis for the whole list so a batch of points
    is evaluated with a single matrix product: eval(X)[i, j] is the value of
    polynomial j at row i of X.
    """

    def __init__(self, polys: Sequence[Poly4]):
        self.k = len(polys)
        basis: dict[Exps, int] = {}
        for p in polys:
            for e in p.terms():
                basis.setdefault(e, len(basis))
        order = sorted(basis, key=_grlex_key, reverse=True)
        self._exps = np.array(order, dtype=np.int64).reshape(len(order), 4)
        coefs = np.zeros((len(order), self.k))
        index = {e: i for i, e in enumerate(order)}
        for j, p in enumerate(polys):
            for e, c in p.terms().items():
                coefs[index[e], j] = c
        self._coefs = coefs
        self._maxe = self._exps.max(axis=0) if len(order) else np.zeros(4, dtype=np.int64)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        if self._exps.shape[0] == 0:
            return np.zeros((n, self.k))
        design = np.ones((n, self._exps.shape[0]))
        for v in range(4):
            m = int(self._maxe[v])
            if m == 0:
                continue
            powers = pts[:, v : v + 1] ** np.arange(m + 1)
            design *= powers[:, self._exps[:, v]]
        return design @ self._coefs
