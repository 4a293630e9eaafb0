"""Sparse multivariate polynomial arithmetic over named variables.

A monomial is a tuple of (variable-index, exponent) pairs, sorted by index,
with no zero exponents stored:

  Mono = ((0, 2), (1, 1))   ->   x0^2 * x1

A Polynomial owns an ordered tuple of variable names and a dict mapping
monomials to float coefficients.  Exponent arithmetic is exact; coefficients
are doubles.  After every arithmetic operation, terms with coefficient
magnitude below CANONICAL_EPS are dropped, so polynomials stay in canonical
sparse form.  Instances are immutable after construction and safe to share.

Monomials are ordered graded-lexicographically (total degree first, then
earlier variables with higher exponents first), fixed globally so that bases
and serialized output are deterministic.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping, Sequence

import numpy as np

# Terms below this magnitude are dropped after arithmetic.  SDP solver noise
# downstream dominates far above this level.
CANONICAL_EPS = 1e-14

# Monomial: sorted ((variable_index, exponent), ...) with all exponents > 0.
Mono = tuple[tuple[int, int], ...]

MONO_ONE: Mono = ()


def mono_degree(mono: Mono) -> int:
    """Total degree of a monomial (sum of exponents)."""
    return sum(e for _, e in mono)


def mono_mul(a: Mono, b: Mono) -> Mono:
    """Product of two monomials (exponents add; exact integer arithmetic)."""
    if not a:
        return b
    if not b:
        return a
    exps: dict[int, int] = dict(a)
    for i, e in b:
        exps[i] = exps.get(i, 0) + e
    return tuple(sorted(exps.items()))


def mono_exponents(mono: Mono, nvars: int) -> tuple[int, ...]:
    """Dense exponent vector of length nvars."""
    dense = [0] * nvars
    for i, e in mono:
        dense[i] = e
    return tuple(dense)


def mono_from_exponents(exps: Sequence[int]) -> Mono:
    """Monomial from a dense exponent vector (zero exponents dropped)."""
    return tuple((i, int(e)) for i, e in enumerate(exps) if e)


def grlex_key(mono: Mono, nvars: int):
    """Sort key realizing the global graded-lexicographic order."""
    return (mono_degree(mono), tuple(-e for e in mono_exponents(mono, nvars)))


class ParseError(ValueError):
    """Syntax error in a polynomial expression, with the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UndeclaredVariableError(ParseError):
    """An identifier in the expression is not in the declared variable list."""

    def __init__(self, name: str, position: int):
        super().__init__(f"undeclared variable {name!r}", position)
        self.name = name


class Polynomial:
    """Immutable sparse polynomial over an ordered tuple of named variables."""

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms: Mapping[Mono, float]):
        object.__setattr__(self, "variables", tuple(variables))
        clean = {
            m: float(c)
            for m, c in terms.items()
            if c == c and abs(c) >= CANONICAL_EPS
        }
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(variables: Sequence[str]) -> "Polynomial":
        return Polynomial(variables, {})

    @staticmethod
    def constant(value: float, variables: Sequence[str]) -> "Polynomial":
        return Polynomial(variables, {MONO_ONE: value})

    @staticmethod
    def variable(name: str, variables: Sequence[str]) -> "Polynomial":
        idx = tuple(variables).index(name)
        return Polynomial(variables, {((idx, 1),): 1.0})

    @staticmethod
    def from_exponent_dict(
        variables: Sequence[str], dense_terms: Mapping[Sequence[int], float]
    ) -> "Polynomial":
        return Polynomial(
            variables, {mono_from_exponents(e): c for e, c in dense_terms.items()}
        )

    # -- structure ----------------------------------------------------------

    @property
    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        if not self.terms:
            return 0
        return max(mono_degree(m) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient_map(self) -> dict[tuple[tuple[str, int], ...], float]:
        """Terms keyed by ((name, exponent), ...) pairs; representation-free."""
        out = {}
        for m, c in self.terms.items():
            out[tuple((self.variables[i], e) for i, e in m)] = c
        return out

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def ordered_terms(self) -> list[tuple[Mono, float]]:
        n = len(self.variables)
        return sorted(self.terms.items(), key=lambda mc: grlex_key(mc[0], n))

    # -- variable alignment -------------------------------------------------

    def with_variables(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over a superset variable list (order-stable remap)."""
        variables = tuple(variables)
        if variables == self.variables:
            return self
        remap = {}
        for i, name in enumerate(self.variables):
            try:
                remap[i] = variables.index(name)
            except ValueError:
                raise ValueError(
                    f"target variable list {variables} is missing {name!r}"
                ) from None
        terms = {
            tuple(sorted((remap[i], e) for i, e in m)): c for m, c in self.terms.items()
        }
        return Polynomial(variables, terms)

    @staticmethod
    def union_variables(a: "Polynomial", b: "Polynomial") -> tuple[str, ...]:
        merged = list(a.variables)
        for name in b.variables:
            if name not in merged:
                merged.append(name)
        return tuple(merged)

    def _aligned(self, other) -> tuple["Polynomial", "Polynomial"]:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.variables)
        if self.variables == other.variables:
            return self, other
        union = Polynomial.union_variables(self, other)
        return self.with_variables(union), other.with_variables(union)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Polynomial":
        a, b = self._aligned(other)
        terms = dict(a.terms)
        for m, c in b.terms.items():
            terms[m] = terms.get(m, 0.0) + c
        return Polynomial(a.variables, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.variables, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        a, b = self._aligned(other)
        terms = dict(a.terms)
        for m, c in b.terms.items():
            terms[m] = terms.get(m, 0.0) - c
        return Polynomial(a.variables, terms)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            return Polynomial(
                self.variables, {m: c * other for m, c in self.terms.items()}
            )
        a, b = self._aligned(other)
        terms: dict[Mono, float] = {}
        for m1, c1 in a.terms.items():
            for m2, c2 in b.terms.items():
                m = mono_mul(m1, m2)
                terms[m] = terms.get(m, 0.0) + c1 * c2
        return Polynomial(a.variables, terms)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, int) or n < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(1.0, self.variables)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base if n > 1 else base
            n >>= 1
        return result

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, point: Sequence[float]) -> float:
        """Evaluate at a point (length must match the variable count)."""
        if len(point) != len(self.variables):
            raise ValueError(
                f"point has {len(point)} coordinates, expected {len(self.variables)}"
            )
        total = 0.0
        for m, c in self.terms.items():
            v = c
            for i, e in m:
                v *= point[i] ** e
            total += v
        return total

    def evaluate_abs(self, point: Sequence[float]) -> float:
        """Sum of |coeff| * |monomial|: the natural roundoff scale at a point."""
        if len(point) != len(self.variables):
            raise ValueError("dimension mismatch")
        total = 0.0
        for m, c in self.terms.items():
            v = abs(c)
            for i, e in m:
                v *= abs(point[i]) ** e
            total += v
        return total

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at an (N, nvars) array of points."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != len(self.variables):
            raise ValueError("points must be (N, nvars)")
        if not self.terms:
            return np.zeros(points.shape[0])
        out = np.zeros(points.shape[0])
        for m, c in self.terms.items():
            v = np.full(points.shape[0], c)
            for i, e in m:
                v *= points[:, i] ** e
            out += v
        return out

    # -- calculus and substitution ------------------------------------------

    def partial(self, var: int | str) -> "Polynomial":
        """Partial derivative with respect to one variable."""
        idx = self.variables.index(var) if isinstance(var, str) else var
        terms: dict[Mono, float] = {}
        for m, c in self.terms.items():
            exps = dict(m)
            e = exps.get(idx, 0)
            if e == 0:
                continue
            if e == 1:
                del exps[idx]
            else:
                exps[idx] = e - 1
            mono = tuple(sorted(exps.items()))
            terms[mono] = terms.get(mono, 0.0) + c * e
        return Polynomial(self.variables, terms)

    def gradient(self) -> "PolyVector":
        """Vector of partial derivatives, one component per variable."""
        return PolyVector(tuple(self.partial(i) for i in range(len(self.variables))))

    def compose(self, subst: "PolyVector | Sequence[Polynomial]") -> "Polynomial":
        """Substitute subst[i] for variable i; all subst share one variable list."""
        comps = tuple(subst.components if isinstance(subst, PolyVector) else subst)
        if len(comps) != len(self.variables):
            raise ValueError(
                f"substitution has {len(comps)} components, expected "
                f"{len(self.variables)}"
            )
        target_vars: tuple[str, ...] = ()
        for p in comps:
            target_vars = (
                p.variables
                if not target_vars
                else Polynomial.union_variables(
                    Polynomial.zero(target_vars), p
                )
            )
        comps = tuple(p.with_variables(target_vars) for p in comps)
        result = Polynomial.zero(target_vars)
        power_cache: dict[tuple[int, int], Polynomial] = {}
        for m, c in self.terms.items():
            term = Polynomial.constant(c, target_vars)
            for i, e in m:
                key = (i, e)
                if key not in power_cache:
                    power_cache[key] = comps[i] ** e
                term = term * power_cache[key]
            result = result + term
        return result

    def substitute(self, values: Mapping[str, float]) -> "Polynomial":
        """Bind some variables to numbers; result ranges over the rest."""
        bound = {self.variables.index(k): float(v) for k, v in values.items()}
        keep = [i for i in range(len(self.variables)) if i not in bound]
        new_vars = tuple(self.variables[i] for i in keep)
        remap = {old: new for new, old in enumerate(keep)}
        terms: dict[Mono, float] = {}
        for m, c in self.terms.items():
            coeff = c
            pairs = []
            for i, e in m:
                if i in bound:
                    coeff *= bound[i] ** e
                else:
                    pairs.append((remap[i], e))
            mono = tuple(sorted(pairs))
            terms[mono] = terms.get(mono, 0.0) + coeff
        return Polynomial(new_vars, terms)

    # -- formatting ---------------------------------------------------------

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"Polynomial({self.variables!r}, {self.to_string()!r})"

    def to_string(self) -> str:
        """Render in the expression grammar; parse() round-trips exactly."""
        if not self.terms:
            return "0"
        pieces = []
        for m, c in self.ordered_terms():
            factors = []
            for i, e in m:
                name = self.variables[i]
                factors.append(name if e == 1 else f"{name}^{e}")
            mag = abs(c)
            if not factors:
                body = repr(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(mag)] + factors)
            pieces.append(("- " if c < 0 else "+ ") + body)
        first = pieces[0]
        text = ("-" + first[2:]) if first.startswith("- ") else first[2:]
        for piece in pieces[1:]:
            text += " " + piece[0] + " " + piece[2:]
        return text


class PolyVector:
    """Ordered tuple of polynomials over a single shared variable list."""

    __slots__ = ("components",)

    def __init__(self, components: Iterable[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("PolyVector needs at least one component")
        union: tuple[str, ...] = comps[0].variables
        for p in comps[1:]:
            union = Polynomial.union_variables(Polynomial.zero(union), p)
        object.__setattr__(
            self, "components", tuple(p.with_variables(union) for p in comps)
        )

    def __setattr__(self, name, value):
        raise AttributeError("PolyVector is immutable")

    @property
    def variables(self) -> tuple[str, ...]:
        return self.components[0].variables

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i: int) -> Polynomial:
        return self.components[i]

    @property
    def degree(self) -> int:
        return max(p.degree for p in self.components)

    def evaluate(self, point: Sequence[float]) -> np.ndarray:
        return np.array([p.evaluate(point) for p in self.components])

    def substitute(self, values: Mapping[str, float]) -> "PolyVector":
        return PolyVector(tuple(p.substitute(values) for p in self.components))


# -- parser ------------------------------------------------------------------
#
# Grammar (documented interface):
#   expr   := term (('+'|'-') term)*
#   term   := factor ('*' factor)*
#   factor := ('-')* base ('^' uint)?
#   base   := name | number | '(' expr ')'

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[at]!r}", at)
        if m.end() == m.start():
            break
        for kind in ("num", "name", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val, m.start(kind)))
                break
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = tuple(variables)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, at = self.peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", at)
        self.advance()

    def parse_expr(self) -> Polynomial:
        result = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.parse_term()
                result = result + rhs if val == "+" else result - rhs
            else:
                return result

    def parse_term(self) -> Polynomial:
        result = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.advance()
                result = result * self.parse_factor()
            else:
                return result

    def parse_factor(self) -> Polynomial:
        sign = 1.0
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "-":
                self.advance()
                sign = -sign
            else:
                break
        base = self.parse_base()
        kind, val, at = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            kind, val, at = self.peek()
            if kind == "op" and val == "-":
                raise ParseError("negative exponent not allowed", at)
            if kind != "num":
                raise ParseError("expected integer exponent after '^'", at)
            if not val.isdigit():
                raise ParseError(f"non-integer exponent {val!r}", at)
            self.advance()
            base = base ** int(val)
        return base * sign if sign < 0 else base

    def parse_base(self) -> Polynomial:
        kind, val, at = self.advance()
        if kind == "num":
            return Polynomial.constant(float(val), self.variables)
        if kind == "name":
            if val not in self.variables:
                raise UndeclaredVariableError(val, at)
            return Polynomial.variable(val, self.variables)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise ParseError(f"expected a variable, number or '('", at)


def parse(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse an expression using +, -, *, ^, parentheses and decimal literals.

    Raises ParseError (with position) on syntax errors, negative or
    non-integer exponents, and UndeclaredVariableError for unknown names.
    """
    parser = _Parser(text, variables)
    result = parser.parse_expr()
    kind, val, at = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {val!r}", at)
    return result
