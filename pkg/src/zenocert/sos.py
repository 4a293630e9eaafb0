"""SOS programming layer: Gram parameterization and SDP compilation.

An SosProgram holds unknown polynomials (free coefficient vectors), SOS
unknowns (PSD Gram blocks over a half-degree monomial basis), bounded scalar
unknowns, and polynomial identity constraints that must vanish identically.
Identities are *affine* in the unknowns; multiplying two unknown expressions
raises BilinearityError (that restriction is what keeps the compiled problem
a semidefinite program).

Compilation matches coefficients: each identity contributes one linear
equality per monomial in the union of monomials appearing anywhere in it;
monomials missing on one side contribute zero rows, never silent truncation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from . import sdp
from .poly import (
    Mono,
    Polynomial,
    PolyVector,
    grlex_key,
    mono_exponents,
    mono_from_exponents,
)


class BilinearityError(ValueError):
    """Raised when an expression would multiply two unknowns."""


def monomials_upto(nvars: int, degree: int) -> list[Mono]:
    """All monomials of total degree <= degree, in graded-lex order."""
    out: list[Mono] = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            exps = [0] * nvars
            for idx in combo:
                exps[idx] += 1
            out.append(mono_from_exponents(exps))
    out.sort(key=lambda m: grlex_key(m, nvars))
    return out


def basis_size(nvars: int, degree: int) -> int:
    return math.comb(nvars + degree, nvars)


@dataclass(frozen=True)
class MonomialBasis:
    """Deterministically ordered monomial basis of bounded total degree."""

    variables: tuple[str, ...]
    degree: int
    entries: tuple[Mono, ...]

    @staticmethod
    def upto(variables: Sequence[str], degree: int) -> "MonomialBasis":
        variables = tuple(variables)
        return MonomialBasis(
            variables, degree, tuple(monomials_upto(len(variables), degree))
        )

    def __len__(self) -> int:
        return len(self.entries)

    def as_polynomials(self) -> list[Polynomial]:
        return [Polynomial(self.variables, {m: 1.0}) for m in self.entries]


# Slot keys: ("f", index) for a free scalar, ("g", block, i, j) with i <= j
# for an entry of a Gram block.
Slot = tuple


class LinExpr:
    """Polynomial-valued expression affine in the program unknowns.

    terms maps slots to their coefficient polynomials; const is the known
    part.  All linear operations a hybrid-system certificate needs are
    closed over this form: multiplication by known polynomials, composition
    with known polynomial maps, differentiation against a vector field, and
    partial numeric substitution.
    """

    __slots__ = ("variables", "terms", "const")

    def __init__(
        self,
        variables: Sequence[str],
        terms: Optional[Mapping[Slot, Polynomial]] = None,
        const: Optional[Polynomial] = None,
    ):
        self.variables = tuple(variables)
        self.terms = dict(terms) if terms else {}
        self.const = (
            const if const is not None else Polynomial.zero(self.variables)
        )

    def _align(self, other: "LinExpr") -> tuple["LinExpr", "LinExpr"]:
        if self.variables == other.variables:
            return self, other
        union = Polynomial.union_variables(
            Polynomial.zero(self.variables), Polynomial.zero(other.variables)
        )
        return self.with_variables(union), other.with_variables(union)

    def with_variables(self, variables: Sequence[str]) -> "LinExpr":
        return LinExpr(
            variables,
            {k: p.with_variables(variables) for k, p in self.terms.items()},
            self.const.with_variables(variables),
        )

    @staticmethod
    def from_poly(p: Polynomial) -> "LinExpr":
        return LinExpr(p.variables, const=p)

    @property
    def degree(self) -> int:
        d = self.const.degree
        for p in self.terms.values():
            d = max(d, p.degree)
        return d

    def is_constant(self) -> bool:
        return not self.terms

    def __add__(self, other) -> "LinExpr":
        if isinstance(other, (int, float)):
            other = LinExpr.from_poly(Polynomial.constant(float(other), self.variables))
        elif isinstance(other, Polynomial):
            other = LinExpr.from_poly(other)
        a, b = self._align(other)
        terms = dict(a.terms)
        for k, p in b.terms.items():
            terms[k] = terms[k] + p if k in terms else p
        return LinExpr(a.variables, terms, a.const + b.const)

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr(
            self.variables, {k: -p for k, p in self.terms.items()}, -self.const
        )

    def __sub__(self, other) -> "LinExpr":
        if isinstance(other, (int, float, Polynomial)):
            return self + (-1.0 * other if isinstance(other, Polynomial) else -other)
        return self + (-other)

    def __rsub__(self, other) -> "LinExpr":
        return (-self) + other

    def __mul__(self, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            if self.terms and other.terms:
                raise BilinearityError(
                    "product of two unknown expressions is not affine; fix one "
                    "factor (e.g. the contraction constant) before building"
                )
            if not other.terms:
                return self * other.const
            return other * self.const
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.variables)
        a = self.with_variables(
            Polynomial.union_variables(
                Polynomial.zero(self.variables), other
            )
        )
        other = other.with_variables(a.variables)
        return LinExpr(
            a.variables,
            {k: p * other for k, p in a.terms.items()},
            a.const * other,
        )

    __rmul__ = __mul__

    def compose(self, subst: PolyVector) -> "LinExpr":
        """Substitute subst[i] for variable i in every coefficient polynomial."""
        return LinExpr(
            subst.variables,
            {k: p.compose(subst) for k, p in self.terms.items()},
            self.const.compose(subst),
        )

    def grad_dot(self, fld: PolyVector, wrt: Sequence[str]) -> "LinExpr":
        """Directional derivative sum_i (d expr / d wrt[i]) * fld[i]."""
        if len(fld) != len(wrt):
            raise ValueError("field dimension must match differentiation variables")
        out = LinExpr(self.variables)
        for i, name in enumerate(wrt):
            part = LinExpr(
                self.variables,
                {k: p.partial(name) for k, p in self.terms.items()},
                self.const.partial(name),
            )
            out = out + part * fld[i]
        return out

    def substitute(self, values: Mapping[str, float]) -> "LinExpr":
        """Bind some polynomial variables to numbers in all coefficients."""
        return LinExpr(
            tuple(v for v in self.variables if v not in values),
            {k: p.substitute(values) for k, p in self.terms.items()},
            self.const.substitute(values),
        )

    def value(self, slot_values: Mapping[Slot, float]) -> Polynomial:
        """Materialize: plug in numeric slot values, return the polynomial."""
        out = self.const
        for k, p in self.terms.items():
            out = out + p * slot_values[k]
        return out


@dataclass(frozen=True)
class PolyVariable:
    """Unknown polynomial: one free coefficient slot per basis monomial."""

    name: str
    basis: MonomialBasis
    first_slot: int

    def expr(self) -> LinExpr:
        terms = {
            ("f", self.first_slot + k): Polynomial(self.basis.variables, {m: 1.0})
            for k, m in enumerate(self.basis.entries)
        }
        return LinExpr(self.basis.variables, terms)

    @property
    def slot_count(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class SosVariable:
    """Unknown SOS polynomial Z^T Q Z over a half-degree basis; Q is PSD."""

    name: str
    basis: MonomialBasis  # half-degree basis Z
    block: int

    def expr(self) -> LinExpr:
        zs = self.basis.entries
        variables = self.basis.variables
        terms: dict[Slot, Polynomial] = {}
        for i in range(len(zs)):
            pi = Polynomial(variables, {zs[i]: 1.0})
            for j in range(i, len(zs)):
                pj = Polynomial(variables, {zs[j]: 1.0})
                prod = pi * pj
                terms[("g", self.block, i, j)] = prod if i == j else 2.0 * prod
        return LinExpr(variables, terms)

    @property
    def side(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class ScalarVariable:
    """Scalar unknown; with a lower bound it is backed by a 1x1 PSD block."""

    name: str
    lower_bound: Optional[float]
    slot: Slot
    variables: tuple[str, ...]

    def expr(self) -> LinExpr:
        const = Polynomial.constant(
            self.lower_bound if self.lower_bound is not None else 0.0,
            self.variables,
        )
        return LinExpr(
            self.variables,
            {self.slot: Polynomial.constant(1.0, self.variables)},
            const,
        )


class SosProgram:
    """A set of polynomial unknowns plus identity constraints over them."""

    def __init__(self, variables: Sequence[str]):
        self.variables = tuple(variables)
        self.free_count = 0
        self.block_sizes = []
        self.poly_vars = []
        self.sos_vars = []
        self.scalar_vars = []
        self.identities = []
        self.build_log = []

    def new_poly_var(
        self, name: str, degree: int, basis: Optional[MonomialBasis] = None
    ) -> PolyVariable:
        """Register a free polynomial of the given total degree.

        A custom basis restricts the coefficient support (used e.g. to encode
        linear constraints like vanishing at the origin structurally).
        """
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if basis is None:
            basis = MonomialBasis.upto(self.variables, degree)
        var = PolyVariable(name, basis, self.free_count)
        self.free_count += len(basis)
        self.poly_vars.append(var)
        return var

    def new_sos_var(
        self, name: str, degree: int, basis: Optional[MonomialBasis] = None
    ) -> SosVariable:
        """Register an SOS unknown; odd degree requests round up (logged).

        A custom half-degree basis restricts the Gram support (e.g. to SOS
        polynomials vanishing to second order at the origin)."""
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if degree % 2:
            self.build_log.append(
                f"sos variable {name}: odd degree {degree} rounded up to {degree + 1}"
            )
            degree += 1
        if basis is None:
            basis = MonomialBasis.upto(self.variables, degree // 2)
        var = SosVariable(name, basis, len(self.block_sizes))
        self.block_sizes.append(len(basis))
        self.sos_vars.append(var)
        return var

    def new_scalar_var(
        self, name: str, lower_bound: Optional[float] = None
    ) -> ScalarVariable:
        """Register a scalar; lower_bound makes it lower_bound + (1x1 PSD)."""
        if lower_bound is None:
            slot: Slot = ("f", self.free_count)
            self.free_count += 1
        else:
            slot = ("g", len(self.block_sizes), 0, 0)
            self.block_sizes.append(1)
        var = ScalarVariable(name, lower_bound, slot, self.variables)
        self.scalar_vars.append(var)
        return var

    def require_zero(self, expr: LinExpr, name: str):
        """Add the identity constraint expr == 0 (affine in unknowns)."""
        self.identities.append((name, expr.with_variables(self.variables)))

    def require_sos(
        self, expr: LinExpr, name: str, basis: Optional[MonomialBasis] = None
    ) -> SosVariable:
        """Constrain expr to be SOS via a slack Gram unknown."""
        slack = self.new_sos_var(f"{name}.gram", expr.degree, basis=basis)
        self.require_zero(expr - slack.expr(), name)
        return slack

    # -- compilation ---------------------------------------------------------

    def compile(self, trace_penalty: float = 1e-9) -> sdp.SdpProblem:
        """Coefficient-match every identity into one SdpProblem."""
        if not self.identities:
            raise ValueError("program has no constraints")
        builder = sdp.SdpProblemBuilder(self.block_sizes, self.free_count)
        nvars = len(self.variables)
        for ident_name, expr in self.identities:
            monos = set(expr.const.terms)
            for p in expr.terms.values():
                monos.update(p.terms)
            row_of = {
                mono: builder.new_constraint(-expr.const.terms.get(mono, 0.0))
                for mono in sorted(monos, key=lambda m: grlex_key(m, nvars))
            }
            for slot, p in expr.terms.items():
                if slot[0] == "f":
                    k = slot[1]
                    for mono, coeff in p.terms.items():
                        builder.set_free(row_of[mono], k, coeff)
                else:
                    _, blk, i, j = slot
                    for mono, coeff in p.terms.items():
                        builder.set_entry(row_of[mono], blk, i, j, coeff)
        if trace_penalty:
            builder.add_trace_objective(trace_penalty)
        return builder.build()

    def materialize(self, sol: sdp.SdpSolution) -> "SosAssignment":
        """Turn an optimal SDP solution into concrete polynomials and scalars."""
        slot_values: dict[Slot, float] = {}
        for k in range(self.free_count):
            slot_values[("f", k)] = float(sol.u[k])
        for blk, n in enumerate(self.block_sizes):
            Q = sol.X[blk]
            for i in range(n):
                for j in range(i, n):
                    slot_values[("g", blk, i, j)] = float(Q[i, j])
        polys: dict[str, Polynomial] = {}
        for pv in self.poly_vars:
            polys[pv.name] = pv.expr().value(slot_values)
        grams: dict[str, GramInfo] = {}
        for sv in self.sos_vars:
            polys[sv.name] = sv.expr().value(slot_values)
            Q = np.array(sol.X[sv.block])
            eigs = sla.eigvalsh(Q) if Q.size else np.zeros(0)
            grams[sv.name] = GramInfo(
                basis=tuple(
                    mono_exponents(m, len(sv.basis.variables))
                    for m in sv.basis.entries
                ),
                matrix=Q,
                eigenvalues=eigs,
                near_singular=int(np.sum(eigs < 1e-8)),
            )
        scalars: dict[str, float] = {}
        for sv in self.scalar_vars:
            base = sv.lower_bound if sv.lower_bound is not None else 0.0
            scalars[sv.name] = base + slot_values[sv.slot]
        residuals: dict[str, float] = {}
        for ident_name, expr in self.identities:
            residuals[ident_name] = expr.value(slot_values).max_abs_coeff()
        return SosAssignment(polys, scalars, grams, residuals, slot_values)


@dataclass
class GramInfo:
    basis: tuple
    matrix: np.ndarray
    eigenvalues: np.ndarray
    near_singular: int  # count of eigenvalues below 1e-8


@dataclass
class SosAssignment:
    polynomials: dict[str, Polynomial]
    scalars: dict[str, float]
    grams: dict[str, GramInfo]
    identity_residuals: dict[str, float]
    slot_values: dict

    @property
    def worst_identity_residual(self) -> float:
        return max(self.identity_residuals.values(), default=0.0)


@dataclass
class SosSolveResult:
    status: str  # "feasible" | "infeasible" | "inconclusive"
    assignment: Optional[SosAssignment]
    sdp_solution: sdp.SdpSolution
    problem: sdp.SdpProblem

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def compile_and_solve(
    prog: SosProgram, opts: sdp.SdpOptions = sdp.SdpOptions()
) -> SosSolveResult:
    """Compile, solve, and on success materialize every program unknown.

    `infeasible` is reported only when the solver produced a dual improving
    ray that survives independent re-verification; solver stalls and
    numerical failures map to `inconclusive`.
    """
    prob = prog.compile(trace_penalty=opts.trace_penalty)
    sol = sdp.solve(prob, opts)
    if sol.status is sdp.SdpStatus.OPTIMAL:
        return SosSolveResult("feasible", prog.materialize(sol), sol, prob)
    if sol.status is sdp.SdpStatus.INFEASIBLE_CERTIFICATE:
        ok, _ = sdp.verify_farkas_ray(prob, sol.y)
        status = "infeasible" if ok else "inconclusive"
        return SosSolveResult(status, None, sol, prob)
    return SosSolveResult("inconclusive", None, sol, prob)


@dataclass
class CheckSosResult:
    verdict: str  # "sos" | "not-sos" | "inconclusive"
    gram: Optional[GramInfo] = None
    witness_error: float = math.nan
    dual_ray: Optional[dict] = None
    farkas_report: Optional[dict] = None
    reason: str = ""
    sdp_solution: Optional[sdp.SdpSolution] = None


def check_sos(
    p: Polynomial, opts: sdp.SdpOptions = sdp.SdpOptions()
) -> CheckSosResult:
    """Decide membership in the SOS cone via the Gram matrix test.

    Returns a PSD Gram certificate reconstructing p to coefficient error
    <= 1e-7 on success, a verified dual improving ray when p is not SOS, and
    `inconclusive` when the solver cannot decide at its tolerances.
    """
    if p.degree % 2:
        return CheckSosResult("not-sos", reason="odd degree")
    if p.is_zero():
        basis = MonomialBasis.upto(p.variables, 0)
        return CheckSosResult(
            "sos",
            gram=GramInfo(
                basis=tuple(
                    mono_exponents(m, len(p.variables)) for m in basis.entries
                ),
                matrix=np.zeros((1, 1)),
                eigenvalues=np.zeros(1),
                near_singular=1,
            ),
            witness_error=0.0,
        )
    prog = SosProgram(p.variables)
    s = prog.new_sos_var("gram", p.degree)
    prog.require_zero(s.expr() - LinExpr.from_poly(p), "gram-match")
    result = compile_and_solve(prog, opts)
    if result.status == "feasible":
        recon = result.assignment.polynomials["gram"]
        err = (recon - p).max_abs_coeff()
        info = result.assignment.grams["gram"]
        if err <= 1e-7:
            return CheckSosResult(
                "sos", gram=info, witness_error=err,
                sdp_solution=result.sdp_solution,
            )
        return CheckSosResult(
            "inconclusive",
            gram=info,
            witness_error=err,
            reason="gram reconstruction error above 1e-7",
            sdp_solution=result.sdp_solution,
        )
    if result.status == "infeasible":
        nvars = len(p.variables)
        monos = sorted(
            {m for m in _gram_row_monomials(prog)}, key=lambda m: grlex_key(m, nvars)
        )
        ray = result.sdp_solution.y
        dual_ray = {
            mono: float(val) for mono, val in zip(monos, ray) if abs(val) > 0
        }
        return CheckSosResult(
            "not-sos",
            dual_ray=dual_ray,
            farkas_report=result.sdp_solution.farkas_report,
            sdp_solution=result.sdp_solution,
        )
    return CheckSosResult(
        "inconclusive",
        reason=f"solver status {result.sdp_solution.status.value}",
        sdp_solution=result.sdp_solution,
    )


def _gram_row_monomials(prog: SosProgram):
    """Row monomials of a single-identity program, in compile order."""
    _, expr = prog.identities[0]
    monos = set(expr.const.terms)
    for poly in expr.terms.values():
        monos.update(poly.terms)
    return monos
