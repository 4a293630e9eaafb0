"""Zeno-stability certificate synthesis for cyclic polynomial hybrid systems.

Two feasibility problems are assembled over a hybrid system's data.  The
nominal one searches for per-mode polynomials V_q, a positivity weight alpha,
a decrease rate gamma, and cone multipliers such that, on the declared
neighborhoods W_q,

  V_q dominates alpha * |x - z_q|^2        (positivity),
  V_q vanishes at z_q,
  grad V_q . f_q  <=  -gamma               (flow decrease),
  V_q' o phi_e    <=  r_q V_q  on guards   (jump contraction),

with each "on a set" statement discharged by one SOS multiplier per
inequality and one free multiplier per equality of the set description.  The
parametric variant carries every unknown over the joint ring in state and
parameters and adds multipliers against the inequalities defining the
admissible parameter set; domains given as unions of pieces contribute one
constraint instance per piece.

The contraction constants r_q multiply the unknown V_q, so leaving them free
would make the jump constraint bilinear; they are fixed per solve and
searched over a small grid instead.  A solved certificate is returned only
after an independent sampling check of the four conditions above.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import sdp
from .hybrid import Edge, HybridSystem, Mode, SemialgebraicSet, validate
from .poly import Polynomial, PolyVector, mono_exponents
from .sos import (
    BilinearityError,
    LinExpr,
    MonomialBasis,
    SosProgram,
    compile_and_solve,
    monomials_upto,
)

DEFAULT_RQ_GRID = (0.9, 0.75, 0.5, 0.25)
CERT_MARGIN = 1e-6
IDENTITY_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class SynthesisConfig:
    """Search configuration for certificate synthesis.

    degree: Lyapunov degree (one even int for all modes, or a per-mode map).
    rq_grid: contraction constants tried, coarse to fine, each in (0, 1).
    rq_fixed: pin r_q per mode instead of searching (at least one < 1).
    multiplier_degree: override the default multiplier degree policy.
    max_degree: enable degree escalation in steps of 2 up to this cap.
    """

    degree: int | Mapping[str, int] = 4
    rq_grid: tuple[float, ...] = DEFAULT_RQ_GRID
    rq_fixed: Optional[Mapping[str, float]] = None
    alpha_floor: float = 1e-4
    gamma_floor: float = 0.0
    multiplier_degree: Optional[int] = None
    schmudgen_products: bool = False
    max_degree: Optional[int] = None
    # Origin anchoring bakes the forced vanishing structure at an origin
    # equilibrium into the Gram bases (restores an interior point for the
    # solver).  "auto" tries the anchored program first and falls back to the
    # unrestricted one before trusting a non-feasible outcome; "on"/"off"
    # force one variant.
    anchor_mode: str = "auto"
    cert_margin: float = CERT_MARGIN
    samples: int = 10_000
    sample_seed: int = 0
    sample_radius: float = 5.0
    parameter_window: float = 10.0
    solver: sdp.SdpOptions = sdp.SdpOptions()

    def degree_of(self, mode_id: str) -> int:
        d = self.degree[mode_id] if isinstance(self.degree, Mapping) else self.degree
        if d < 2 or d % 2:
            raise ValueError(f"Lyapunov degree must be even and >= 2, got {d}")
        return int(d)


class MonotonicityError(RuntimeError):
    """A bisection saw a feasible verdict strictly beyond an infeasible one."""

    def __init__(self, message: str, probes):
        super().__init__(message)
        self.probes = probes


@dataclass
class SamplingReport:
    samples_per_mode: dict
    guard_samples: dict
    worst_positivity: float  # min of V over samples (want > -margin)
    worst_decrease: float    # max of grad V . f + gamma (want < margin)
    worst_jump: float        # min of r V - V' o phi on guards (want > -margin)
    worst_anchor: float      # max |V(z)| (want <= 1e-8)
    violations: int
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.worst_anchor <= 1e-8

    def to_json(self) -> dict:
        return {
            "samples_per_mode": self.samples_per_mode,
            "guard_samples": self.guard_samples,
            "worst_positivity": self.worst_positivity,
            "worst_decrease": self.worst_decrease,
            "worst_jump": self.worst_jump,
            "worst_anchor": self.worst_anchor,
            "violations": self.violations,
            "notes": self.notes,
            "passed": self.passed,
        }


@dataclass
class ZenoCertificate:
    """Solved certificate: per-mode V, multipliers, constants, diagnostics."""

    V: dict[str, Polynomial]
    multipliers: dict[str, Polynomial]
    alpha: float
    gamma: float
    rq: dict[str, float]
    degree: dict[str, int]
    gram_summaries: dict
    identity_residuals: dict[str, float]
    sdp_iterations: int
    sdp_residuals: tuple[float, float, float]
    parametric: bool
    sampling_report: Optional[SamplingReport] = None

    @property
    def worst_identity_residual(self) -> float:
        return max(self.identity_residuals.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "format": "zeno-certificate v1",
            "parametric": self.parametric,
            "constants": {
                "alpha": self.alpha,
                "gamma": self.gamma,
                "r": dict(self.rq),
            },
            "degree": dict(self.degree),
            "lyapunov": {q: poly_to_json(p) for q, p in self.V.items()},
            "multipliers": {
                name: poly_to_json(p) for name, p in self.multipliers.items()
            },
            "gram_summaries": self.gram_summaries,
            "sdp": {
                "iterations": self.sdp_iterations,
                "primal_residual": self.sdp_residuals[0],
                "dual_residual": self.sdp_residuals[1],
                "duality_gap": self.sdp_residuals[2],
                "worst_identity_residual": self.worst_identity_residual,
            },
            "sampling_report": (
                self.sampling_report.to_json() if self.sampling_report else None
            ),
        }


def poly_to_json(p: Polynomial) -> dict:
    n = len(p.variables)
    return {
        "variables": list(p.variables),
        "terms": [
            {"exponents": list(mono_exponents(m, n)), "coefficient": c}
            for m, c in p.ordered_terms()
        ],
    }


def poly_from_json(data: dict) -> Polynomial:
    variables = tuple(data["variables"])
    return Polynomial.from_exponent_dict(
        variables,
        {tuple(t["exponents"]): t["coefficient"] for t in data["terms"]},
    )


# -- feasibility problem assembly ---------------------------------------------


def _even_ceil(d: int) -> int:
    return d + (d & 1)


def _even_floor(d: int) -> int:
    return max(d - (d & 1), 0)


def _origin_anchored_basis(variables, state_vars, degree) -> MonomialBasis:
    """Basis of degree <= degree excluding monomials constant in the state.

    Dropping them enforces V(0[, p]) = 0 identically, which is the anchor
    equality when the equilibrium point is the origin.
    """
    state_idx = {variables.index(v) for v in state_vars}
    entries = tuple(
        m
        for m in monomials_upto(len(variables), degree)
        if any(i in state_idx for i, _ in m)
    )
    return MonomialBasis(tuple(variables), degree, entries)


@dataclass
class _FpContext:
    prog: SosProgram
    system: HybridSystem
    config: SynthesisConfig
    rq: dict[str, float]
    V: dict[str, "object"]  # mode id -> PolyVariable
    names: list[str]
    anchored: bool = False
    gamma_fixed: Optional[float] = None


def _multiplier_degrees(
    config: SynthesisConfig, core_degree: int, constraint_polys
) -> dict:
    """Default policy: target = even_ceil(core) + max constraint degree;
    each SOS multiplier then gets even_floor(target - its polynomial degree),
    free (equality) multipliers get target - degree.  A configured override
    fixes all multiplier degrees instead."""
    maxg = max((p.degree for p in constraint_polys), default=0)
    target = _even_ceil(core_degree) + maxg
    out = {}
    for k, p in enumerate(constraint_polys):
        if config.multiplier_degree is not None:
            out[k] = max(int(config.multiplier_degree), 0)
        else:
            out[k] = max(target - p.degree, 0)
    return out


def _attach_set_multipliers(
    ctx: _FpContext, expr: LinExpr, core_degree: int, groups, tag: str, zq
) -> LinExpr:
    """Subtract one multiplier * constraint per set entry from expr.

    groups is a list of (kind, label, polys) with kind "ineq" (SOS
    multiplier) or "eq" (free multiplier).  In an anchored build, SOS
    multipliers of constraints that do not vanish at the equilibrium use a
    Gram basis without state-constant monomials: any feasible certificate has
    those multipliers vanishing at z (every product term is nonnegative there
    and their sum is pinned to zero), so the restriction is lossless and it
    removes the forced boundary face from the cone.
    """
    flat = []
    for kind, label, polys in groups:
        for k, p in enumerate(polys):
            flat.append((kind, f"{label}{k}", p))
    degs = _multiplier_degrees(ctx.config, core_degree, [p for _, _, p in flat])
    ring = ctx.prog.variables
    state_vars = ctx.system.variables
    zsub = dict(zip(state_vars, zq))
    for idx, (kind, label, p) in enumerate(flat):
        deg = degs[idx]
        name = f"{tag}.{label}"
        if kind == "ineq":
            deg_even = _even_floor(deg)
            basis = None
            if ctx.anchored and p.substitute(zsub).max_abs_coeff() > 1e-12:
                basis = _origin_anchored_basis(ring, state_vars, deg_even // 2)
            mult = ctx.prog.new_sos_var(name, deg_even, basis=basis)
        else:
            mult = ctx.prog.new_poly_var(name, deg)
        ctx.names.append(name)
        expr = expr - mult.expr() * p
    return expr


def _augment_products(polys: Sequence[Polynomial], enabled: bool):
    """Optionally add pairwise products of the inequality generators."""
    polys = list(polys)
    if enabled:
        base = list(polys)
        for i in range(len(base)):
            for j in range(i + 1, len(base)):
                polys.append(base[i] * base[j])
    return tuple(polys)


def _build_fp(
    system: HybridSystem,
    config: SynthesisConfig,
    rq: Mapping[str, float],
    anchored: Optional[bool] = None,
):
    """Shared FP assembly; handles both the nominal and parametric cases."""
    report = validate(system)
    if not report.ok:
        raise ValueError(f"system failed validation: {report.summary()}")
    if system.zeno_equilibrium is None:
        raise ValueError("system declares no Zeno equilibrium to certify")
    for q, r in rq.items():
        if not (0.0 < r <= 1.0):
            raise ValueError(f"r_{q} = {r} outside (0, 1]")
    if all(r >= 1.0 for r in rq.values()):
        raise ValueError("at least one mode needs r_q < 1")

    state_vars = system.variables
    params = system.parameters
    ring = state_vars + params
    pis: tuple[Polynomial, ...] = ()
    if params:
        if system.parameter_set is None:
            raise ValueError("parameterized system needs a parameter set")
        pis = _augment_products(
            tuple(p.with_variables(ring) for p in system.parameter_set.inequalities),
            config.schmudgen_products,
        )

    z = system.zeno_equilibrium
    all_origin = all(np.allclose(z[m.id], 0.0) for m in system.modes)
    if anchored is None:
        anchored = config.anchor_mode != "off"
    anchored = anchored and all_origin

    prog = SosProgram(ring)
    ctx = _FpContext(prog, system, config, dict(rq), {}, [], anchored=anchored)

    alpha = prog.new_scalar_var("alpha", lower_bound=config.alpha_floor)
    ctx.names.append("alpha")
    if anchored:
        # gamma sits on the forced boundary whenever the flow at z is tangent
        # to a two-sided slice of W; fixing it at the floor removes that face.
        ctx.gamma_fixed = config.gamma_floor
        gamma_expr = LinExpr.from_poly(
            Polynomial.constant(config.gamma_floor, ring)
        )
    else:
        gamma = prog.new_scalar_var("gamma", lower_bound=config.gamma_floor)
        ctx.names.append("gamma")
        gamma_expr = gamma.expr()

    # Lyapunov unknowns; anchored bases encode V(z) = 0 when z is the origin.
    for m in system.modes:
        deg = config.degree_of(m.id)
        zq = z[m.id]
        if np.allclose(zq, 0.0):
            basis = _origin_anchored_basis(ring, state_vars, deg)
            V = prog.new_poly_var(f"V[{m.id}]", deg, basis=basis)
        else:
            V = prog.new_poly_var(f"V[{m.id}]", deg)
            anchored = V.expr().substitute(dict(zip(state_vars, zq)))
            prog.require_zero(anchored, f"anchor[{m.id}]")
        ctx.V[m.id] = V
        ctx.names.append(f"V[{m.id}]")

    def shift_quadratic(zq) -> Polynomial:
        total = Polynomial.zero(ring)
        for name, zi in zip(state_vars, zq):
            d = Polynomial.variable(name, ring) - float(zi)
            total = total + d * d
        return total

    def anchored_gram_basis(expr_degree: int) -> Optional[MonomialBasis]:
        if not ctx.anchored:
            return None
        half = _even_ceil(expr_degree) // 2
        return _origin_anchored_basis(ring, state_vars, half)

    for m in system.modes:
        zq = z[m.id]
        w_polys = tuple(p.with_variables(ring) for p in m.neighborhood.inequalities)
        w_eqs = tuple(p.with_variables(ring) for p in m.neighborhood.equalities)
        Vq = ctx.V[m.id].expr()
        for piece_idx, piece in enumerate(m.pieces):
            suffix = f"{m.id}" if len(m.pieces) == 1 else f"{m.id}|{piece_idx}"
            g_polys = _augment_products(
                tuple(p.with_variables(ring) for p in piece.inequalities),
                config.schmudgen_products,
            )
            g_eqs = tuple(p.with_variables(ring) for p in piece.equalities)
            groups = [
                ("ineq", "w", _augment_products(w_polys, config.schmudgen_products)),
                ("ineq", "g", g_polys),
                ("eq", "weq", w_eqs),
                ("eq", "geq", g_eqs),
                ("ineq", "pi", pis),
            ]
            # positivity: V - alpha |x - z|^2 dominated on W
            core = Vq - alpha.expr() * shift_quadratic(zq)
            expr = _attach_set_multipliers(
                ctx, core, core.degree, groups, f"pos[{suffix}]", zq
            )
            prog.require_sos(
                expr, f"pos[{suffix}]", basis=anchored_gram_basis(expr.degree)
            )
            ctx.names.append(f"pos[{suffix}].gram")
            # decrease: -grad V . f - gamma dominated on W
            fld = PolyVector(tuple(c.with_variables(ring) for c in m.field))
            core = -(Vq.grad_dot(fld, state_vars)) - gamma_expr
            expr = _attach_set_multipliers(
                ctx, core, core.degree, groups, f"dec[{suffix}]", zq
            )
            prog.require_sos(
                expr, f"dec[{suffix}]", basis=anchored_gram_basis(expr.degree)
            )
            ctx.names.append(f"dec[{suffix}].gram")

    ident_params = [Polynomial.variable(p, ring) for p in params]
    for e in system.edges:
        source = system.mode(e.source)
        w_polys = tuple(
            p.with_variables(ring) for p in source.neighborhood.inequalities
        )
        w_eqs = tuple(p.with_variables(ring) for p in source.neighborhood.equalities)
        subst = PolyVector(
            tuple(c.with_variables(ring) for c in e.reset.components)
            + tuple(ident_params)
        )
        composed = ctx.V[e.target].expr().compose(subst)
        for piece_idx, piece in enumerate(source.pieces):
            suffix = (
                f"({e.source},{e.target})"
                if len(source.pieces) == 1
                else f"({e.source},{e.target})|{piece_idx}"
            )
            g_polys = _augment_products(
                tuple(p.with_variables(ring) for p in piece.inequalities),
                config.schmudgen_products,
            )
            g_eqs = tuple(p.with_variables(ring) for p in piece.equalities)
            core = rq[e.source] * ctx.V[e.source].expr() - composed
            groups = [
                ("eq", "h0_", (e.guard_eq.with_variables(ring),)),
                (
                    "ineq",
                    "h",
                    _augment_products(
                        tuple(p.with_variables(ring) for p in e.guard_ineqs),
                        config.schmudgen_products,
                    ),
                ),
                ("ineq", "w", _augment_products(w_polys, config.schmudgen_products)),
                ("ineq", "g", g_polys),
                ("eq", "weq", w_eqs),
                ("eq", "geq", g_eqs),
                ("ineq", "pi", pis),
            ]
            expr = _attach_set_multipliers(
                ctx, core, core.degree, groups, f"jump[{suffix}]", z[e.source]
            )
            prog.require_sos(
                expr, f"jump[{suffix}]", basis=anchored_gram_basis(expr.degree)
            )
            ctx.names.append(f"jump[{suffix}].gram")
    return prog, ctx


def build_fp1(
    system: HybridSystem,
    config: SynthesisConfig,
    rq: Mapping[str, float],
    anchored: Optional[bool] = None,
) -> tuple[SosProgram, "_FpContext"]:
    """Assemble the nominal feasibility problem (parameter-free systems)."""
    if system.parameters:
        raise ValueError(
            "system has uncertain parameters; use build_fp2 for the "
            "parametric feasibility problem"
        )
    return _build_fp(system, config, rq, anchored)


def build_fp2(
    system: HybridSystem,
    config: SynthesisConfig,
    rq: Mapping[str, float],
    anchored: Optional[bool] = None,
) -> tuple[SosProgram, "_FpContext"]:
    """Assemble the parametric feasibility problem; on a parameter-free
    system this degenerates to exactly the nominal program."""
    return _build_fp(system, config, rq, anchored)


# -- state rescaling ----------------------------------------------------------
#
# The feasibility problems are solved in rescaled coordinates x = R * xhat
# with R estimated from the neighborhood geometry, and every constraint
# polynomial normalized to unit magnitude.  This balances the Gram blocks
# (degree-16 monomials over a radius-5 ball otherwise spread coefficients
# over ten orders of magnitude) and is transparent to the caller: solved
# certificates are mapped back to original coordinates before verification.


def _state_scale(system: HybridSystem, fallback: float) -> np.ndarray:
    """Per-variable scale radii, read off ball-like neighborhood inequalities
    (patterns c - sum a_i x_i^2 with c, a_i > 0); fallback elsewhere."""
    n = len(system.variables)
    radii = np.full(n, 0.0)
    found = np.zeros(n, dtype=bool)
    for m in system.modes:
        for g in m.neighborhood.inequalities:
            const = g.terms.get((), 0.0)
            if const <= 0:
                continue
            for mono, coeff in g.terms.items():
                if not mono:
                    continue
                if len(mono) == 1 and mono[0][1] == 2 and coeff < 0:
                    i = mono[0][0]
                    if i < n:
                        radii[i] = max(radii[i], math.sqrt(const / -coeff))
                        found[i] = True
    radii[~found] = fallback
    radii[radii <= 0] = fallback
    return radii


def _normalize_set(s: SemialgebraicSet) -> SemialgebraicSet:
    def norm(p: Polynomial) -> Polynomial:
        c = p.max_abs_coeff()
        return p * (1.0 / c) if c > 0 else p

    return SemialgebraicSet(
        tuple(norm(g) for g in s.inequalities),
        tuple(norm(h) for h in s.equalities),
    )


def _scale_system(system: HybridSystem, radii: np.ndarray) -> HybridSystem:
    """Rewrite the system over xhat = x / R (fields get dxhat/dt = f(R xhat)/R;
    constraint polynomials are normalized to unit max coefficient)."""
    from dataclasses import replace as dc_replace

    ring = system.variables + system.parameters
    subst = PolyVector(
        tuple(
            Polynomial.variable(v, ring) * float(r)
            for v, r in zip(system.variables, radii)
        )
        + tuple(Polynomial.variable(p, ring) for p in system.parameters)
    )

    def scale_poly(p: Polynomial) -> Polynomial:
        return p.with_variables(ring).compose(subst)

    def scale_set(s: SemialgebraicSet) -> SemialgebraicSet:
        return _normalize_set(
            SemialgebraicSet(
                tuple(scale_poly(g) for g in s.inequalities),
                tuple(scale_poly(h) for h in s.equalities),
            )
        )

    modes = tuple(
        Mode(
            m.id,
            scale_set(m.domain),
            PolyVector(
                tuple(
                    scale_poly(c) * (1.0 / float(r))
                    for c, r in zip(m.field, radii)
                )
            ),
            scale_set(m.neighborhood),
            tuple(scale_set(p) for p in m.domain_pieces),
        )
        for m in system.modes
    )
    def norm_poly(p: Polynomial) -> Polynomial:
        c = p.max_abs_coeff()
        return p * (1.0 / c) if c > 0 else p

    edges = tuple(
        Edge(
            e.source,
            e.target,
            norm_poly(scale_poly(e.guard_eq)),
            tuple(norm_poly(scale_poly(g)) for g in e.guard_ineqs),
            PolyVector(
                tuple(
                    scale_poly(c) * (1.0 / float(r))
                    for c, r in zip(e.reset, radii)
                )
            ),
        )
        for e in system.edges
    )
    pset = system.parameter_set
    if pset is not None:
        pset = _normalize_set(
            SemialgebraicSet(
                tuple(p.with_variables(ring) for p in pset.inequalities),
                tuple(p.with_variables(ring) for p in pset.equalities),
            )
        )
    zeq = None
    if system.zeno_equilibrium is not None:
        zeq = {
            k: np.asarray(v, dtype=float) / radii
            for k, v in system.zeno_equilibrium.items()
        }
    return dc_replace(
        system, modes=modes, edges=edges, parameter_set=pset, zeno_equilibrium=zeq
    )


def _unscale_poly(p: Polynomial, radii: np.ndarray, state_vars) -> Polynomial:
    """Map a polynomial in xhat back to original coordinates (xhat = x / R)."""
    idx = {name: i for i, name in enumerate(state_vars)}
    terms = {}
    for mono, coeff in p.terms.items():
        factor = 1.0
        for i, e in mono:
            name = p.variables[i]
            if name in idx:
                factor /= float(radii[idx[name]]) ** e
        terms[mono] = coeff * factor
    return Polynomial(p.variables, terms)


# -- verification driver ------------------------------------------------------


@dataclass
class Attempt:
    rq: dict[str, float]
    degree: dict[str, int]
    status: str  # feasible | infeasible | inconclusive
    iterations: int
    note: str = ""


@dataclass
class VerifyResult:
    status: str  # certified | no-certificate | inconclusive
    certificate: Optional[ZenoCertificate]
    attempts: list[Attempt]
    wall_seconds: float

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    @property
    def total_iterations(self) -> int:
        return sum(a.iterations for a in self.attempts)


def rq_assignments(mode_ids: Sequence[str], grid: Sequence[float]):
    """Candidate contraction assignments, coarse to fine: all modes sharing
    one grid value first, then one contracting mode with the rest at 1."""
    seen = set()
    for r in grid:
        combos = [{q: r for q in mode_ids}]
        if len(mode_ids) > 1:
            for q in mode_ids:
                combos.append({m: (r if m == q else 1.0) for m in mode_ids})
        for combo in combos:
            key = tuple(sorted(combo.items()))
            if key not in seen and any(v < 1.0 for v in combo.values()):
                seen.add(key)
                yield combo


def verify(system: HybridSystem, config: SynthesisConfig) -> VerifyResult:
    """Search the r_q grid (and optional degree escalation) for a certificate.

    Returns certified with the first solved and sampling-verified
    certificate; no-certificate only when every grid point of the final
    degree yields a verified infeasibility ray; inconclusive otherwise.
    """
    t0 = time.time()
    mode_ids = [m.id for m in system.modes]
    base_degree = (
        {q: config.degree_of(q) for q in mode_ids}
        if isinstance(config.degree, Mapping)
        else {q: config.degree_of(mode_ids[0]) for q in mode_ids}
    )
    max_degree = config.max_degree
    degrees = [base_degree]
    if max_degree is not None:
        bump = 2
        while max(base_degree.values()) + bump <= max_degree:
            degrees.append({q: d + bump for q, d in base_degree.items()})
            bump += 2
    attempts: list[Attempt] = []
    builder = build_fp2 if system.parameters else build_fp1
    radii = _state_scale(system, config.sample_radius)
    scaled_system = _scale_system(system, radii)
    for degree in degrees:
        cfg = replace(config, degree=degree)
        stage: list[Attempt] = []
        if config.rq_fixed is not None:
            assignments = [dict(config.rq_fixed)]
        else:
            assignments = list(rq_assignments(mode_ids, config.rq_grid))
        for rq in assignments:
            if config.anchor_mode == "auto":
                variants = (True, False)
            else:
                variants = (config.anchor_mode == "on",)
            outcome: Optional[Attempt] = None
            for anchored in variants:
                prog, ctx = builder(scaled_system, cfg, rq, anchored=anchored)
                result = compile_and_solve(prog, cfg.solver)
                its = result.sdp_solution.iterations
                label = "anchored" if ctx.anchored else "full"
                if result.status == "feasible":
                    cert = _materialize_certificate(
                        ctx, result, parametric=bool(system.parameters)
                    )
                    cert = _unscale_certificate(cert, radii, system.variables)
                    if cert.worst_identity_residual > IDENTITY_RESIDUAL_TOL:
                        outcome = Attempt(
                            rq, degree, "inconclusive", its,
                            f"{label}: identity residual above tolerance",
                        )
                    else:
                        report = post_verify(system, cert, cfg.samples, cfg)
                        cert.sampling_report = report
                        if report.passed:
                            attempts.extend(stage)
                            attempts.append(
                                Attempt(rq, degree, "feasible", its, label)
                            )
                            return VerifyResult(
                                "certified", cert, attempts, time.time() - t0
                            )
                        outcome = Attempt(
                            rq, degree, "inconclusive", its,
                            f"{label}: sampling check failed; downgraded",
                        )
                elif not ctx.anchored:
                    # An anchored non-feasible outcome says nothing about the
                    # unrestricted problem; only the full variant's counts.
                    outcome = Attempt(rq, degree, result.status, its, label)
                if not ctx.anchored:
                    break  # a second variant would rebuild the same program
            stage.append(
                outcome
                or Attempt(rq, degree, "inconclusive", 0, "anchored-only run")
            )
        attempts.extend(stage)
    final_degree = degrees[-1]
    final = [a for a in attempts if a.degree == final_degree]
    if final and all(a.status == "infeasible" for a in final):
        return VerifyResult("no-certificate", None, attempts, time.time() - t0)
    return VerifyResult("inconclusive", None, attempts, time.time() - t0)


def _unscale_certificate(
    cert: ZenoCertificate, radii: np.ndarray, state_vars
) -> ZenoCertificate:
    """Map a certificate solved in rescaled coordinates back to the original
    ones.  alpha weakens by the largest radius squared (the positivity bound
    V >= alpha_hat * sum((x_i - z_i)/R_i)^2 implies that constant)."""
    if np.allclose(radii, 1.0):
        return cert
    cert.V = {q: _unscale_poly(p, radii, state_vars) for q, p in cert.V.items()}
    cert.multipliers = {
        name: _unscale_poly(p, radii, state_vars)
        for name, p in cert.multipliers.items()
    }
    cert.alpha = cert.alpha / float(np.max(radii)) ** 2
    return cert


def _materialize_certificate(
    ctx: _FpContext, result, parametric: bool
) -> ZenoCertificate:
    asg = result.assignment
    V = {}
    multipliers = {}
    for m in ctx.system.modes:
        V[m.id] = asg.polynomials[f"V[{m.id}]"]
    for name in ctx.names:
        if name in ("alpha", "gamma") or name.startswith("V["):
            continue
        if name in asg.polynomials:
            multipliers[name] = asg.polynomials[name]
    gram_summaries = {
        name: {
            "size": int(info.matrix.shape[0]),
            "min_eigenvalue": float(info.eigenvalues[0]) if info.eigenvalues.size else 0.0,
            "max_eigenvalue": float(info.eigenvalues[-1]) if info.eigenvalues.size else 0.0,
            "near_singular_count": info.near_singular,
        }
        for name, info in asg.grams.items()
    }
    sol = result.sdp_solution
    gamma = (
        ctx.gamma_fixed if ctx.gamma_fixed is not None else asg.scalars["gamma"]
    )
    return ZenoCertificate(
        V=V,
        multipliers=multipliers,
        alpha=asg.scalars["alpha"],
        gamma=gamma,
        rq=dict(ctx.rq),
        degree={m.id: ctx.config.degree_of(m.id) for m in ctx.system.modes},
        gram_summaries=gram_summaries,
        identity_residuals=dict(asg.identity_residuals),
        sdp_iterations=sol.iterations,
        sdp_residuals=(sol.primal_residual, sol.dual_residual, sol.duality_gap),
        parametric=parametric,
    )


# -- certificate post-verification --------------------------------------------


def _sample_parameters(system: HybridSystem, count: int, rng, window: float):
    """Rejection-sample admissible parameter points inside a finite window."""
    if not system.parameters:
        return np.zeros((count, 0)), []
    pset = system.parameter_set
    notes = []
    nparams = len(system.parameters)
    nstate = len(system.variables)
    lo, hi = 0.0, window
    # probe for a crude box: expand downward if negative values admissible
    probe = np.linspace(-window, window, 4097)
    ok = np.ones(probe.shape[0], dtype=bool)
    if nparams == 1 and pset is not None:
        for g in pset.inequalities:
            pts = np.zeros((probe.shape[0], nstate + 1))
            pts[:, nstate] = probe
            ok &= g.evaluate_many(pts) >= -1e-9
        admissible = probe[ok]
        if admissible.size == 0:
            notes.append("parameter sampling starvation: empty window")
            return np.zeros((0, 1)), notes
        lo, hi = float(admissible.min()), float(admissible.max())
    out = np.empty((count, nparams))
    filled = 0
    draws = 0
    while filled < count and draws < 50:
        draws += 1
        cand = rng.uniform(lo, hi, size=(count, nparams))
        if pset is not None and pset.inequalities:
            pts = np.concatenate(
                [np.zeros((count, nstate)), cand], axis=1
            )
            mask = np.ones(count, dtype=bool)
            for g in pset.inequalities:
                mask &= g.evaluate_many(pts) >= -1e-9
            cand = cand[mask]
        take = min(cand.shape[0], count - filled)
        out[filled : filled + take] = cand[:take]
        filled += take
    if filled < count:
        notes.append("parameter sampling starvation; using partial sample")
    return out[:filled], notes


def _sample_region(
    mode: Mode, count: int, rng, radius: float, tol: float, psamples: np.ndarray
):
    """Rejection-sample (state, parameter) points of W_q.

    States are drawn uniformly in a box of the given radius, parameters from
    the admissible sample pool, and membership of the neighborhood and of at
    least one domain piece is tested on the joint point (domains and
    neighborhoods may involve the parameters).
    """
    nstate = len(mode.field)
    nparams = psamples.shape[1]
    out = np.empty((count, nstate + nparams))
    filled = 0
    rounds = 0
    while filled < count and rounds < 200:
        rounds += 1
        cand = rng.uniform(-radius, radius, size=(count, nstate))
        if nparams:
            if psamples.shape[0] == 0:
                break
            rows = rng.integers(0, psamples.shape[0], size=count)
            full = np.concatenate([cand, psamples[rows]], axis=1)
        else:
            full = cand
        mask = np.ones(count, dtype=bool)
        for g in mode.neighborhood.inequalities:
            mask &= g.evaluate_many(full) >= -tol
        piece_mask = np.zeros(count, dtype=bool)
        for piece in mode.pieces:
            pm = np.ones(count, dtype=bool)
            for g in piece.inequalities:
                pm &= g.evaluate_many(full) >= -tol
            for h in piece.equalities:
                pm &= np.abs(h.evaluate_many(full)) <= tol
            piece_mask |= pm
        mask &= piece_mask
        full = full[mask]
        take = min(full.shape[0], count - filled)
        out[filled : filled + take] = full[:take]
        filled += take
    return out[:filled]


def post_verify(
    system: HybridSystem,
    cert: ZenoCertificate,
    samples: int = 10_000,
    config: Optional[SynthesisConfig] = None,
) -> SamplingReport:
    """Independent sampling check of the certificate conditions.

    Draws points from each W_q (and admissible parameters for parametric
    certificates), checks positivity and flow decrease there, samples each
    guard's equality manifold by root-finding along random lines for the jump
    contraction, and re-checks the anchor V(z) = 0.
    """
    config = config or SynthesisConfig()
    margin = config.cert_margin
    rng = np.random.default_rng(config.sample_seed)
    radius = config.sample_radius
    tol = 1e-9
    z = system.zeno_equilibrium or {}
    parametric = cert.parametric and bool(system.parameters)
    psamples, notes = (
        _sample_parameters(system, max(samples // 10, 16), rng, config.parameter_window)
        if parametric
        else (np.zeros((1, 0)), [])
    )
    worst_pos = math.inf
    worst_dec = -math.inf
    worst_jump = math.inf
    worst_anchor = 0.0
    violations = 0
    samples_per_mode = {}
    guard_samples = {}
    pool = psamples if parametric else np.zeros((1, 0))

    for m in system.modes:
        pts = _sample_region(m, samples, rng, radius, tol, pool)
        samples_per_mode[m.id] = int(pts.shape[0])
        if pts.shape[0] == 0:
            notes.append(f"sampling starvation in W_{m.id}")
            continue
        Vq = cert.V[m.id].with_variables(system.variables + system.parameters)
        vals = Vq.evaluate_many(pts)
        worst_pos = min(worst_pos, float(vals.min()))
        violations += int(np.sum(vals < -margin))
        dec = Polynomial.zero(system.variables + system.parameters)
        for name, f_i in zip(system.variables, m.field):
            dec = dec + Vq.partial(name) * f_i.with_variables(
                system.variables + system.parameters
            )
        dvals = dec.evaluate_many(pts) + cert.gamma
        worst_dec = max(worst_dec, float(dvals.max()))
        violations += int(np.sum(dvals > margin))
        # anchor
        zq = z.get(m.id)
        if zq is not None:
            if parametric and psamples.shape[0]:
                zpts = np.concatenate(
                    [np.tile(zq, (psamples.shape[0], 1)), psamples], axis=1
                )
                worst_anchor = max(
                    worst_anchor, float(np.max(np.abs(Vq.evaluate_many(zpts))))
                )
            else:
                worst_anchor = max(
                    worst_anchor, abs(Vq.evaluate(np.concatenate([zq, np.zeros(0)])))
                )

    guard_target = max(min(samples, 2000), 16)
    ring = system.variables + system.parameters
    for e in system.edges:
        source = system.mode(e.source)
        Vs = cert.V[e.source].with_variables(ring)
        Vt = cert.V[e.target].with_variables(ring)
        r = cert.rq[e.source]
        found = 0
        tries = 0
        worst_here = math.inf
        while found < guard_target and tries < guard_target * 20:
            tries += 1
            if parametric and psamples.shape[0]:
                pvec = psamples[rng.integers(0, psamples.shape[0])]
            else:
                pvec = np.zeros(0)
            a = rng.uniform(-radius, radius, size=len(system.variables))
            d = rng.normal(size=len(system.variables))
            d /= np.linalg.norm(d)

            def h_line(tt):
                return e.guard_eq.evaluate(np.concatenate([a + tt * d, pvec]))

            t_lo, t_hi = -2.0 * radius, 2.0 * radius
            grid_t = np.linspace(t_lo, t_hi, 33)
            hv = np.array([h_line(tt) for tt in grid_t])
            sign_change = np.nonzero(hv[:-1] * hv[1:] < 0)[0]
            if sign_change.size == 0:
                continue
            k = int(sign_change[0])
            t_root = brentq(h_line, grid_t[k], grid_t[k + 1], xtol=1e-12)
            x = a + t_root * d
            full = np.concatenate([x, pvec])
            if not all(
                g.evaluate(full) >= -tol for g in e.guard_ineqs
            ):
                continue
            if not all(
                g.evaluate(full) >= -tol
                for g in source.neighborhood.inequalities
            ):
                continue
            if not any(
                all(g.evaluate(full) >= -tol for g in piece.inequalities)
                for piece in source.pieces
            ):
                continue
            found += 1
            ximg = np.array(
                [c.with_variables(ring).evaluate(full) for c in e.reset]
            )
            full_img = np.concatenate([ximg, pvec])
            jump = r * Vs.evaluate(full) - Vt.evaluate(full_img)
            worst_here = min(worst_here, jump)
            if jump < -margin:
                violations += 1
        guard_samples[f"({e.source},{e.target})"] = found
        if found == 0:
            notes.append(
                f"guard sampling starvation on edge ({e.source},{e.target})"
            )
        if found:
            worst_jump = min(worst_jump, worst_here)

    return SamplingReport(
        samples_per_mode=samples_per_mode,
        guard_samples=guard_samples,
        worst_positivity=worst_pos if worst_pos is not math.inf else math.nan,
        worst_decrease=worst_dec if worst_dec is not -math.inf else math.nan,
        worst_jump=worst_jump if worst_jump is not math.inf else math.nan,
        worst_anchor=worst_anchor,
        violations=violations,
        notes=notes,
    )


# -- parameter studies --------------------------------------------------------


@dataclass
class SweepPoint:
    values: dict[str, float]
    verdict: str
    solve_seconds: float
    sdp_iterations: int


@dataclass
class SweepResult:
    points: list[SweepPoint]
    columns: list[str]


def _verify_point(args):
    system, config, point = args
    sys_i = system.rebind_constants(point)
    t0 = time.time()
    res = verify(sys_i, config)
    return SweepPoint(
        dict(point), res.status, time.time() - t0, res.total_iterations
    )


def sweep(
    system: HybridSystem,
    config: SynthesisConfig,
    grid: Optional[Mapping[str, Sequence[float]]] = None,
    monte_carlo: Optional[dict] = None,
    workers: int = 1,
) -> SweepResult:
    """Per-point verification over a constant grid or Monte-Carlo draws.

    Points are independent; verdicts are aggregated deterministically in grid
    order.  Per-point failures are recorded as inconclusive and the sweep
    continues.
    """
    if (grid is None) == (monte_carlo is None):
        raise ValueError("provide exactly one of grid or monte_carlo")
    points: list[dict[str, float]] = []
    if grid is not None:
        keys = sorted(grid)
        for combo in itertools.product(*(grid[k] for k in keys)):
            points.append(dict(zip(keys, (float(v) for v in combo))))
        columns = keys
    else:
        n = int(monte_carlo["n"])
        ranges = monte_carlo["ranges"]
        keys = sorted(ranges)
        rng = np.random.default_rng(int(monte_carlo.get("seed", 0)))
        for _ in range(n):
            points.append(
                {k: float(rng.uniform(*ranges[k])) for k in keys}
            )
        columns = keys
    tasks = [(system, config, pt) for pt in points]
    results: list[SweepPoint] = []
    if workers > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            for point, res in zip(points, pool.map(_verify_point, tasks)):
                results.append(res)
    else:
        for task in tasks:
            try:
                results.append(_verify_point(task))
            except Exception as exc:  # per-point failure: record and continue
                results.append(SweepPoint(dict(task[2]), "inconclusive", 0.0, 0))
    return SweepResult(results, list(columns))


@dataclass
class BisectProbe:
    value: float
    status: str


@dataclass
class BisectResult:
    parameter: str
    direction: str
    lo: float
    hi: float
    bound: float
    probes: list[BisectProbe]
    note: str = ""

    def to_json(self) -> dict:
        return {
            "parameter": self.parameter,
            "direction": self.direction,
            "bracket": [self.lo, self.hi],
            "bound": self.bound,
            "probes": [{"value": p.value, "status": p.status} for p in self.probes],
            "note": self.note,
        }


def bisect(
    system: HybridSystem,
    config: SynthesisConfig,
    parameter: str,
    bracket: tuple[float, float],
    direction: str,
    tol: float = 0.02,
) -> BisectResult:
    """Bisection on a named constant, assuming feasibility is monotone in it.

    direction "max": find the largest certified value (feasible side below);
    direction "min": find the smallest certified value (feasible side above).
    Non-monotone verdict patterns abort with MonotonicityError.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (lo < hi):
        raise ValueError("bracket must satisfy lo < hi")
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    probes: list[BisectProbe] = []

    def check(value: float) -> str:
        res = verify(system.rebind_constants({parameter: value}), config)
        probes.append(BisectProbe(value, res.status))
        _assert_monotone(probes, direction)
        return res.status

    s_lo = check(lo)
    s_hi = check(hi)
    feasible = "certified"
    if direction == "max":
        if s_hi == feasible:
            return BisectResult(
                parameter, direction, lo, hi, hi, probes,
                "degenerate bracket: upper end already certified",
            )
        if s_lo != feasible:
            return BisectResult(
                parameter, direction, lo, hi, math.nan, probes,
                "no certified endpoint; bound undefined",
            )
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if check(mid) == feasible:
                lo = mid
            else:
                hi = mid
        return BisectResult(parameter, direction, float(bracket[0]), float(bracket[1]), lo, probes)
    else:
        if s_lo == feasible:
            return BisectResult(
                parameter, direction, lo, hi, lo, probes,
                "degenerate bracket: lower end already certified",
            )
        if s_hi != feasible:
            return BisectResult(
                parameter, direction, lo, hi, math.nan, probes,
                "no certified endpoint; bound undefined",
            )
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if check(mid) == feasible:
                hi = mid
            else:
                lo = mid
        return BisectResult(parameter, direction, float(bracket[0]), float(bracket[1]), hi, probes)


def _assert_monotone(probes: list[BisectProbe], direction: str):
    certified = [p.value for p in probes if p.status == "certified"]
    refuted = [p.value for p in probes if p.status == "no-certificate"]
    if not certified or not refuted:
        return
    if direction == "max" and max(certified) > min(refuted):
        raise MonotonicityError(
            "feasible verdict beyond an infeasible one while maximizing",
            probes,
        )
    if direction == "min" and min(certified) < max(refuted):
        raise MonotonicityError(
            "feasible verdict beyond an infeasible one while minimizing",
            probes,
        )
