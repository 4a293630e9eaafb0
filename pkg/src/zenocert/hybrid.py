"""Polynomial hybrid automata: data model, JSON loader, validation, and an
event-detecting simulator with Zeno-accumulation detection.

The simulator is the independent oracle of the package: it shares nothing
with the certificate pipeline beyond the polynomial layer.  Integration uses
adaptive RK45 with dense output; guard crossings are located by root-finding
on the guard equality along the dense interpolant, and a crossing is accepted
only where the guard inequalities hold and the reset lands in the target
mode's domain.  Transitions are urgent: the first accepted crossing fires.

Zeno detection: when `zeno_consecutive` inter-transition gaps in a row fall
below `zeno_gap_tol`, the run stops and the accumulation time is estimated by
geometric-series extrapolation of the trailing gaps.  When gaps shrink
beneath the floating-point resolution of the clock while still contracting,
the run is likewise declared Zeno (the remaining tail is below resolution).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

from .poly import Polynomial, PolyVector, parse

MEMBERSHIP_TOL = 1e-8
EVENT_TOL = 1e-10
ZENO_GAP_TOL = 1e-6
ZENO_CONSECUTIVE = 8

_EPS = np.finfo(float).eps


class SystemFormatError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SemialgebraicSet:
    """{x : g(x) >= 0 for g in inequalities, h(x) = 0 for h in equalities}."""

    inequalities: tuple[Polynomial, ...] = ()
    equalities: tuple[Polynomial, ...] = ()

    def contains(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        return all(g.evaluate(point) >= -tol for g in self.inequalities) and all(
            abs(h.evaluate(point)) <= tol for h in self.equalities
        )

    def substitute(self, values: Mapping[str, float]) -> "SemialgebraicSet":
        return SemialgebraicSet(
            tuple(g.substitute(values) for g in self.inequalities),
            tuple(h.substitute(values) for h in self.equalities),
        )


@dataclass(frozen=True)
class Mode:
    id: str
    domain: SemialgebraicSet
    field: PolyVector
    neighborhood: SemialgebraicSet
    domain_pieces: tuple[SemialgebraicSet, ...] = ()

    @property
    def pieces(self) -> tuple[SemialgebraicSet, ...]:
        """Basic semialgebraic pieces whose union is the domain."""
        return self.domain_pieces if self.domain_pieces else (self.domain,)

    def in_domain(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        return any(piece.contains(point, tol) for piece in self.pieces)


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    guard_eq: Polynomial
    guard_ineqs: tuple[Polynomial, ...]
    reset: PolyVector

    def guard_contains(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        return abs(self.guard_eq.evaluate(point)) <= tol and all(
            g.evaluate(point) >= -tol for g in self.guard_ineqs
        )


@dataclass(frozen=True)
class HybridSystem:
    variables: tuple[str, ...]
    modes: tuple[Mode, ...]
    edges: tuple[Edge, ...]
    parameters: tuple[str, ...] = ()
    parameter_set: Optional[SemialgebraicSet] = None
    zeno_equilibrium: Optional[dict] = None  # mode id -> np.ndarray
    constants: dict = field(default_factory=dict)
    raw: Optional[dict] = None
    comment: str = ""

    def mode(self, mode_id: str) -> Mode:
        for m in self.modes:
            if m.id == mode_id:
                return m
        raise KeyError(f"unknown mode {mode_id!r}")

    def out_edges(self, mode_id: str) -> list[Edge]:
        return [e for e in self.edges if e.source == mode_id]

    def in_edges(self, mode_id: str) -> list[Edge]:
        return [e for e in self.edges if e.target == mode_id]

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def instantiate_params(self, values: Mapping[str, float]) -> "HybridSystem":
        """Substitute numeric parameter values; the result is parameter-free."""
        missing = [p for p in self.parameters if p not in values]
        if missing:
            raise ValueError(f"missing parameter values for {missing}")
        sub = {p: float(values[p]) for p in self.parameters}
        modes = tuple(
            Mode(
                m.id,
                m.domain.substitute(sub),
                m.field.substitute(sub),
                m.neighborhood.substitute(sub),
                tuple(p.substitute(sub) for p in m.domain_pieces),
            )
            for m in self.modes
        )
        edges = tuple(
            Edge(
                e.source,
                e.target,
                e.guard_eq.substitute(sub),
                tuple(g.substitute(sub) for g in e.guard_ineqs),
                e.reset.substitute(sub),
            )
            for e in self.edges
        )
        return replace(
            self, modes=modes, edges=edges, parameters=(), parameter_set=None
        )

    def rebind_constants(self, overrides: Mapping[str, float]) -> "HybridSystem":
        """Re-load from the raw description with some constants replaced."""
        if self.raw is None:
            raise ValueError("system has no raw description to rebind")
        merged = dict(self.constants)
        merged.update({k: float(v) for k, v in overrides.items()})
        unknown = set(overrides) - set(self.constants)
        if unknown:
            raise KeyError(f"not constants of this system: {sorted(unknown)}")
        return load_system(self.raw, constants=merged)


# -- loading ------------------------------------------------------------------

_DEFAULT_NEIGHBORHOOD_RADIUS_SQ = 25.0


def _parse_set(spec: Optional[dict], names, constants) -> SemialgebraicSet:
    if not spec:
        return SemialgebraicSet()
    ineqs = tuple(
        parse(s, names).substitute(constants) for s in spec.get("inequalities", [])
    )
    eqs = tuple(
        parse(s, names).substitute(constants) for s in spec.get("equalities", [])
    )
    return SemialgebraicSet(ineqs, eqs)


def load_system(source, constants: Optional[Mapping[str, float]] = None) -> HybridSystem:
    """Load a system from a JSON file path, JSON text, or an already-parsed dict.

    `constants` overrides the file's constants block (used by sweeps and
    bisection to instantiate one member of a family).
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        data = json.loads(text)
    else:
        data = source
    if "variables" not in data or "modes" not in data or "edges" not in data:
        raise SystemFormatError("system file needs variables, modes and edges")
    variables = tuple(data["variables"])
    parameters = tuple(data.get("parameters", []))
    consts = {k: float(v) for k, v in data.get("constants", {}).items()}
    if constants:
        for k, v in constants.items():
            if k not in consts:
                raise SystemFormatError(f"override for unknown constant {k!r}")
            consts[k] = float(v)
    names = variables + parameters + tuple(consts)
    state_and_params = variables + parameters

    def expr(text: str) -> Polynomial:
        return parse(text, names).substitute(consts).with_variables(state_and_params)

    default_w = SemialgebraicSet(
        (
            Polynomial.constant(_DEFAULT_NEIGHBORHOOD_RADIUS_SQ, state_and_params)
            - sum(
                (
                    Polynomial.variable(v, state_and_params) ** 2
                    for v in variables
                ),
                Polynomial.zero(state_and_params),
            ),
        )
    )

    def parse_semialg(spec) -> SemialgebraicSet:
        raw = _parse_set(spec, names, consts)
        return SemialgebraicSet(
            tuple(p.with_variables(state_and_params) for p in raw.inequalities),
            tuple(p.with_variables(state_and_params) for p in raw.equalities),
        )

    modes = []
    for mspec in data["modes"]:
        mid = str(mspec["id"])
        domain = parse_semialg(mspec.get("domain"))
        pieces = tuple(parse_semialg(p) for p in mspec.get("domain_pieces", []))
        fld = PolyVector(tuple(expr(s) for s in mspec["field"]))
        if len(fld) != len(variables):
            raise SystemFormatError(
                f"mode {mid}: field has {len(fld)} components, expected "
                f"{len(variables)}"
            )
        w = parse_semialg(mspec["neighborhood"]) if "neighborhood" in mspec else default_w
        modes.append(Mode(mid, domain, fld, w, pieces))
    edges = []
    for espec in data["edges"]:
        guard = espec.get("guard", {})
        if "equality" not in guard:
            raise SystemFormatError("every guard needs a distinguished equality")
        reset = PolyVector(tuple(expr(s) for s in espec["reset"]))
        if len(reset) != len(variables):
            raise SystemFormatError("reset dimension mismatch")
        edges.append(
            Edge(
                str(espec["source"]),
                str(espec["target"]),
                expr(guard["equality"]),
                tuple(expr(s) for s in guard.get("inequalities", [])),
                reset,
            )
        )
    pset = None
    if "parameter_set" in data:
        raw = _parse_set(data["parameter_set"], names, consts)
        pset = SemialgebraicSet(
            tuple(p.with_variables(state_and_params) for p in raw.inequalities),
            tuple(p.with_variables(state_and_params) for p in raw.equalities),
        )
    zeq = None
    if "zeno_equilibrium" in data:
        zeq = {
            str(k): np.asarray(v, dtype=float)
            for k, v in data["zeno_equilibrium"].items()
        }
    return HybridSystem(
        variables=variables,
        modes=tuple(modes),
        edges=tuple(edges),
        parameters=parameters,
        parameter_set=pset,
        zeno_equilibrium=zeq,
        constants=consts,
        raw=data,
        comment=str(data.get("comment", "")),
    )


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationIssue:
    severity: str  # "error" | "warning"
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    def error(self, message: str):
        self.issues.append(ValidationIssue("error", message))

    def warning(self, message: str):
        self.issues.append(ValidationIssue("warning", message))

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def cyclic(self) -> bool:
        return not any("cyclic" in i.message for i in self.issues)

    def summary(self) -> str:
        if not self.issues:
            return "valid"
        return "; ".join(f"[{i.severity}] {i.message}" for i in self.issues)


def validate(system: HybridSystem, tol: float = MEMBERSHIP_TOL) -> ValidationReport:
    """Check cyclicity, Zeno-equilibrium consistency and dimension agreement."""
    report = ValidationReport()
    ids = [m.id for m in system.modes]
    if len(set(ids)) != len(ids):
        report.error("duplicate mode ids")
    for m in system.modes:
        outs = system.out_edges(m.id)
        ins = system.in_edges(m.id)
        if len(outs) != 1 or len(ins) != 1:
            report.error(
                f"not cyclic: mode {m.id} has {len(outs)} outgoing and "
                f"{len(ins)} incoming edges (need exactly one of each)"
            )
    if report.ok and system.modes:
        seen = {system.modes[0].id}
        cur = system.modes[0].id
        for _ in range(len(system.modes)):
            cur = system.out_edges(cur)[0].target
            seen.add(cur)
        if len(seen) != len(system.modes):
            report.error("not cyclic: edge digraph is not a single connected cycle")
    for e in system.edges:
        if e.source not in ids or e.target not in ids:
            report.error(f"edge ({e.source},{e.target}) references unknown mode")
    z = system.zeno_equilibrium
    if z is not None:
        for m in system.modes:
            if m.id not in z:
                report.error(f"zeno equilibrium missing entry for mode {m.id}")
        if not report.ok:
            return report
        nparams = len(system.parameters)
        for e in system.edges:
            zq = z[e.source]
            zq_target = z[e.target]
            # Substitute z_q for the state, leaving parameters symbolic; the
            # image must be the constant z_{q'} for every admissible p.
            subs = dict(zip(system.variables, zq))
            for comp, want in zip(e.reset, zq_target):
                img = comp.substitute(subs)
                resid = (img - want).max_abs_coeff()
                if resid > tol:
                    report.error(
                        f"reset of edge ({e.source},{e.target}) maps z to a "
                        f"point off the target equilibrium (residual {resid:.2e})"
                    )
            h0 = e.guard_eq.substitute(subs)
            if h0.max_abs_coeff() > tol:
                report.error(
                    f"z is not on the guard equality of edge ({e.source},{e.target})"
                )
            for g in e.guard_ineqs:
                gz = g.substitute(subs)
                if gz.degree == 0:
                    if gz.evaluate(np.zeros(nparams)[: len(gz.variables)]) < -tol:
                        report.error(
                            f"z violates a guard inequality of edge "
                            f"({e.source},{e.target})"
                        )
                else:
                    report.warning(
                        f"guard inequality of edge ({e.source},{e.target}) is "
                        "parameter-dependent at z; not checked"
                    )
        for m in system.modes:
            zq = z[m.id]
            subs = dict(zip(system.variables, zq))
            fz = [comp.substitute(subs) for comp in m.field]
            if all(c.degree == 0 for c in fz):
                vals = np.array(
                    [c.evaluate(np.zeros(len(c.variables))) for c in fz]
                )
                if float(np.max(np.abs(vals))) <= tol:
                    report.warning(
                        f"f_{m.id}(z) = 0: z is a true equilibrium of mode "
                        f"{m.id}, not a pure Zeno point"
                    )
            if not system.parameters and not m.in_domain(zq, max(tol, 1e-7)):
                report.warning(f"z of mode {m.id} is outside the mode domain")
    return report


# -- simulation ---------------------------------------------------------------


@dataclass(frozen=True)
class SimOptions:
    horizon: float = 50.0
    max_transitions: int = 10_000
    rtol: float = 1e-10
    atol: float = 1e-13
    event_tol: float = EVENT_TOL
    membership_tol: float = MEMBERSHIP_TOL
    zeno_gap_tol: float = ZENO_GAP_TOL
    zeno_consecutive: int = ZENO_CONSECUTIVE
    divergence_radius: float = 1e7
    stop_on_neighborhood_exit: bool = False
    max_step_initial: float = math.nan  # default horizon / 64
    store_trajectory: bool = True


@dataclass
class Interval:
    mode: str
    t: np.ndarray
    x: np.ndarray


@dataclass
class Execution:
    intervals: list[Interval]
    taus: list[float]
    verdict: str  # zeno-detected | diverged | left-neighborhood | horizon-reached
    zeno_time_estimate: Optional[float]
    warnings: list[str] = field(default_factory=list)
    guard_residuals: list[float] = field(default_factory=list)

    @property
    def transitions(self) -> int:
        return len(self.taus) - 1

    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.taus))


def zeno_time(execution: Execution, n_fit: int = ZENO_CONSECUTIVE) -> Optional[float]:
    """Extrapolated accumulation time from the fitted geometric tail.

    Requires a zeno-detected execution.  The ratio is fitted on the last
    n_fit inter-transition gaps; the remaining tail g*rho/(1-rho) is added to
    the last transition time.
    """
    if execution.verdict != "zeno-detected":
        return None
    taus = np.asarray(execution.taus)
    gaps = np.diff(taus)
    gaps = gaps[gaps > 0]
    tail = gaps[-min(n_fit, len(gaps)):]
    t_last = float(taus[-1])
    if len(tail) < 2:
        return t_last
    rho = (tail[-1] / tail[0]) ** (1.0 / (len(tail) - 1))
    if not (0.0 < rho < 0.999):
        return t_last
    return t_last + float(tail[-1]) * rho / (1.0 - rho)


class _EdgeMonitor:
    """Arming state for one outgoing edge's guard equality."""

    __slots__ = ("edge", "armed", "sign")

    def __init__(self, edge: Edge):
        self.edge = edge
        self.armed = False
        self.sign = 0.0

    def arm_threshold(self, x) -> float:
        # Relative to the evaluation's own roundoff scale: |h| always lies
        # below evaluate_abs, so this arms on any value that is resolved.
        return 64.0 * _EPS * self.edge.guard_eq.evaluate_abs(x)

    def observe(self, x) -> Optional[float]:
        """Update arming with the value at x; return h0(x)."""
        h = self.edge.guard_eq.evaluate(x)
        if not self.armed and abs(h) > self.arm_threshold(x):
            self.armed = True
            self.sign = math.copysign(1.0, h)
        return h


def simulate(
    system: HybridSystem,
    initial: tuple[str, Sequence[float]],
    params: Optional[Mapping[str, float]] = None,
    opts: SimOptions = SimOptions(),
) -> Execution:
    """Run one execution from (mode, state); see the module docstring.

    Raises SimulationError on integrator failure that is not a resolved Zeno
    accumulation, and ValueError when the initial state violates the initial
    mode's domain or parameters are missing/inadmissible.
    """
    if system.parameters:
        if params is None:
            raise ValueError("system is parameterized; supply parameter values")
        pvals = [float(params[p]) for p in system.parameters]
        if system.parameter_set is not None:
            pt = np.concatenate([np.zeros(len(system.variables)), pvals])
            if not system.parameter_set.contains(pt, opts.membership_tol):
                raise ValueError("parameter values outside the admissible set")
        system = system.instantiate_params(params)
    mode_id, x0 = initial
    mode_id = str(mode_id)
    mode = system.mode(mode_id)
    x = np.asarray(x0, dtype=float)
    if x.shape != (system.dimension,):
        raise ValueError("initial state dimension mismatch")
    if not mode.in_domain(x, max(opts.membership_tol, 1e-6)):
        raise ValueError(f"initial state is outside the domain of mode {mode_id}")

    taus = [0.0]
    intervals: list[Interval] = []
    warnings: list[str] = []
    guard_residuals: list[float] = []
    verdict = "horizon-reached"
    small_run = 0
    t = 0.0
    max_step = (
        opts.max_step_initial
        if not math.isnan(opts.max_step_initial)
        else opts.horizon / 64.0
    )
    floor_zeno = False

    def fld_fn(mode: Mode):
        comps = mode.field.components
        return lambda _t, state: np.array([c.evaluate(state) for c in comps])

    default_cap = opts.horizon / 64.0

    def trailing_cascade() -> bool:
        gaps = np.diff(taus)
        gaps = gaps[-3:]
        return (
            len(gaps) >= 3
            and gaps[-1] < opts.zeno_gap_tol
            and bool(np.all(np.diff(gaps) <= 0))
        )

    while True:
        monitors = [_EdgeMonitor(e) for e in system.out_edges(mode.id)]
        for mon in monitors:
            mon.observe(x)
        ts: list[float] = [t]
        xs: list[np.ndarray] = [x.copy()]
        try:
            stepper = RK45(
                fld_fn(mode), t, x, t_bound=opts.horizon,
                rtol=opts.rtol, atol=opts.atol, max_step=max_step,
            )
        except ValueError as exc:
            raise SimulationError(f"integrator setup failed: {exc}") from exc
        transitioned = False
        interval_start = t
        last_pos_gap = next(
            (g for g in reversed(np.diff(taus)) if g > 0), math.inf
        )
        while True:
            if stepper.status == "finished":
                break
            # A cascade that collapsed below the clock resolution leaves no
            # further detectable events: declare Zeno once we have flowed far
            # past where the next (ever smaller) transition was due.
            if (
                trailing_cascade()
                and stepper.t - taus[-1] > 100.0 * max(last_pos_gap, 64 * _EPS * abs(stepper.t))
            ):
                floor_zeno = True
                warnings.append(
                    "transition cascade collapsed below time resolution; "
                    "declared Zeno at the numerical floor"
                )
                break
            # Step cap was sized for the cascade; if no event arrives, grow it
            # back so quiet stretches do not crawl.
            if (
                max_step < default_cap
                and stepper.t - interval_start > 64.0 * max_step
            ):
                max_step = min(max_step * 16.0, default_cap)
                stepper = RK45(
                    fld_fn(mode), stepper.t, stepper.y, t_bound=opts.horizon,
                    rtol=opts.rtol, atol=opts.atol, max_step=max_step,
                )
                continue
            msg = stepper.step()
            if stepper.status == "failed":
                gaps = np.diff(taus)
                if len(gaps) >= 3 and gaps[-1] < opts.zeno_gap_tol and (
                    np.all(np.diff(gaps[-3:]) <= 0)
                ):
                    floor_zeno = True
                    warnings.append(
                        "integration reached the numerical floor inside a "
                        "contracting transition cascade; declared Zeno"
                    )
                    break
                raise SimulationError(f"integration failed: {msg}")
            dense = stepper.dense_output()
            t_a, t_b = dense.t_min, dense.t_max
            x_b = stepper.y
            ts.append(float(stepper.t))
            xs.append(x_b.copy())
            # divergence / neighborhood exit checks at step ends
            if float(np.linalg.norm(x_b)) > opts.divergence_radius:
                verdict = "diverged"
                break
            if opts.stop_on_neighborhood_exit and mode.neighborhood.inequalities:
                if not mode.neighborhood.contains(x_b, opts.membership_tol):
                    verdict = "left-neighborhood"
                    break
            candidates = []
            for idx, mon in enumerate(monitors):
                prev_armed, prev_sign = mon.armed, mon.sign
                h_b = mon.observe(x_b)
                if not prev_armed:
                    continue
                crossed = (prev_sign * h_b < 0.0) or (
                    h_b == 0.0 and prev_sign != 0.0
                )
                if not crossed:
                    continue
                g = lambda tt, e=mon.edge: e.guard_eq.evaluate(dense(tt))
                ga, gb = g(t_a), g(t_b)
                if ga == 0.0:
                    t_star = t_a
                elif ga * gb > 0.0:
                    continue
                else:
                    t_star = brentq(
                        g, t_a, t_b,
                        xtol=max(1e-15, 32 * _EPS * abs(t_b)), rtol=4 * _EPS,
                    )
                candidates.append((t_star, idx))
                mon.sign = math.copysign(1.0, h_b) if h_b != 0.0 else mon.sign
            if not candidates:
                continue
            candidates.sort()
            t_star, idx = candidates[0]
            near = [
                c for c in candidates[1:]
                if c[0] - t_star <= max(opts.event_tol, 64 * _EPS * abs(t_star))
            ]
            if near:
                warnings.append(
                    f"simultaneous guard crossings at t={t_star:.12g}; taking "
                    f"edge declared first"
                )
                first_idx = min(idx, *[c[1] for c in near])
                idx = first_idx
            chosen = monitors[idx]
            x_star = dense(t_star)
            if not all(
                g.evaluate(x_star) >= -opts.membership_tol
                for g in chosen.edge.guard_ineqs
            ):
                continue  # crossed the zero set outside the guard region
            x_reset = np.array(
                [c.evaluate(x_star) for c in chosen.edge.reset.components]
            )
            target = system.mode(chosen.edge.target)
            if not target.in_domain(x_reset, max(opts.membership_tol, 1e-7)):
                continue  # reset image not admissible; not a real transition
            # accepted transition
            resid = abs(chosen.edge.guard_eq.evaluate(x_star))
            guard_residuals.append(resid)
            if resid > opts.event_tol:
                warnings.append(
                    f"guard residual {resid:.2e} above event tolerance at "
                    f"t={t_star:.12g}"
                )
            while ts and ts[-1] > t_star:
                ts.pop()
                xs.pop()
            ts.append(float(t_star))
            xs.append(np.asarray(x_star, dtype=float))
            intervals.append(Interval(mode.id, np.array(ts), np.array(xs)))
            gap = float(t_star) - taus[-1]
            taus.append(float(t_star))
            small_run = small_run + 1 if gap < opts.zeno_gap_tol else 0
            t = float(t_star)
            x = x_reset
            mode = target
            transitioned = True
            # adapt the step cap to the cascade scale
            gaps = np.diff(taus)
            if len(gaps) >= 2 and gaps[-2] > 0:
                ratio = min(max(gaps[-1] / gaps[-2], 0.05), 1.0)
            else:
                ratio = 1.0
            max_step = max(gap * ratio * 0.25, 1e3 * _EPS * max(1.0, abs(t)))
            break
        if floor_zeno:
            intervals.append(Interval(mode.id, np.array(ts), np.array(xs)))
            verdict = "zeno-detected"
            break
        if not transitioned:
            if verdict == "horizon-reached" and stepper.status == "finished":
                intervals.append(Interval(mode.id, np.array(ts), np.array(xs)))
            elif verdict in ("diverged", "left-neighborhood"):
                intervals.append(Interval(mode.id, np.array(ts), np.array(xs)))
            break
        if small_run >= opts.zeno_consecutive:
            verdict = "zeno-detected"
            break
        if len(taus) - 1 >= opts.max_transitions:
            warnings.append("transition limit reached before the horizon")
            break

    execution = Execution(
        intervals=intervals,
        taus=taus,
        verdict=verdict,
        zeno_time_estimate=None,
        warnings=warnings,
        guard_residuals=guard_residuals,
    )
    if verdict == "zeno-detected":
        execution.zeno_time_estimate = zeno_time(
            execution, n_fit=opts.zeno_consecutive
        )
    return execution
