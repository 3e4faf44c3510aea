"""Vanishing-viscosity continuation toward the generalized Dirichlet solution.

Each leg runs the eps-perturbed flow to quasi-steady state, then eps is
halved and the next leg warm-starts from the previous limit.  The
double-limit structure (t -> infinity inside each leg, then eps -> 0 along
the schedule) is summarized by Cauchy gaps between successive leg limits on
an interior probe set, a boundary trace error, and a cross-time-sequence
uniqueness gap measured inside a single run.

Convergence statements live on compact interior subsets, so the probe set
excludes a 4-cell boundary collar; trace behavior at the boundary itself is
classified separately against the barrier certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, EstimateViolation
from .flow import FlowParams, FlowState, flow_step, initial_state, l_eps_apply
from .functionals import e_eps, interior_integral, total_variation, w_factor
from .grid import GridDomain, GridField

PROBE_COLLAR = 4          # probe set: interior nodes >= this many cells inside
DEFAULT_GAP_STOP = 1e-4   # default schedule stops once legs agree this well
DEFAULT_MAX_LEGS = 13     # eps_i = 0.1 * 2^-i for i = 0..12


def probe_mask(domain: GridDomain) -> np.ndarray:
    """Interior nodes at least PROBE_COLLAR cells away from the boundary."""
    mask = domain.eroded_interior(PROBE_COLLAR)
    if not mask.any():
        raise ConfigError(
            "probe set is empty: the domain has no interior nodes "
            f"{PROBE_COLLAR} cells away from the boundary")
    return mask


def run_to_quasi_steady(params: FlowParams, phi, u0: GridField,
                        tol: float) -> tuple[FlowState, bool]:
    """Step the flow until sup|u_t| drops below tol * (1 + sup|u0|).

    Returns the final state and whether the threshold was reached before
    t_end.  Stationary data converges in zero steps: the initial residual
    sup|L^eps u0| is checked before any stepping.
    """
    if tol <= 0:
        raise ConfigError(f"quasi-steady tolerance must be positive, got {tol}")
    dom = u0.domain
    # impose the t=0 boundary values before measuring the residual, so a
    # mismatch between u0 and phi counts as motion still to happen
    u_start = u0.copy()
    u_start.values[dom.dirichlet_index] = _dirichlet_values(phi, dom)
    state = initial_state(u_start, phi, params)
    threshold = tol * (1.0 + u_start.sup_abs())
    if state.sup_l0 < threshold:
        return state, True
    while state.t < params.t_end:
        flow_step(state, params)
        if state.history[-1].sup_ut < threshold:
            return state, True
    return state, False


@dataclass(frozen=True)
class EpsLeg:
    """Summary of one eps level, with a reference to its quasi-steady field.

    tv_final is the graph total variation of the leg limit, the discrete
    stand-in for the flow staying in W^{1,1}.
    """

    eps: float
    steps: int
    final_sup_ut: float
    converged: bool
    energy_final: float
    dissipation_total: float
    tv_final: float
    u_ref: GridField

    def json_dict(self) -> dict:
        return {"eps": float(self.eps), "steps": int(self.steps),
                "final_sup_ut": float(self.final_sup_ut),
                "converged": bool(self.converged),
                "energy_final": float(self.energy_final),
                "dissipation_total": float(self.dissipation_total),
                "tv_final": float(self.tv_final)}


@dataclass
class ContinuationReport:
    """Outcome of the eps schedule: leg summaries and convergence gaps."""

    eps_schedule: list
    legs: list
    cauchy_gaps: list
    trace_error: float
    converged: bool
    u_bar: GridField
    probe_count: int
    time_uniqueness_gap: float | None = None
    # per-step samples concatenated across legs; step and t restart per leg
    history: list | None = None

    def __post_init__(self):
        sched = list(self.eps_schedule)
        if any(e <= 0 for e in sched):
            raise ConfigError(f"eps schedule must be positive: {sched}")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigError(f"eps schedule must be strictly decreasing: {sched}")
        if any(g < 0 for g in self.cauchy_gaps):
            raise ConfigError("cauchy gaps must be nonnegative")

    def json_dict(self) -> dict:
        return {
            "eps_schedule": [float(e) for e in self.eps_schedule],
            "legs": [leg.json_dict() for leg in self.legs],
            "cauchy_gaps": [float(g) for g in self.cauchy_gaps],
            "trace_error": float(self.trace_error),
            "converged": bool(self.converged),
            "probe_count": int(self.probe_count),
            "time_uniqueness_gap": (None if self.time_uniqueness_gap is None
                                    else float(self.time_uniqueness_gap)),
        }


def _dirichlet_values(phi, domain: GridDomain) -> np.ndarray:
    if isinstance(phi, GridField):
        return phi.values[domain.dirichlet_index]
    return np.asarray([float(phi(p)) for p in domain.points[domain.dirichlet_index]])


def trace_error(u: GridField, phi, domain: GridDomain) -> float:
    """sup of |u - phi| over interior nodes adjacent to a dirichlet node."""
    pts = domain.points
    worst = 0.0
    seen = set()
    for idx, offset in domain.boundary_nodes:
        inner = tuple(i - o for i, o in zip(idx, offset))
        if inner in seen:
            continue
        seen.add(inner)
        if isinstance(phi, GridField):
            target = float(phi.values[inner])
        else:
            target = float(phi(pts[inner]))
        worst = max(worst, abs(float(u.values[inner]) - target))
    return worst


def eps_continuation(schedule, params: FlowParams, phi, u0: GridField,
                     tol: float = 1e-5,
                     warm_start: bool = True) -> ContinuationReport:
    """Continuation over a decreasing eps schedule.

    schedule None uses eps_i = 0.1 * 2^-i and stops once the probe-set gap
    falls below DEFAULT_GAP_STOP or after DEFAULT_MAX_LEGS legs.  Each leg
    warm-starts from the previous limit by default; warm_start False reruns
    every leg from u0, exposing any dependence on the eps sequence.  A leg
    that fails to reach quasi-steady state within t_end is recorded and
    aborts the remaining schedule.
    """
    dom = u0.domain
    dynamic = schedule is None
    if dynamic:
        sched_iter = [0.1 * 2.0 ** (-i) for i in range(DEFAULT_MAX_LEGS)]
    else:
        sched_iter = [float(e) for e in schedule]
        if not sched_iter:
            raise ConfigError("eps schedule is empty")
        if any(e <= 0 for e in sched_iter):
            raise ConfigError(f"eps schedule must be positive: {sched_iter}")
        if any(b >= a for a, b in zip(sched_iter, sched_iter[1:])):
            raise ConfigError(
                f"eps schedule must be strictly decreasing: {sched_iter}")
    probe = probe_mask(dom)

    legs = []
    used_schedule = []
    gaps = []
    prev_probe = None
    current = u0
    all_converged = True
    history = []
    for eps in sched_iter:
        leg_params = replace(params, eps=eps)
        start = current if warm_start else u0
        state, ok = run_to_quasi_steady(leg_params, phi, start, tol)
        history.extend(state.history)
        current = state.u
        if state.history:
            sup_ut = state.history[-1].sup_ut
            energy = state.history[-1].energy_eps
            diss = state.history[-1].dissipation_cum
        else:
            sup_ut = state.sup_l0
            energy = e_eps(current, eps)
            diss = 0.0
        legs.append(EpsLeg(eps=eps, steps=state.step, final_sup_ut=float(sup_ut),
                           converged=ok, energy_final=float(energy),
                           dissipation_total=float(diss),
                           tv_final=total_variation(current),
                           u_ref=current))
        used_schedule.append(eps)
        this_probe = current.values[probe]
        if prev_probe is not None:
            gaps.append(float(np.max(np.abs(this_probe - prev_probe))))
        prev_probe = this_probe
        if not ok:
            all_converged = False
            break
        if dynamic and gaps and gaps[-1] < DEFAULT_GAP_STOP:
            break

    terr = trace_error(current, phi, dom)
    return ContinuationReport(eps_schedule=used_schedule, legs=legs,
                              cauchy_gaps=gaps, trace_error=terr,
                              converged=all_converged, u_bar=current,
                              probe_count=int(probe.sum()),
                              history=history)


@dataclass(frozen=True)
class AttainmentPoint:
    """Boundary-trace behavior of the limit at one certified test point."""

    x0: list
    certified: bool
    trace_gap: float
    modulus: float
    classification: str

    def json_dict(self) -> dict:
        return {"x0": [float(c) for c in self.x0],
                "certified": bool(self.certified),
                "trace_gap": (None if self.trace_gap is None
                              else float(self.trace_gap)),
                "modulus": (None if self.modulus is None
                            else float(self.modulus)),
                "classification": self.classification}


@dataclass(frozen=True)
class AttainmentReport:
    points: list
    attained: int
    detached: int
    uncertified: int

    def json_dict(self) -> dict:
        return {"points": [p.json_dict() for p in self.points],
                "attained": int(self.attained), "detached": int(self.detached),
                "uncertified": int(self.uncertified)}


def boundary_attainment_report(u_bar: GridField, phi,
                               solvability) -> AttainmentReport:
    """Classify each certified boundary point as attained or detached.

    For every barrier verdict point: the trace gap is the worst
    |u_bar - phi| over inner neighbors of nearby dirichlet nodes, the
    modulus is the observed linear rate of u_bar's approach to phi(x0)
    within the fit window, and the classification is attained when the
    certified trace gap stays within a 10h band.
    """
    dom = u_bar.domain
    h_max = float(np.max(dom.h))
    pts = dom.points
    inner_of = {}
    for idx, offset in dom.boundary_nodes:
        inner_of[idx] = tuple(i - o for i, o in zip(idx, offset))

    def phi_at(idx):
        if isinstance(phi, GridField):
            return float(phi.values[idx])
        return float(phi(pts[idx]))

    interior_pts = pts[dom.interior]
    interior_vals = u_bar.values[dom.interior]

    out = []
    attained = detached = uncertified = 0
    for p in solvability.points:
        x0 = np.asarray(p.x0, dtype=float)
        gap = 0.0
        phi0 = None
        for idx, inner in inner_of.items():
            if np.max(np.abs(pts[idx] - x0)) <= 1.5 * h_max:
                val = phi_at(idx)
                gap = max(gap, abs(float(u_bar.values[inner]) - val))
                if phi0 is None or np.max(np.abs(pts[idx] - x0)) < 1e-12:
                    phi0 = val
        if phi0 is None:
            phi0 = 0.0
        d = np.linalg.norm(interior_pts - x0, axis=1)
        near = d <= 4.0 * h_max
        if near.any():
            modulus = float(np.max(np.abs(interior_vals[near] - phi0) / d[near]))
        else:
            modulus = float("nan")
        if not p.certified:
            label = "uncertified"
            uncertified += 1
        elif gap <= 10.0 * h_max:
            label = "attained"
            attained += 1
        else:
            label = "detached"
            detached += 1
        out.append(AttainmentPoint(
            x0=[float(c) for c in x0], certified=bool(p.certified),
            trace_gap=float(gap), modulus=modulus, classification=label))
    return AttainmentReport(points=out, attained=attained, detached=detached,
                            uncertified=uncertified)


@dataclass(frozen=True)
class TimeUniquenessResult:
    """Gap between two time-sequence limits sampled from one run."""

    gap: float
    times_a: list
    times_b: list
    source_norms: list

    def json_dict(self) -> dict:
        return {"gap": float(self.gap),
                "times_a": [float(t) for t in self.times_a],
                "times_b": [float(t) for t in self.times_b],
                "source_norms": [float(s) for s in self.source_norms]}


def _source_norm(u: GridField, eps: float) -> float:
    """integral of (L^eps u / W)^2 dV, the stationarity defect density."""
    dom = u.domain
    rhs = l_eps_apply(u, eps)
    w = w_factor(u)
    dens = np.zeros(dom.shape)
    ii = dom.interior_index
    dens[ii] = (rhs.values[ii] / w.values[ii]) ** 2
    return interior_integral(dom, dens)


def time_sequence_uniqueness_check(params: FlowParams, phi, u0: GridField,
                                   times_a, times_b) -> TimeUniquenessResult:
    """Compare the flow limits extracted along two time sequences.

    One run, snapshots at every requested time (first step crossing it),
    last-iterate limits on the probe set.  Also checks that the stationarity
    defect norms decrease along the sampled times, as the dissipation bound
    demands; a violation raises EstimateViolation.
    """
    times_a = sorted(float(t) for t in times_a)
    times_b = sorted(float(t) for t in times_b)
    if not times_a or not times_b:
        raise ConfigError("both time sequences must be nonempty")
    horizon = max(times_a[-1], times_b[-1])
    if horizon > params.t_end:
        raise ConfigError(
            f"time sequences reach {horizon}, beyond the horizon {params.t_end}")

    wanted = sorted(set(times_a) | set(times_b))
    dom = u0.domain
    probe = probe_mask(dom)
    state = initial_state(u0, phi, params)
    snaps = {}
    k = 0
    while k < len(wanted):
        if state.t >= wanted[k]:
            snaps[wanted[k]] = state.u.copy()
            k += 1
            continue
        flow_step(state, params)
    norms = [(t, _source_norm(snaps[t], params.eps)) for t in wanted]
    slack = 1e-12 + 1e-9 * norms[0][1]
    for (t0, n0), (t1, n1) in zip(norms, norms[1:]):
        if n1 > n0 + slack:
            raise EstimateViolation(
                f"stationarity defect rose from {n0} at t={t0} to {n1} at t={t1}")
    ua = snaps[times_a[-1]].values[probe]
    ub = snaps[times_b[-1]].values[probe]
    gap = float(np.max(np.abs(ua - ub)))
    return TimeUniquenessResult(gap=gap, times_a=times_a, times_b=times_b,
                                source_norms=[n for _, n in norms])
