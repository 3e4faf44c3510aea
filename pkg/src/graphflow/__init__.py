"""Minimal graphs in M^n x R as long-time, vanishing-viscosity flow limits.

The package discretizes coordinate charts of a Riemannian product M^n x R,
evolves Dirichlet data by a viscosity-perturbed graphical mean curvature
flow, and drives the perturbation to zero along an eps schedule.  Barrier
certificates decide where the limit attains its boundary data and where it
detaches along a vertical portion of the boundary cylinder.

Module map: manifold (charts and metric tables), grid (lattice domains and
fields), functionals (area, perturbed energy, BV machinery), flow (the
explicit eps-flow stepper), barrier (solvability certification),
continuation (quasi-steady runs, eps limits, attainment), cli (batch runner).
"""

from .barrier import (BarrierSearchResult, BarrierSpec, SolvabilityReport,
                      boundary_crossings, boundary_lipschitz,
                      check_dirichlet_solvability, fit_boundary_graph,
                      make_barrier_spec, project_to_boundary, psi_eval,
                      q_on_barrier, q_on_barrier_fd, search_alpha)
from .continuation import (AttainmentPoint, AttainmentReport,
                           ContinuationReport, EpsLeg, TimeUniquenessResult,
                           boundary_attainment_report, eps_continuation,
                           probe_mask, run_to_quasi_steady,
                           time_sequence_uniqueness_check, trace_error)
from .errors import (BarrierError, ChartError, ConfigError, ConvergenceError,
                     EstimateViolation, FlowDiverged, FunctionalError,
                     GraphflowError, GridError)
from .flow import (DiagnosticSample, FlowParams, FlowState,
                   compatibility_ramp, flow_step, initial_state, l_eps_apply,
                   q_operator, stable_dt, write_diagnostics_csv)
from .functionals import (DiscreteSet, FunctionalReport, area,
                          area_directional_derivative, e_eps,
                          interior_integral, j_functional, mollified_set_tv,
                          product_grid, set_perimeter, subgraph_perimeter,
                          subgraph_set, total_variation,
                          vertical_rearrangement, w_factor)
from .grid import (DIRICHLET, EXTERIOR, INTERIOR, GridDomain, GridField,
                   build_domain, covariant_gradient, covariant_hessian,
                   interpolate_to, load_field_csv, save_field_csv)
from .manifold import (MetricChart, builtin_chart, chart_from_spec,
                       load_metric_table)

__version__ = "0.1.0"

__all__ = [
    "AttainmentPoint", "AttainmentReport", "BarrierError",
    "BarrierSearchResult", "BarrierSpec", "ChartError", "ConfigError",
    "ContinuationReport", "ConvergenceError", "DIRICHLET", "DiagnosticSample",
    "DiscreteSet", "EXTERIOR", "EpsLeg", "EstimateViolation", "FlowDiverged",
    "FlowParams", "FlowState", "FunctionalError", "FunctionalReport",
    "GraphflowError", "GridDomain", "GridError", "GridField", "INTERIOR",
    "MetricChart", "SolvabilityReport", "TimeUniquenessResult", "area",
    "area_directional_derivative", "boundary_attainment_report",
    "boundary_crossings", "boundary_lipschitz", "build_domain",
    "builtin_chart", "chart_from_spec", "check_dirichlet_solvability",
    "compatibility_ramp", "covariant_gradient", "covariant_hessian", "e_eps",
    "eps_continuation", "fit_boundary_graph", "flow_step", "initial_state",
    "interior_integral", "interpolate_to", "j_functional", "l_eps_apply",
    "load_field_csv", "load_metric_table", "make_barrier_spec",
    "mollified_set_tv", "probe_mask", "product_grid", "project_to_boundary",
    "psi_eval", "q_on_barrier", "q_on_barrier_fd", "q_operator",
    "run_to_quasi_steady", "save_field_csv", "search_alpha", "set_perimeter",
    "stable_dt", "subgraph_perimeter", "subgraph_set",
    "time_sequence_uniqueness_check", "total_variation", "trace_error",
    "vertical_rearrangement", "w_factor", "write_diagnostics_csv",
]
