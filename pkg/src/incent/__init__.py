"""Electricity-market incentive analysis toolkit.

Ingestion of generator inventories and dispatch-interval feeds into monthly
panels, causally ordered regression with direct/total effect tables, partial
equilibrium transfer experiments, nearest-neighbor matching, and the
robustness batteries around all of it.  The ``incent`` command line wraps
each stage; this namespace re-exports the library entry points.
"""

from .design import (
    FitResult,
    OrderedDesign,
    fit_matrix,
    gram_schmidt_residualize,
    ols_fit,
)
from .equilibrium import (
    NO_INTERVENTION,
    Driver,
    EquilibriumSolution,
    Intervention,
    MarketPrimitives,
    inverse_elasticity,
    pass_through,
    solve_competitive,
    solve_monopoly,
    solve_path,
    swap_bearers,
    verify_cancellation,
)
from .errors import NumericalError, ToolkitError, ValidationError
from .gsls import (
    CausalOrdering,
    ChainDGP,
    EffectCell,
    EffectsTable,
    Group,
    decompose_total,
    estimate_direct,
    estimate_total_gsls,
    estimator_diagnostics,
    max_cross_group_correlation,
    merge_sides,
    ordering_from_design,
    path_identity_gap,
)
from .ingest import (
    CANONICAL_GROUPS,
    build_design,
    build_monthly_panel,
    detect_entry_exit,
    load_boundary,
    load_economic,
    load_generators,
    load_intervals,
    load_panel,
    resolve_balancing_authority,
    summarize_by_incentive_state,
    tabulate_entry_exit,
    write_panel,
)
from .matching import MatchSpec, balance_report, estimate_atet, mahalanobis_match
from .robustness import (
    AR1_HORIZONS,
    AR10_HORIZONS,
    SweepGrid,
    UnderbidSpec,
    apply_filters,
    ar_gls_fit,
    covariate_sequencing,
    horizon_label,
    sweep,
    underbid_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AR10_HORIZONS",
    "AR1_HORIZONS",
    "CANONICAL_GROUPS",
    "CausalOrdering",
    "ChainDGP",
    "Driver",
    "EffectCell",
    "EffectsTable",
    "EquilibriumSolution",
    "FitResult",
    "Group",
    "Intervention",
    "MarketPrimitives",
    "MatchSpec",
    "NO_INTERVENTION",
    "NumericalError",
    "OrderedDesign",
    "SweepGrid",
    "ToolkitError",
    "UnderbidSpec",
    "ValidationError",
    "apply_filters",
    "ar_gls_fit",
    "balance_report",
    "build_design",
    "build_monthly_panel",
    "covariate_sequencing",
    "decompose_total",
    "detect_entry_exit",
    "estimate_atet",
    "estimate_direct",
    "estimate_total_gsls",
    "estimator_diagnostics",
    "fit_matrix",
    "gram_schmidt_residualize",
    "horizon_label",
    "inverse_elasticity",
    "load_boundary",
    "load_economic",
    "load_generators",
    "load_intervals",
    "load_panel",
    "mahalanobis_match",
    "max_cross_group_correlation",
    "merge_sides",
    "ols_fit",
    "ordering_from_design",
    "pass_through",
    "path_identity_gap",
    "resolve_balancing_authority",
    "solve_competitive",
    "solve_monopoly",
    "solve_path",
    "summarize_by_incentive_state",
    "swap_bearers",
    "sweep",
    "tabulate_entry_exit",
    "underbid_fit",
    "verify_cancellation",
    "write_panel",
]
