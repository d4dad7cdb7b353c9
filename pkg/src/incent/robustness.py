"""Sensitivity analyses around the capacity and underbidding estimates.

Four entry points: ``underbid_fit`` (interval-level price response),
``ar_gls_fit`` (same, with lagged-error regressors), ``covariate_sequencing``
(nested covariate ladders on the monthly panel), and ``sweep`` (the full
lag x fixed-effects x polynomial grid).  Exclusion filters compose by
intersection and never alter surviving rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import FitResult, OrderedDesign, fit_matrix, ols_fit
from .errors import (
    InsufficientHistory,
    ToolkitError,
    ValidationError,
)
from .gsls import (
    CausalOrdering,
    EffectsTable,
    estimate_direct,
    estimate_total_gsls,
    ordering_from_design,
)
from .ingest import CANONICAL_GROUPS, build_design

# Covariate blocks of the interval-level price equation, in causal order:
# installed capacity is fixed before weather realises, weather before the
# fuel price, fuel price before dispatch quantities, and the incentive pair
# reacts to everything upstream of it.
INTERVAL_GROUPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("capacities", ("cap_ng_gw", "cap_renewables_gw", "cap_other_gw")),
    ("climate", ("temperature", "temp_sq", "wind_speed")),
    ("fuel_price", ("natural_gas_price",)),
    ("supplies", ("supply_ng_gw", "supply_renewables_gw", "supply_other_gw",
                  "reserves_gw", "capacity_utilization")),
)

INTERVAL_COVARIATES: tuple[str, ...] = tuple(
    col for _, cols in INTERVAL_GROUPS for col in cols
)

AR1_HORIZONS: tuple[int, ...] = (1,)
AR10_HORIZONS: tuple[int, ...] = (1, 2, 3, 4, 5, 96, 192, 288, 384, 480)

FILTER_NAMES = ("storm_uri", "price_cap")
PRICE_CAP_THRESHOLD = 7_000.0

_FIXED_EFFECT_NAMES = ("annual", "seasonal", "hourly")


@dataclass(frozen=True)
class UnderbidSpec:
    """Configuration of one interval-level price regression."""

    fixed_effects: tuple[str, ...] = ("annual", "seasonal")
    covariates: tuple[str, ...] = INTERVAL_COVARIATES
    filters: tuple[str, ...] = ()
    ar_horizons: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        unknown = set(self.fixed_effects) - set(_FIXED_EFFECT_NAMES)
        if unknown:
            raise ValidationError(f"unknown fixed-effect sets: {sorted(unknown)}")
        unknown = set(self.filters) - set(FILTER_NAMES)
        if unknown:
            raise ValidationError(f"unknown exclusion filters: {sorted(unknown)}")
        unknown = set(self.covariates) - set(INTERVAL_COVARIATES)
        if unknown:
            raise ValidationError(f"unknown interval covariates: {sorted(unknown)}")
        for h in self.ar_horizons:
            if not isinstance(h, (int, np.integer)) or isinstance(h, bool) or h < 1:
                raise ValidationError(
                    f"AR horizons must be positive whole grid steps, got {h!r}"
                )
        if len(set(self.ar_horizons)) != len(self.ar_horizons):
            raise ValidationError("AR horizons must not repeat")


def apply_filters(intervals: pd.DataFrame, filters: tuple[str, ...]) -> pd.DataFrame:
    """Drop excluded rows; everything kept passes through untouched.

    ``storm_uri`` removes every February 2021 timestamp and ``price_cap``
    removes rows whose total payment (price plus incentive) exceeds
    7,000 currency/MW.  Filters intersect, so order does not matter.
    """
    unknown = set(filters) - set(FILTER_NAMES)
    if unknown:
        raise ValidationError(f"unknown exclusion filters: {sorted(unknown)}")
    keep = pd.Series(True, index=intervals.index)
    ts = pd.to_datetime(intervals["timestamp"])
    if "storm_uri" in filters:
        keep &= ~((ts.dt.year == 2021) & (ts.dt.month == 2))
    if "price_cap" in filters:
        keep &= (intervals["energy_price"] + intervals["incentive"]) <= PRICE_CAP_THRESHOLD
    return intervals.loc[keep]


def horizon_label(steps: int, grid_minutes: int = 15) -> str:
    """Human label for a lag of ``steps`` grid intervals ("45min", "24hr")."""
    if steps < 1:
        raise ValidationError("horizon must be at least one grid step")
    minutes = steps * grid_minutes
    if minutes % 1_440 == 0:
        return f"{minutes // 60}hr"
    return f"{minutes}min"


def _grid_minutes(timestamps: pd.Series) -> int:
    ts = pd.to_datetime(timestamps)
    deltas = ts.diff().dropna()
    if deltas.empty:
        raise ValidationError("need at least two intervals to infer the grid")
    step = deltas.iloc[0]
    if not (deltas == step).all():
        raise ValidationError(
            "interval grid must be contiguous for lagged-error construction"
        )
    return int(step.total_seconds() // 60)


def _dummy_columns(values: pd.Series, prefix: str) -> pd.DataFrame:
    frame = pd.get_dummies(values, prefix=prefix, prefix_sep="_", dtype=float)
    frame = frame.reindex(sorted(frame.columns), axis=1)
    return frame.iloc[:, 1:]  # first level is the base


def _interval_design(
    work: pd.DataFrame,
    spec: UnderbidSpec,
    ar_labels: tuple[str, ...] = (),
) -> tuple[OrderedDesign, CausalOrdering]:
    """Assemble the ordered design for one interval regression.

    Column order: intercept, calendar dummies, the INTERVAL_GROUPS blocks
    (lagged-error columns slot in after the fuel price), then the two
    incentive terms and the price.
    """
    n = len(work)
    if n < 2:
        raise ValidationError("interval regression needs at least two rows")
    ts = pd.to_datetime(work["timestamp"])
    matrices: list[np.ndarray] = [np.ones((n, 1))]
    names: list[str] = ["const"]
    gids: list[int] = [0]
    next_gid = 1

    calendar = (
        ("annual", ts.dt.year.astype(str), "year"),
        ("seasonal", ts.dt.month.map("{:02d}".format), "month"),
        ("hourly", ts.dt.hour.map("{:02d}".format), "hour"),
    )
    for fe_name, levels, prefix in calendar:
        if fe_name not in spec.fixed_effects:
            continue
        block = _dummy_columns(levels, prefix)
        if block.shape[1]:
            matrices.append(block.to_numpy())
            names.extend(block.columns)
            gids.extend([next_gid] * block.shape[1])
            next_gid += 1

    def append_group(cols: list[str]) -> None:
        nonlocal next_gid
        values = work[cols].to_numpy(dtype=float)
        if np.isnan(values).any():
            bad = [c for c in cols if work[c].isna().any()]
            raise ValidationError(f"interval covariates contain missing values: {bad}")
        matrices.append(values)
        names.extend(cols)
        gids.extend([next_gid] * len(cols))
        next_gid += 1

    for group_name, cols in INTERVAL_GROUPS:
        chosen = [c for c in cols if c in spec.covariates]
        if chosen:
            append_group(chosen)
        if group_name == "fuel_price" and ar_labels:
            append_group([f"ar_error_{label}" for label in ar_labels])

    append_group(["incentive_active"])
    append_group(["incentive"])

    y = work["energy_price"].to_numpy(dtype=float).reshape(-1, 1)
    matrices.append(y)
    names.append("energy_price")
    gids.append(next_gid)

    design = OrderedDesign(np.hstack(matrices), names, gids)
    ordering = ordering_from_design(design, chain=("incentive_active", "incentive"))
    return design, ordering


@dataclass
class UnderbidResult:
    """Direct and total price-response tables plus the combined offset."""

    direct: EffectsTable
    total: EffectsTable
    combined_offset: float
    mean_active_incentive: float
    n_obs: int
    spec: UnderbidSpec
    ar_labels: tuple[str, ...] = ()
    design: OrderedDesign | None = field(default=None, repr=False)
    ordering: CausalOrdering | None = field(default=None, repr=False)

    @property
    def active_effect(self) -> float:
        return self.direct.effect("energy_price", "incentive_active").estimate

    @property
    def payment_effect(self) -> float:
        return self.direct.effect("energy_price", "incentive").estimate


def _prepare_intervals(intervals: pd.DataFrame, spec: UnderbidSpec) -> pd.DataFrame:
    required = ["timestamp", "energy_price", "incentive", *spec.covariates]
    missing = [c for c in required if c not in intervals.columns]
    if missing:
        raise ValidationError(f"interval table lacks columns: {missing}")
    work = intervals.sort_values("timestamp").reset_index(drop=True).copy()
    work["incentive_active"] = (work["incentive"] > 0).astype(float)
    return work


def _finish(
    work: pd.DataFrame,
    spec: UnderbidSpec,
    ar_labels: tuple[str, ...],
) -> UnderbidResult:
    design, ordering = _interval_design(work, spec, ar_labels)
    direct = estimate_direct(design, ordering)
    total = estimate_total_gsls(design, ordering)
    active = work.loc[work["incentive"] > 0, "incentive"]
    mean_active = float(active.mean()) if len(active) else 0.0
    beta1 = direct.effect("energy_price", "incentive_active").estimate
    beta2 = direct.effect("energy_price", "incentive").estimate
    return UnderbidResult(
        direct=direct,
        total=total,
        combined_offset=beta1 + beta2 * mean_active,
        mean_active_incentive=mean_active,
        n_obs=len(work),
        spec=spec,
        ar_labels=ar_labels,
        design=design,
        ordering=ordering,
    )


def underbid_fit(intervals: pd.DataFrame, spec: UnderbidSpec | None = None) -> UnderbidResult:
    """Fixed and proportional price responses to the incentive.

    The price equation regresses each interval's energy price on the
    configured covariates, an active-incentive indicator, and the incentive
    payment itself.  Direct coefficients come from plain least squares and
    total ones from the grouped orthogonalisation, mirroring the two columns
    of the capacity tables.
    """
    spec = spec or UnderbidSpec()
    work = _prepare_intervals(intervals, spec)
    work = apply_filters(work, spec.filters).reset_index(drop=True)
    return _finish(work, spec, ())


def ar_gls_fit(intervals: pd.DataFrame, spec: UnderbidSpec) -> UnderbidResult:
    """Two-stage refit with lagged stage-one residuals as regressors.

    Stage one runs the plain price regression on the filtered sample.  Its
    coefficient vector then prices every row of the contiguous grid, and the
    resulting residuals, shifted by each configured horizon, enter stage two
    as one extra covariate group.  Rows too early to have a full lag history
    drop out; filtered-out rows still contribute lag values to their
    successors.
    """
    if not spec.ar_horizons:
        raise ValidationError("ar_gls_fit needs at least one AR horizon")
    work_full = _prepare_intervals(intervals, spec)
    grid_minutes = _grid_minutes(work_full["timestamp"])
    max_h = max(spec.ar_horizons)
    if max_h >= len(work_full):
        raise InsufficientHistory(
            f"AR horizon {max_h} needs more than {len(work_full)} grid rows"
        )

    stage1_rows = apply_filters(work_full, spec.filters).reset_index(drop=True)
    stage1_design, _ = _interval_design(stage1_rows, spec, ())
    stage1 = ols_fit(stage1_design)

    full_x = np.column_stack(
        [_column_on_frame(name, work_full) for name in stage1.x_names]
    )
    resid_full = work_full["energy_price"].to_numpy(dtype=float) - full_x @ stage1.coef

    labels = tuple(horizon_label(h, grid_minutes) for h in spec.ar_horizons)
    with_lags = work_full.copy()
    for h, label in zip(spec.ar_horizons, labels):
        col = np.full(len(with_lags), np.nan)
        col[h:] = resid_full[:-h]
        with_lags[f"ar_error_{label}"] = col
    with_lags = with_lags.iloc[max_h:].reset_index(drop=True)
    with_lags = apply_filters(with_lags, spec.filters).reset_index(drop=True)
    return _finish(with_lags, spec, labels)


def _column_on_frame(name: str, frame: pd.DataFrame) -> np.ndarray:
    """Rebuild one named design column on an arbitrary interval frame."""
    n = len(frame)
    if name == "const":
        return np.ones(n)
    for prefix, accessor in (
        ("year_", lambda ts: ts.dt.year.astype(str)),
        ("month_", lambda ts: ts.dt.month.map("{:02d}".format)),
        ("hour_", lambda ts: ts.dt.hour.map("{:02d}".format)),
    ):
        if name.startswith(prefix):
            level = name[len(prefix):]
            ts = pd.to_datetime(frame["timestamp"])
            return (accessor(ts) == level).to_numpy(dtype=float)
    return frame[name].to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# Covariate-sequencing ladder on the monthly panel.

LADDER_GROUPS: tuple[str, ...] = (
    "annual", "seasonal", "climatic", "economic", "upstream_market",
    "downstream_market",
)

STORM_URI_MONTH = "2021-02"

_LADDER_FILTERS = ("storm_uri",)


def _ladder_column_sets() -> dict[str, tuple[str, ...]]:
    canon = dict(CANONICAL_GROUPS)
    return {
        "climatic": canon["climatic"],
        "economic": canon["economic"],
        "upstream_market": canon["upstream_market"],
        # the ladder folds the applicant pools and phases into the
        # downstream block, unlike the structural ordering
        "downstream_market": (
            canon["downstream_market"]
            + canon["applicant_pools"]
            + canon["status_phases"]
        ),
    }


def _gaussian_loglik(rss: float, n: int) -> float:
    return -0.5 * n * (math.log(2.0 * math.pi) + math.log(rss / n) + 1.0)


def _fit_statistics(fit: FitResult) -> dict[str, float]:
    n = fit.nobs
    k = len(fit.x_names)
    ll = _gaussian_loglik(fit.rss, n)
    # information criteria count the residual variance as one extra
    # parameter, matching the usual regression-table convention
    aic = 2.0 * (k + 1) - 2.0 * ll
    bic = math.log(n) * (k + 1) - 2.0 * ll
    r2 = fit.r_squared
    if fit.dof > 0 and k > 1 and r2 < 1.0:
        f_stat = (r2 / (k - 1)) / ((1.0 - r2) / (n - k))
    else:
        f_stat = float("nan")
    return {
        "r_squared": r2,
        "adj_r_squared": fit.adj_r_squared,
        "aic": aic,
        "bic": bic,
        "f_stat": f_stat,
    }


def _stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def covariate_sequencing(
    panel: pd.DataFrame,
    outcome: str,
    lag: int = 12,
    filter_sets: tuple[tuple[str, ...], ...] = ((), ("storm_uri",)),
    rolling_months: int = 12,
) -> pd.DataFrame:
    """Incentive coefficient across nested covariate prefixes.

    Step k regresses the outcome on the intercept, the first k ladder
    blocks, and the incentive; the last step is therefore the full direct
    equation.  Every step repeats once per filter set.
    """
    for fset in filter_sets:
        unknown = set(fset) - set(_LADDER_FILTERS)
        if unknown:
            raise ValidationError(f"unknown panel filters: {sorted(unknown)}")
    column_sets = _ladder_column_sets()
    rows: list[dict] = []
    for fset in filter_sets:
        drop = (STORM_URI_MONTH,) if "storm_uri" in fset else ()
        design, _ = build_design(
            panel, outcome, lag=lag, rolling_months=rolling_months, drop_months=drop
        )
        positions = {name: j for j, name in enumerate(design.column_names)}
        outcome_idx = positions[outcome]
        for step in range(1, len(LADDER_GROUPS) + 1):
            included = LADDER_GROUPS[:step]
            x_idx = [positions["const"]]
            for block in included:
                if block == "annual":
                    chosen = [n for n in design.column_names if n.startswith("year_")]
                elif block == "seasonal":
                    chosen = [n for n in design.column_names if n.startswith("month_")]
                else:
                    chosen = [n for n in column_sets[block] if n in positions]
                x_idx.extend(positions[n] for n in chosen)
            x_idx.append(positions["incentive"])
            fit = ols_fit(design, y_index=outcome_idx, x_indices=sorted(x_idx))
            stats = _fit_statistics(fit)
            p = fit.p_value_of("incentive")
            rows.append(
                {
                    "step": step,
                    "groups": "+".join(included),
                    "filters": "+".join(fset) if fset else "none",
                    "coefficient": fit.coefficient("incentive"),
                    "std_error": fit.standard_error("incentive"),
                    "p_value": p,
                    "stars": _stars(p),
                    "n_obs": fit.nobs,
                    **stats,
                }
            )
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# The lag x fixed-effects x polynomial sweep.

HISTOGRAM_EDGES: np.ndarray = np.linspace(-1.0, 1.0, 41)


@dataclass(frozen=True)
class SweepGrid:
    """Model grid swept for each outcome; defaults give 37*3*2 = 222 fits."""

    lags: tuple[int, ...] = tuple(range(37))
    fixed_effect_sets: tuple[tuple[str, ...], ...] = (
        (),
        ("annual",),
        ("annual", "seasonal"),
    )
    temperature_polynomial: tuple[bool, ...] = (False, True)
    outcomes: tuple[str, ...] = ("cap_ng_mw", "cap_renewables_mw")

    def __post_init__(self) -> None:
        if not self.lags or not self.fixed_effect_sets or not self.temperature_polynomial:
            raise ValidationError("sweep grid dimensions must be non-empty")
        if len(set(self.lags)) != len(self.lags):
            raise ValidationError("sweep lags must not repeat")
        if any(lag < 0 for lag in self.lags):
            raise ValidationError("sweep lags must be non-negative")
        if not self.outcomes:
            raise ValidationError("sweep needs at least one outcome")

    @property
    def models_per_outcome(self) -> int:
        return len(self.lags) * len(self.fixed_effect_sets) * len(self.temperature_polynomial)


def _fe_label(fixed_effects: tuple[str, ...]) -> str:
    return "+".join(fixed_effects) if fixed_effects else "none"


@dataclass
class SweepResult:
    models: pd.DataFrame
    histogram: pd.DataFrame
    positive_significant: dict[str, int] = field(default_factory=dict)


def sweep(
    panel: pd.DataFrame,
    grid: SweepGrid | None = None,
    rolling_months: int = 12,
) -> SweepResult:
    """Signed incentive p-values over every grid cell.

    Rows enumerate lag-major, fixed-effects next, polynomial flag innermost;
    a failed cell records its error and the sweep moves on.  The histogram
    bins signed p-values (sign of the coefficient times its p-value) in 0.05
    steps, the resolution of the headline significance count.
    """
    grid = grid or SweepGrid()
    rows: list[dict] = []
    for outcome in grid.outcomes:
        for lag in grid.lags:
            for fixed_effects in grid.fixed_effect_sets:
                for poly in grid.temperature_polynomial:
                    row = {
                        "outcome": outcome,
                        "lag": lag,
                        "fixed_effects": _fe_label(fixed_effects),
                        "temperature_polynomial": poly,
                        "n_obs": 0,
                        "coefficient": float("nan"),
                        "std_error": float("nan"),
                        "p_value": float("nan"),
                        "signed_p": float("nan"),
                        "status": "ok",
                    }
                    try:
                        design, _ = build_design(
                            panel,
                            outcome,
                            lag=lag,
                            fixed_effects=fixed_effects,
                            temperature_polynomial=poly,
                            rolling_months=rolling_months,
                        )
                        fit = ols_fit(design)
                        coef = fit.coefficient("incentive")
                        p = fit.p_value_of("incentive")
                        row.update(
                            n_obs=fit.nobs,
                            coefficient=coef,
                            std_error=fit.standard_error("incentive"),
                            p_value=p,
                            signed_p=float(np.sign(coef)) * p,
                        )
                    except ToolkitError as exc:
                        row["status"] = f"{type(exc).__name__}: {exc}"
                    rows.append(row)
    models = pd.DataFrame(rows)

    hist_rows: list[dict] = []
    positive_significant: dict[str, int] = {}
    for outcome in grid.outcomes:
        sub = models[(models["outcome"] == outcome) & (models["status"] == "ok")]
        counts, edges = np.histogram(sub["signed_p"].to_numpy(), bins=HISTOGRAM_EDGES)
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            hist_rows.append(
                {
                    "outcome": outcome,
                    "bin_left": float(left),
                    "bin_right": float(right),
                    "count": int(count),
                }
            )
        positive_significant[outcome] = int(
            ((sub["coefficient"] > 0) & (sub["p_value"] < 0.05)).sum()
        )
    return SweepResult(
        models=models,
        histogram=pd.DataFrame(hist_rows),
        positive_significant=positive_significant,
    )
