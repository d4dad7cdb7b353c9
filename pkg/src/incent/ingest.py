"""Generator-inventory and real-time market ingestion.

Loaders validate CSV schemas and invariants, the entry/exit state machine
turns monthly status sequences into events, and the panel builders assemble
the monthly estimation table and its ordered design.

Status vocabulary (EIA monthly inventory codes):

    applicant phases  P, L, T, U, V, TS   (indexed 1 through 6)
    active            OP (operating), SB (stand-by/backup)
    retained          active plus OA (out of service, expected back
                      within the calendar year)
    exits             OS (out of service, not expected back), RE (retired)

Fuel categories: NG, Renewables (wind and solar), Other.  The mapping ships
as data and callers may override it.
"""

from __future__ import annotations

import re
import warnings
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from .design import OrderedDesign
from .errors import (
    AccountingMismatch,
    InsufficientHistory,
    MissingBoundary,
    SchemaError,
    ValidationError,
)
from .gsls import CausalOrdering, ordering_from_design

APPLICANT_PHASES = ("P", "L", "T", "U", "V", "TS")
PHASE_INDEX = {code: i + 1 for i, code in enumerate(APPLICANT_PHASES)}
ACTIVE_STATUSES = frozenset({"OP", "SB"})
RETAINED_STATUSES = ACTIVE_STATUSES | {"OA"}
EXIT_STATUSES = frozenset({"OS", "RE"})
KNOWN_STATUSES = frozenset(APPLICANT_PHASES) | RETAINED_STATUSES | EXIT_STATUSES

CATEGORY_NG = "NG"
CATEGORY_RENEWABLES = "Renewables"
CATEGORY_OTHER = "Other"
CATEGORIES = (CATEGORY_NG, CATEGORY_RENEWABLES, CATEGORY_OTHER)

# fuel technology code -> capacity category; anything unlisted is Other
DEFAULT_FUEL_CATEGORIES: dict[str, str] = {
    "NG": CATEGORY_NG,
    "WND": CATEGORY_RENEWABLES,
    "SUN": CATEGORY_RENEWABLES,
}

_MONTH_RE = re.compile(r"^\d{4}-\d{2}$")


class UnknownStatusWarning(UserWarning):
    """A status code outside the vocabulary; the record keeps prior state."""


def fuel_category(code: str, overrides: Mapping[str, str] | None = None) -> str:
    table = dict(DEFAULT_FUEL_CATEGORIES)
    if overrides:
        table.update(overrides)
    return table.get(str(code).upper(), CATEGORY_OTHER)


def _require_columns(frame: pd.DataFrame, required: Iterable[str], where: str) -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{where}: missing columns {missing}")


def _check_months(series: pd.Series, where: str) -> None:
    bad = [m for m in series.astype(str) if not _MONTH_RE.match(m)]
    if bad:
        raise SchemaError(f"{where}: months must look like YYYY-MM, got {bad[:3]}")


# -- generator inventory ----------------------------------------------------------


def validate_generators(
    frame: pd.DataFrame,
    fuel_map: Mapping[str, str] | None = None,
    min_capacity_mw: float = 1.0,
    window: tuple[str, str] | None = None,
) -> pd.DataFrame:
    """Check the inventory schema and apply the sample filters.

    Adds a ``category`` column from the fuel code, drops sub-threshold
    capacity, and restricts to the month window when one is given.
    """
    required = ["generator_id", "plant_id", "month", "capacity_mw", "status", "fuel"]
    _require_columns(frame, required, "generator inventory")
    out = frame.copy()
    out["month"] = out["month"].astype(str)
    _check_months(out["month"], "generator inventory")
    for optional in ("balancing_authority", "latitude", "longitude",
                     "first_operation_date", "retirement_date"):
        if optional not in out.columns:
            out[optional] = pd.NA
    if (out["capacity_mw"] <= 0).any():
        raise ValidationError("generator inventory: capacity must be positive")
    out = out[out["capacity_mw"] >= min_capacity_mw]
    if window is not None:
        lo, hi = window
        out = out[(out["month"] >= lo) & (out["month"] <= hi)]
    out["category"] = [fuel_category(f, fuel_map) for f in out["fuel"]]
    return out.sort_values(["plant_id", "generator_id", "month"]).reset_index(drop=True)


def load_generators(
    path: str | Path,
    fuel_map: Mapping[str, str] | None = None,
    min_capacity_mw: float = 1.0,
    window: tuple[str, str] | None = None,
) -> pd.DataFrame:
    return validate_generators(
        pd.read_csv(path), fuel_map=fuel_map,
        min_capacity_mw=min_capacity_mw, window=window,
    )


def load_boundary(path: str | Path) -> list[tuple[float, float]]:
    """Read a polygon as plain-text lon/lat pairs, one vertex per line."""
    points: list[tuple[float, float]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise SchemaError(f"boundary file: expected 'lon lat', got {raw!r}")
        points.append((float(parts[0]), float(parts[1])))
    if len(points) < 3:
        raise SchemaError("boundary file: a polygon needs at least 3 vertices")
    return points


def point_in_polygon(lon: float, lat: float, polygon: Sequence[tuple[float, float]]) -> bool:
    """Even-odd ray casting; boundary points count as inside on the left edge."""
    inside = False
    n = len(polygon)
    for k in range(n):
        x1, y1 = polygon[k]
        x2, y2 = polygon[(k + 1) % n]
        if (y1 > lat) != (y2 > lat):
            x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
            if lon < x_cross:
                inside = not inside
    return inside


def resolve_balancing_authority(
    frame: pd.DataFrame,
    boundary: Sequence[tuple[float, float]] | None = None,
    region_code: str = "ERCO",
) -> pd.DataFrame:
    """Fill null balancing-authority codes and drop unresolvable records.

    Within a plant, a null takes the code of the nearest non-null
    observation, preferring future months.  Records still null are assigned
    ``region_code`` when their coordinates fall inside the boundary polygon,
    and excluded otherwise.
    """
    out = frame.sort_values(["plant_id", "month"]).reset_index(drop=True)
    ba = out["balancing_authority"]
    # prefer future observations, then past
    filled = ba.groupby(out["plant_id"]).transform(lambda s: s.bfill().ffill())
    out["balancing_authority"] = filled
    null = out["balancing_authority"].isna()
    if null.any():
        has_coords = null & out["latitude"].notna() & out["longitude"].notna()
        if has_coords.any():
            if boundary is None:
                raise MissingBoundary(
                    f"{int(has_coords.sum())} records need the geographic "
                    "fallback but no boundary polygon was supplied"
                )
            hit = [
                point_in_polygon(float(lon), float(lat), boundary)
                for lon, lat in zip(out.loc[has_coords, "longitude"],
                                    out.loc[has_coords, "latitude"])
            ]
            idx = out.index[has_coords][hit]
            out.loc[idx, "balancing_authority"] = region_code
    out = out[out["balancing_authority"].notna()]
    return out.sort_values(["plant_id", "generator_id", "month"]).reset_index(drop=True)


# -- entry and exit ---------------------------------------------------------------


def detect_entry_exit(frame: pd.DataFrame) -> pd.DataFrame:
    """One entry/exit event stream per generator.

    A generator is present at the start if its initial-month status is
    retained.  Entry is the first later month with an active status; exit is
    the first later month where the status leaves the retained set (a return
    to the applicant pool counts).  Spells may repeat.  Unknown codes warn
    and leave the state unchanged.
    """
    _require_columns(frame, ["generator_id", "month", "capacity_mw", "status", "category"],
                     "entry/exit detection")
    if frame.empty:
        return pd.DataFrame(columns=["generator_id", "month", "kind", "capacity_mw", "category"])
    initial_month = frame["month"].min()
    events: list[dict] = []
    for gen_id, records in frame.sort_values("month").groupby("generator_id", sort=False):
        first = records.iloc[0]
        present = first["month"] == initial_month and first["status"] in RETAINED_STATUSES
        for rec in records.itertuples(index=False):
            status = rec.status
            if status not in KNOWN_STATUSES:
                warnings.warn(
                    f"generator {gen_id}: unknown status code {status!r} in "
                    f"{rec.month}; state kept",
                    UnknownStatusWarning,
                    stacklevel=2,
                )
                continue
            if rec.month == initial_month:
                continue
            if not present and status in ACTIVE_STATUSES:
                events.append(
                    {"generator_id": gen_id, "month": rec.month, "kind": "entry",
                     "capacity_mw": float(rec.capacity_mw), "category": rec.category}
                )
                present = True
            elif present and status not in RETAINED_STATUSES:
                events.append(
                    {"generator_id": gen_id, "month": rec.month, "kind": "exit",
                     "capacity_mw": float(rec.capacity_mw), "category": rec.category}
                )
                present = False
    events.sort(key=lambda e: (e["month"], str(e["generator_id"])))
    return pd.DataFrame(events, columns=["generator_id", "month", "kind", "capacity_mw", "category"])


def _section_rows(section: str, members: pd.DataFrame) -> list[dict]:
    rows = []
    grand_total = float(members["capacity_mw"].sum()) if len(members) else 0.0
    for cat in CATEGORIES:
        sub = members[members["category"] == cat]
        total = float(sub["capacity_mw"].sum())
        rows.append(
            {
                "section": section,
                "category": cat,
                "count": int(len(sub)),
                "mean_mw": total / len(sub) if len(sub) else 0.0,
                "total_mw": total,
                "share": total / grand_total if grand_total else 0.0,
            }
        )
    rows.append(
        {
            "section": section,
            "category": "All",
            "count": int(len(members)),
            "mean_mw": grand_total / len(members) if len(members) else 0.0,
            "total_mw": grand_total,
            "share": 1.0 if grand_total else 0.0,
        }
    )
    return rows


def tabulate_entry_exit(
    events: pd.DataFrame,
    frame: pd.DataFrame,
    tolerance_mw: float = 0.1,
) -> pd.DataFrame:
    """Initial/Entrants/Exits/Final accounting by category.

    The stock identity final = initial + entries - exits must hold exactly
    for counts and within ``tolerance_mw`` for megawatts; a violation (for
    example capacity revised mid-sample without a status change) raises
    AccountingMismatch.
    """
    initial_month = frame["month"].min()
    first_rows = frame[frame["month"] == initial_month]
    initial = first_rows[first_rows["status"].isin(RETAINED_STATUSES)]
    initial = initial[["generator_id", "capacity_mw", "category"]]

    entries = events[events["kind"] == "entry"]
    exits = events[events["kind"] == "exit"]

    # replay presence per generator to determine the final stock
    present: dict = {
        gid: True for gid in initial["generator_id"]
    }
    for ev in events.sort_values("month").itertuples(index=False):
        present[ev.generator_id] = ev.kind == "entry"
    final_ids = {gid for gid, flag in present.items() if flag}
    last = frame.sort_values("month").groupby("generator_id", sort=False).tail(1)
    final = last[last["generator_id"].isin(final_ids)][["generator_id", "capacity_mw", "category"]]

    rows = (
        _section_rows("Initial", initial)
        + _section_rows("Entrants", entries)
        + _section_rows("Exits", exits)
        + _section_rows("Final", final)
    )
    table = pd.DataFrame(rows)

    for cat in CATEGORIES:
        by = {s: table[(table.section == s) & (table.category == cat)].iloc[0] for s in
              ("Initial", "Entrants", "Exits", "Final")}
        count_gap = by["Final"]["count"] - (
            by["Initial"]["count"] + by["Entrants"]["count"] - by["Exits"]["count"]
        )
        if count_gap != 0:
            raise AccountingMismatch(
                f"{cat}: final count off by {count_gap} against initial + entries - exits"
            )
        mw_gap = by["Final"]["total_mw"] - (
            by["Initial"]["total_mw"] + by["Entrants"]["total_mw"] - by["Exits"]["total_mw"]
        )
        if abs(mw_gap) > tolerance_mw:
            raise AccountingMismatch(
                f"{cat}: final MW off by {mw_gap:+.3f} against initial + entries - exits"
            )
    return table


# -- real-time market intervals ---------------------------------------------------

INTERVAL_COLUMNS = [
    "timestamp",
    "energy_price",
    "incentive",
    "supply_ng_gw",
    "supply_renewables_gw",
    "supply_other_gw",
    "reserves_gw",
    "cap_ng_gw",
    "cap_renewables_gw",
    "cap_other_gw",
    "capacity_utilization",
    "temperature",
    "wind_speed",
    "natural_gas_price",
]


def aggregate_incentive(five_minute: pd.DataFrame, grid_minutes: int = 15) -> pd.DataFrame:
    """Average a finer incentive series onto the coarser grid.

    Timestamps are floored to the grid; each grid point's value is the plain
    mean of its members (three 5-minute observations per 15-minute point on
    a complete feed).
    """
    _require_columns(five_minute, ["timestamp", "incentive"], "incentive series")
    ts = pd.to_datetime(five_minute["timestamp"])
    floored = ts.dt.floor(f"{grid_minutes}min")
    grouped = (
        pd.DataFrame({"timestamp": floored, "incentive": five_minute["incentive"].to_numpy()})
        .groupby("timestamp", as_index=False)["incentive"]
        .mean()
    )
    return grouped


def validate_intervals(
    frame: pd.DataFrame,
    temperature_center: float | None = None,
    require_uniform: bool = True,
) -> pd.DataFrame:
    """Check interval invariants, center temperature, and add its square."""
    _require_columns(frame, INTERVAL_COLUMNS, "interval table")
    out = frame.copy()
    out["timestamp"] = pd.to_datetime(out["timestamp"])
    out = out.sort_values("timestamp").reset_index(drop=True)
    diffs = out["timestamp"].diff().dropna()
    if (diffs <= pd.Timedelta(0)).any():
        raise ValidationError("interval table: timestamps must be strictly increasing")
    if require_uniform and len(diffs.unique()) > 1:
        raise ValidationError("interval table: timestamps must sit on a uniform grid")
    if (out["incentive"] < 0).any():
        raise ValidationError("interval table: incentive must be non-negative")
    util = out["capacity_utilization"]
    if ((util <= 0) | (util > 1)).any():
        raise ValidationError("interval table: capacity_utilization must lie in (0, 1]")
    center = (
        float(out["temperature"].mean()) if temperature_center is None
        else float(temperature_center)
    )
    out["temperature"] = out["temperature"] - center
    out["temp_sq"] = out["temperature"] ** 2
    out.attrs["temperature_center"] = center
    return out


def load_intervals(
    path: str | Path,
    temperature_center: float | None = None,
    require_uniform: bool = True,
    incentive_5min: str | Path | None = None,
) -> pd.DataFrame:
    """Read the 15-minute table; optionally replace the incentive column with
    the aggregate of a separate 5-minute feed."""
    frame = pd.read_csv(path)
    if incentive_5min is not None:
        fine = aggregate_incentive(pd.read_csv(incentive_5min))
        frame = frame.drop(columns=["incentive"], errors="ignore")
        frame["timestamp"] = pd.to_datetime(frame["timestamp"])
        frame = frame.merge(fine, on="timestamp", how="left")
        if frame["incentive"].isna().any():
            raise ValidationError("interval table: 5-minute feed leaves gaps on the grid")
    return validate_intervals(
        frame, temperature_center=temperature_center, require_uniform=require_uniform
    )


def summarize_by_incentive_state(intervals: pd.DataFrame) -> pd.DataFrame:
    """Column means for All/Inactive/Active interval groups.

    Active means a strictly positive incentive.  An empty group keeps its
    column with zero observations and no means.
    """
    numeric = intervals.select_dtypes(include=[np.number])
    active = (intervals["incentive"] > 0).to_numpy()
    masks = {"All": np.ones(len(intervals), dtype=bool), "Inactive": ~active, "Active": active}
    data: dict[str, list[float]] = {}
    for label, mask in masks.items():
        col = []
        for name in numeric.columns:
            values = numeric[name].to_numpy()[mask]
            col.append(float(np.mean(values)) if len(values) else float("nan"))
        col.append(float(mask.sum()))
        data[label] = col
    return pd.DataFrame(data, index=[*numeric.columns, "observations"])


# -- economic controls ------------------------------------------------------------

ECONOMIC_COLUMNS = [
    "labor_force",
    "unemployment_rate",
    "cpi",
    "interest_rate",
    "cost_wind_install",
    "cost_pv_install",
]


def validate_economic(frame: pd.DataFrame) -> pd.DataFrame:
    """Collapse a daily (or already monthly) controls table to monthly means.

    A missing daily value is carried forward within its month only; a month
    with no observation at all for some column is an error.
    """
    _require_columns(frame, ["date", *ECONOMIC_COLUMNS], "economic controls")
    out = frame.copy()
    dates = pd.to_datetime(out["date"])
    out["month"] = dates.dt.strftime("%Y-%m")
    out = out.sort_values("date")
    monthly = []
    for month, chunk in out.groupby("month"):
        filled = chunk[ECONOMIC_COLUMNS].ffill()
        if filled.isna().any().any():
            gaps = [c for c in ECONOMIC_COLUMNS if filled[c].isna().any()]
            raise ValidationError(
                f"economic controls: month {month} has no observation for {gaps}"
            )
        monthly.append({"month": month, **{c: float(filled[c].mean()) for c in ECONOMIC_COLUMNS}})
    return pd.DataFrame(monthly).sort_values("month").reset_index(drop=True)


def load_economic(path: str | Path) -> pd.DataFrame:
    return validate_economic(pd.read_csv(path))


# -- monthly panel ----------------------------------------------------------------

PASS_THROUGH_COLUMNS = [
    "shadow_price",
    "change_peaker_net_margin",
    "gini_ng",
    "gini_wind",
]


def build_monthly_panel(
    generators: pd.DataFrame,
    intervals: pd.DataFrame,
    economic: pd.DataFrame | None = None,
    extras: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Assemble the month-by-month estimation table.

    Capacity stocks count retained generators; applicant pools sum the six
    pre-operation phases; market statistics are within-month means of the
    interval feed.  Derived market statistics with no written construction
    (shadow price, peaker margin change, GINI indices) enter as supplied
    ``extras`` columns keyed by month.
    """
    months = sorted(generators["month"].unique())
    rows = []
    for month in months:
        snap = generators[generators["month"] == month]
        row: dict[str, float | str] = {"month": month}
        retained = snap[snap["status"].isin(RETAINED_STATUSES)]
        pool = snap[snap["status"].isin(APPLICANT_PHASES)]
        for cat, key in ((CATEGORY_NG, "ng"), (CATEGORY_RENEWABLES, "renewables"),
                         (CATEGORY_OTHER, "other")):
            row[f"cap_{key}_mw"] = float(
                retained.loc[retained["category"] == cat, "capacity_mw"].sum()
            )
            members = pool[pool["category"] == cat]
            row[f"pool_{key}_mw"] = float(members["capacity_mw"].sum())
            phases = members["status"].map(PHASE_INDEX)
            row[f"phase_{key}"] = float(phases.mean()) if len(members) else float("nan")
        rows.append(row)
    panel = pd.DataFrame(rows)

    _require_columns(intervals, [*INTERVAL_COLUMNS, "temp_sq"], "validated interval table")
    iv = intervals.copy()
    iv["month"] = iv["timestamp"].dt.strftime("%Y-%m")
    supply_total = iv["supply_ng_gw"] + iv["supply_renewables_gw"] + iv["supply_other_gw"]
    cap_total = iv["cap_ng_gw"] + iv["cap_renewables_gw"] + iv["cap_other_gw"]
    iv["online_capacity_gw"] = supply_total + iv["reserves_gw"]
    iv["offline_capacity_gw"] = cap_total - iv["online_capacity_gw"]
    keep = [
        "incentive", "energy_price", "capacity_utilization", "natural_gas_price",
        "online_capacity_gw", "offline_capacity_gw", "temperature", "temp_sq",
        "wind_speed",
    ]
    market = iv.groupby("month", as_index=False)[keep].mean()
    market = market.rename(columns={"energy_price": "energy_only_price"})
    panel = panel.merge(market, on="month", how="left")

    if economic is not None:
        panel = panel.merge(economic, on="month", how="left")
    if extras is not None:
        _require_columns(extras, ["month"], "panel extras")
        panel = panel.merge(extras, on="month", how="left")
    return panel.sort_values("month").reset_index(drop=True)


def write_panel(panel: pd.DataFrame, path: str | Path) -> None:
    # %.17g keeps every float bit through the text round trip
    panel.to_csv(path, index=False, float_format="%.17g")


def load_panel(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    _require_columns(frame, ["month"], "panel")
    frame["month"] = frame["month"].astype(str)
    return frame


# -- ordered design construction --------------------------------------------------

# canonical covariate groups for the monthly capacity models, upstream to
# downstream; climatic columns are rolling means built here from the panel's
# monthly climate series
CANONICAL_GROUPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("climatic", ("temp_roll", "temp_sq_roll", "wind_roll")),
    ("economic", ("labor_force", "unemployment_rate", "cpi", "interest_rate",
                  "cost_wind_install", "cost_pv_install", "natural_gas_price")),
    ("upstream_market", ("online_capacity_gw", "offline_capacity_gw",
                         "capacity_utilization", "shadow_price", "energy_only_price")),
    ("incentive", ("incentive",)),
    ("downstream_market", ("change_peaker_net_margin", "gini_ng", "gini_wind")),
    ("applicant_pools", ("pool_ng_mw", "pool_renewables_mw")),
    ("status_phases", ("phase_ng", "phase_renewables")),
)

POOL_FOR_OUTCOME = {
    "cap_ng_mw": "pool_ng_mw",
    "cap_renewables_mw": "pool_renewables_mw",
}


def _dummy_block(values: pd.Series, prefix: str) -> pd.DataFrame:
    levels = sorted(values.unique())
    cols = {}
    for level in levels[1:]:  # drop the first level against the intercept
        cols[f"{prefix}_{level}"] = (values == level).astype(float).to_numpy()
    return pd.DataFrame(cols, index=values.index)


def build_design(
    panel: pd.DataFrame,
    outcome: str,
    lag: int = 12,
    fixed_effects: Sequence[str] = ("annual", "seasonal"),
    temperature_polynomial: bool = True,
    rolling_months: int = 12,
    groups: Sequence[tuple[str, Sequence[str]]] | None = None,
    drop_months: Sequence[str] = (),
) -> tuple[OrderedDesign, CausalOrdering]:
    """Lagged, dummy-augmented ordered design from a monthly panel.

    The outcome is observed at month t and every covariate at month t-lag;
    calendar dummies are computed on the outcome month.  Climate columns are
    ``rolling_months`` trailing means (partial windows allowed at the start).
    ``groups`` overrides the canonical covariate grouping; ``drop_months``
    removes rows by outcome month.
    """
    unknown_fe = set(fixed_effects) - {"annual", "seasonal"}
    if unknown_fe:
        raise ValidationError(f"unknown fixed-effect sets: {sorted(unknown_fe)}")
    if lag < 0:
        raise ValidationError("lag must be non-negative")
    if outcome not in panel.columns:
        raise SchemaError(f"panel has no outcome column '{outcome}'")
    work = panel.sort_values("month").reset_index(drop=True)
    if len(work) - lag < 1:
        raise InsufficientHistory(
            f"lag {lag} leaves no rows in a {len(work)}-month panel"
        )

    if groups is None:
        climate = ["temperature", "wind_speed"] + (["temp_sq"] if temperature_polynomial else [])
        for col in climate:
            if col not in work.columns:
                raise SchemaError(f"panel has no climate column '{col}'")
        work["temp_roll"] = work["temperature"].rolling(rolling_months, min_periods=1).mean()
        work["wind_roll"] = work["wind_speed"].rolling(rolling_months, min_periods=1).mean()
        if temperature_polynomial:
            work["temp_sq_roll"] = work["temp_sq"].rolling(rolling_months, min_periods=1).mean()
        chosen = [
            (name, tuple(c for c in cols if temperature_polynomial or c != "temp_sq_roll"))
            for name, cols in CANONICAL_GROUPS
        ]
    else:
        chosen = [(name, tuple(cols)) for name, cols in groups]
    for name, cols in chosen:
        for col in cols:
            if col not in work.columns:
                raise SchemaError(f"panel has no column '{col}' (group '{name}')")
            if col == outcome:
                raise ValidationError(f"outcome '{outcome}' cannot also appear in group '{name}'")

    outcome_months = work["month"].iloc[lag:].reset_index(drop=True)
    shifted = work.iloc[: len(work) - lag].reset_index(drop=True)
    y = work[outcome].iloc[lag:].reset_index(drop=True)
    keep = ~outcome_months.isin(set(drop_months))
    outcome_months = outcome_months[keep].reset_index(drop=True)
    shifted = shifted[keep.to_numpy()].reset_index(drop=True)
    y = y[keep.to_numpy()].reset_index(drop=True)
    if len(y) < 1:
        raise InsufficientHistory("all rows excluded by drop_months")

    matrices: list[np.ndarray] = [np.ones((len(y), 1))]
    names: list[str] = ["const"]
    gids: list[int] = [0]
    next_gid = 1

    if "annual" in fixed_effects:
        block = _dummy_block(outcome_months.str.slice(0, 4), "year")
        if block.shape[1]:
            matrices.append(block.to_numpy())
            names.extend(block.columns)
            gids.extend([next_gid] * block.shape[1])
            next_gid += 1
    if "seasonal" in fixed_effects:
        block = _dummy_block(outcome_months.str.slice(5, 7), "month")
        if block.shape[1]:
            matrices.append(block.to_numpy())
            names.extend(block.columns)
            gids.extend([next_gid] * block.shape[1])
            next_gid += 1

    for _, cols in chosen:
        if not cols:
            continue
        values = shifted[list(cols)].to_numpy(dtype=float)
        if np.isnan(values).any():
            bad = [c for c in cols if shifted[c].isna().any()]
            raise ValidationError(f"covariates contain missing values: {bad}")
        matrices.append(values)
        names.extend(cols)
        gids.extend([next_gid] * len(cols))
        next_gid += 1

    matrices.append(y.to_numpy(dtype=float).reshape(-1, 1))
    names.append(outcome)
    gids.append(next_gid)

    design = OrderedDesign(np.hstack(matrices), names, gids)
    chain = ["incentive"] if "incentive" in names else []
    pool = POOL_FOR_OUTCOME.get(outcome)
    if pool and pool in names:
        chain.append(pool)
    ordering = ordering_from_design(design, chain=tuple(chain))
    return design, ordering
