"""Command-line front end.

Subcommands map one-to-one onto the library's analysis entry points:
``ingest`` builds the monthly panel from raw feeds, ``estimate`` runs the
direct/total capacity tables, ``equilibrium`` solves configured markets and
checks transfer cancellation, ``match`` rebalances treated intervals,
``underbid`` fits the interval price response, and ``sweep``/``ladder`` run
the specification grids.  Every run writes its resolved configuration next
to its outputs so the exact invocation can be replayed.

Exit codes: 0 success, 1 validation or configuration problem, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .equilibrium import (
    Intervention,
    MarketPrimitives,
    pass_through,
    solve_competitive,
    solve_monopoly,
    verify_cancellation,
)
from .errors import ConfigError, NumericalError, ToolkitError, ValidationError
from .gsls import EffectsTable, estimate_direct, estimate_total_gsls, merge_sides, path_identity_gap
from .ingest import (
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
    UnderbidSpec,
    ar_gls_fit,
    covariate_sequencing,
    sweep,
    SweepGrid,
    underbid_fit,
)

OUTPUT_DIR_ENV = "INCENT_OUT"
IDENTITY_TOLERANCE = 1e-8
_FLOAT_FORMAT = "%.17g"

KNOWN_KEYS: dict[str, set[str]] = {
    "ingest": {
        "generators", "intervals", "incentive", "economic", "boundary",
        "extras", "min_capacity_mw", "out",
    },
    "estimate": {
        "panel", "outcome", "lag", "fixed_effects", "temperature_polynomial",
        "rolling_months", "drop_months", "out",
    },
    "equilibrium": {
        "regime", "demand_intercept", "demand_slope", "cost_intercept",
        "cost_curvature", "transfer", "economies", "seed", "out",
    },
    "match": {
        "data", "covariates", "treatment", "outcome", "matches_per_treated",
        "with_replacement", "block_on", "out",
    },
    "underbid": {"intervals", "fixed_effects", "filters", "ar_horizons", "out"},
    "sweep": {"panel", "outcomes", "out"},
    "ladder": {"panel", "outcome", "lag", "filters", "out"},
}

# every default appears here so the config echo records the full resolved run
DEFAULTS: dict[str, dict[str, str]] = {
    "ingest": {"min_capacity_mw": "1.0"},
    "estimate": {
        "lag": "12", "fixed_effects": "annual,seasonal",
        "temperature_polynomial": "true", "rolling_months": "12",
        "drop_months": "",
    },
    "equilibrium": {
        "regime": "competitive", "demand_intercept": "100", "demand_slope": "1",
        "cost_intercept": "20", "cost_curvature": "0", "transfer": "5",
        "economies": "0", "seed": "0",
    },
    "match": {
        "treatment": "incentive", "outcome": "energy_price",
        "matches_per_treated": "1", "with_replacement": "true", "block_on": "",
    },
    "underbid": {
        "fixed_effects": "annual,seasonal", "filters": "", "ar_horizons": "",
    },
    "sweep": {"outcomes": ""},
    "ladder": {"lag": "12", "filters": "storm_uri"},
}


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as configuration errors."""

    def error(self, message: str) -> None:  # noqa: D401 - argparse hook
        raise ConfigError(message)


def _as_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"'{key}' must be an integer, got {value!r}") from None


def _as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"'{key}' must be a number, got {value!r}") from None


def _as_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"'{key}' must be a boolean, got {value!r}")


def _as_tuple(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _require_file(value: str | None, key: str) -> Path:
    if not value:
        raise ConfigError(f"'{key}' is required")
    path = Path(value)
    if not path.exists():
        raise ValidationError(f"input file for '{key}' not found: {path}")
    return path


def load_config(path: str, subcommand: str) -> dict[str, str]:
    """Read one subcommand's section; unknown keys are an error."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ValidationError(f"config file not found: {path}")
    if subcommand not in parser:
        return {}
    section = dict(parser[subcommand])
    unknown = set(section) - KNOWN_KEYS[subcommand]
    if unknown:
        raise ConfigError(
            f"unknown keys in config section [{subcommand}]: {sorted(unknown)}"
        )
    return section


def resolve_settings(
    subcommand: str,
    flags: Mapping[str, str | None],
    config_path: str | None,
) -> dict[str, str]:
    """Merge flag, environment, and file values into one string map.

    Precedence: command-line flag, then the output-directory environment
    variable (output directory only), then the config file, then defaults.
    """
    settings: dict[str, str] = {"out": "out", **DEFAULTS.get(subcommand, {})}
    if config_path:
        settings.update(load_config(config_path, subcommand))
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        settings["out"] = env_out
    for key, value in flags.items():
        if value is not None:
            settings[key] = value
    unknown = set(settings) - KNOWN_KEYS[subcommand]
    if unknown:
        raise ConfigError(f"unknown settings for {subcommand}: {sorted(unknown)}")
    return settings


def _write_echo(settings: Mapping[str, str], subcommand: str, out_dir: Path) -> Path:
    echo = configparser.ConfigParser()
    echo[subcommand] = {k: str(v) for k, v in sorted(settings.items())}
    path = out_dir / f"{subcommand}_config.ini"
    with open(path, "w") as handle:
        echo.write(handle)
    return path


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> None:
    frame.to_csv(path, index=index, float_format=_FLOAT_FORMAT)
    print(f"wrote {path}")


def render_table(table: EffectsTable, style: str = "text") -> str:
    """Aligned text with significance stars, or unstyled CSV with raw p.

    Stars follow the strict thresholds: * below 0.05, ** below 0.01,
    *** below 0.001; a p-value exactly at a threshold earns nothing.
    """
    if style == "csv":
        return table.to_frame().to_csv(index=False, float_format=_FLOAT_FORMAT)
    if style != "text":
        raise ValidationError(f"unknown table style '{style}'")
    lines: list[str] = []
    for outcome in table.outcomes():
        cells = [c for c in table.cells if c.outcome == outcome]
        rows = [
            (c.cause, f"{c.estimate:,.2f}{c.stars}", f"({c.std_error:,.2f})")
            for c in cells
        ]
        widths = [
            max(len(r[i]) for r in rows + [("cause", "estimate", "std error")])
            for i in range(3)
        ]
        lines.append(f"[{table.side}] equation: {outcome}")
        header = ("cause", "estimate", "std error")
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for row in rows:
            lines.append(
                row[0].ljust(widths[0])
                + "  "
                + row[1].rjust(widths[1])
                + "  "
                + row[2].rjust(widths[2])
            )
        stats = table.equation_stats.get(outcome)
        if stats is not None:
            lines.append(f"n={stats.nobs}  R2={stats.r_squared:.4f}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _write_effect_outputs(
    direct: EffectsTable,
    total: EffectsTable,
    out_dir: Path,
    prefix: str,
) -> None:
    _write_csv(direct.to_frame(), out_dir / f"{prefix}_direct.csv")
    _write_csv(total.to_frame(), out_dir / f"{prefix}_total.csv")
    _write_csv(merge_sides(direct, total), out_dir / f"{prefix}_merged.csv")
    text = render_table(direct, "text") + "\n" + render_table(total, "text")
    path = out_dir / f"{prefix}_tables.txt"
    path.write_text(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Subcommand handlers.  Each receives the resolved string settings and the
# prepared output directory, and returns process exit code 0 on success.


def _run_ingest(settings: dict[str, str], out_dir: Path) -> int:
    generators_path = _require_file(settings.get("generators"), "generators")
    intervals_path = _require_file(settings.get("intervals"), "intervals")
    min_capacity = _as_float(settings.get("min_capacity_mw", "1.0"), "min_capacity_mw")

    generators = load_generators(generators_path, min_capacity_mw=min_capacity)
    boundary = None
    if settings.get("boundary"):
        boundary = load_boundary(_require_file(settings["boundary"], "boundary"))
    generators = resolve_balancing_authority(generators, boundary)

    events = detect_entry_exit(generators)
    accounting = tabulate_entry_exit(events, generators)
    _write_csv(accounting, out_dir / "entry_exit.csv")

    incentive_path = settings.get("incentive")
    if incentive_path:
        incentive_path = _require_file(incentive_path, "incentive")
    intervals = load_intervals(intervals_path, incentive_5min=incentive_path)
    _write_csv(summarize_by_incentive_state(intervals), out_dir / "interval_summary.csv")

    economic = None
    if settings.get("economic"):
        economic = load_economic(_require_file(settings["economic"], "economic"))

    extras = None
    if settings.get("extras"):
        extras = pd.read_csv(_require_file(settings["extras"], "extras"), dtype={"month": str})

    panel = build_monthly_panel(generators, intervals, economic, extras)
    panel_path = out_dir / "panel.csv"
    write_panel(panel, panel_path)
    print(f"wrote {panel_path}")
    return 0


def _estimate_inputs(settings: dict[str, str]) -> tuple[pd.DataFrame, str, dict]:
    panel = load_panel(_require_file(settings.get("panel"), "panel"))
    outcome = settings.get("outcome")
    if not outcome:
        raise ConfigError("'outcome' is required")
    kwargs = {
        "lag": _as_int(settings.get("lag", "12"), "lag"),
        "fixed_effects": _as_tuple(settings.get("fixed_effects", "annual,seasonal")),
        "temperature_polynomial": _as_bool(
            settings.get("temperature_polynomial", "true"), "temperature_polynomial"
        ),
        "rolling_months": _as_int(settings.get("rolling_months", "12"), "rolling_months"),
        "drop_months": _as_tuple(settings.get("drop_months", "")),
    }
    return panel, outcome, kwargs


def _run_estimate(settings: dict[str, str], out_dir: Path) -> int:
    panel, outcome, kwargs = _estimate_inputs(settings)
    design, ordering = build_design(panel, outcome, **kwargs)
    direct = estimate_direct(design, ordering)
    total = estimate_total_gsls(design, ordering)
    gap = path_identity_gap(design, ordering)
    print(f"identity check: max path gap {gap:.3e} (tolerance {IDENTITY_TOLERANCE:.0e})")
    if gap > IDENTITY_TOLERANCE:
        raise NumericalError(
            f"direct-path composition does not reproduce total effects: gap {gap:.3e}"
        )
    _write_effect_outputs(direct, total, out_dir, "effects")
    return 0


def _run_equilibrium(settings: dict[str, str], out_dir: Path) -> int:
    regime = settings.get("regime", "competitive")
    primitives = MarketPrimitives.linear(
        a=_as_float(settings.get("demand_intercept", "100"), "demand_intercept"),
        b=_as_float(settings.get("demand_slope", "1"), "demand_slope"),
        c=_as_float(settings.get("cost_intercept", "20"), "cost_intercept"),
        d=_as_float(settings.get("cost_curvature", "0"), "cost_curvature"),
    )
    if regime not in ("monopoly", "competitive"):
        raise ValidationError(f"unknown regime '{regime}'")
    transfer = _as_float(settings.get("transfer", "5"), "transfer")
    solve = solve_monopoly if regime == "monopoly" else solve_competitive

    baseline = solve(primitives)
    paired = solve(primitives, Intervention.paired(transfer))
    rows = [
        {"scenario": name, "quantity": sol.quantity,
         "consumer_price": sol.consumer_price, "producer_price": sol.producer_price,
         "foc_residual": sol.foc_residual, "regime": sol.regime}
        for name, sol in (("baseline", baseline), ("paired_transfer", paired))
    ]
    _write_csv(pd.DataFrame(rows), out_dir / "equilibrium.csv")

    economies = _as_int(settings.get("economies", "0"), "economies")
    if economies:
        rng = np.random.default_rng(_as_int(settings.get("seed", "0"), "seed"))
        max_dq = max_dp = 0.0
        for _ in range(economies):
            a = rng.uniform(50.0, 150.0)
            b = rng.uniform(0.5, 5.0)
            c = rng.uniform(1.0, 0.5 * a)
            d = rng.uniform(0.0, 2.0)
            dq, dp = verify_cancellation(
                MarketPrimitives.linear(a, b, c, d),
                Intervention.paired(transfer),
                regime,
            )
            max_dq = max(max_dq, dq)
            max_dp = max(max_dp, dp)
        report = pd.DataFrame(
            [{"economies": economies, "max_quantity_gap": max_dq,
              "max_price_gap": max_dp, "regime": regime}]
        )
        _write_csv(report, out_dir / "cancellation.csv")
        print(f"cancellation over {economies} economies: max |dQ| {max_dq:.3e}, "
              f"max |dP| {max_dp:.3e}")
    share = pass_through(primitives, transfer, regime)
    print(f"pass-through of a {transfer:g} subsidy under {regime}: {share:.6f}")
    return 0


def _run_match(settings: dict[str, str], out_dir: Path) -> int:
    data_path = _require_file(settings.get("data"), "data")
    try:
        data = pd.read_csv(data_path)
    except Exception as exc:  # malformed CSV surfaces as validation
        raise ValidationError(f"cannot parse {data_path}: {exc}") from exc
    covariates = _as_tuple(settings.get("covariates", ""))
    if not covariates:
        raise ConfigError("'covariates' is required")
    outcome = settings.get("outcome", "energy_price")
    spec = MatchSpec(
        covariates=covariates,
        treatment_column=settings.get("treatment", "incentive"),
        matches_per_treated=_as_int(
            settings.get("matches_per_treated", "1"), "matches_per_treated"
        ),
        with_replacement=_as_bool(
            settings.get("with_replacement", "true"), "with_replacement"
        ),
        block_on=settings.get("block_on") or None,
    )
    matched = mahalanobis_match(data, spec)
    result = estimate_atet(data, matched, outcome)
    _write_csv(matched.pairs, out_dir / "pairs.csv")
    _write_csv(balance_report(data, matched), out_dir / "balance.csv", index=True)
    summary = pd.DataFrame(
        [{"coefficient": result.coefficient, "std_error": result.std_error,
          "z_stat": result.z_stat, "p_value": result.p_value,
          "n_treated": result.n_treated, "n_matched": matched.n_matched}]
    )
    _write_csv(summary, out_dir / "atet.csv")
    print(f"ATET on {outcome}: {result.coefficient:,.4f} "
          f"(se {result.std_error:,.4f}, p {result.p_value:.4g})")
    return 0


def _parse_ar(value: str) -> tuple[int, ...]:
    named = {"ar1": AR1_HORIZONS, "ar10": AR10_HORIZONS}
    lowered = value.strip().lower()
    if lowered in named:
        return named[lowered]
    return tuple(_as_int(part, "ar_horizons") for part in _as_tuple(value))


def _run_underbid(settings: dict[str, str], out_dir: Path) -> int:
    intervals = load_intervals(_require_file(settings.get("intervals"), "intervals"))
    spec = UnderbidSpec(
        fixed_effects=_as_tuple(settings.get("fixed_effects", "annual,seasonal")),
        filters=_as_tuple(settings.get("filters", "")),
        ar_horizons=_parse_ar(settings.get("ar_horizons", "")),
    )
    result = ar_gls_fit(intervals, spec) if spec.ar_horizons else underbid_fit(intervals, spec)
    _write_effect_outputs(result.direct, result.total, out_dir, "underbid")
    print(f"combined offset: {result.combined_offset:,.2f} "
          f"(mean active incentive {result.mean_active_incentive:,.2f}, n={result.n_obs})")
    return 0


def _run_sweep(settings: dict[str, str], out_dir: Path) -> int:
    panel = load_panel(_require_file(settings.get("panel"), "panel"))
    outcomes = _as_tuple(settings.get("outcomes", ""))
    grid = SweepGrid(outcomes=outcomes) if outcomes else SweepGrid()
    result = sweep(panel, grid)
    _write_csv(result.models, out_dir / "sweep_models.csv")
    _write_csv(result.histogram, out_dir / "sweep_histogram.csv")
    for outcome, count in result.positive_significant.items():
        share = count / grid.models_per_outcome
        print(f"{outcome}: {count} of {grid.models_per_outcome} models "
              f"positive and significant at 95% ({share:.2%})")
    return 0


def _run_ladder(settings: dict[str, str], out_dir: Path) -> int:
    panel = load_panel(_require_file(settings.get("panel"), "panel"))
    outcome = settings.get("outcome")
    if not outcome:
        raise ConfigError("'outcome' is required")
    filters = _as_tuple(settings.get("filters", "storm_uri"))
    filter_sets: tuple[tuple[str, ...], ...] = ((),)
    if filters:
        filter_sets = ((), filters)
    table = covariate_sequencing(
        panel, outcome, lag=_as_int(settings.get("lag", "12"), "lag"),
        filter_sets=filter_sets,
    )
    _write_csv(table, out_dir / "ladder.csv")
    return 0


_HANDLERS: dict[str, Callable[[dict[str, str], Path], int]] = {
    "ingest": _run_ingest,
    "estimate": _run_estimate,
    "equilibrium": _run_equilibrium,
    "match": _run_match,
    "underbid": _run_underbid,
    "sweep": _run_sweep,
    "ladder": _run_ladder,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="incent", description=__doc__)
    parser.add_argument("--config", help="INI file with per-subcommand sections")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, **flags: str) -> None:
        p = sub.add_parser(name, help=flags.pop("_help", None))
        p.add_argument("--out", help="output directory")
        for flag, help_text in flags.items():
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, help=help_text)

    add("ingest", _help="build the monthly panel from raw feeds",
        generators="generator inventory CSV", intervals="15-minute interval CSV",
        incentive="5-minute incentive CSV", economic="daily economic CSV",
        boundary="region boundary polygon file",
        extras="monthly derived-statistics CSV merged on month",
        min_capacity_mw="inclusion floor")
    add("estimate", _help="direct and total capacity effects",
        panel="monthly panel CSV", outcome="outcome column", lag="months of lag",
        fixed_effects="comma list: annual,seasonal",
        temperature_polynomial="true/false", rolling_months="climate window",
        drop_months="outcome months to exclude (YYYY-MM)")
    add("equilibrium", _help="solve markets and verify transfer cancellation",
        regime="monopoly or competitive", demand_intercept="", demand_slope="",
        cost_intercept="", cost_curvature="", transfer="paired transfer size",
        economies="random economies for the cancellation check", seed="RNG seed")
    add("match", _help="nearest-neighbour rebalancing and ATET",
        data="input CSV", covariates="comma list of covariate columns",
        treatment="treatment column", outcome="outcome column",
        matches_per_treated="controls per treated row",
        with_replacement="true/false", block_on="exact-match column")
    add("underbid", _help="interval-level price response",
        intervals="15-minute interval CSV", fixed_effects="comma list",
        filters="comma list: storm_uri,price_cap",
        ar_horizons="ar1, ar10, or comma list of grid steps")
    add("sweep", _help="lag x fixed-effects x polynomial grid",
        panel="monthly panel CSV", outcomes="comma list of outcome columns")
    add("ladder", _help="nested covariate sequencing",
        panel="monthly panel CSV", outcome="outcome column", lag="months of lag",
        filters="exclusions for the filtered pass (storm_uri)")
    return parser


def run(argv: list[str]) -> int:
    """Parse, resolve settings, dispatch, and echo the resolved config."""
    parser = _build_parser()
    namespace = parser.parse_args(argv)
    subcommand = namespace.subcommand
    flags = {
        key: value
        for key, value in vars(namespace).items()
        if key not in ("config", "subcommand")
    }
    settings = resolve_settings(subcommand, flags, namespace.config)
    out_dir = Path(settings["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    code = _HANDLERS[subcommand](settings, out_dir)
    echo = _write_echo(settings, subcommand, out_dir)
    print(f"wrote {echo}")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ToolkitError as exc:  # base-class fallback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
