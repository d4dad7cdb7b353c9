"""Shared synthetic data generators.

Two factories cover most suites: a monthly panel with every canonical
covariate column, and a 15-minute interval table with configurable offset
coefficients and error autocorrelation.  Both are deterministic in the seed.
"""

import numpy as np
import pandas as pd
import pytest


def _month_strings(start: str, n: int) -> list[str]:
    return pd.period_range(start, periods=n, freq="M").strftime("%Y-%m").tolist()


def _make_panel(
    n_months: int = 90,
    seed: int = 0,
    incentive_effect: float = 0.0,
    effect_lag: int = 12,
    start: str = "2015-07",
) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    t = np.arange(n_months, dtype=float)
    season = 2.0 * np.pi * (t % 12) / 12.0

    temperature = 9.0 * np.sin(season) + rng.normal(0.0, 2.0, n_months)
    wind_speed = 15.0 + 3.0 * np.sin(season + 1.0) + rng.normal(0.0, 1.5, n_months)
    incentive = rng.gamma(2.0, 6.0, n_months)  # independent of everything else

    outcome_noise = rng.normal(0.0, 250.0, n_months)
    cap_ng = (
        95_000.0
        + 45.0 * t
        + 120.0 * temperature
        - 60.0 * wind_speed
        + outcome_noise
    )
    if incentive_effect:
        shifted = np.zeros(n_months)
        shifted[effect_lag:] = incentive[: n_months - effect_lag]
        cap_ng = cap_ng + incentive_effect * shifted
    cap_renew = (
        18_000.0 + 110.0 * t + 40.0 * wind_speed + rng.normal(0.0, 300.0, n_months)
    )

    return pd.DataFrame(
        {
            "month": _month_strings(start, n_months),
            "temperature": temperature,
            "temp_sq": temperature**2,
            "wind_speed": wind_speed,
            "labor_force": 13_000.0 + 8.0 * t + rng.normal(0.0, 20.0, n_months),
            "unemployment_rate": 5.0 + np.sin(season) + rng.normal(0.0, 0.3, n_months),
            "cpi": 230.0 + 0.6 * t + rng.normal(0.0, 0.5, n_months),
            "interest_rate": 2.0 + 0.01 * t + rng.normal(0.0, 0.1, n_months),
            "cost_wind_install": 1_600.0 - 4.0 * t + rng.normal(0.0, 12.0, n_months),
            "cost_pv_install": 1_400.0 - 7.0 * t + rng.normal(0.0, 15.0, n_months),
            "natural_gas_price": 3.0 + 0.5 * np.sin(season) + rng.normal(0.0, 0.2, n_months),
            "online_capacity_gw": 62.0 + 0.06 * t + rng.normal(0.0, 1.5, n_months),
            "offline_capacity_gw": 21.0 + rng.normal(0.0, 1.0, n_months),
            "capacity_utilization": np.clip(
                0.7 + 0.1 * np.sin(season) + rng.normal(0.0, 0.04, n_months), 0.3, 0.99
            ),
            "shadow_price": np.abs(rng.normal(8.0, 3.0, n_months)),
            "energy_only_price": 26.0 + 4.0 * np.sin(season) + rng.normal(0.0, 2.0, n_months),
            "incentive": incentive,
            "change_peaker_net_margin": rng.normal(0.0, 5.0, n_months),
            "gini_ng": np.clip(0.55 + rng.normal(0.0, 0.03, n_months), 0.0, 1.0),
            "gini_wind": np.clip(0.62 + rng.normal(0.0, 0.03, n_months), 0.0, 1.0),
            "pool_ng_mw": 4_500.0 + 10.0 * t + rng.normal(0.0, 150.0, n_months),
            "pool_renewables_mw": 9_000.0 + 50.0 * t + rng.normal(0.0, 250.0, n_months),
            "phase_ng": np.clip(3.2 + rng.normal(0.0, 0.4, n_months), 1.0, 6.0),
            "phase_renewables": np.clip(2.8 + rng.normal(0.0, 0.4, n_months), 1.0, 6.0),
            "cap_ng_mw": cap_ng,
            "cap_renewables_mw": cap_renew,
        }
    )


def _make_intervals(
    n: int = 4000,
    seed: int = 3,
    beta_active: float = -50.0,
    beta_payment: float = -0.2,
    rho: float = 0.0,
    noise_sd: float = 8.0,
    active_share: float = 0.2,
    start: str = "2021-03-01",
) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    daily = 2.0 * np.pi * t / 96.0  # 96 fifteen-minute intervals per day

    cap_ng = 55.0 + 0.0004 * t + rng.normal(0.0, 0.4, n)
    cap_renew = 28.0 + 0.0008 * t + rng.normal(0.0, 0.4, n)
    cap_other = 11.0 + rng.normal(0.0, 0.2, n)
    temperature_raw = 20.0 + 8.0 * np.sin(daily) + rng.normal(0.0, 2.0, n)
    temperature = temperature_raw - temperature_raw.mean()
    wind_speed = np.clip(12.0 + 4.0 * np.sin(daily + 1.3) + rng.normal(0.0, 2.0, n), 0.0, None)
    gas = 3.0 + 0.4 * np.sin(daily / 4.0) + rng.normal(0.0, 0.15, n)

    demand = 45.0 + 8.0 * np.sin(daily) + 0.25 * temperature + rng.normal(0.0, 1.5, n)
    supply_ng = 0.50 * demand + rng.normal(0.0, 0.8, n)
    supply_renew = 0.30 * demand + 0.15 * wind_speed + rng.normal(0.0, 0.8, n)
    supply_other = 0.20 * demand + rng.normal(0.0, 0.5, n)
    reserves = np.clip(
        (cap_ng + cap_renew + cap_other) - demand - rng.normal(8.0, 2.0, n), 1.0, None
    )
    utilization = np.clip(demand / (demand + reserves), 0.05, 1.0)

    # assignment depends on scarcity, so active intervals are confounded
    score = utilization + rng.normal(0.0, 0.05, n)
    threshold = np.quantile(score, 1.0 - active_share)
    active = (score > threshold).astype(float)
    incentive = active * rng.gamma(2.0, 30.0, n)

    noise = rng.normal(0.0, noise_sd, n)
    if rho:
        eps = np.empty(n)
        eps[0] = noise[0] / np.sqrt(1.0 - rho**2)
        for k in range(1, n):
            eps[k] = rho * eps[k - 1] + noise[k]
    else:
        eps = noise
    price = (
        15.0
        + 60.0 * utilization
        + 2.5 * gas
        + 0.8 * supply_ng
        - 0.4 * wind_speed
        + 0.3 * temperature
        + beta_active * active
        + beta_payment * incentive
        + eps
    )

    return pd.DataFrame(
        {
            "timestamp": pd.date_range(start, periods=n, freq="15min"),
            "energy_price": price,
            "incentive": incentive,
            "supply_ng_gw": supply_ng,
            "supply_renewables_gw": supply_renew,
            "supply_other_gw": supply_other,
            "reserves_gw": reserves,
            "cap_ng_gw": cap_ng,
            "cap_renewables_gw": cap_renew,
            "cap_other_gw": cap_other,
            "capacity_utilization": utilization,
            "temperature": temperature,
            "temp_sq": temperature**2,
            "wind_speed": wind_speed,
            "natural_gas_price": gas,
        }
    )


def _make_confounded(
    n: int = 4000,
    tau: float = -10.0,
    seed: int = 9,
    treated_share: float = 0.25,
) -> pd.DataFrame:
    """Treatment assignment loads on every covariate, so raw comparisons of
    treated and control rows are biased while matched ones are not.

    Covariates sit on coarse integer grids: exact-covariate controls exist
    for essentially every treated row, which keeps nearest-neighbor matching
    free of continuous-support bias.
    """
    rng = np.random.default_rng(seed)
    c1 = rng.integers(0, 6, n).astype(float)
    c2 = rng.integers(0, 5, n).astype(float)
    c3 = rng.integers(0, 4, n).astype(float)
    score = 0.5 * c1 + 0.3 * c2 + 0.2 * c3 + rng.normal(0.0, 1.0, n)
    treated = (score > np.quantile(score, 1.0 - treated_share)).astype(float)
    incentive = treated * rng.gamma(2.0, 30.0, n)
    price = (
        50.0
        + 4.0 * c1
        + 3.0 * c2
        + 2.0 * c3
        + tau * treated
        + rng.normal(0.0, 3.0, n)
    )
    return pd.DataFrame(
        {
            "c1": c1,
            "c2": c2,
            "c3": c3,
            "incentive": incentive,
            "energy_price": price,
        }
    )


@pytest.fixture
def panel_factory():
    return _make_panel


@pytest.fixture
def interval_factory():
    return _make_intervals


@pytest.fixture
def confounded_factory():
    return _make_confounded
