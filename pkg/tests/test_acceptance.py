"""End-to-end acceptance run for the package's headline guarantees.

Each test prints one PASS/FAIL line naming the check and its tolerance; run
with ``python3 -m pytest tests/test_acceptance.py -s`` to see every line.
The checks marked with a runtime budget also enforce it.
"""

import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from incent.cli import main as cli_main
from incent.design import OrderedDesign
from incent.equilibrium import (
    COMPETITIVE,
    MONOPOLY,
    Driver,
    Intervention,
    MarketPrimitives,
    pass_through,
    solve_competitive,
    solve_monopoly,
    solve_path,
    swap_bearers,
    verify_cancellation,
)
from incent.gsls import (
    ChainDGP,
    _mc_chain,
    decompose_total,
    estimate_direct,
    estimate_total_gsls,
    max_cross_group_correlation,
    ordering_from_design,
    path_identity_gap,
    estimator_diagnostics,
)
from incent.ingest import (
    build_design,
    detect_entry_exit,
    summarize_by_incentive_state,
    tabulate_entry_exit,
    validate_generators,
    write_panel,
)
from incent.matching import MatchSpec, balance_report, estimate_atet, mahalanobis_match
from incent.robustness import SweepGrid, UnderbidSpec, ar_gls_fit, sweep, underbid_fit


@contextmanager
def check(number, summary):
    """Print one PASS/FAIL line; details appended by the test go in info."""
    info = {}
    try:
        yield info
    except BaseException:
        detail = f" [{info['detail']}]" if "detail" in info else ""
        print(f"\nFAIL [{number:2d}] {summary}{detail}")
        raise
    detail = f" [{info['detail']}]" if "detail" in info else ""
    print(f"\nPASS [{number:2d}] {summary}{detail}")


def random_economy(rng, quadratic):
    a = rng.uniform(20.0, 150.0)
    b = rng.uniform(0.2, 5.0)
    c = rng.uniform(0.5, 0.6 * a)
    d = rng.uniform(0.1, 2.0) if quadratic else 0.0
    return MarketPrimitives.linear(a, b, c, d)


def test_01_paired_transfers_cancel_in_both_regimes():
    with check(1, "paired per-unit transfers never move the allocation (<= 1e-9, < 5 s)") as info:
        rng = np.random.default_rng(20260817)
        started = time.perf_counter()
        worst_q = worst_p = 0.0
        for regime in (COMPETITIVE, MONOPOLY):
            for _ in range(500):
                prim = random_economy(rng, quadratic=bool(rng.integers(2)))
                transfer = rng.uniform(0.05, 0.3) * (prim.params[0] - prim.params[2])
                dq, dp = verify_cancellation(prim, Intervention.paired(transfer), regime)
                worst_q = max(worst_q, dq)
                worst_p = max(worst_p, dp)
        stochastic = 0
        for k in range(50):
            prim = random_economy(rng, quadratic=bool(k % 2))
            base = 0.05 * (prim.params[0] - prim.params[2])
            transfer = lambda v, base=base: base * (1.0 + 0.5 * abs(v))
            for regime in (COMPETITIVE, MONOPOLY):
                paired = Intervention.paired(transfer, driver=Driver(seed=k, n_draws=5))
                dq, dp = verify_cancellation(prim, paired, regime)
                worst_q = max(worst_q, dq)
                worst_p = max(worst_p, dp)
                stochastic += 1
        elapsed = time.perf_counter() - started
        info["detail"] = (
            f"max |dQ| {worst_q:.1e}, max |dP| {worst_p:.1e} over 1000 economies "
            f"and {stochastic} stochastic interventions in {elapsed:.1f}s"
        )
        assert stochastic == 100
        assert worst_q <= 1e-9 and worst_p <= 1e-9
        assert elapsed < 5.0


def test_02_bearer_swaps_leave_allocations_unchanged():
    with check(2, "swapping who remits the tax or receives the subsidy (<= 1e-9)") as info:
        rng = np.random.default_rng(7)
        worst = 0.0
        compared = 0
        for _ in range(200):
            prim = random_economy(rng, quadratic=bool(rng.integers(2)))
            room = prim.params[0] - prim.params[2]
            iv = Intervention(
                subsidy=rng.uniform(0.0, 0.25) * room,
                tax=rng.uniform(0.0, 0.15) * room,
                subsidy_bearer="consumer" if rng.integers(2) else "firm",
                tax_bearer="consumer" if rng.integers(2) else "firm",
            )
            swapped = swap_bearers(iv)
            for solver in (solve_monopoly, solve_competitive):
                one = solver(prim, iv)
                other = solver(prim, swapped)
                worst = max(
                    worst,
                    abs(one.quantity - other.quantity),
                    abs(one.consumer_price - other.consumer_price),
                    abs(one.producer_price - other.producer_price),
                )
                compared += 1
        # stochastic transfers compare draw by draw on the same series
        for k in range(20):
            prim = random_economy(rng, quadratic=bool(k % 2))
            base = 0.04 * (prim.params[0] - prim.params[2])
            iv = Intervention(
                subsidy=lambda v, base=base: base * (1.0 + abs(v)),
                tax=lambda v, base=base: base * 0.5 * (1.0 + v * v),
                driver=Driver(seed=100 + k, n_draws=4),
            )
            swapped = swap_bearers(iv)
            for regime in (MONOPOLY, COMPETITIVE):
                for one, other in zip(
                    solve_path(prim, iv, regime), solve_path(prim, swapped, regime)
                ):
                    worst = max(
                        worst,
                        abs(one.quantity - other.quantity),
                        abs(one.consumer_price - other.consumer_price),
                        abs(one.producer_price - other.producer_price),
                    )
                    compared += 1
        info["detail"] = f"max gap {worst:.1e} across {compared} solved pairs"
        assert compared >= 480
        assert worst <= 1e-9


def test_03_pass_through_benchmarks():
    with check(3, "pass-through: competitive 1.0, constant-cost monopoly 0.5 (<= 1e-9)") as info:
        rng = np.random.default_rng(11)
        worst_comp = worst_mono = 0.0
        for _ in range(50):
            prim = random_economy(rng, quadratic=False)
            subsidy = rng.uniform(0.02, 0.2) * (prim.params[0] - prim.params[2])
            worst_comp = max(
                worst_comp, abs(pass_through(prim, subsidy, COMPETITIVE) - 1.0)
            )
            worst_mono = max(
                worst_mono, abs(pass_through(prim, subsidy, MONOPOLY) - 0.5)
            )
        info["detail"] = (
            f"worst gaps {worst_comp:.1e} (competitive), {worst_mono:.1e} (monopoly)"
        )
        assert worst_comp <= 1e-9
        assert worst_mono <= 1e-9


def _random_grouped_design(rng, n, k):
    cols = [np.ones(n)]
    names = ["const"]
    gids = [0]
    x = rng.standard_normal((n, k))
    for j in range(1, k):  # induce real cross-column correlation
        x[:, j] += 0.5 * x[:, j - 1]
    g, j = 1, 0
    while j < k:
        width = min(int(rng.integers(1, 4)), k - j)
        if j + width == k and width > 1:
            width -= 1  # the outcome keeps its own terminal group
        for _ in range(width):
            cols.append(x[:, j])
            names.append(f"x{j}")
            gids.append(g)
            j += 1
        g += 1
    return OrderedDesign(np.column_stack(cols), names, gids)


def test_04_residualized_groups_are_orthogonal():
    with check(4, "cross-group residual correlations on 100 random 200x8 designs (< 1e-8)") as info:
        worst = 0.0
        for trial in range(100):
            rng = np.random.default_rng(5000 + trial)
            design = _random_grouped_design(rng, n=200, k=8)
            worst = max(worst, max_cross_group_correlation(design))
        info["detail"] = f"largest |correlation| {worst:.2e}"
        assert worst < 1e-8


def _chain_dgp():
    return ChainDGP(
        names=("x", "i", "g", "y"),
        coefficients={
            ("x", "i"): 0.5,
            ("i", "g"): 0.4,
            ("x", "g"): 0.2,
            ("g", "y"): 0.3,
            ("i", "y"): 0.1,
            ("x", "y"): 0.05,
        },
    )


def test_05_estimator_is_unbiased_with_no_efficiency_loss():
    with check(5, "10,000-rep Monte Carlo: bias within 3 MC-SE, variance ratio <= 1+1e-3 (< 60 s)") as info:
        started = time.perf_counter()
        dgp = _chain_dgp()

        # the lean re-estimation path must agree with the public estimators
        spot_seed, spot_reps, spot_n = 314, 2, 150
        tot, dir_ = _mc_chain(dgp, spot_reps, spot_n, spot_seed)
        children = np.random.SeedSequence(spot_seed).spawn(spot_reps)
        ordering = dgp.ordering()
        for r in range(spot_reps):
            design = dgp.generate(spot_n, np.random.default_rng(children[r]))
            direct = estimate_direct(design, ordering, full_system=True)
            total = estimate_total_gsls(design, ordering, full_system=True)
            for cause, effect in tot:
                assert tot[(cause, effect)][r] == pytest.approx(
                    total.effect(effect, cause).estimate, abs=1e-9
                )
                assert dir_[(cause, effect)][r] == pytest.approx(
                    direct.effect(effect, cause).estimate, abs=1e-9
                )

        report = estimator_diagnostics(dgp=dgp, reps=10_000, n_obs=200, seed=20240817)
        worst_bias_se = 0.0
        worst_ratio = 0.0
        worst_terminal = 0.0
        for pair, ok in report.bias_within_3se.items():
            assert ok, (pair, report.mc_mean[pair], report.truth_total[pair])
            gap = abs(report.mc_mean[pair] - report.truth_total[pair])
            worst_bias_se = max(worst_bias_se, gap / report.mc_se[pair])
        for pair, ratio in report.variance_ratio.items():
            assert ratio <= 1.0 + 1e-3, (pair, ratio)
            worst_ratio = max(worst_ratio, ratio)
            if report.terminal[pair]:
                assert abs(ratio - 1.0) < 1e-6, (pair, ratio)
                worst_terminal = max(worst_terminal, abs(ratio - 1.0))
        elapsed = time.perf_counter() - started
        info["detail"] = (
            f"worst bias {worst_bias_se:.2f} MC-SE, worst ratio {worst_ratio:.6f}, "
            f"terminal within {worst_terminal:.1e} of 1, {elapsed:.1f}s"
        )
        assert elapsed < 60.0


EXACT_X1 = [4, 1, -2, -5, 4, -4, -7, -4, 5, 6, -6, 7, 1, 9, -8, 5, -6, -8, -6,
            -7, -7, 6, -7, 2, 5, 0, 3, -9, 4, -4]
EXACT_X2 = [5, 3, -4, -9, 6, -3, -6, -4, 3, 2, -7, 3, 2, 9, -7, 5, -10, -5,
            -3, -9, -4, 2, -8, 1, 6, 3, 1, -7, 1, -6]
EXACT_Y = [9, 12, -6, -17, 10, -11, -18, -14, 15, 9, -15, 16, 3, 32, -17, 21,
           -32, -14, -12, -26, -19, 14, -17, 4, 11, 12, 0, -28, 11, -16]


def exact_ols(columns, y):
    """Least squares in rational arithmetic via the normal equations."""
    cols = [[Fraction(int(v)) for v in c] for c in columns]
    yf = [Fraction(int(v)) for v in y]
    k = len(cols)
    aug = [
        [sum(a * b for a, b in zip(cols[i], cols[j])) for j in range(k)]
        + [sum(a * b for a, b in zip(cols[i], yf))]
        for i in range(k)
    ]
    for p in range(k):
        pivot = next(r for r in range(p, k) if aug[r][p] != 0)
        aug[p], aug[pivot] = aug[pivot], aug[p]
        for r in range(k):
            if r != p and aug[r][p] != 0:
                f = aug[r][p] / aug[p][p]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[p])]
    return [aug[i][k] / aug[i][i] for i in range(k)]


def exact_fixture_design():
    matrix = np.column_stack(
        [np.ones(30), EXACT_X1, EXACT_X2, EXACT_Y]
    ).astype(float)
    return OrderedDesign(matrix, ["const", "x1", "x2", "y"], [0, 1, 2, 3])


def test_06_total_effects_equal_composed_paths_everywhere(
    panel_factory, interval_factory, tmp_path, capsys
):
    with check(6, "estimated totals equal direct-path composition on every fixture (<= 1e-8)") as info:
        gaps = []

        design = exact_fixture_design()
        gaps.append(path_identity_gap(design, ordering_from_design(design, chain=("x2",))))

        for seed in range(10):
            d = _chain_dgp().generate(120, np.random.default_rng(seed))
            gaps.append(path_identity_gap(d, _chain_dgp().ordering()))

        panel = panel_factory(seed=0)
        for outcome in ("cap_ng_mw", "cap_renewables_mw"):
            for kwargs in (
                {},
                {"lag": 0, "fixed_effects": ()},
                {"drop_months": ("2021-02",)},
            ):
                d, o = build_design(panel, outcome, **kwargs)
                gaps.append(path_identity_gap(d, o))

        plain = underbid_fit(interval_factory(seed=3), UnderbidSpec(fixed_effects=()))
        gaps.append(path_identity_gap(plain.design, plain.ordering))
        serial = ar_gls_fit(
            interval_factory(seed=4, rho=0.7),
            UnderbidSpec(fixed_effects=(), ar_horizons=(1,)),
        )
        gaps.append(path_identity_gap(serial.design, serial.ordering))

        # the command-line estimator re-checks the identity on every run
        panel_path = tmp_path / "panel.csv"
        write_panel(panel, panel_path)
        code = cli_main([
            "estimate", "--panel", str(panel_path), "--outcome", "cap_ng_mw",
            "--out", str(tmp_path / "out"),
        ])
        stdout = capsys.readouterr().out
        assert code == 0
        assert "identity check: max path gap" in stdout

        info["detail"] = f"max gap {max(gaps):.1e} over {len(gaps)} fixtures"
        assert max(gaps) <= 1e-8


def test_07_decomposition_matches_the_exact_oracle():
    with check(7, "recursive decomposition equals re-estimated totals (<= 1e-8, exact oracle)") as info:
        ones = [1] * 30
        alpha_12 = exact_ols([ones, EXACT_X1], EXACT_X2)[1]
        _, alpha_1y, alpha_2y = exact_ols([ones, EXACT_X1, EXACT_X2], EXACT_Y)
        total_1y = exact_ols([ones, EXACT_X1], EXACT_Y)[1]
        # in-sample path identity holds exactly in rational arithmetic
        assert total_1y == alpha_1y + alpha_12 * alpha_2y

        design = exact_fixture_design()
        ordering = ordering_from_design(design, chain=("x2",))
        direct = estimate_direct(design, ordering)
        total = estimate_total_gsls(design, ordering)
        assert direct.effect("x2", "x1").estimate == pytest.approx(float(alpha_12), abs=1e-12)
        assert direct.effect("y", "x1").estimate == pytest.approx(float(alpha_1y), abs=1e-12)
        assert direct.effect("y", "x2").estimate == pytest.approx(float(alpha_2y), abs=1e-12)
        assert total.effect("y", "x1").estimate == pytest.approx(float(total_1y), abs=1e-12)

        implied = decompose_total(direct)
        worst = 0.0
        for cell in implied.cells:
            worst = max(
                worst, abs(cell.estimate - total.effect(cell.outcome, cell.cause).estimate)
            )
        info["detail"] = f"largest decomposition gap {worst:.1e}"
        assert worst <= 1e-8


def brute_force_pairs(frame, covariates):
    """Exhaustive nearest-control search under the pooled-covariance metric."""
    x = frame[list(covariates)].to_numpy(dtype=float)
    s_inv = np.linalg.inv(np.cov(x, rowvar=False, ddof=1))
    flags = frame["incentive"].to_numpy() > 0
    out = {}
    for t in np.flatnonzero(flags):
        best, best_d = None, np.inf
        for c in np.flatnonzero(~flags):
            diff = x[t] - x[c]
            d = float(diff @ s_inv @ diff)
            if d < best_d:
                best, best_d = c, d
        out[t] = (best, np.sqrt(best_d))
    return out


def test_08_matching_agrees_with_enumeration_and_balances(confounded_factory):
    with check(8, "matching: enumeration-exact pairs, ATET within 3 SE, balance never worsens") as info:
        for seed in range(5):
            rng = np.random.default_rng(3000 + seed)
            frame = pd.DataFrame(
                {
                    "a": rng.normal(size=50),
                    "b": rng.normal(size=50),
                    "c": rng.normal(size=50),
                    "incentive": (rng.random(50) < 0.3) * rng.gamma(2.0, 10.0, 50),
                }
            )
            treated = frame["incentive"] > 0
            assert treated.any() and not treated.all()
            matched = mahalanobis_match(frame, MatchSpec(("a", "b", "c")))
            oracle = brute_force_pairs(frame, ("a", "b", "c"))
            assert len(matched.pairs) == len(oracle)
            for row in matched.pairs.itertuples(index=False):
                control, distance = oracle[row.treated_row]
                assert row.control_row == control
                assert row.distance == pytest.approx(distance, abs=1e-10)

        frame = confounded_factory(n=4000, tau=-10.0, seed=9)
        matched = mahalanobis_match(frame, MatchSpec(("c1", "c2", "c3")))
        result = estimate_atet(frame, matched, "energy_price")
        gap_se = abs(result.coefficient - (-10.0)) / result.std_error
        assert gap_se <= 3.0

        report = balance_report(frame, matched)
        assert (report["std_diff_matched"].abs() <= report["std_diff_raw"].abs()).all()
        assert (report["std_diff_raw"].abs() > 0.1).all()

        info["detail"] = (
            f"5 enumeration fixtures exact; ATET {result.coefficient:.2f} vs -10 "
            f"({gap_se:.2f} SE); matched balance tighter on all covariates"
        )


def test_09_bid_offsets_recovered_with_and_without_serial_errors(interval_factory):
    with check(9, "fixed and proportional bid offsets recovered within 3 SE, serial errors or not") as info:
        plain = underbid_fit(interval_factory(seed=3), UnderbidSpec(fixed_effects=()))
        b1 = plain.direct.effect("energy_price", "incentive_active")
        b2 = plain.direct.effect("energy_price", "incentive")
        assert abs(b1.estimate - (-50.0)) <= 3.0 * b1.std_error
        assert abs(b2.estimate - (-0.2)) <= 3.0 * b2.std_error

        serial = ar_gls_fit(
            interval_factory(seed=4, rho=0.7),
            UnderbidSpec(fixed_effects=(), ar_horizons=(1,)),
        )
        s1 = serial.direct.effect("energy_price", "incentive_active")
        s2 = serial.direct.effect("energy_price", "incentive")
        phi = serial.direct.effect("energy_price", "ar_error_15min")
        assert abs(s1.estimate - (-50.0)) <= 3.0 * s1.std_error
        assert abs(s2.estimate - (-0.2)) <= 3.0 * s2.std_error
        assert abs(phi.estimate - 0.7) <= 3.0 * phi.std_error

        info["detail"] = (
            f"clean: {b1.estimate:.1f}/{b2.estimate:.3f}; "
            f"serial: {s1.estimate:.1f}/{s2.estimate:.3f}, "
            f"lagged-error coefficient {phi.estimate:.3f} vs 0.7"
        )


def test_10_lag_sweep_size_and_null_calibration(panel_factory):
    with check(10, "sweep emits 222 models per outcome; null rejections calibrate at 5% (< 120 s)") as info:
        started = time.perf_counter()
        assert SweepGrid().models_per_outcome == 222
        rates = []
        for seed in range(8):
            result = sweep(panel_factory(seed=seed))
            per_outcome = result.models.groupby("outcome").size()
            assert (per_outcome == 222).all(), per_outcome
            ok = result.models[result.models.status == "ok"]
            assert len(ok) == 444
            rates.append((ok.p_value < 0.05).mean())
        rates = np.asarray(rates)
        # models inside one panel share data, so calibration clusters by panel
        t_stat = (rates.mean() - 0.05) / (rates.std(ddof=1) / np.sqrt(len(rates)))
        elapsed = time.perf_counter() - started
        info["detail"] = (
            f"mean false-positive rate {rates.mean():.3f} over 8 independent panels "
            f"(cluster t {t_stat:+.2f}), {elapsed:.0f}s"
        )
        assert abs(t_stat) <= 3.0
        assert elapsed < 120.0


def test_11_capacity_accounting_balances():
    with check(11, "entry/exit accounting: final = initial + entries - exits, exactly") as info:
        rows = []
        history = {
            # incumbent NG stays; one NG retires; wind enters month 2; solar
            # enters month 3; an Other unit leaves; one applicant never builds
            ("g1", "p1", 100.0, "NG"): ("OP", "OP", "OP"),
            ("g2", "p1", 50.0, "WND"): ("P", "OP", "OP"),
            ("g3", "p2", 30.0, "NG"): ("OP", "RE", "RE"),
            ("g4", "p2", 20.0, "SUN"): ("P", "P", "OP"),
            ("g5", "p3", 10.0, "NUC"): ("OP", "OP", "OS"),
            ("g6", "p3", 40.0, "WND"): ("P", "L", "T"),
        }
        for (gen, plant, mw, fuel), statuses in history.items():
            for month, status in zip(("2021-01", "2021-02", "2021-03"), statuses):
                rows.append((gen, plant, month, mw, status, fuel))
        frame = validate_generators(
            pd.DataFrame(
                rows,
                columns=["generator_id", "plant_id", "month", "capacity_mw",
                         "status", "fuel"],
            )
        )
        events = detect_entry_exit(frame)
        table = tabulate_entry_exit(events, frame)

        for category in table.category.unique():
            sub = table[table.category == category].set_index("section")
            count_gap = sub.loc["Final", "count"] - (
                sub.loc["Initial", "count"]
                + sub.loc["Entrants", "count"]
                - sub.loc["Exits", "count"]
            )
            mw_gap = sub.loc["Final", "total_mw"] - (
                sub.loc["Initial", "total_mw"]
                + sub.loc["Entrants", "total_mw"]
                - sub.loc["Exits", "total_mw"]
            )
            assert count_gap == 0, category
            assert mw_gap == 0.0, category

        every = table[table.category == "All"].set_index("section")
        info["detail"] = (
            f"{int(every.loc['Initial', 'count'])} initial + "
            f"{int(every.loc['Entrants', 'count'])} in - "
            f"{int(every.loc['Exits', 'count'])} out = "
            f"{int(every.loc['Final', 'count'])} final "
            f"({every.loc['Final', 'total_mw']:.0f} MW); replication totals "
            "need the external inventory feed"
        )


def test_12_interval_summary_matches_brute_force(interval_factory):
    with check(12, "incentive-state interval summary equals brute-force recomputation exactly") as info:
        hand = pd.DataFrame(
            {
                "energy_price": [28.0, 34.0, 950.0, 3800.0],
                "incentive": [0.0, 0.0, 12.0, 100.0],
                "capacity_utilization": [0.75, 0.5, 0.9375, 1.0],
            }
        )
        table = summarize_by_incentive_state(hand)
        assert table.loc["energy_price", "All"] == (28.0 + 34.0 + 950.0 + 3800.0) / 4
        assert table.loc["energy_price", "Inactive"] == 31.0
        assert table.loc["energy_price", "Active"] == 2375.0
        assert table.loc["incentive", "Active"] == 56.0
        assert table.loc["observations", "Active"] == 2.0

        frame = interval_factory(seed=3)
        table = summarize_by_incentive_state(frame)
        active = (frame["incentive"] > 0).to_numpy()
        masks = {
            "All": np.ones(len(frame), dtype=bool),
            "Inactive": ~active,
            "Active": active,
        }
        numeric = frame.select_dtypes(include=[np.number])
        cells = 0
        for label, mask in masks.items():
            for name in numeric.columns:
                values = numeric[name].to_numpy()[mask]
                expect = float(np.sum(values) / len(values)) if len(values) else None
                if expect is None:
                    assert np.isnan(table.loc[name, label])
                else:
                    assert table.loc[name, label] == expect, (name, label)
                cells += 1
            assert table.loc["observations", label] == float(mask.sum())
        info["detail"] = f"{cells} group means identical on a {len(frame)}-row feed"
