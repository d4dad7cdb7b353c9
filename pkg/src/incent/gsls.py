"""Recursive structural systems on ordered designs.

A causal ordering lists covariate groups left to right, followed by
endogenous chain variables, with the outcome last.  Each structural equation
regresses one variable on every column of strictly earlier groups.  Direct
effects are those least-squares coefficients on the original columns.  Total
effects come from the same equations after grouped Gram-Schmidt
residualisation of the regressors (the dependent variable stays original):
because a residualised upstream column is orthogonal to everything later, its
coefficient absorbs every path that starts at that column.

The two sides are linked in sample, exactly, by the path recursion

    total(i -> j) = direct(i -> j)
                    + sum over intermediate columns n of
                      total(i -> n) * direct(n -> j),

where intermediates run over columns in groups strictly between i's and j's.
``decompose_total`` evaluates that recursion from a direct-effects table and
``estimate_total_gsls`` estimates the left side; ``path_identity_gap`` checks
they agree.

``estimator_diagnostics`` reports the numerical properties the construction is
chosen for: cross-group residual orthogonality, unbiasedness of the total
coefficients over Monte Carlo replications, the total/direct sampling
variance ratio (at most one, with equality for the terminal regressor), and
the same-equation coefficient covariances, which orthogonalisation drives to
zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .design import (
    FitResult,
    OrderedDesign,
    fit_matrix,
    gram_schmidt_residualize,
    ols_fit,
)
from .errors import IncompleteTable, ValidationError

DIRECT = "direct"
TOTAL = "total"
TOTAL_IMPLIED = "total_implied"


@dataclass(frozen=True)
class Group:
    """One simultaneity group: columns never regressed on one another.

    ``equation`` optionally names the member that receives its own structural
    equation (an endogenous chain variable).
    """

    name: str
    columns: tuple[str, ...]
    equation: str | None = None

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValidationError(f"group '{self.name}' has no columns")
        if self.equation is not None and self.equation not in self.columns:
            raise ValidationError(
                f"group '{self.name}' does not contain its equation column "
                f"'{self.equation}'"
            )


@dataclass(frozen=True)
class CausalOrdering:
    """Ordered groups over a design's non-intercept columns.

    The final group holds the outcome alone and must carry its equation.
    ``lags`` is optional metadata recording how many periods each column was
    lagged when the design was built.
    """

    groups: tuple[Group, ...]
    lags: Mapping[str, int] | None = None

    def __post_init__(self) -> None:
        if len(self.groups) < 2:
            raise ValidationError("an ordering needs at least one cause group and an outcome")
        names = [c for g in self.groups for c in g.columns]
        if len(set(names)) != len(names):
            raise ValidationError("ordering groups repeat a column")
        last = self.groups[-1]
        if len(last.columns) != 1 or last.equation != last.columns[0]:
            raise ValidationError(
                "the final ordering group must hold the outcome alone, "
                "marked as its own equation"
            )

    @property
    def chain(self) -> tuple[str, ...]:
        return tuple(g.equation for g in self.groups if g.equation is not None)

    @property
    def outcome(self) -> str:
        return self.groups[-1].columns[0]

    def columns(self) -> list[str]:
        return [c for g in self.groups for c in g.columns]

    def validate_against(self, design: OrderedDesign) -> None:
        expected = design.column_names[1:] if design.has_intercept else design.column_names
        if self.columns() != list(expected):
            raise ValidationError(
                "ordering columns do not match the design's non-intercept "
                "columns in order"
            )
        # group boundaries must agree with the design's group ids
        gids = design.group_ids[1:] if design.has_intercept else design.group_ids
        sizes = [len(g.columns) for g in self.groups]
        pos = 0
        for size in sizes:
            block = gids[pos : pos + size]
            if len(set(block)) != 1:
                raise ValidationError("ordering group straddles a design group boundary")
            if pos + size < len(gids) and gids[pos + size] == block[0]:
                raise ValidationError("ordering splits a design group")
            pos += size


def ordering_from_design(
    design: OrderedDesign,
    chain: tuple[str, ...] | list[str] = (),
    group_names: Mapping[int, str] | None = None,
) -> CausalOrdering:
    """Derive an ordering from a design's group structure.

    ``chain`` names the columns that receive structural equations; the
    outcome is always included.  Single-column groups are named after their
    column unless ``group_names`` overrides by group id.
    """
    chain = set(chain) | {design.outcome_name}
    groups: list[Group] = []
    for gid, cols in design.group_blocks():
        names = [design.column_names[j] for j in cols]
        if design.has_intercept and gid == design.group_ids[0]:
            continue
        members = [c for c in names if c in chain]
        if len(members) > 1:
            raise ValidationError(
                f"group {gid} holds more than one chain column: {members}"
            )
        label = (
            group_names[gid]
            if group_names and gid in group_names
            else (names[0] if len(names) == 1 else f"group_{gid}")
        )
        groups.append(Group(label, tuple(names), members[0] if members else None))
    unknown = chain - set(design.column_names)
    if unknown:
        raise ValidationError(f"chain names not in the design: {sorted(unknown)}")
    return CausalOrdering(tuple(groups))


@dataclass(frozen=True)
class EffectCell:
    """One (outcome, cause) coefficient with its classical error."""

    outcome: str
    cause: str
    estimate: float
    std_error: float
    t_stat: float
    p_value: float

    @property
    def stars(self) -> str:
        if self.p_value < 0.001:
            return "***"
        if self.p_value < 0.01:
            return "**"
        if self.p_value < 0.05:
            return "*"
        return ""


@dataclass
class EquationStats:
    nobs: int
    dof: int
    r_squared: float
    adj_r_squared: float
    sigma2: float
    rss: float


@dataclass
class EffectsTable:
    """Coefficients of one estimation side, indexed by (outcome, cause)."""

    side: str
    cells: list[EffectCell]
    equation_stats: dict[str, EquationStats]
    ordering: CausalOrdering
    _index: dict[tuple[str, str], EffectCell] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._index = {(c.outcome, c.cause): c for c in self.cells}

    def effect(self, outcome: str, cause: str) -> EffectCell:
        try:
            return self._index[(outcome, cause)]
        except KeyError:
            raise IncompleteTable(
                f"the {self.side} table has no coefficient for cause "
                f"'{cause}' in the equation for '{outcome}'"
            ) from None

    def has(self, outcome: str, cause: str) -> bool:
        return (outcome, cause) in self._index

    def outcomes(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.outcome not in seen:
                seen.append(c.outcome)
        return seen

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "outcome": [c.outcome for c in self.cells],
                "cause": [c.cause for c in self.cells],
                "estimate": [c.estimate for c in self.cells],
                "std_error": [c.std_error for c in self.cells],
                "t_stat": [c.t_stat for c in self.cells],
                "p_value": [c.p_value for c in self.cells],
                "stars": [c.stars for c in self.cells],
                "side": self.side,
            }
        )


def _equation_columns(
    design: OrderedDesign, ordering: CausalOrdering, full_system: bool
) -> list[str]:
    """Columns to estimate equations for, in design order."""
    if not full_system:
        return list(ordering.chain)
    first_gid = design.group_ids[1] if design.has_intercept else design.group_ids[0]
    cols = [
        name
        for name, gid in zip(design.column_names, design.group_ids)
        if name != (design.column_names[0] if design.has_intercept else None)
        and gid > first_gid
    ]
    # marked chain columns are always included, even inside the first group
    for name in ordering.chain:
        if name not in cols:
            cols.append(name)
    cols.sort(key=design.index_of)
    return cols


def _cells_from_fit(fit: FitResult, outcome: str) -> list[EffectCell]:
    return [
        EffectCell(
            outcome=outcome,
            cause=name,
            estimate=float(fit.coef[i]),
            std_error=float(fit.std_err[i]),
            t_stat=float(fit.t_stat[i]),
            p_value=float(fit.p_value[i]),
        )
        for i, name in enumerate(fit.x_names)
    ]


def _stats_from_fit(fit: FitResult) -> EquationStats:
    return EquationStats(
        nobs=fit.nobs,
        dof=fit.dof,
        r_squared=fit.r_squared,
        adj_r_squared=fit.adj_r_squared,
        sigma2=fit.sigma2,
        rss=fit.rss,
    )


def estimate_direct(
    design: OrderedDesign,
    ordering: CausalOrdering,
    full_system: bool = False,
) -> EffectsTable:
    """Per-equation least squares on the original columns.

    Each chain variable is regressed on all columns of strictly earlier
    groups.  ``full_system=True`` additionally estimates the implicit
    equation of every other downstream column, which ``decompose_total``
    needs when non-chain groups sit between chain variables.
    """
    ordering.validate_against(design)
    cells: list[EffectCell] = []
    stats: dict[str, EquationStats] = {}
    for name in _equation_columns(design, ordering, full_system):
        j = design.index_of(name)
        x_idx = design.columns_before_group(design.group_ids[j])
        if not x_idx:
            raise ValidationError(f"equation column '{name}' has no predecessors")
        fit = ols_fit(design, y_index=j, x_indices=x_idx)
        cells.extend(_cells_from_fit(fit, name))
        stats[name] = _stats_from_fit(fit)
    return EffectsTable(DIRECT, cells, stats, ordering)


def estimate_total_gsls(
    design: OrderedDesign,
    ordering: CausalOrdering,
    full_system: bool = False,
) -> EffectsTable:
    """Per-equation least squares on grouped Gram-Schmidt residuals.

    Regressors are the residualised columns; each dependent variable stays
    original.  The fitted values and residuals of every equation match the
    direct side exactly (the regressors span the same space); only the
    coefficients change meaning, from direct to total effects.
    """
    ordering.validate_against(design)
    resid = gram_schmidt_residualize(design)
    cells: list[EffectCell] = []
    stats: dict[str, EquationStats] = {}
    for name in _equation_columns(design, ordering, full_system):
        j = design.index_of(name)
        x_idx = design.columns_before_group(design.group_ids[j])
        if not x_idx:
            raise ValidationError(f"equation column '{name}' has no predecessors")
        x = resid.matrix[:, x_idx]
        y = design.matrix[:, j]
        names = [design.column_names[i] for i in x_idx]
        fit = fit_matrix(
            x, y, names, name,
            intercept_included=design.has_intercept and 0 in x_idx,
        )
        cells.extend(_cells_from_fit(fit, name))
        stats[name] = _stats_from_fit(fit)
    return EffectsTable(TOTAL, cells, stats, ordering)


def decompose_total(direct: EffectsTable) -> EffectsTable:
    """Implied total effects from a direct-effects table via the path recursion.

    Needs a direct coefficient for every intermediate column's equation;
    raises IncompleteTable naming the first missing one.  The returned cells
    carry no standard errors (they are derived quantities).
    """
    ordering = direct.ordering
    group_of: dict[str, int] = {}
    for gi, group in enumerate(ordering.groups):
        for col in group.columns:
            group_of[col] = gi
    columns = ordering.columns()
    equations = [name for name in columns if name in direct.equation_stats]

    implied: dict[tuple[str, str], float] = {}
    cells: list[EffectCell] = []
    for j in equations:
        gj = group_of[j]
        for i in columns:
            if group_of[i] >= gj:
                continue
            total = direct.effect(j, i).estimate
            for n in columns:
                if not (group_of[i] < group_of[n] < gj):
                    continue
                if (i, n) not in implied:
                    raise IncompleteTable(
                        f"the direct table lacks an equation for intermediate "
                        f"column '{n}', needed to decompose the total effect "
                        f"of '{i}' on '{j}'"
                    )
                total += implied[(i, n)] * direct.effect(j, n).estimate
            implied[(i, j)] = total
            cells.append(
                EffectCell(
                    outcome=j,
                    cause=i,
                    estimate=total,
                    std_error=float("nan"),
                    t_stat=float("nan"),
                    p_value=float("nan"),
                )
            )
    return EffectsTable(TOTAL_IMPLIED, cells, dict(direct.equation_stats), ordering)


def path_identity_gap(design: OrderedDesign, ordering: CausalOrdering) -> float:
    """Largest |implied total - estimated total| over the full system.

    Exact algebra says this is zero; floating point makes it tiny.  Run after
    every estimation as a self-check.
    """
    direct = estimate_direct(design, ordering, full_system=True)
    total = estimate_total_gsls(design, ordering, full_system=True)
    implied = decompose_total(direct)
    gap = 0.0
    for cell in implied.cells:
        est = total.effect(cell.outcome, cell.cause).estimate
        gap = max(gap, abs(cell.estimate - est))
    return gap


def merge_sides(direct: EffectsTable, total: EffectsTable) -> pd.DataFrame:
    """Side-by-side direct and total coefficients, one row per (outcome, cause)."""
    rows = []
    for cell in direct.cells:
        key = (cell.outcome, cell.cause)
        tot = total._index.get(key)
        rows.append(
            {
                "outcome": cell.outcome,
                "cause": cell.cause,
                "direct": cell.estimate,
                "direct_se": cell.std_error,
                "direct_p": cell.p_value,
                "direct_stars": cell.stars,
                "total": tot.estimate if tot else float("nan"),
                "total_se": tot.std_error if tot else float("nan"),
                "total_p": tot.p_value if tot else float("nan"),
                "total_stars": tot.stars if tot else "",
            }
        )
    return pd.DataFrame(rows)


# -- Monte Carlo machinery ------------------------------------------------------


@dataclass(frozen=True)
class ChainDGP:
    """Linear recursive data-generating process over ordered variables.

    Each variable equals a linear combination of strictly earlier variables
    (per ``coefficients``, keyed by (cause, effect)) plus independent normal
    noise.  ``generate`` packages a draw as an OrderedDesign with one group
    per variable, intercept first.
    """

    names: tuple[str, ...]
    coefficients: Mapping[tuple[str, str], float]
    noise_sd: Mapping[str, float] | float = 1.0

    def __post_init__(self) -> None:
        order = {n: i for i, n in enumerate(self.names)}
        if len(order) != len(self.names):
            raise ValidationError("DGP variable names must be unique")
        for cause, effect in self.coefficients:
            if cause not in order or effect not in order:
                raise ValidationError(f"unknown variable in coefficient ({cause}, {effect})")
            if order[cause] >= order[effect]:
                raise ValidationError(
                    f"coefficient ({cause}, {effect}) must point forward in the ordering"
                )

    def _sd(self, name: str) -> float:
        if isinstance(self.noise_sd, Mapping):
            return float(self.noise_sd.get(name, 1.0))
        return float(self.noise_sd)

    def matrix(self, n_obs: int, rng: np.random.Generator) -> np.ndarray:
        m = len(self.names)
        x = np.empty((n_obs, m))
        for j, name in enumerate(self.names):
            col = self._sd(name) * rng.standard_normal(n_obs)
            for i in range(j):
                coef = self.coefficients.get((self.names[i], name))
                if coef:
                    col += coef * x[:, i]
            x[:, j] = col
        return x

    def generate(self, n_obs: int, rng: np.random.Generator) -> OrderedDesign:
        x = self.matrix(n_obs, rng)
        return OrderedDesign(
            np.column_stack([np.ones(n_obs), x]),
            ["const", *self.names],
            list(range(len(self.names) + 1)),
        )

    def ordering(self) -> CausalOrdering:
        groups = [
            Group(name, (name,), equation=name if i > 0 else None)
            for i, name in enumerate(self.names)
        ]
        return CausalOrdering(tuple(groups))

    def truth_direct(self) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for i, cause in enumerate(self.names):
            for effect in self.names[i + 1 :]:
                out[(cause, effect)] = float(self.coefficients.get((cause, effect), 0.0))
        return out

    def truth_total(self) -> dict[tuple[str, str], float]:
        m = len(self.names)
        t = np.zeros((m, m))
        for (cause, effect), v in self.coefficients.items():
            t[self.names.index(cause), self.names.index(effect)] = v
        # total = t + total @ t, solved exactly by the geometric series of a
        # strictly upper-triangular matrix
        total = t @ np.linalg.inv(np.eye(m) - t)
        out: dict[tuple[str, str], float] = {}
        for i in range(m):
            for j in range(i + 1, m):
                out[(self.names[i], self.names[j])] = float(total[i, j])
        return out


def _mc_chain(
    dgp: ChainDGP, reps: int, n_obs: int, seed: int
) -> tuple[dict, dict]:
    """Per-replication total and direct coefficient draws, keyed (cause, effect).

    A lean re-estimation path: with singleton groups, the residualised
    regressors form an orthogonal basis, so each total coefficient is a
    single projection; direct coefficients come from one least-squares solve
    per equation.  Equivalence with the public estimators is asserted in the
    test suite.
    """
    m = len(dgp.names)
    pairs = [(i, j) for j in range(1, m) for i in range(j)]
    tot = {p: np.empty(reps) for p in pairs}
    dir_ = {p: np.empty(reps) for p in pairs}
    children = np.random.SeedSequence(seed).spawn(reps)
    ones = np.ones(n_obs)
    for r, child in enumerate(children):
        rng = np.random.default_rng(child)
        x = dgp.matrix(n_obs, rng)
        basis = [ones]
        resid = []
        for j in range(m):
            u = x[:, j].copy()
            for b in basis:
                u -= (b @ u) / (b @ b) * b
            resid.append(u)
            basis.append(u)
        for j in range(1, m):
            y = x[:, j]
            for i in range(j):
                u = resid[i]
                tot[(i, j)][r] = (u @ y) / (u @ u)
            xd = np.column_stack([ones, x[:, :j]])
            beta, *_ = np.linalg.lstsq(xd, y, rcond=None)
            for i in range(j):
                dir_[(i, j)][r] = beta[1 + i]
    name = dgp.names
    return (
        {(name[i], name[j]): v for (i, j), v in tot.items()},
        {(name[i], name[j]): v for (i, j), v in dir_.items()},
    )


@dataclass
class EstimatorReport:
    """Numerical evidence for the orthogonalised estimator's properties."""

    max_cross_group_residual_correlation: float | None
    mc_mean: dict[tuple[str, str], float]
    mc_se: dict[tuple[str, str], float]
    truth_total: dict[tuple[str, str], float]
    bias_within_3se: dict[tuple[str, str], bool]
    variance_ratio: dict[tuple[str, str], float]
    terminal: dict[tuple[str, str], bool]
    same_equation_covariance: dict[tuple[str, str, str], float]
    same_equation_covariance_se: dict[tuple[str, str, str], float]
    reps: int
    n_obs: int
    seed: int


def max_cross_group_correlation(design: OrderedDesign) -> float:
    """Largest |uncentered correlation| between residualised columns of
    different non-intercept groups."""
    resid = gram_schmidt_residualize(design)
    blocks = resid.group_blocks()
    start = 1 if design.has_intercept else 0
    worst = 0.0
    for a in range(start, len(blocks)):
        for b in range(a + 1, len(blocks)):
            for i in blocks[a][1]:
                for j in blocks[b][1]:
                    u = resid.matrix[:, i]
                    v = resid.matrix[:, j]
                    denom = np.sqrt((u @ u) * (v @ v))
                    if denom > 0:
                        worst = max(worst, abs(float(u @ v / denom)))
    return worst


def estimator_diagnostics(
    design: OrderedDesign | None = None,
    ordering: CausalOrdering | None = None,
    dgp: ChainDGP | None = None,
    reps: int = 10_000,
    n_obs: int = 200,
    seed: int = 0,
) -> EstimatorReport:
    """Orthogonality, bias, variance-ratio, and covariance diagnostics.

    The design part (cross-group residual correlation) needs ``design``; the
    Monte Carlo parts need a declared ``dgp`` with a seed.  The report only
    gathers numbers; callers decide what to assert.
    """
    if design is None and dgp is None:
        raise ValidationError("supply a design, a DGP, or both")
    if design is not None and ordering is not None:
        ordering.validate_against(design)
    max_corr = max_cross_group_correlation(design) if design is not None else None

    mc_mean: dict = {}
    mc_se: dict = {}
    truth: dict = {}
    bias_ok: dict = {}
    var_ratio: dict = {}
    terminal: dict = {}
    cov: dict = {}
    cov_se: dict = {}
    if dgp is not None:
        tot, dir_ = _mc_chain(dgp, reps, n_obs, seed)
        truth = dgp.truth_total()
        order = {n: i for i, n in enumerate(dgp.names)}
        for pair, draws in tot.items():
            mc_mean[pair] = float(draws.mean())
            mc_se[pair] = float(draws.std(ddof=1) / np.sqrt(reps))
            bias_ok[pair] = abs(mc_mean[pair] - truth[pair]) <= 3.0 * mc_se[pair]
            var_ratio[pair] = float(
                draws.var(ddof=1) / dir_[pair].var(ddof=1)
            )
            terminal[pair] = order[pair[1]] - order[pair[0]] == 1
        # same-equation covariance of total coefficients, per outcome
        for j, effect in enumerate(dgp.names):
            causes = [c for c in dgp.names[:j]]
            for a in range(len(causes)):
                for b in range(a + 1, len(causes)):
                    da = tot[(causes[a], effect)]
                    db = tot[(causes[b], effect)]
                    prod = (da - da.mean()) * (db - db.mean())
                    cov[(effect, causes[a], causes[b])] = float(prod.mean())
                    cov_se[(effect, causes[a], causes[b])] = float(
                        prod.std(ddof=1) / np.sqrt(reps)
                    )
    return EstimatorReport(
        max_cross_group_residual_correlation=max_corr,
        mc_mean=mc_mean,
        mc_se=mc_se,
        truth_total=truth,
        bias_within_3se=bias_ok,
        variance_ratio=var_ratio,
        terminal=terminal,
        same_equation_covariance=cov,
        same_equation_covariance_se=cov_se,
        reps=reps,
        n_obs=n_obs,
        seed=seed,
    )
