"""Ordered regression designs, least squares, and grouped orthogonalisation.

An OrderedDesign is a numeric matrix whose columns appear in causal order and
carry group labels.  Columns inside one group are treated as simultaneously
determined: they are never regressed on one another.  The last column is the
dependent variable and sits alone in the final group.

Three operations live here.  ``ols_fit`` runs ordinary least squares through
a QR decomposition (never an explicit inverse) and reports classical
homoskedastic errors.  ``gram_schmidt_residualize`` replaces every
non-intercept column by its residual from a regression on all columns of
strictly earlier groups, using modified (column-by-column) Gram-Schmidt for
numerical stability.  ``coefficient_covariance`` evaluates the closed-form
covariance of two same-equation coefficients from the correlation of their
regressors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateCorrelation,
    InsufficientData,
    RankDeficient,
    ValidationError,
)

# A QR pivot below this multiple of the column norm marks the column as a
# linear combination of its predecessors.
RANK_TOLERANCE = 1e-10


@dataclass
class OrderedDesign:
    """Numeric design matrix with causally ordered, grouped columns.

    Attributes:
        matrix: (n_obs, n_cols) float array.
        column_names: one name per column, unique.
        group_ids: non-decreasing integer labels, one per column.  Columns
            sharing a label are simultaneously determined.  The last column
            must hold a label of its own: it is the dependent variable.
        has_intercept: when True, column 0 is all ones and forms group 0.
        residualized: marks the output of ``gram_schmidt_residualize``.
    """

    matrix: np.ndarray
    column_names: list[str]
    group_ids: list[int]
    has_intercept: bool = True
    residualized: bool = False

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.column_names = list(self.column_names)
        self.group_ids = [int(g) for g in self.group_ids]
        if self.matrix.ndim != 2:
            raise ValidationError("design matrix must be two-dimensional")
        n, k = self.matrix.shape
        if len(self.column_names) != k or len(self.group_ids) != k:
            raise ValidationError(
                f"matrix has {k} columns but {len(self.column_names)} names "
                f"and {len(self.group_ids)} group ids were given"
            )
        if len(set(self.column_names)) != k:
            raise ValidationError("column names must be unique")
        if k < 2:
            raise ValidationError("a design needs at least one regressor and an outcome")
        if any(b < a for a, b in zip(self.group_ids, self.group_ids[1:])):
            raise ValidationError("group ids must be non-decreasing left to right")
        if self.group_ids[-1] == self.group_ids[-2]:
            raise ValidationError("the outcome column must sit alone in the last group")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("design matrix contains non-finite values")
        if self.has_intercept:
            if not np.all(self.matrix[:, 0] == 1.0):
                raise ValidationError("has_intercept requires column 0 to be all ones")
            if k > 1 and self.group_ids[0] == self.group_ids[1]:
                raise ValidationError("the intercept must form a group of its own")
        if n <= k:
            raise InsufficientData(
                f"design has {n} rows for {k} columns; positive degrees of "
                "freedom are required"
            )
        self._check_rank()

    def _check_rank(self) -> None:
        # The outcome column is exempt: an outcome inside the regressors' span
        # is a perfect fit, not a defect.
        r = np.linalg.qr(self.matrix, mode="r")
        norms = np.linalg.norm(self.matrix, axis=0)
        for j in range(self.matrix.shape[1] - 1):
            if norms[j] == 0.0 or abs(r[j, j]) < RANK_TOLERANCE * norms[j]:
                raise RankDeficient(
                    f"column '{self.column_names[j]}' is numerically a linear "
                    "combination of the columns before it"
                )

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def outcome_index(self) -> int:
        return self.n_cols - 1

    @property
    def outcome_name(self) -> str:
        return self.column_names[-1]

    def index_of(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise ValidationError(f"design has no column named '{name}'") from None

    def group_blocks(self) -> list[tuple[int, list[int]]]:
        """Column indices per group, in group order."""
        blocks: list[tuple[int, list[int]]] = []
        for j, g in enumerate(self.group_ids):
            if blocks and blocks[-1][0] == g:
                blocks[-1][1].append(j)
            else:
                blocks.append((g, [j]))
        return blocks

    def columns_before_group(self, group_id: int) -> list[int]:
        return [j for j, g in enumerate(self.group_ids) if g < group_id]


@dataclass
class FitResult:
    """Least-squares fit of one equation.

    Coefficient order follows ``x_names``.  Errors are classical
    homoskedastic: sigma2 is the residual variance on ``dof`` degrees of
    freedom and the p-values come from the t distribution.
    """

    y_name: str
    x_names: list[str]
    coef: np.ndarray
    std_err: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    sigma2: float
    rss: float
    dof: int
    nobs: int
    r_squared: float
    adj_r_squared: float
    xtx_inv: np.ndarray = field(repr=False)
    intercept_included: bool = True

    def coefficient(self, name: str) -> float:
        return float(self.coef[self._pos(name)])

    def standard_error(self, name: str) -> float:
        return float(self.std_err[self._pos(name)])

    def p_value_of(self, name: str) -> float:
        return float(self.p_value[self._pos(name)])

    def _pos(self, name: str) -> int:
        try:
            return self.x_names.index(name)
        except ValueError:
            raise ValidationError(
                f"fit of '{self.y_name}' has no regressor named '{name}'"
            ) from None


def fit_matrix(
    x: np.ndarray,
    y: np.ndarray,
    x_names: list[str],
    y_name: str,
    intercept_included: bool = True,
) -> FitResult:
    """Least squares of ``y`` on the columns of ``x`` via QR.

    This is the single fitting path in the package: ``ols_fit`` and the
    structural estimators all route through it.  Raises InsufficientData when
    degrees of freedom are non-positive and RankDeficient (naming the
    offending column) when a QR pivot collapses.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = x.shape
    if n <= k:
        raise InsufficientData(
            f"equation for '{y_name}' has {n} rows and {k} regressors; "
            "positive degrees of freedom are required"
        )
    q, r = np.linalg.qr(x)
    norms = np.linalg.norm(x, axis=0)
    for j in range(k):
        if norms[j] == 0.0 or abs(r[j, j]) < RANK_TOLERANCE * norms[j]:
            raise RankDeficient(
                f"regressor '{x_names[j]}' is numerically a linear combination "
                f"of the columns before it in the equation for '{y_name}'"
            )
    coef = solve_triangular(r, q.T @ y, lower=False)
    fitted = x @ coef
    residuals = y - fitted
    rss = float(residuals @ residuals)
    dof = n - k
    sigma2 = rss / dof
    r_inv = solve_triangular(r, np.eye(k), lower=False)
    xtx_inv = r_inv @ r_inv.T
    std_err = np.sqrt(sigma2 * np.diag(xtx_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = np.where(std_err > 0, coef / std_err, np.inf * np.sign(coef))
    p_value = 2.0 * stats.t.sf(np.abs(t_stat), dof)

    if intercept_included:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    if tss > 0:
        r_squared = 1.0 - rss / tss
    else:
        r_squared = 0.0
    if intercept_included:
        adj = 1.0 - (1.0 - r_squared) * (n - 1) / dof
    else:
        adj = 1.0 - (1.0 - r_squared) * n / dof

    return FitResult(
        y_name=y_name,
        x_names=list(x_names),
        coef=coef,
        std_err=std_err,
        t_stat=t_stat,
        p_value=p_value,
        residuals=residuals,
        fitted=fitted,
        sigma2=sigma2,
        rss=rss,
        dof=dof,
        nobs=n,
        r_squared=r_squared,
        adj_r_squared=adj,
        xtx_inv=xtx_inv,
        intercept_included=intercept_included,
    )


def ols_fit(
    design: OrderedDesign,
    y_index: int | None = None,
    x_indices: list[int] | None = None,
) -> FitResult:
    """Regress one design column on a set of earlier columns.

    By default the outcome is the last column and the regressors are every
    column before it.  ``x_indices`` restricts the regressor set (the
    structural estimators use this to honour group boundaries).
    """
    if y_index is None:
        y_index = design.outcome_index
    if x_indices is None:
        x_indices = list(range(y_index))
    if not x_indices:
        raise ValidationError("at least one regressor is required")
    if any(j >= y_index for j in x_indices):
        raise ValidationError("regressors must precede the outcome column")
    x = design.matrix[:, x_indices]
    y = design.matrix[:, y_index]
    names = [design.column_names[j] for j in x_indices]
    intercept_included = design.has_intercept and 0 in x_indices
    return fit_matrix(x, y, names, design.column_names[y_index], intercept_included)


def gram_schmidt_residualize(design: OrderedDesign) -> OrderedDesign:
    """Replace each column by its residual on all strictly earlier groups.

    Works block-by-block in group order.  Columns within one group are left
    correlated with each other; across groups the output columns are
    orthogonal.  The sweep is modified Gram-Schmidt: each column's running
    residual is re-projected against every already-processed block, which is
    numerically stabler than projecting the original column once.

    The first group (the intercept, when present) passes through unchanged.
    Column order and names are preserved; the result is marked
    ``residualized=True``.
    """
    out = design.matrix.copy()
    blocks = design.group_blocks()
    processed: list[list[int]] = []
    for position, (_, cols) in enumerate(blocks):
        if position == 0:
            processed.append(cols)
            continue
        for j in cols:
            u = out[:, j].copy()
            for earlier in processed:
                if len(earlier) == 1:
                    b = out[:, earlier[0]]
                    u -= (b @ u) / (b @ b) * b
                else:
                    block = out[:, earlier]
                    coef, *_ = np.linalg.lstsq(block, u, rcond=None)
                    u -= block @ coef
            spanned = np.linalg.norm(u) < RANK_TOLERANCE * np.linalg.norm(
                design.matrix[:, j]
            )
            if spanned and j != design.outcome_index:
                # A vanishing outcome residual is a perfect fit; a vanishing
                # regressor residual is collinearity.
                raise RankDeficient(
                    f"column '{design.column_names[j]}' is numerically spanned "
                    "by earlier groups"
                )
            out[:, j] = u
        processed.append(cols)
    return OrderedDesign(
        matrix=out,
        column_names=list(design.column_names),
        group_ids=list(design.group_ids),
        has_intercept=design.has_intercept,
        residualized=True,
    )


def regressor_correlation(u: np.ndarray, v: np.ndarray) -> float:
    """Uncentered correlation u'v / sqrt((u'u)(v'v)) of two regressors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = np.sqrt((u @ u) * (v @ v))
    if denom == 0.0:
        raise DegenerateCorrelation("correlation of a zero-length regressor is undefined")
    return float((u @ v) / denom)


def coefficient_covariance(sigma2: float, r: float) -> float:
    """Covariance of two same-equation coefficients with regressor correlation r.

    For two unit-scale regressors in one equation with residual variance
    sigma2, the coefficient covariance is sigma2 * (-r) / (1 - r^2): linear in
    the correlation near zero and divergent as |r| approaches one.
    """
    if abs(r) >= 1.0 - 1e-12:
        raise DegenerateCorrelation(
            f"regressor correlation {r:+.12f} leaves the coefficient "
            "covariance undefined"
        )
    return float(sigma2 * (-r) / (1.0 - r * r))


def coefficient_covariance_from_columns(
    sigma2: float, u: np.ndarray, v: np.ndarray
) -> float:
    """Same as ``coefficient_covariance`` with r computed from the columns."""
    return coefficient_covariance(sigma2, regressor_correlation(u, v))
