"""Mahalanobis nearest-neighbor matching and treatment-effect estimation.

Treatment is a strictly positive value in the configured column (active
incentive intervals).  The metric whitens covariates with the Cholesky
factor of their pooled sample covariance, so squared Euclidean distance in
the whitened space is the Mahalanobis distance.  Matching is exact search,
deterministic, with ties broken toward the lowest control row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.stats import norm

from .errors import NoControls, SchemaError, SingularCovariance, ValidationError

_CHUNK = 512


@dataclass(frozen=True)
class MatchSpec:
    """What to match on and how many controls per treated row."""

    covariates: tuple[str, ...]
    treatment_column: str = "incentive"
    matches_per_treated: int = 1
    with_replacement: bool = True
    block_on: str | None = None

    def __post_init__(self) -> None:
        if not self.covariates:
            raise ValidationError("at least one matching covariate is required")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValidationError("matching covariates repeat a column")
        if self.matches_per_treated < 1:
            raise ValidationError("matches_per_treated must be at least 1")


@dataclass
class MatchedSample:
    """Pairings plus the frequency weights they imply for controls."""

    pairs: pd.DataFrame  # columns: treated_row, control_row, distance
    control_weights: pd.Series
    n_raw: int
    n_treated: int
    n_controls: int
    n_matched: int
    spec: MatchSpec


def _whiten(x: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues[0] <= eigenvalues[-1] * np.finfo(float).eps * cov.shape[0]:
        raise SingularCovariance(
            "pooled covariance of the matching covariates is singular; "
            "consider dropping one of the collinear covariates"
        )
    chol = np.linalg.cholesky(cov)
    return solve_triangular(chol, x.T, lower=True).T


def _nearest(
    treated: np.ndarray,
    controls: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Indices (into controls) and distances of the k nearest controls per
    treated row; ties resolve to the earliest index via stable ordering."""
    n_t = treated.shape[0]
    idx = np.empty((n_t, k), dtype=int)
    dist = np.empty((n_t, k))
    for start in range(0, n_t, _CHUNK):
        chunk = treated[start : start + _CHUNK]
        d2 = ((chunk[:, None, :] - controls[None, :, :]) ** 2).sum(axis=2)
        np.maximum(d2, 0.0, out=d2)
        if k == 1:
            best = d2.argmin(axis=1)  # argmin returns the first minimum
            idx[start : start + _CHUNK, 0] = best
            dist[start : start + _CHUNK, 0] = np.sqrt(d2[np.arange(len(chunk)), best])
        else:
            order = np.argsort(d2, axis=1, kind="stable")[:, :k]
            idx[start : start + _CHUNK] = order
            dist[start : start + _CHUNK] = np.sqrt(
                np.take_along_axis(d2, order, axis=1)
            )
    return idx, dist


def mahalanobis_match(data: pd.DataFrame, spec: MatchSpec) -> MatchedSample:
    """Match every treated row to its nearest control(s).

    The covariance is pooled over all rows.  With ``block_on`` set, treated
    rows only consider controls sharing that column's value; a block holding
    treated rows but no controls is an error.  Without replacement, treated
    rows claim controls greedily in row order and exhaustion is an error.
    """
    needed = [*spec.covariates, spec.treatment_column]
    if spec.block_on is not None:
        needed.append(spec.block_on)
    missing = [c for c in needed if c not in data.columns]
    if missing:
        raise SchemaError(f"matching data lacks columns {missing}")
    x = data[list(spec.covariates)].to_numpy(dtype=float)
    if np.isnan(x).any():
        raise ValidationError("matching covariates contain missing values")
    treated_mask = (data[spec.treatment_column] > 0).to_numpy()
    n_treated = int(treated_mask.sum())
    n_controls = int((~treated_mask).sum())
    if n_treated == 0:
        raise ValidationError("no treated rows (treatment column never positive)")
    if n_controls == 0:
        raise NoControls("no control rows to match against")

    white = _whiten(x)
    rows = np.arange(len(data))
    if spec.block_on is None:
        blocks = [(None, rows)]
    else:
        values = data[spec.block_on]
        blocks = [(key, rows[(values == key).to_numpy()]) for key in sorted(values.unique())]

    pair_rows: list[tuple[int, int, float]] = []
    for key, members in blocks:
        t_rows = members[treated_mask[members]]
        c_rows = members[~treated_mask[members]]
        if len(t_rows) == 0:
            continue
        if len(c_rows) == 0:
            raise NoControls(f"block {key!r} has treated rows but no controls")
        if spec.with_replacement:
            idx, dist = _nearest(white[t_rows], white[c_rows], spec.matches_per_treated)
            for i, t in enumerate(t_rows):
                for j in range(spec.matches_per_treated):
                    pair_rows.append((int(t), int(c_rows[idx[i, j]]), float(dist[i, j])))
        else:
            available = list(range(len(c_rows)))
            for t in t_rows:
                if len(available) < spec.matches_per_treated:
                    raise NoControls(
                        f"controls exhausted while matching without replacement"
                        + (f" in block {key!r}" if key is not None else "")
                    )
                cand = np.asarray(available)
                d2 = ((white[t] - white[c_rows[cand]]) ** 2).sum(axis=1)
                order = np.argsort(d2, kind="stable")[: spec.matches_per_treated]
                for j in order:
                    pair_rows.append((int(t), int(c_rows[cand[j]]), float(np.sqrt(max(d2[j], 0.0)))))
                for j in sorted(order, reverse=True):
                    del available[j]

    pairs = pd.DataFrame(pair_rows, columns=["treated_row", "control_row", "distance"])
    pairs = pairs.sort_values(["treated_row", "distance", "control_row"]).reset_index(drop=True)
    weights = pairs.groupby("control_row").size().rename("weight")
    return MatchedSample(
        pairs=pairs,
        control_weights=weights,
        n_raw=int(len(data)),
        n_treated=n_treated,
        n_controls=n_controls,
        n_matched=n_treated * (1 + spec.matches_per_treated),
        spec=spec,
    )


@dataclass(frozen=True)
class AtetResult:
    coefficient: float
    std_error: float
    z_stat: float
    p_value: float
    n_treated: int


def estimate_atet(data: pd.DataFrame, matched: MatchedSample, outcome: str) -> AtetResult:
    """Average treated-minus-matched-control outcome difference.

    Matched-pairs variance with frequency weights: matching with replacement
    reuses controls, so pair differences share noise.  With per-difference
    variance sigma2*(1+1/k) for k matches per treated, the estimator's
    variance is sigma2*(1/n + sum(w^2)/(n*k)^2) over control weights w.
    """
    if outcome not in data.columns:
        raise SchemaError(f"matching data lacks outcome column '{outcome}'")
    y = data[outcome].to_numpy(dtype=float)
    per_treated = matched.pairs.groupby("treated_row")["control_row"].apply(list)
    diffs = np.array([y[t] - y[controls].mean() for t, controls in per_treated.items()])
    coef = float(diffs.mean())
    n = len(diffs)
    k = matched.spec.matches_per_treated
    if n > 1:
        sigma2 = float(diffs.var(ddof=1)) * k / (k + 1)
        weight_sq = float((matched.control_weights.to_numpy() ** 2).sum())
        se = float(np.sqrt(sigma2 * (1.0 / n + weight_sq / (n * k) ** 2)))
    else:
        se = float("nan")
    if se == 0.0:
        z = 0.0 if coef == 0.0 else float(np.sign(coef)) * float("inf")
    else:
        z = coef / se
    p = float(2.0 * norm.sf(abs(z))) if np.isfinite(z) else (1.0 if z == 0.0 else 0.0)
    return AtetResult(coef, se, float(z), p, int(len(diffs)))


def _weighted_moments(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    mean = float(np.average(values, weights=weights))
    if weights.sum() > 1:
        var = float(np.cov(values, fweights=weights.astype(int), ddof=1))
    else:
        var = float("nan")
    return mean, var


def _std_diff(m_t: float, v_t: float, m_c: float, v_c: float) -> float:
    denom = np.sqrt((v_t + v_c) / 2.0)
    if denom == 0.0:
        return 0.0 if m_t == m_c else float("inf")
    return float((m_t - m_c) / denom)


def balance_report(data: pd.DataFrame, matched: MatchedSample) -> pd.DataFrame:
    """Standardized differences and variance ratios, raw and matched.

    Matched-side control moments weight each control by how many times it
    was matched.
    """
    spec = matched.spec
    treated_mask = (data[spec.treatment_column] > 0).to_numpy()
    rows = []
    w_idx = matched.control_weights.index.to_numpy()
    w = matched.control_weights.to_numpy()
    for cov in spec.covariates:
        values = data[cov].to_numpy(dtype=float)
        t = values[treated_mask]
        c = values[~treated_mask]
        m_t, v_t = float(t.mean()), float(t.var(ddof=1))
        m_c, v_c = float(c.mean()), float(c.var(ddof=1))
        mm_c, mv_c = _weighted_moments(values[w_idx], w)
        rows.append(
            {
                "covariate": cov,
                "std_diff_raw": _std_diff(m_t, v_t, m_c, v_c),
                "std_diff_matched": _std_diff(m_t, v_t, mm_c, mv_c),
                "variance_ratio_raw": v_t / v_c if v_c else float("inf"),
                "variance_ratio_matched": v_t / mv_c if mv_c else float("inf"),
            }
        )
    return pd.DataFrame(rows).set_index("covariate")
