"""Partial-equilibrium incidence of per-unit subsidies and taxes.

A market is an inverse demand curve P(Q) with slope P'(Q) and a marginal
cost curve C'(Q).  Two supply regimes are covered: a single profit-maximising
firm, and marginal-cost-pricing competition.  Per-unit transfers can be
attached to either side of the market.  The solver works in quoted market
prices: a consumer-side transfer shifts the demand curve the firm faces,
while a firm-side transfer enters the firm's per-unit receipts directly.
Which side physically remits a transfer therefore flows through distinct
arithmetic, and the invariance of the allocation under swapping the bearer is
something the drawn solutions demonstrate rather than assume.

Reported prices are effective ones.  ``consumer_price`` is the consumer's
per-unit outlay net of any consumer-side transfer, ``producer_price`` the
firm's per-unit receipt net of any firm-side transfer, so that

    producer_price = consumer_price + subsidy - tax

holds for every solution by construction.

The built-in curve family is linear inverse demand P(Q) = a - b*Q with
linear or quadratic cost (marginal cost c + 2*d*Q); it solves in closed form.
Tabulated curves interpolate user grids monotonically and solve the
first-order condition with a bracketed bisection/secant hybrid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    DegenerateSubsidy,
    InvalidPrimitives,
    NoEquilibrium,
    NotPaired,
    ValidationError,
)

FIRM = "firm"
CONSUMER = "consumer"
MONOPOLY = "monopoly"
COMPETITIVE = "competitive"

# Absolute first-order-condition tolerance for the numerical solver.
FOC_TOLERANCE = 1e-12
_MAX_ITER = 200


@dataclass(frozen=True)
class MarketPrimitives:
    """Demand and cost curves for one market.

    Build through ``linear`` (closed-form solutions) or ``from_grids``
    (monotone interpolation of tabulated points, numerical solutions).
    """

    price: Callable[[float], float]
    price_slope: Callable[[float], float]
    marginal_cost: Callable[[float], float]
    choke_quantity: float
    family: str = "generic"
    params: tuple = ()

    @classmethod
    def linear(cls, a: float, b: float, c: float, d: float = 0.0) -> "MarketPrimitives":
        """Inverse demand a - b*Q with marginal cost c + 2*d*Q.

        Requires a downward demand slope (b > 0), a non-negative cost
        intercept below the demand intercept (a > c >= 0), and weakly convex
        cost (d >= 0).
        """
        if b <= 0:
            raise InvalidPrimitives(f"demand slope b must be positive, got {b}")
        if c < 0:
            raise InvalidPrimitives(f"marginal cost intercept must be non-negative, got {c}")
        if a <= c:
            raise InvalidPrimitives(
                f"demand intercept a={a} must exceed the cost intercept c={c}"
            )
        if d < 0:
            raise InvalidPrimitives(f"cost curvature d must be non-negative, got {d}")
        return cls(
            price=lambda q: a - b * q,
            price_slope=lambda q: -b,
            marginal_cost=lambda q: c + 2.0 * d * q,
            choke_quantity=a / b,
            family="linear",
            params=(a, b, c, d),
        )

    @classmethod
    def from_grids(
        cls,
        quantity: np.ndarray,
        price: np.ndarray,
        price_slope: np.ndarray,
        marginal_cost: np.ndarray,
    ) -> "MarketPrimitives":
        """Monotone interpolation of tabulated curves on a shared Q grid.

        The grid must be strictly increasing, price strictly decreasing, the
        supplied slope negative, and marginal cost non-negative and
        non-decreasing.  Solutions are confined to the grid span.
        """
        quantity = np.asarray(quantity, dtype=float)
        price = np.asarray(price, dtype=float)
        price_slope = np.asarray(price_slope, dtype=float)
        marginal_cost = np.asarray(marginal_cost, dtype=float)
        if quantity.ndim != 1 or quantity.size < 2:
            raise InvalidPrimitives("curve grids need at least two points")
        if not (
            quantity.shape == price.shape == price_slope.shape == marginal_cost.shape
        ):
            raise InvalidPrimitives("curve grids must share one shape")
        if np.any(np.diff(quantity) <= 0):
            raise InvalidPrimitives("the quantity grid must be strictly increasing")
        if np.any(np.diff(price) >= 0):
            raise InvalidPrimitives("tabulated demand must be strictly decreasing")
        if np.any(price_slope >= 0):
            raise InvalidPrimitives("the tabulated demand slope must be negative")
        if np.any(marginal_cost < 0):
            raise InvalidPrimitives("tabulated marginal cost must be non-negative")
        if np.any(np.diff(marginal_cost) < -1e-12):
            raise InvalidPrimitives("tabulated marginal cost must be non-decreasing")
        p = PchipInterpolator(quantity, price)
        ps = PchipInterpolator(quantity, price_slope)
        mc = PchipInterpolator(quantity, marginal_cost)
        return cls(
            price=lambda q: float(p(q)),
            price_slope=lambda q: float(ps(q)),
            marginal_cost=lambda q: float(mc(q)),
            choke_quantity=float(quantity[-1]),
            family="tabulated",
            params=(float(quantity[0]), float(quantity[-1])),
        )


@dataclass(frozen=True)
class Driver:
    """Seeded stochastic series driving per-unit transfer functions."""

    seed: int
    n_draws: int
    scale: float = 1.0

    def sample(self) -> np.ndarray:
        if self.n_draws < 1:
            raise ValidationError("a driver needs at least one draw")
        rng = np.random.default_rng(self.seed)
        return self.scale * rng.standard_normal(self.n_draws)


@dataclass(frozen=True)
class Intervention:
    """Per-unit subsidy and tax, each with a configurable bearer.

    Amounts are constants, or callables evaluated on the driver series.
    ``subsidy_bearer`` names who receives the subsidy payment and
    ``tax_bearer`` who remits the tax; both default to the firm so that a
    paired subsidy and tax cancel term by term in the firm's objective.
    """

    subsidy: float | Callable[[float], float] = 0.0
    tax: float | Callable[[float], float] = 0.0
    subsidy_bearer: str = FIRM
    tax_bearer: str = FIRM
    driver: Driver | None = None

    def __post_init__(self) -> None:
        for bearer in (self.subsidy_bearer, self.tax_bearer):
            if bearer not in (FIRM, CONSUMER):
                raise ValidationError(
                    f"bearer must be '{FIRM}' or '{CONSUMER}', got '{bearer}'"
                )
        if self.driver is None and (callable(self.subsidy) or callable(self.tax)):
            raise ValidationError("a callable transfer needs a driver series")
        for amount in (self.subsidy, self.tax):
            if not callable(amount) and amount < 0:
                raise ValidationError("per-unit transfer amounts must be non-negative")

    @classmethod
    def paired(
        cls,
        transfer: float | Callable[[float], float],
        driver: Driver | None = None,
        subsidy_bearer: str = FIRM,
        tax_bearer: str = FIRM,
    ) -> "Intervention":
        """Identical subsidy and tax: one function (or constant) for both."""
        return cls(
            subsidy=transfer,
            tax=transfer,
            subsidy_bearer=subsidy_bearer,
            tax_bearer=tax_bearer,
            driver=driver,
        )

    @property
    def is_paired(self) -> bool:
        if callable(self.subsidy) or callable(self.tax):
            return self.subsidy is self.tax
        return self.subsidy == self.tax

    @property
    def n_draws(self) -> int:
        return self.driver.n_draws if self.driver is not None else 1

    def amounts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-draw (subsidy, tax) amounts; length 1 without a driver."""
        if self.driver is None:
            return (
                np.array([float(self.subsidy)]),
                np.array([float(self.tax)]),
            )
        x = self.driver.sample()
        sub = (
            np.array([float(self.subsidy(v)) for v in x])
            if callable(self.subsidy)
            else np.full(x.shape, float(self.subsidy))
        )
        tax = (
            np.array([float(self.tax(v)) for v in x])
            if callable(self.tax)
            else np.full(x.shape, float(self.tax))
        )
        return sub, tax


NO_INTERVENTION = Intervention()


@dataclass(frozen=True)
class EquilibriumSolution:
    """One market allocation.

    ``consumer_price`` is the effective per-unit outlay (market price plus any
    consumer-side tax, minus any consumer-side subsidy); ``producer_price``
    the effective per-unit receipt.  ``foc_residual`` reports the absolute
    first-order-condition value at the solution; closed-form solutions record
    the same diagnostic.
    """

    quantity: float
    consumer_price: float
    producer_price: float
    regime: str
    converged: bool
    foc_residual: float


def _split_amounts(
    intervention: Intervention, subsidy: float, tax: float
) -> tuple[float, float]:
    """(demand-curve shift, firm-side net receipt) for scalar amounts."""
    demand_shift = 0.0
    firm_net = 0.0
    if intervention.subsidy_bearer == CONSUMER:
        demand_shift += subsidy
    else:
        firm_net += subsidy
    if intervention.tax_bearer == CONSUMER:
        demand_shift -= tax
    else:
        firm_net -= tax
    return demand_shift, firm_net


def _solve_bracketed(f: Callable[[float], float], lo: float, hi: float) -> tuple[float, float]:
    """Root of f on [lo, hi] by bisection refined with secant steps.

    Requires a sign change over the bracket.  Iterates until the absolute
    function value falls below FOC_TOLERANCE or the bracket collapses.
    Returns (root, |f(root)|).
    """
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return lo, 0.0
    if f_hi == 0.0:
        return hi, 0.0
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoEquilibrium(
            "the first-order condition does not change sign over the bracket "
            f"[{lo:g}, {hi:g}]"
        )
    best_q, best_f = (lo, abs(f_lo)) if abs(f_lo) < abs(f_hi) else (hi, abs(f_hi))
    for _ in range(_MAX_ITER):
        # secant candidate from the bracket endpoints, midpoint fallback
        denom = f_hi - f_lo
        mid = 0.5 * (lo + hi)
        q = hi - f_hi * (hi - lo) / denom if denom != 0.0 else mid
        if not (lo < q < hi):
            q = mid
        fq = f(q)
        if abs(fq) < best_f:
            best_q, best_f = q, abs(fq)
        if abs(fq) <= FOC_TOLERANCE:
            return q, abs(fq)
        if np.sign(fq) == np.sign(f_lo):
            lo, f_lo = q, fq
        else:
            hi, f_hi = q, fq
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return best_q, best_f


def _solve(
    primitives: MarketPrimitives,
    intervention: Intervention,
    regime: str,
    subsidy: float,
    tax: float,
) -> EquilibriumSolution:
    demand_shift, firm_net = _split_amounts(intervention, subsidy, tax)

    if primitives.family == "linear":
        a, b, c, d = primitives.params
        if regime == MONOPOLY:
            quantity = (a + demand_shift + firm_net - c) / (2.0 * b + 2.0 * d)
        else:
            quantity = (a + demand_shift + firm_net - c) / (b + 2.0 * d)
        residual = abs(
            (a - (2.0 if regime == MONOPOLY else 1.0) * b * quantity)
            + demand_shift
            + firm_net
            - (c + 2.0 * d * quantity)
        )
        converged = True
    else:
        if regime == MONOPOLY:

            def foc(q: float) -> float:
                return (
                    primitives.price(q)
                    + demand_shift
                    + primitives.price_slope(q) * q
                    + firm_net
                    - primitives.marginal_cost(q)
                )

        else:

            def foc(q: float) -> float:
                return (
                    primitives.price(q)
                    + demand_shift
                    + firm_net
                    - primitives.marginal_cost(q)
                )

        lo = primitives.params[0] if primitives.family == "tabulated" else 0.0
        quantity, residual = _solve_bracketed(foc, lo, primitives.choke_quantity)
        converged = residual <= FOC_TOLERANCE

    if quantity <= 0.0:
        raise NoEquilibrium(
            f"the {regime} first-order condition has no positive-quantity solution"
        )

    market_price = primitives.price(quantity) + demand_shift
    consumer_price = market_price - demand_shift
    producer_price = market_price + firm_net
    return EquilibriumSolution(
        quantity=float(quantity),
        consumer_price=float(consumer_price),
        producer_price=float(producer_price),
        regime=regime,
        converged=converged,
        foc_residual=float(residual),
    )


def solve_monopoly(
    primitives: MarketPrimitives,
    intervention: Intervention | None = None,
    draw: int = 0,
) -> EquilibriumSolution:
    """Profit-maximising allocation under the given transfers.

    With a stochastic intervention, ``draw`` selects the driver realisation.
    """
    return _solve_at_draw(primitives, intervention, MONOPOLY, draw)


def solve_competitive(
    primitives: MarketPrimitives,
    intervention: Intervention | None = None,
    draw: int = 0,
) -> EquilibriumSolution:
    """Marginal-cost-pricing allocation under the given transfers."""
    return _solve_at_draw(primitives, intervention, COMPETITIVE, draw)


def _solve_at_draw(
    primitives: MarketPrimitives,
    intervention: Intervention | None,
    regime: str,
    draw: int,
) -> EquilibriumSolution:
    iv = intervention if intervention is not None else NO_INTERVENTION
    subs, taxes = iv.amounts()
    if not 0 <= draw < len(subs):
        raise ValidationError(f"draw {draw} outside the driver's {len(subs)} draws")
    return _solve(primitives, iv, regime, float(subs[draw]), float(taxes[draw]))


def solve_path(
    primitives: MarketPrimitives,
    intervention: Intervention,
    regime: str,
) -> list[EquilibriumSolution]:
    """One solution per driver draw, in draw order."""
    if regime not in (MONOPOLY, COMPETITIVE):
        raise ValidationError(f"unknown regime '{regime}'")
    subs, taxes = intervention.amounts()
    return [
        _solve(primitives, intervention, regime, float(s), float(t))
        for s, t in zip(subs, taxes)
    ]


def pass_through(
    primitives: MarketPrimitives, subsidy: float, regime: str
) -> float:
    """Share of a subsidy showing up as a lower consumer price.

    Solves the market without transfers and with a subsidy-only intervention
    of the given size, and returns (baseline price - subsidised price) divided
    by the subsidy.  Requires subsidy > 0.
    """
    if subsidy <= 0.0:
        raise DegenerateSubsidy(
            f"pass-through needs a positive subsidy, got {subsidy}"
        )
    if regime not in (MONOPOLY, COMPETITIVE):
        raise ValidationError(f"unknown regime '{regime}'")
    base = _solve(primitives, NO_INTERVENTION, regime, 0.0, 0.0)
    subsidised = _solve(
        primitives, Intervention(subsidy=subsidy), regime, subsidy, 0.0
    )
    return (base.consumer_price - subsidised.consumer_price) / subsidy


def verify_cancellation(
    primitives: MarketPrimitives,
    intervention: Intervention,
    regime: str,
) -> tuple[float, float]:
    """Largest allocation deviation a paired subsidy-and-tax produces.

    Solves the market with no transfers and then, draw by draw, with the
    paired intervention; returns (max |dQ|, max |d consumer price|) over the
    draws.  Raises NotPaired unless subsidy and tax are the identical
    function (or equal constants) on the same driver series.
    """
    if not intervention.is_paired:
        raise NotPaired(
            "cancellation is only defined for identical paired subsidy and tax"
        )
    if regime not in (MONOPOLY, COMPETITIVE):
        raise ValidationError(f"unknown regime '{regime}'")
    base = _solve(primitives, NO_INTERVENTION, regime, 0.0, 0.0)
    max_dq = 0.0
    max_dp = 0.0
    for sol in solve_path(primitives, intervention, regime):
        max_dq = max(max_dq, abs(sol.quantity - base.quantity))
        max_dp = max(max_dp, abs(sol.consumer_price - base.consumer_price))
    return max_dq, max_dp


def swap_bearers(intervention: Intervention) -> Intervention:
    """The same transfers with subsidy and tax bearers exchanged."""
    return dataclasses.replace(
        intervention,
        subsidy_bearer=(
            CONSUMER if intervention.subsidy_bearer == FIRM else FIRM
        ),
        tax_bearer=(CONSUMER if intervention.tax_bearer == FIRM else FIRM),
    )


def inverse_elasticity(primitives: MarketPrimitives, quantity: float) -> float:
    """P'(Q) * Q / P(Q): the inverse of the demand elasticity at Q."""
    price = primitives.price(quantity)
    if price == 0.0:
        raise ValidationError("inverse elasticity is undefined at a zero price")
    return primitives.price_slope(quantity) * quantity / price
