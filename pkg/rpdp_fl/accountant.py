"""
Rényi-DP accounting for the Gaussian and Poisson-subsampled Gaussian mechanisms.

Everything here is a pure function of its arguments.  Costs are carried as
`RdpCurve` values over a fixed grid of integer orders, composed additively,
amplified by client-level sampling, and converted to (ε, δ)-DP only at the end.

`divergence_oracle` evaluates the Rényi divergence straight from its definition
by numerical integration; it is slow and exists to check the closed forms.
"""

import dataclasses
import enum
import functools
import logging
import math

import numpy as np
from scipy import integrate, special

from rpdp_fl.errors import OracleError, PrivacyDomainError

LOG = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 64
DEFAULT_ORDERS = tuple(range(2, DEFAULT_MAX_ORDER + 1))


def orders_up_to(max_order):
    """The integer order grid {2, ..., max_order}."""
    if int(max_order) != max_order or max_order < 2:
        raise PrivacyDomainError(f"max_order must be an integer >= 2, got {max_order!r}")
    return tuple(range(2, int(max_order) + 1))


class Threat(enum.Enum):
    """Who observes the training transcript."""

    # Type I: the honest-but-curious server sees every local update.
    SERVER = "server"
    # Type II: other clients or third parties only see the global models.
    CLIENT = "client"


@dataclasses.dataclass(frozen=True, eq=False)
class RdpCurve:
    """RDP cost ρ(α) on a grid of integer orders α, in nats."""

    orders: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        orders = np.array(self.orders, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if orders.shape != values.shape:
            raise PrivacyDomainError(f"{orders.size} orders but {values.size} values")
        if orders.size and (orders[0] < 2 or np.any(np.diff(orders) <= 0)):
            raise PrivacyDomainError("orders must be integers >= 2, strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise PrivacyDomainError("RDP values must be finite and nonnegative")
        orders.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, orders=DEFAULT_ORDERS):
        """The cost of a mechanism that never touches the record."""
        return cls(orders, np.zeros(len(orders)))

    def __len__(self):
        return int(self.orders.size)

    def __add__(self, other):
        if not isinstance(other, RdpCurve):
            return NotImplemented
        if not np.array_equal(self.orders, other.orders):
            raise PrivacyDomainError("cannot add RDP curves over different order grids")
        return RdpCurve(self.orders, self.values + other.values)

    def value_at(self, alpha):
        """ρ at a single order on the grid."""
        where = np.flatnonzero(self.orders == alpha)
        if where.size == 0:
            raise PrivacyDomainError(f"order {alpha} is not on this curve's grid")
        return float(self.values[where[0]])

    def is_zero(self):
        return not np.any(self.values)


@dataclasses.dataclass(frozen=True)
class MechanismParams:
    """
    The privacy mechanism of one run.

    `clip` is the per-example ℓ2 clipping bound L; the Gaussian noise standard
    deviation is `sigma * clip`, so the subsampled accounting only depends on
    `sigma`.
    """

    sigma: float
    delta: float
    clip: float = 1.0
    tau: int = 1
    rounds: int = 1
    client_prob: float = 1.0
    orders: tuple = DEFAULT_ORDERS
    threat: Threat = Threat.CLIENT

    def __post_init__(self):
        if not self.sigma > 0 or not math.isfinite(self.sigma):
            raise PrivacyDomainError(f"sigma must be positive and finite, got {self.sigma!r}")
        if not self.clip > 0:
            raise PrivacyDomainError(f"clip must be positive, got {self.clip!r}")
        if not 0 < self.delta < 1:
            raise PrivacyDomainError(f"delta must be in (0, 1), got {self.delta!r}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise PrivacyDomainError(f"tau must be an integer >= 1, got {self.tau!r}")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise PrivacyDomainError(f"rounds must be an integer >= 1, got {self.rounds!r}")
        if not 0 < self.client_prob <= 1:
            raise PrivacyDomainError(f"client_prob must be in (0, 1], got {self.client_prob!r}")
        orders = tuple(self.orders)
        if not orders or any(int(a) != a or a < 2 for a in orders) or list(orders) != sorted(set(orders)):
            raise PrivacyDomainError("orders must be distinct increasing integers >= 2")
        object.__setattr__(self, "orders", tuple(int(a) for a in orders))
        object.__setattr__(self, "threat", Threat(self.threat))

    @property
    def server_rounds(self):
        """Rounds charged by the static Type I bound: ceil(λT)."""
        # round() strips representation noise such as 0.1 * 30 == 3.0000000000000004
        return math.ceil(round(self.client_prob * self.rounds, 9))


@dataclasses.dataclass(frozen=True)
class DpPoint:
    """The tightest (ε, δ) guarantee on the order grid and the order achieving it."""

    epsilon: float
    alpha_star: int


def _check_order(alpha):
    if int(alpha) != alpha or alpha < 2:
        raise PrivacyDomainError(f"order must be an integer >= 2, got {alpha!r}")
    return int(alpha)


def _check_probability(q, name="q"):
    if not 0 <= q <= 1:
        raise PrivacyDomainError(f"{name} must be in [0, 1], got {q!r}")
    return float(q)


def _check_sigma(sigma):
    if not sigma > 0:
        raise PrivacyDomainError(f"sigma must be positive, got {sigma!r}")
    return float(sigma)


def gaussian_rdp(alpha, sigma, clip=1.0):
    """RDP of the Gaussian mechanism with sensitivity `clip`: αL²/(2σ²)."""
    alpha = _check_order(alpha)
    sigma = _check_sigma(sigma)
    if not clip > 0:
        raise PrivacyDomainError(f"clip must be positive, got {clip!r}")
    return alpha * clip ** 2 / (2 * sigma ** 2)


@functools.lru_cache(maxsize=32)
def _log_binomial_table(orders):
    """log C(α, ℓ) for every α in `orders` and ℓ in 2..max(orders), -inf where ℓ > α."""
    alphas = np.array(orders, dtype=np.float64)[:, None]
    ells = np.arange(2, max(orders) + 1, dtype=np.float64)[None, :]
    with np.errstate(invalid="ignore"):
        table = special.gammaln(alphas + 1) - special.gammaln(ells + 1) - special.gammaln(alphas - ells + 1)
    table = np.where(ells <= alphas, table, -np.inf)
    table.setflags(write=False)
    return table


def _subsampled_log_moments(orders, q, sigma):
    """
    log of the bracketed sum in the Poisson-subsampled Gaussian bound, per order.

    The ℓ = 0 and ℓ = 1 terms fold into (1-q)^(α-1)(αq - q + 1); the rest are
    combined with log-binomials and log-sum-exp so large orders do not overflow.
    """
    alphas = np.array(orders, dtype=np.float64)
    log_binom = _log_binomial_table(tuple(orders))
    ells = np.arange(2, max(orders) + 1, dtype=np.float64)[None, :]
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    with np.errstate(invalid="ignore"):
        terms = (
            log_binom
            + (alphas[:, None] - ells) * log_1mq
            + ells * log_q
            + (ells - 1) * ells / (2 * sigma ** 2)
        )
    terms = np.where(np.isfinite(log_binom), terms, -np.inf)
    head = (alphas - 1) * log_1mq + np.log1p((alphas - 1) * q)
    return special.logsumexp(np.column_stack([head, terms]), axis=1)


def subsampled_gaussian_curve(q, sigma, orders=DEFAULT_ORDERS):
    """`subsampled_gaussian_rdp` on a whole order grid at once."""
    q = _check_probability(q)
    sigma = _check_sigma(sigma)
    orders = tuple(_check_order(a) for a in orders)
    if q == 0:
        return RdpCurve.zeros(orders)
    alphas = np.array(orders, dtype=np.float64)
    if q == 1:
        return RdpCurve(orders, alphas / (2 * sigma ** 2))
    values = _subsampled_log_moments(orders, q, sigma) / (alphas - 1)
    return RdpCurve(orders, np.maximum(values, 0.0))


def subsampled_gaussian_rdp(alpha, q, sigma):
    """
    RDP of one step of the Gaussian mechanism on a Poisson sample with rate `q`.

    Sensitivity is fixed at 1.  Exactly 0 when q == 0 and equal to the plain
    Gaussian mechanism when q == 1.
    """
    alpha = _check_order(alpha)
    return subsampled_gaussian_curve(q, sigma, (alpha,)).values[0]


def gaussian_curve(sigma, orders=DEFAULT_ORDERS, clip=1.0):
    """`gaussian_rdp` on a whole order grid."""
    return RdpCurve(orders, [gaussian_rdp(a, sigma, clip) for a in orders])


def compose_rounds(curve, k):
    """Compose `k` runs of the mechanism described by `curve`."""
    if int(k) != k or k < 0:
        raise PrivacyDomainError(f"composition count must be a nonnegative integer, got {k!r}")
    return RdpCurve(curve.orders, curve.values * int(k))


def client_amplify(curve, lam):
    """
    Amplification by client-level Poisson sampling with rate `lam`.

    Per order: (1/(α-1)) ln(1 - λ + λ e^((α-1)ρ)), evaluated with logaddexp so a
    large exponent degrades to ρ + ln(λ)/(α-1) instead of overflowing.
    """
    if not 0 < lam <= 1:
        raise PrivacyDomainError(f"client sampling probability must be in (0, 1], got {lam!r}")
    if lam == 1:
        return curve
    scale = (curve.orders - 1).astype(np.float64)
    amplified = np.logaddexp(math.log1p(-lam), math.log(lam) + scale * curve.values) / scale
    # Rounding can leave a few ulps above the input or below zero.
    amplified = np.clip(amplified, 0.0, curve.values)
    return RdpCurve(curve.orders, amplified)


def dp_curve(curve, delta):
    """ε(α) = ρ(α) + ln(1/δ)/(α-1) for every order on the grid."""
    if not 0 < delta < 1:
        raise PrivacyDomainError(f"delta must be in (0, 1), got {delta!r}")
    return curve.values + math.log(1 / delta) / (curve.orders - 1)


def rdp_to_dp(curve, delta):
    """Convert an RDP curve to the best (ε, δ) guarantee on its grid; ties go to the smaller order."""
    if len(curve) == 0:
        raise PrivacyDomainError("cannot convert an empty RDP curve")
    eps = dp_curve(curve, delta)
    best = int(np.argmin(eps))
    return DpPoint(epsilon=float(eps[best]), alpha_star=int(curve.orders[best]))


def local_rdp_curve(q, params):
    """Cost of τ local DP-SGD steps for a record sampled with probability `q`."""
    return compose_rounds(subsampled_gaussian_curve(q, params.sigma, params.orders), params.tau)


def fl_rdp_curve(q, params):
    """Cost of a whole federated run for a record sampled with probability `q`."""
    local = local_rdp_curve(q, params)
    if params.threat is Threat.CLIENT:
        return compose_rounds(client_amplify(local, params.client_prob), params.rounds)
    return compose_rounds(local, params.server_rounds)


def fl_epsilon(q, params):
    """Optimum ε* of a federated run for a record sampled with probability `q`."""
    return rdp_to_dp(fl_rdp_curve(q, params), params.delta)


def centralized_rdp_curve(q, params):
    """
    Cost of plain DP-SGD run for T·τ steps, with no client sampling.

    This is the single-silo accounting used when comparing against centralized
    personalization schemes.
    """
    curve = subsampled_gaussian_curve(q, params.sigma, params.orders)
    return compose_rounds(curve, params.rounds * params.tau)


def centralized_epsilon(q, params):
    """Optimum ε* of `centralized_rdp_curve`."""
    return rdp_to_dp(centralized_rdp_curve(q, params), params.delta)


ORACLE_TRUNCATION = 20.0
ORACLE_TOLERANCE = 1e-8
ORACLE_MAX_REFINEMENTS = 8


def _normal_logpdf(x, mean, sigma):
    z = (x - mean) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def _mixture_logpdf(x, q, sigma):
    """log density of (1-q)N(0, σ²) + qN(1, σ²)."""
    with np.errstate(divide="ignore"):
        log_1mq = np.log1p(-q)
        log_q = np.log(q)
    return np.logaddexp(log_1mq + _normal_logpdf(x, 0.0, sigma), log_q + _normal_logpdf(x, 1.0, sigma))


def _directed_log_moment(log_num, log_den, alpha, lower, upper, tolerance):
    """
    log ∫ exp(α·log_num - (α-1)·log_den) over [lower, upper].

    The interval is cut into panels integrated with QUADPACK; the panel count
    doubles until two successive totals agree to `tolerance` (relative).
    """

    def log_integrand(x):
        return alpha * log_num(x) - (alpha - 1) * log_den(x)

    grid = np.linspace(lower, upper, 4001)
    offset = float(np.max(log_integrand(grid)))

    def integrand(x):
        return math.exp(float(log_integrand(x)) - offset)

    previous = None
    panels = 8
    for _ in range(ORACLE_MAX_REFINEMENTS):
        edges = np.linspace(lower, upper, panels + 1)
        total = 0.0
        for left, right in zip(edges[:-1], edges[1:]):
            value, _ = integrate.quad(integrand, left, right, epsabs=1e-14, epsrel=1e-12, limit=200)
            total += value
        if previous is not None and abs(total - previous) <= tolerance * abs(total):
            return offset + math.log(total)
        previous = total
        panels *= 2
    raise OracleError(
        f"divergence integral for order {alpha} did not converge to {tolerance} "
        f"after {ORACLE_MAX_REFINEMENTS} refinements"
    )


def divergence_oracle(alpha, q, sigma, tolerance=ORACLE_TOLERANCE):
    """
    Rényi divergence of order `alpha` between P = (1-q)N(0,σ²) + qN(1,σ²) and Q = N(0,σ²).

    Returns the larger of D(P‖Q) and D(Q‖P).  Both are integrated numerically
    over [-20σ, 1 + 20σ]; the Gaussian mass outside is below double precision.
    """
    alpha = _check_order(alpha)
    q = _check_probability(q)
    sigma = _check_sigma(sigma)
    lower = -ORACLE_TRUNCATION * sigma
    upper = 1.0 + ORACLE_TRUNCATION * sigma

    def log_p(x):
        return _mixture_logpdf(x, q, sigma)

    def log_q(x):
        return _normal_logpdf(x, 0.0, sigma)

    forward = _directed_log_moment(log_p, log_q, alpha, lower, upper, tolerance) / (alpha - 1)
    backward = _directed_log_moment(log_q, log_p, alpha, lower, upper, tolerance) / (alpha - 1)
    LOG.debug("oracle alpha=%d q=%g sigma=%g: forward=%.12g backward=%.12g", alpha, q, sigma, forward, backward)
    return max(forward, backward, 0.0)
