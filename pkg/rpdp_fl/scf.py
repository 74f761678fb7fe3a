"""
Simulation-CurveFitting: map personalized budgets to sampling probabilities.

The accountant is run once over a grid of sampling probabilities, the optimum
budgets ε*(q) are fitted with ε ≈ exp(a·q + b) + c, and the fitted model is
inverted, then pinned to the simulated points.  After that every budget query
costs a logarithm and a table lookup, not an accountant evaluation.
`binary_search_q` is the per-budget bisection it replaces.
"""

import concurrent.futures
import dataclasses
import logging
import math

import numpy as np

from rpdp_fl.accountant import centralized_epsilon, fl_epsilon
from rpdp_fl.errors import FitError, PrivacyDomainError

LOG = logging.getLogger(__name__)

DEFAULT_Q_FLOOR = 1e-3
DEFAULT_SEARCH_TOL = 1e-4

C_CANDIDATES = 400
MAX_REFINEMENTS = 200
REFINEMENT_TOL = 1e-9

# The ways a run can be accounted for, by name as used in configs.
SETTINGS = {
    "federated": fl_epsilon,
    "centralized": centralized_epsilon,
}


@dataclasses.dataclass(frozen=True)
class Observation:
    """One simulated point: the optimum budget ε*(q) at sampling probability q."""

    q: float
    eps_star: float
    alpha_star: int = 0

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise PrivacyDomainError(f"observation q must be in (0, 1], got {self.q!r}")
        if not (math.isfinite(self.eps_star) and self.eps_star > 0):
            raise PrivacyDomainError(f"observation eps_star must be finite and positive, got {self.eps_star!r}")


@dataclasses.dataclass(frozen=True)
class ExpFit:
    """
    The fitted model ε(q) = exp(a·q + b) + c and what it was fitted on.

    `knots_q` and `knots_eps` are the simulated points.  When present, the
    model is calibrated against them so that the estimate for a simulated
    budget is exactly its simulated probability.
    """

    a: float
    b: float
    c: float
    r_squared: float
    eps_full: float
    q_floor: float
    knots_q: tuple = ()
    knots_eps: tuple = ()

    def value(self, q):
        """Model budget at sampling probability `q` (scalar or array)."""
        return np.exp(self.a * np.asarray(q, dtype=np.float64) + self.b) + self.c

    def invert(self, eps):
        """Model probability for budget `eps` (array), before calibration and clamping."""
        return (np.log(np.asarray(eps, dtype=np.float64) - self.c) - self.b) / self.a

    @property
    def eps_floor(self):
        """Smallest budget the estimator can serve with a nonzero probability."""
        if self.knots_eps:
            return self.knots_eps[0]
        return float(self.value(self.q_floor))

    def to_dict(self):
        """The scalar fields, as written to scf_fit.json."""
        return {name: getattr(self, name) for name in FIT_FIELDS}

    @classmethod
    def from_dict(cls, data, observations=()):
        q, eps = _as_arrays(observations)
        return cls(
            **{name: float(data[name]) for name in FIT_FIELDS},
            knots_q=tuple(q.tolist()),
            knots_eps=tuple(eps.tolist()),
        )


FIT_FIELDS = ("a", "b", "c", "r_squared", "eps_full", "q_floor")


def default_q_grid():
    """50 geometric points on [1e-3, 0.1) followed by 50 linear points on [0.1, 1.0]."""
    low = np.geomspace(DEFAULT_Q_FLOOR, 0.1, 50, endpoint=False)
    high = np.linspace(0.1, 1.0, 50)
    return tuple(float(q) for q in np.concatenate([low, high]))


def _check_grid(q_grid):
    grid = [float(q) for q in q_grid]
    if not grid:
        raise FitError("the q grid is empty")
    if any(not 0 < q <= 1 for q in grid):
        raise FitError("every grid probability must be in (0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise FitError("the q grid must be strictly increasing without duplicates")
    if grid[-1] != 1.0:
        raise FitError("the q grid must include the endpoint 1.0")
    return grid


def simulate_observations(params, q_grid=None, *, setting="federated", workers=1):
    """Evaluate ε*(q) at every grid point; grid points are independent and may run in parallel."""
    grid = _check_grid(default_q_grid() if q_grid is None else q_grid)
    accounting = SETTINGS[setting]

    def simulate(q):
        point = accounting(q, params)
        return Observation(q=q, eps_star=point.epsilon, alpha_star=point.alpha_star)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            observations = list(pool.map(simulate, grid))
    else:
        observations = [simulate(q) for q in grid]

    eps = [o.eps_star for o in observations]
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise FitError("simulated budgets are not strictly increasing in q")
    LOG.debug("simulated %d observations, eps* in [%g, %g]", len(observations), eps[0], eps[-1])
    return observations


def _as_arrays(observations):
    q = np.array([o.q for o in observations], dtype=np.float64)
    eps = np.array([o.eps_star for o in observations], dtype=np.float64)
    return q, eps


def r_squared(observations, fit):
    """Coefficient of determination of `fit` against the observations."""
    if not observations:
        raise FitError("no observations to score")
    q, eps = _as_arrays(observations)
    ss_tot = float(np.sum((eps - eps.mean()) ** 2))
    if ss_tot == 0:
        raise FitError("R² is undefined when every observed budget is identical")
    ss_res = float(np.sum((fit.value(q) - eps) ** 2))
    return 1.0 - ss_res / ss_tot


def _linearized_start(q, eps):
    """Best (a, b, c) over a grid of offsets c, fitting ln(ε - c) linearly in q."""
    design = np.column_stack([q, np.ones_like(q)])
    best = None
    for c in eps.min() * np.arange(C_CANDIDATES) / C_CANDIDATES:
        (a, b), *_ = np.linalg.lstsq(design, np.log(eps - c), rcond=None)
        ssr = float(np.sum((np.exp(a * q + b) + c - eps) ** 2))
        if math.isfinite(ssr) and (best is None or ssr < best[0]):
            best = (ssr, np.array([a, b, c]))
    if best is None:
        raise FitError("ln(eps - c) is undefined for every candidate offset")
    return best


def _feasible(theta, q, eps):
    """The model must stay positive on the grid and below every observed budget at c."""
    a, b, c = theta
    return bool(c < eps.min() and math.exp(a * q[0] + b) + c > 0)


def _refine(q, eps, theta, ssr):
    """
    Damped Gauss-Newton on the residuals exp(a·q + b) + c - ε.

    A step that leaves the feasible region is treated like one that does not
    reduce the residual: the damping goes up and the step shrinks.
    """
    damping = 1e-3
    for iteration in range(MAX_REFINEMENTS):
        a, b, c = theta
        grow = np.exp(a * q + b)
        residual = grow + c - eps
        jacobian = np.column_stack([q * grow, grow, np.ones_like(q)])
        normal = jacobian.T @ jacobian
        gradient = jacobian.T @ residual
        try:
            step = np.linalg.solve(normal + damping * np.diag(np.diag(normal)), -gradient)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"Gauss-Newton system is singular at iteration {iteration}") from exc
        candidate = theta + step
        with np.errstate(over="ignore", invalid="ignore"):
            candidate_ssr = float(np.sum((np.exp(candidate[0] * q + candidate[1]) + candidate[2] - eps) ** 2))
        if not np.all(np.isfinite(candidate)):
            raise FitError(f"Gauss-Newton refinement diverged at iteration {iteration}")
        if math.isfinite(candidate_ssr) and candidate_ssr <= ssr and _feasible(candidate, q, eps):
            converged = np.linalg.norm(step) <= REFINEMENT_TOL * (np.linalg.norm(theta) + REFINEMENT_TOL)
            theta, ssr = candidate, candidate_ssr
            damping = max(damping / 3, 1e-12)
            if converged:
                LOG.debug("refinement converged after %d iterations, ssr=%g", iteration + 1, ssr)
                break
        else:
            damping *= 4
            if damping > 1e12:
                LOG.debug("refinement stalled after %d iterations, ssr=%g", iteration + 1, ssr)
                break
    return theta


def fit_exponential(observations):
    """Fit ε(q) = exp(a·q + b) + c to the observations by least squares."""
    if len(observations) < 4:
        raise FitError(f"need at least 4 observations to fit, got {len(observations)}")
    q, eps = _as_arrays(observations)
    if np.any(np.diff(q) <= 0) or np.any(np.diff(eps) <= 0):
        raise FitError("observations must be strictly increasing in both q and eps_star")
    if q[-1] != 1.0:
        raise FitError("observations must include q = 1.0")

    ssr, theta = _linearized_start(q, eps)
    a, b, c = (float(v) for v in _refine(q, eps, theta, ssr))
    if not a > 0:
        raise FitError(f"fitted slope a={a:g} is not positive")
    fit = ExpFit(
        a=a,
        b=b,
        c=c,
        r_squared=0.0,
        eps_full=float(eps[-1]),
        q_floor=float(q[0]),
        knots_q=tuple(q.tolist()),
        knots_eps=tuple(eps.tolist()),
    )
    if not fit.value(fit.q_floor) > 0:
        raise FitError("fitted model is not positive on the grid")
    score = r_squared(observations, fit)
    if not 0 <= score <= 1:
        raise FitError(f"fit is worse than the mean (R²={score:g})")
    return dataclasses.replace(fit, r_squared=score)


def estimate_q(fit, eps):
    """
    Sampling probability for a record with budget `eps`.

    Budgets at or above ε*(1.0) get 1.0.  Budgets at or below `fit.eps_floor`
    get 0.0: such a record is never sampled.
    """
    if not eps > 0:
        raise PrivacyDomainError(f"budget must be positive, got {eps!r}")
    return float(estimate_q_many(fit, [eps])[0])


def estimate_q_many(fit, budgets):
    """
    `estimate_q` over an array of budgets.

    With simulated points, the model probability is mapped piecewise-linearly
    onto the grid: a budget between two simulated budgets always gets a
    probability between their two grid probabilities.
    """
    budgets = np.asarray(budgets, dtype=np.float64)
    if np.any(~(budgets > 0)):
        raise PrivacyDomainError("budgets must be positive")
    inside = (budgets > fit.eps_floor) & (budgets < fit.eps_full)
    q = np.zeros_like(budgets)
    model_q = fit.invert(budgets[inside])
    if fit.knots_q:
        model_q = np.interp(model_q, fit.invert(fit.knots_eps), fit.knots_q)
    q[inside] = np.clip(model_q, fit.q_floor, 1.0)
    q[budgets >= fit.eps_full] = 1.0
    return q


def observation_rows(observations):
    """(q, eps_star, alpha_star) rows for scf_observations.csv."""
    return [(o.q, o.eps_star, o.alpha_star) for o in observations]


def fit_estimator(params, q_grid=None, *, setting="federated", workers=1):
    """Simulate and fit in one go."""
    observations = simulate_observations(params, q_grid, setting=setting, workers=workers)
    fit = fit_exponential(observations)
    LOG.info("fitted eps(q) = exp(%.6g q + %.6g) + %.6g, R^2 = %.6f", fit.a, fit.b, fit.c, fit.r_squared)
    return fit, observations


def binary_search_q(eps, params, tol=DEFAULT_SEARCH_TOL, *, q_floor=DEFAULT_Q_FLOOR, setting="federated"):
    """
    Largest q (to within `tol`) whose ε* does not exceed `eps`, by bisection.

    Each call costs O(log(1/tol)) full accountant evaluations.
    """
    if not tol > 0:
        raise PrivacyDomainError(f"tolerance must be positive, got {tol!r}")
    accounting = SETTINGS[setting]
    if eps >= accounting(1.0, params).epsilon:
        return 1.0
    floor_eps = accounting(q_floor, params).epsilon
    if eps < floor_eps:
        raise PrivacyDomainError(f"budget {eps:g} is below the achievable range (eps*({q_floor:g}) = {floor_eps:g})")
    low, high = q_floor, 1.0
    steps = 0
    while high - low > tol:
        middle = (low + high) / 2
        if accounting(middle, params).epsilon <= eps:
            low = middle
        else:
            high = middle
        steps += 1
    LOG.debug("binary search for eps=%g settled on q=%g after %d steps", eps, low, steps)
    return low
