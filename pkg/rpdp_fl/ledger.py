"""
The per-record privacy budget accountant.

Costs accumulate per order in RDP space and are converted to ε only for
checks and reports.  Every round starts with a pre-check: a record that could
not afford the round's increment is deactivated for the rest of training.
"""

import dataclasses
import logging

import numpy as np

from rpdp_fl.accountant import RdpCurve, Threat, client_amplify, dp_curve, local_rdp_curve, rdp_to_dp
from rpdp_fl.errors import InvariantError

LOG = logging.getLogger(__name__)

LEDGER_COLUMNS = ("client_id", "record_id", "budget_eps", "q", "spent_eps", "active")


def round_increment(params, q):
    """
    RDP charged to a record with sampling probability `q` for one global round.

    Against untrusted clients (Type II) the client-sampling amplification is
    already priced in, so this is charged every round.  Against the server
    (Type I) it is charged only on rounds where the record's client was selected.
    """
    local = local_rdp_curve(q, params)
    if params.threat is Threat.CLIENT:
        return client_amplify(local, params.client_prob)
    return local


def spent_epsilon(curve, delta):
    """ε of the accumulated cost; a record that was never charged has spent nothing."""
    if curve.is_zero():
        return 0.0
    return rdp_to_dp(curve, delta).epsilon


def _spent_rows(accumulated, orders, delta):
    """`spent_epsilon` for every row of an (records × orders) matrix."""
    zero_curve = RdpCurve(orders, np.zeros(len(orders)))
    eps = np.min(accumulated + (dp_curve(zero_curve, delta))[None, :], axis=1)
    return np.where(np.any(accumulated > 0, axis=1), eps, 0.0)


@dataclasses.dataclass
class RecordState:
    """The ledger entry of one record."""

    budget_eps: float
    q: float
    accumulated: RdpCurve
    active: bool = True
    spent_eps: float = 0.0
    cleared: bool = dataclasses.field(default=False, repr=False)

    @property
    def never_sampled(self):
        return self.q == 0


def precheck(state, increment, delta):
    """True iff the record can afford `increment`; a False answer deactivates it for good."""
    if not state.active:
        return False
    if spent_epsilon(state.accumulated + increment, delta) <= state.budget_eps:
        state.cleared = True
        return True
    state.active = False
    state.cleared = False
    return False


def charge(state, increment, delta):
    """Add `increment` to the record's accumulated cost; requires a passed pre-check."""
    if not (state.active and state.cleared):
        raise InvariantError("charge() called without a passing precheck() for this round")
    accumulated = state.accumulated + increment
    return dataclasses.replace(
        state, accumulated=accumulated, spent_eps=spent_epsilon(accumulated, delta), cleared=False
    )


class ClientLedger:
    """
    The ledger of every training record held by one client.

    The same pre-check / charge protocol as `precheck` and `charge`, vectorised
    over records.  The cost matrix a pre-check computes is the one a charge
    stores, so a record that passed can never end the round over budget.
    """

    def __init__(self, budgets, q, params, *, active=None, client_id=0, charging=True):
        self.client_id = client_id
        self.params = params
        self.orders = np.array(params.orders)
        self.budgets = np.asarray(budgets, dtype=np.float64).copy()
        self.q = np.asarray(q, dtype=np.float64).copy()
        if self.budgets.shape != self.q.shape:
            raise InvariantError("one sampling probability per budget is required")
        self.active = np.ones(self.q.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool).copy()
        self.charging = charging
        self.accumulated = np.zeros((self.q.size, self.orders.size))
        self.increments = self._increments() if charging else np.zeros_like(self.accumulated)
        self._pending = None

    def _increments(self):
        unique, inverse = np.unique(self.q, return_inverse=True)
        table = np.array([round_increment(self.params, q).values for q in unique]).reshape(unique.size, -1)
        return table[inverse.reshape(-1)]

    def __len__(self):
        return int(self.q.size)

    @property
    def never_sampled(self):
        return self.q == 0

    @property
    def spent_eps(self):
        return _spent_rows(self.accumulated, self.params.orders, self.params.delta)

    @property
    def active_count(self):
        return int(np.count_nonzero(self.active))

    def sampling_probs(self):
        """Per-record probabilities with deactivated records forced to 0."""
        return np.where(self.active, self.q, 0.0)

    def precheck_round(self):
        """Deactivate records that cannot afford this round; return the active mask."""
        if self._pending is not None:
            raise InvariantError(f"client {self.client_id}: precheck_round() called twice without charging")
        candidate = self.accumulated + self.increments
        affordable = _spent_rows(candidate, self.params.orders, self.params.delta) <= self.budgets
        dropped = self.active & ~affordable
        if np.any(dropped):
            LOG.warning(
                "client %s: %d records cannot afford another round and leave training",
                self.client_id, int(np.count_nonzero(dropped)),
            )
        self.active &= affordable
        self._pending = candidate
        return self.active.copy()

    def charge_round(self):
        """Commit the cost the last pre-check priced for every still-active record."""
        if self._pending is None:
            raise InvariantError(f"client {self.client_id}: charge_round() without precheck_round()")
        if self.charging:
            self.accumulated[self.active] = self._pending[self.active]
        self._pending = None
        self.check()

    def skip_round(self):
        """Drop a pending pre-check without charging anything."""
        self._pending = None

    def check(self):
        """Raise if any record has spent more than its budget."""
        over = self.spent_eps > self.budgets
        if np.any(over):
            raise InvariantError(
                f"client {self.client_id}: {int(np.count_nonzero(over))} records exceed their budget"
            )

    def record(self, index):
        """A `RecordState` snapshot of one record."""
        accumulated = RdpCurve(self.orders, self.accumulated[index])
        return RecordState(
            budget_eps=float(self.budgets[index]),
            q=float(self.q[index]),
            accumulated=accumulated,
            active=bool(self.active[index]),
            spent_eps=spent_epsilon(accumulated, self.params.delta),
        )

    def rows(self):
        """Ledger rows in `LEDGER_COLUMNS` order."""
        spent = self.spent_eps
        for index in range(len(self)):
            yield (
                self.client_id,
                index,
                float(self.budgets[index]),
                float(self.q[index]),
                float(spent[index]),
                bool(self.active[index]),
            )
