"""Bounded recovery policy.

Maps a watchdog label plus the semantic verdict and remaining budget to
one of three actions. The mapping is a pure function: no history, no
randomness, no hidden state, so any decision can be replayed from its
inputs. Attempts per goal are capped at 1 + retry_budget because only
EMPTY consumes retries and everything else terminates the loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .events import DecisionAction, RationaleCode, WatchdogLabel


class SemanticVerdict(str, Enum):
    """Post-grasp goal check result. UNAVAILABLE means the check was
    disabled or could not run; the policy treats it as consistent."""

    CONSISTENT = "CONSISTENT"
    INCONSISTENT = "INCONSISTENT"
    UNAVAILABLE = "UNAVAILABLE"


class PolicyError(Exception):
    """Base class for policy failures."""


class BudgetExceeded(PolicyError):
    """An attempt was charged beyond the configured retry budget."""


@dataclass(frozen=True, slots=True)
class PolicyConfig:
    """Knobs for the recovery policy.

    retry_budget caps how many EMPTY outcomes may be retried per goal.
    escalate_on_failure routes hard failures (SLIP, WEAK, STALL,
    TIMEOUT) to the operator instead of a safe stop.
    exclude_prev_on_reselect asks the selector to avoid the instance
    that was just tried when a retry reselects a target.
    """

    retry_budget: int = 1
    escalate_on_failure: bool = False
    exclude_prev_on_reselect: bool = True

    def __post_init__(self) -> None:
        if self.retry_budget < 0:
            raise PolicyError("retry_budget must be >= 0")

    def to_dict(self) -> dict:
        return {
            "retry_budget": self.retry_budget,
            "escalate_on_failure": self.escalate_on_failure,
            "exclude_prev_on_reselect": self.exclude_prev_on_reselect,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        return cls(
            retry_budget=int(data.get("retry_budget", 1)),
            escalate_on_failure=bool(data.get("escalate_on_failure", False)),
            exclude_prev_on_reselect=bool(data.get("exclude_prev_on_reselect", True)),
        )


@dataclass(frozen=True, slots=True)
class BudgetState:
    """Retry accounting for one goal. ``attempt`` is the 1-based index
    of the attempt about to run (or just run) under this goal."""

    retries_used: int = 0

    def __post_init__(self) -> None:
        if self.retries_used < 0:
            raise PolicyError("retries_used must be >= 0")

    @property
    def attempt(self) -> int:
        return self.retries_used + 1

    def remaining(self, config: PolicyConfig) -> int:
        return config.retry_budget - self.retries_used

    def advance(self, config: PolicyConfig) -> "BudgetState":
        """Charge one retry. Raises once the budget is already spent."""
        if self.retries_used >= config.retry_budget:
            raise BudgetExceeded(
                f"retry budget {config.retry_budget} exhausted at {self.retries_used} used"
            )
        return BudgetState(retries_used=self.retries_used + 1)


@dataclass(frozen=True, slots=True)
class Decision:
    """One policy output: the action, why, and the retries left after
    this decision is applied."""

    action: DecisionAction
    rationale: RationaleCode
    remaining_retries: int

    def __post_init__(self) -> None:
        if self.remaining_retries < 0:
            raise PolicyError("remaining_retries must be >= 0")


_HARD_FAILURES = frozenset(
    {WatchdogLabel.SLIP, WatchdogLabel.WEAK, WatchdogLabel.STALL, WatchdogLabel.TIMEOUT}
)


def decide(
    label: WatchdogLabel,
    v_sem: SemanticVerdict,
    budget: BudgetState,
    config: PolicyConfig,
) -> Decision:
    """Pick the next action after one attempt's outcome.

    SUCCESS finalizes unless the verifier says the wrong thing is in
    the gripper, which burns no budget and asks the operator instead.
    EMPTY retries while budget remains, then escalates. Hard failures
    stop safely by default or escalate when configured to.
    """
    remaining = budget.remaining(config)
    if remaining < 0:
        raise BudgetExceeded("budget state inconsistent with config")

    if label is WatchdogLabel.SUCCESS:
        if v_sem is SemanticVerdict.INCONSISTENT:
            return Decision(
                DecisionAction.WAIT_CLARIFY, RationaleCode.SEMANTIC_MISMATCH, remaining
            )
        return Decision(DecisionAction.FINALIZE, RationaleCode.SUCCESS_CONSISTENT, remaining)

    if label is WatchdogLabel.EMPTY:
        if remaining > 0:
            return Decision(
                DecisionAction.RETRY_RESELECT,
                RationaleCode.EMPTY_BUDGET_REMAINING,
                remaining - 1,
            )
        return Decision(
            DecisionAction.WAIT_CLARIFY, RationaleCode.EMPTY_BUDGET_EXHAUSTED, remaining
        )

    if label in _HARD_FAILURES:
        if config.escalate_on_failure:
            return Decision(
                DecisionAction.WAIT_CLARIFY, RationaleCode.FAILURE_ESCALATED, remaining
            )
        return Decision(DecisionAction.FINALIZE, RationaleCode.FAILURE_SAFE_STOP, remaining)

    raise PolicyError(f"no rule for label {label!r}")


def is_terminal(decision: Decision) -> bool:
    """True when the decision ends the autonomous loop for this goal
    (FINALIZE) or parks it on the operator (WAIT_CLARIFY)."""
    return decision.action is not DecisionAction.RETRY_RESELECT
