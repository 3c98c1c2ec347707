"""Client-side training-stability scheduler.

Each window of paired train/validation losses is reduced to the standard
deviation of the absolute loss differences and fed through a small state
machine: a jump above the instability threshold marks the model unstable,
a sufficiently low value lowers the stable baseline, and re-entering the
stability band while unstable releases the model for deployment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .errors import ConfigError, ContractError
from .stats import LossWindow

__all__ = [
    "ClientAction",
    "StabilityState",
    "SchedulerDecision",
    "initial_state",
    "advance",
    "observe_window",
    "force_stable",
]


class ClientAction(enum.Enum):
    CONTINUE_TRAINING = "continue_training"
    DEPLOY_MODEL = "deploy_model"


@dataclass(frozen=True)
class StabilityState:
    """Scheduler state carried between windows for one client."""

    alpha: float          # instability threshold multiplier on sigma_stable
    beta: float           # half-width of the stability band around sigma_stable
    window_len: int
    sigma_stable: float = 0.0
    unstable: bool = False


@dataclass(frozen=True)
class SchedulerDecision:
    action: ClientAction
    state: StabilityState
    sigma: float
    # Which rule fired: "unstable" | "new_baseline" | "deploy" | "hold".
    reason: str


def initial_state(alpha: float, beta: float, window_len: int) -> StabilityState:
    """Fresh state: stable flag clear, zero baseline deviation."""
    if not (alpha >= 0):
        raise ConfigError(f"alpha must satisfy alpha >= 0, got {alpha}")
    if not (0 <= beta <= alpha):
        raise ConfigError(f"beta must satisfy 0 <= beta <= alpha, got beta={beta}, alpha={alpha}")
    if window_len < 2:
        raise ConfigError(f"window length must be >= 2, got {window_len}")
    return StabilityState(alpha=float(alpha), beta=float(beta), window_len=int(window_len))


def advance(state: StabilityState, sigma: float) -> SchedulerDecision:
    """Apply one window's deviation to the state machine.

    Exactly one of the four rules fires, evaluated in this order with
    strict inequalities (a value equal to a threshold falls through):

    1. sigma > sigma_stable * alpha          -> mark unstable, keep training
    2. sigma < sigma_stable * (1 - beta)     -> adopt lower baseline
    3. sigma < sigma_stable * (1 + beta) and unstable
                                             -> mark stable, deploy
    4. otherwise                             -> keep training
    """
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    if sigma > state.sigma_stable * state.alpha:
        return SchedulerDecision(
            ClientAction.CONTINUE_TRAINING,
            replace(state, unstable=True),
            sigma,
            "unstable",
        )
    if sigma < state.sigma_stable * (1.0 - state.beta):
        return SchedulerDecision(
            ClientAction.CONTINUE_TRAINING,
            replace(state, sigma_stable=sigma),
            sigma,
            "new_baseline",
        )
    if sigma < state.sigma_stable * (1.0 + state.beta) and state.unstable:
        return SchedulerDecision(
            ClientAction.DEPLOY_MODEL,
            replace(state, unstable=False),
            sigma,
            "deploy",
        )
    return SchedulerDecision(ClientAction.CONTINUE_TRAINING, state, sigma, "hold")


def observe_window(state: StabilityState, train_losses, val_losses) -> SchedulerDecision:
    """Reduce one loss window to its deviation and advance the state machine."""
    window = LossWindow(train_losses, val_losses)
    if window.window_len != state.window_len:
        raise ContractError(
            f"expected window of length {state.window_len}, got {window.window_len}"
        )
    return advance(state, window.std)


def force_stable(state: StabilityState, sigma: float) -> StabilityState:
    """Adopt the current deviation as the stable baseline and clear the
    unstable flag.

    Used at the forced initial deployment: the cold-start baseline of zero
    can never be re-entered (rules 2 and 3 both need sigma below a multiple
    of it), so the first deployment seeds the baseline with the deviation
    observed at that moment.
    """
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    return replace(state, sigma_stable=sigma, unstable=False)
