"""Digital blanking: flip-flop plus 8-bit preset trigger counter."""

from __future__ import annotations

import enum
from dataclasses import dataclass

MAX_BLANK = 255


class Trigger(enum.Enum):
    PASS = "pass"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class BlankingConfig:
    n_blank: int = 0

    def __post_init__(self):
        if not isinstance(self.n_blank, int) or isinstance(self.n_blank, bool):
            raise TypeError(f"n_blank must be an int, got {self.n_blank!r}")
        if not 0 <= self.n_blank <= MAX_BLANK:
            raise ValueError(f"n_blank must lie in 0..{MAX_BLANK}, got {self.n_blank}")


@dataclass
class BlankingState:
    blocking: bool = False
    remaining: int = 0


def on_trigger(state: BlankingState, config: BlankingConfig) -> Trigger:
    if not state.blocking:
        return Trigger.PASS
    state.remaining -= 1
    if state.remaining == 0:
        state.blocking = False
    return Trigger.BLOCKED


def on_detection(state: BlankingState, config: BlankingConfig) -> BlankingState:
    """Load the counter after a discriminator fire on a passed trigger.

    Blocked triggers never reach the APD, so this is never called while
    ``state.blocking`` is set.
    """
    state.remaining = config.n_blank
    state.blocking = config.n_blank > 0
    return state


def dead_time_factor(mu: float, de: float, n_blank: int) -> float:
    """Fraction of detection efficiency left after blanking ``n_blank`` light pulses.

    >>> round(dead_time_factor(0.1, 0.25, 3), 2)
    0.93
    """
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    if not 0.0 <= de <= 1.0:
        raise ValueError(f"de must lie in [0, 1], got {de}")
    if n_blank < 0:
        raise ValueError(f"n_blank must be >= 0, got {n_blank}")
    return 1.0 / (1.0 + mu * de * n_blank)


def replay(events, n_triggers: int, config: BlankingConfig):
    """Rebuild the per-trigger pass/blocked sequence from a click log.

    ``events`` is an iterable of trigger indices at which the discriminator
    fired. Returns a list of :class:`Trigger`; raises if a click sits on a
    trigger the circuit would have blocked.
    """
    fired = set(int(k) for k in events)
    state = BlankingState()
    out = []
    for k in range(n_triggers):
        verdict = on_trigger(state, config)
        if verdict is Trigger.BLOCKED and k in fired:
            raise ValueError(f"click recorded on blocked trigger {k}")
        if verdict is Trigger.PASS and k in fired:
            on_detection(state, config)
        out.append(verdict)
    return out
