"""
Per-gate stochastic model of a gated InGaAs APD.

Dark generation, photon detection and trap-mediated afterpulsing are all
evaluated once per bias gate. Trap occupancies are expected (real valued)
carrier counts that decay exponentially between gates and are refilled by
every avalanche.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)


class Cause(enum.IntEnum):
    NONE = 0
    PHOTON = 1
    DARK = 2
    AFTERPULSE = 3


@dataclass(frozen=True)
class TrapSpecies:
    capture_mean: float  # expected trapped carriers per avalanche
    lifetime: float  # s
    trigger_ref: float  # avalanche probability per trapped carrier per gate at v_ov_ref
    trigger_decades: float = 0.0  # decades / V

    def __post_init__(self):
        if not self.lifetime > 0:
            raise ValueError(f"trap lifetime must be > 0, got {self.lifetime}")
        if not 0.0 <= self.trigger_ref <= 1.0:
            raise ValueError(f"trigger_ref must lie in [0, 1], got {self.trigger_ref}")
        if self.capture_mean < 0:
            raise ValueError(f"capture_mean must be >= 0, got {self.capture_mean}")


# Short-lived species empties within a few gate periods at 500 kHz; the
# long-lived one barely decays over a 12 us blanking window.
DEFAULT_TRAPS = (
    TrapSpecies(capture_mean=0.5, lifetime=2.0e-6, trigger_ref=7.9e-3, trigger_decades=0.3),
    TrapSpecies(capture_mean=0.05, lifetime=500e-6, trigger_ref=1.41e-5, trigger_decades=1.0),
)


@dataclass(frozen=True)
class DetectorParams:
    """Physical parameterization of one APD.

    The reference point (t_ref, v_ov_ref, w_ref) is where the dark probability
    equals ``p_dark_ref``. ``p_dark_ref = 0`` switches dark counts off.

    ``anomaly_onset`` enables the low-temperature trap anomaly: below that
    temperature the capture of the longest-lived species is multiplied by
    ``10 ** (anomaly_decades * (anomaly_onset - t))``.
    """

    v_br_ref: float = 52.0
    v_br_tempco: float = 0.1
    eta_max: float = 0.35
    v_eta: float = 1.5
    p_dark_ref: float = 1.0e-6
    t_ref: float = 220.0
    v_ov_ref: float = 1.5 * math.log(0.35 / 0.15)
    w_ref: float = 1.2e-9
    dark_halving: float = 10.0
    dark_bias_decades: float = 1.0
    traps: tuple[TrapSpecies, ...] = DEFAULT_TRAPS
    anomaly_onset: float | None = None
    anomaly_decades: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "traps", tuple(self.traps))
        if not 0.0 < self.eta_max <= 1.0:
            raise ValueError(f"eta_max must lie in (0, 1], got {self.eta_max}")
        for name in ("v_eta", "t_ref", "w_ref", "dark_halving", "v_br_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.p_dark_ref < 1.0:
            raise ValueError(f"p_dark_ref must lie in [0, 1), got {self.p_dark_ref}")
        if self.v_ov_ref < 0:
            raise ValueError(f"v_ov_ref must be >= 0, got {self.v_ov_ref}")

    def replace(self, **changes) -> "DetectorParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class BiasSchedule:
    gate_rate: float = 500e3  # Hz
    gate_width: float = 1.2e-9  # s
    v_ov: float = DetectorParams.v_ov_ref  # V above breakdown during the gate
    dc_offset: float = 0.5  # V below breakdown between gates

    def __post_init__(self):
        if not self.gate_rate > 0 or not self.gate_width > 0:
            raise ValueError("gate_rate and gate_width must be > 0")
        if self.gate_width * self.gate_rate >= 1:
            raise ValueError("gate_width * gate_rate must be < 1")
        if self.v_ov < 0:
            raise ValueError(f"v_ov must be >= 0, got {self.v_ov}")

    @property
    def period(self) -> float:
        return 1.0 / self.gate_rate

    def replace(self, **changes) -> "BiasSchedule":
        return replace(self, **changes)


@dataclass
class DetectorState:
    """Mutable trap occupancy and clock of a single simulation run.

    ``clock`` is the instant of the next gate; ``last_update`` is the instant
    at which ``occupancy`` was last brought up to date.
    """

    occupancy: np.ndarray
    lifetimes: np.ndarray
    rng: np.random.Generator
    clock: float = 0.0
    last_update: float = 0.0

    @classmethod
    def fresh(cls, params: DetectorParams, seed=None) -> "DetectorState":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        taus = np.array([s.lifetime for s in params.traps], dtype=float)
        return cls(occupancy=np.zeros(len(params.traps)), lifetimes=taus, rng=rng)


@dataclass(frozen=True)
class GateOutcome:
    avalanche: bool
    cause: Cause = Cause.NONE

    def __post_init__(self):
        if self.avalanche == (self.cause == Cause.NONE):
            raise ValueError("cause must be NONE exactly when there is no avalanche")


def _clamp(p: float, what: str) -> float:
    if p > 1.0:
        log.warning("%s = %.3g clamped to 1", what, p)
        return 1.0
    if p < 0.0:
        log.warning("%s = %.3g clamped to 0", what, p)
        return 0.0
    return p


def breakdown_voltage(params: DetectorParams, t: float) -> float:
    return params.v_br_ref + params.v_br_tempco * (t - params.t_ref)


def detection_efficiency(params: DetectorParams, v_ov: float) -> float:
    if v_ov < 0:
        raise ValueError(f"overbias must be >= 0, got {v_ov}")
    return params.eta_max * -math.expm1(-v_ov / params.v_eta)


def overbias_for_efficiency(params: DetectorParams, de: float) -> float:
    """Inverse of :func:`detection_efficiency`."""
    if not 0.0 <= de < params.eta_max:
        raise ValueError(f"DE {de} unreachable (eta_max = {params.eta_max})")
    return -params.v_eta * math.log1p(-de / params.eta_max)


def dark_prob(params: DetectorParams, t: float, v_ov: float, gate_width: float) -> float:
    """Dark avalanche probability per gate.

    Halves for every ``dark_halving`` kelvin of cooling below ``t_ref``, times
    a bias exponential, times linear gate-width scaling. Calibrated for
    t >= 200 K; colder temperatures are evaluated with the same law (see ``anomaly_onset`` for the trap-driven excess).
    """
    p = (
        params.p_dark_ref
        * 2.0 ** ((t - params.t_ref) / params.dark_halving)
        * 10.0 ** (params.dark_bias_decades * (v_ov - params.v_ov_ref))
        * (gate_width / params.w_ref)
    )
    return _clamp(p, "dark probability")


def photon_prob(params: DetectorParams, v_ov: float, mu: float) -> float:
    """Click probability from a Poissonian pulse of mean ``mu`` photons."""
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    return -math.expm1(-mu * detection_efficiency(params, v_ov))


def trigger_probs(params: DetectorParams, v_ov: float) -> np.ndarray:
    """Per-carrier trigger probability of each trap species at ``v_ov``."""
    return np.array(
        [s.trigger_ref * 10.0 ** (s.trigger_decades * (v_ov - params.v_ov_ref)) for s in params.traps]
    )


def capture_means(params: DetectorParams, t: float) -> np.ndarray:
    cap = np.array([s.capture_mean for s in params.traps], dtype=float)
    if params.anomaly_onset is not None and cap.size and t < params.anomaly_onset:
        longest = int(np.argmax([s.lifetime for s in params.traps]))
        cap[longest] *= 10.0 ** (params.anomaly_decades * (params.anomaly_onset - t))
    return cap


def afterpulse_trigger_prob(state: DetectorState, params: DetectorParams, v_ov: float) -> float:
    if not params.traps:
        return 0.0
    terms = np.minimum(1.0, state.occupancy * trigger_probs(params, v_ov))
    return float(1.0 - np.prod(1.0 - terms))


def _hazard(p: float) -> float:
    return math.inf if p >= 1.0 else -math.log1p(-p)


def attribute(u: float, p_photon: float, p_dark: float, p_ap: float) -> Cause:
    """Pick the cause of an avalanche given a uniform ``u`` in [0, 1).

    Sources compete as independent Poisson processes within the gate, so the
    first triggering carrier comes from each source in proportion to its
    hazard -ln(1 - p).
    """
    h = [_hazard(p_photon), _hazard(p_dark), _hazard(p_ap)]
    if math.inf in h:
        h = [1.0 if x == math.inf else 0.0 for x in h]
    total = sum(h)
    edge = 0.0
    for cause, hk in zip((Cause.PHOTON, Cause.DARK, Cause.AFTERPULSE), h):
        edge += hk / total
        if u < edge:
            return cause
    return Cause.AFTERPULSE if h[2] > 0 else (Cause.DARK if h[1] > 0 else Cause.PHOTON)


def step_gate(
    state: DetectorState,
    params: DetectorParams,
    schedule: BiasSchedule,
    mu: float,
    light: bool,
    t: float | None = None,
) -> GateOutcome:
    """Advance the detector through one armed gate.

    Consumes exactly one uniform from ``state.rng``: values below the total
    avalanche probability fire, and the same value rescaled picks the cause.
    """
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    temperature = params.t_ref if t is None else t
    if params.traps:
        dt = state.clock - state.last_update
        state.occupancy = state.occupancy * np.exp(-dt / state.lifetimes)
    state.last_update = state.clock

    p_photon = photon_prob(params, schedule.v_ov, mu) if light else 0.0
    p_dark = dark_prob(params, temperature, schedule.v_ov, schedule.gate_width)
    p_ap = afterpulse_trigger_prob(state, params, schedule.v_ov)
    p_total = 1.0 - (1.0 - p_photon) * (1.0 - p_dark) * (1.0 - p_ap)

    u = state.rng.random()
    state.clock += schedule.period
    if u >= p_total:
        return GateOutcome(False)
    cause = attribute(u / p_total, p_photon, p_dark, p_ap)
    if params.traps:
        state.occupancy = state.occupancy + capture_means(params, temperature)
    return GateOutcome(True, cause)


def blank_gates(state: DetectorState, n: int, gate_rate: float) -> DetectorState:
    """Let ``n`` gate periods elapse with the bias suppressed."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return state
    elapsed = n / gate_rate
    if state.occupancy.size:
        state.occupancy = state.occupancy * np.exp(-elapsed / state.lifetimes)
    state.last_update += elapsed
    state.clock += elapsed
    return state
