"""
Waveform-level model of the bias and readout path.

A bias pulse on the cathode couples through the junction capacitance and
produces a bipolar transient on the anode. The pulse continues down an
open-ended delay line and comes back uninverted; the anode output goes down a
matched, shorted line and comes back inverted. When both arrive together the
two transients cancel and only the avalanche charge pulse survives. A tap of
the returning bias pulse drives a mixer gate around that instant, and a
comparator turns the gated pulse into a logic level.

All waveforms share one uniform time grid; delays are sample shifts on that
grid (with linear interpolation for fractional delays) so that every stage is
linear and time invariant.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants
from scipy.special import erf, erfinv

log = logging.getLogger(__name__)

EDGE_STEP = 10e-12  # delay-generator resolution
DEFAULT_DT = 5e-12
_SIGMA_PER_10_90 = 1.0 / (2.0 * float(erfinv(0.8)))


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform samples must be finite")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def __len__(self):
        return self.samples.size

    def _check(self, other: "Waveform"):
        if other.samples.size != self.samples.size or other.dt != self.dt or other.t0 != self.t0:
            raise ValueError("waveforms live on different time grids")

    def __add__(self, other):
        if isinstance(other, Waveform):
            self._check(other)
            return replace(self, samples=self.samples + other.samples)
        return replace(self, samples=self.samples + other)

    def __sub__(self, other):
        return self + (-1.0 * other)

    def __mul__(self, k):
        if isinstance(k, Waveform):
            self._check(k)
            return replace(self, samples=self.samples * k.samples)
        return replace(self, samples=self.samples * k)

    __rmul__ = __mul__

    def integral(self) -> float:
        return float(self.samples.sum() * self.dt)

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    def window(self, start: float, stop: float) -> np.ndarray:
        t = self.times
        return self.samples[(t >= start) & (t <= stop)]


@dataclass(frozen=True)
class ChainConfig:
    """Analog path constants.

    ``filter_taps`` is an optional causal FIR response applied once per
    one-way pass, identically on both delay lines. ``delay_mismatch`` lengthens
    the anode-side line relative to the bias-side line.
    """

    line_delay: float = 1.20 / (0.66 * constants.c)  # 120 cm at velocity factor 0.66
    coupler_db: float = 10.0
    apd_capacitance: float = 0.25e-12
    impedance: float = 50.0
    gate_drive_threshold: float = 1.2
    filter_taps: tuple[float, ...] | None = None
    delay_mismatch: float = 0.0
    pre_gain: float = 10.0  # monitor amplifier ahead of the gate
    post_gain: float = 10.0  # inverting amplifier after the gate
    logic_width: float = 2e-9

    def __post_init__(self):
        if not self.line_delay > 0:
            raise ValueError(f"line_delay must be > 0, got {self.line_delay}")
        if not self.impedance > 0:
            raise ValueError(f"impedance must be > 0, got {self.impedance}")
        if not self.apd_capacitance > 0:
            raise ValueError(f"apd_capacitance must be > 0, got {self.apd_capacitance}")
        if self.filter_taps is not None:
            object.__setattr__(self, "filter_taps", tuple(float(x) for x in self.filter_taps))

    @property
    def coupler_gain(self) -> float:
        return 10.0 ** (-self.coupler_db / 20.0)

    def replace(self, **changes) -> "ChainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class AvalanchePulse:
    charge: float = 5e5  # electrons
    decay: float = 150e-12  # s
    onset: float = 200e-12  # s after the bias rising edge

    def __post_init__(self):
        if not self.charge > 0 or not self.decay > 0:
            raise ValueError("avalanche charge and decay must be > 0")


def quantize_edge(t: float) -> float:
    return round(t / EDGE_STEP) * EDGE_STEP


def time_grid(start: float, stop: float, dt: float = DEFAULT_DT) -> tuple[float, int]:
    n = int(math.ceil((stop - start) / dt)) + 1
    return start, n


def bias_pulse(
    rise_edge: float,
    fall_edge: float,
    amplitude: float = 4.5,
    transition: float = 200e-12,
    dt: float = DEFAULT_DT,
    span: tuple[float, float] | None = None,
) -> Waveform:
    """Rectangular pulse with erf-shaped edges of the given 10-90% time.

    Edges snap to the 10 ps delay-generator grid. The half-maximum width equals
    ``fall_edge - rise_edge`` and the area equals amplitude times that width.
    """
    rise, fall = quantize_edge(rise_edge), quantize_edge(fall_edge)
    if not fall > rise:
        raise ValueError("fall_edge must come after rise_edge")
    width = fall - rise
    if not 0.9e-9 - 1e-15 <= width <= 5e-9 + 1e-15:
        log.warning("bias pulse width %.3g s outside the 0.9-5 ns adjustable range", width)
    if span is None:
        pad = 2e-9 + 5 * transition
        span = (rise - pad, fall + pad)
    t0, n = time_grid(*span, dt)
    t = t0 + dt * np.arange(n)
    s = transition * _SIGMA_PER_10_90
    v = 0.5 * amplitude * (erf((t - rise) / s) - erf((t - fall) / s))
    return Waveform(v, dt, t0)


def fwhm(w: Waveform) -> float:
    """Full width at half maximum of a single-lobed pulse, linearly interpolated."""
    y = w.samples
    peak = np.max(np.abs(y))
    if peak == 0:
        return 0.0
    y = np.abs(y) / peak
    above = np.nonzero(y >= 0.5)[0]
    i, j = above[0], above[-1]

    def cross(a, b):
        return a + (0.5 - y[a]) / (y[b] - y[a]) * (b - a)

    left = cross(i - 1, i) if i > 0 else float(i)
    right = cross(j, j + 1) if j + 1 < y.size else float(j)
    return (right - left) * w.dt


def capacitive_transient(bias: Waveform, config: ChainConfig) -> Waveform:
    """Anode voltage Z*C*dV/dt for a cathode bias waveform."""
    dv = np.diff(bias.samples, prepend=bias.samples[0]) / bias.dt
    return replace(bias, samples=config.impedance * config.apd_capacitance * dv)


def apply_filter(samples: np.ndarray, taps) -> np.ndarray:
    if taps is None:
        return samples
    return np.convolve(samples, np.asarray(taps, dtype=float))[: samples.size]


def delay_samples(samples: np.ndarray, delay: float, dt: float) -> np.ndarray:
    """Causal delay on a fixed grid; fractional parts are linearly interpolated."""
    shift = delay / dt
    whole = int(math.floor(shift + 1e-9))
    frac = shift - whole
    if abs(frac) < 1e-9:
        frac = 0.0
    out = np.zeros_like(samples)
    if whole < samples.size:
        out[whole:] = samples[: samples.size - whole]
    if frac:
        later = np.zeros_like(out)
        later[1:] = out[:-1]
        out = (1.0 - frac) * out + frac * later
    return out


def propagate_reflect(w: Waveform, delay: float, termination: str, taps=None) -> Waveform:
    """Round trip down a line of one-way ``delay`` and back from its far end."""
    sign = {"open": 1.0, "short": -1.0}.get(termination)
    if sign is None:
        raise ValueError(f"termination must be 'open' or 'short', got {termination!r}")
    s = delay_samples(w.samples, 2.0 * delay, w.dt)
    s = apply_filter(apply_filter(s, taps), taps)
    return replace(w, samples=sign * s)


def avalanche_current(pulse: AvalanchePulse, grid: Waveform, start: float) -> Waveform:
    """Exponential current pulse, bin-averaged so its samples sum to exactly Q*e/dt."""
    t = grid.times
    t_on = start + pulse.onset
    q = pulse.charge * constants.e
    lo = np.clip((t - t_on) / pulse.decay, 0.0, None)
    hi = np.clip((t + grid.dt - t_on) / pulse.decay, 0.0, None)
    i = q / grid.dt * (np.exp(-lo) - np.exp(-hi))
    return replace(grid, samples=i)


def reflected_bias(bias: Waveform, config: ChainConfig) -> Waveform:
    """The bias pulse back at the cathode after the open-ended line."""
    return propagate_reflect(bias, config.line_delay, "open", config.filter_taps)


def anode_waveform(
    bias: Waveform,
    avalanche: AvalanchePulse | None = None,
    config: ChainConfig = ChainConfig(),
    rise_edge: float | None = None,
) -> Waveform:
    """Anode voltage over the whole round trip.

    Anything generated at the anode appears there immediately and is also
    launched down the shorted line, returning inverted; returning waves are
    absorbed. The trace therefore shows the direct transient (plus avalanche),
    the cancellation window one round trip later, and the inverted transient
    of the returning bias pulse one round trip after that.
    """
    direct = capacitive_transient(bias, config)
    if avalanche is not None:
        start = _rise_time(bias) if rise_edge is None else rise_edge
        direct = direct + config.impedance * avalanche_current(avalanche, bias, start)
    returning = capacitive_transient(reflected_bias(bias, config), config)
    anode_delay = config.line_delay + config.delay_mismatch
    back1 = propagate_reflect(direct, anode_delay, "short", config.filter_taps)
    back2 = propagate_reflect(returning, anode_delay, "short", config.filter_taps)
    return direct + returning + back1 + back2


def _rise_time(bias: Waveform) -> float:
    y = bias.samples
    peak = np.max(np.abs(y))
    if peak == 0:
        return bias.t0
    i = int(np.argmax(np.abs(y) >= 0.5 * peak))
    return float(bias.times[i])


def cancellation_window(bias: Waveform, config: ChainConfig) -> tuple[float, float]:
    """Time span around the first round trip, clear of the other two lobes."""
    rt = 2.0 * config.line_delay
    lo, hi = bias.t0, bias.times[-1]
    active = np.nonzero(np.abs(bias.samples) > 1e-9 * max(bias.peak(), 1e-300))[0]
    if active.size:
        lo, hi = bias.times[active[0]], bias.times[active[-1]]
    margin = 0.25 * rt
    return lo + rt - margin, hi + rt + margin


def cancellation_residual(bias: Waveform, config: ChainConfig) -> float:
    """Peak |anode| in the cancellation window relative to the transient peak."""
    anode = anode_waveform(bias, None, config)
    lo, hi = cancellation_window(bias, config)
    ref = capacitive_transient(bias, config).peak()
    return float(np.max(np.abs(anode.window(lo, hi)))) / ref


def gate_window(signal: Waveform, reflected: Waveform, config: ChainConfig) -> Waveform:
    """Pass ``signal`` only while the coupler tap of the returning bias is strong enough."""
    drive = config.coupler_gain * np.abs(reflected.samples)
    mask = (drive >= config.gate_drive_threshold) & (drive > 0)
    return replace(signal, samples=np.where(mask, signal.samples, 0.0))


def discriminate(signal: Waveform, threshold: float) -> bool:
    return signal.peak() > threshold


@dataclass(frozen=True)
class Traces:
    monitor: Waveform  # amplified anode, before the gate
    analog: Waveform  # gated and inverted
    digital: Waveform  # comparator output, 0/1
    fired: bool


def chain_grid(config: ChainConfig, width: float = 1.2e-9, rise: float = 1e-9,
               dt: float = DEFAULT_DT, transition: float = 200e-12) -> tuple[float, float]:
    """Time span holding every lobe; starts early enough that the leading edge is not clipped."""
    tail = 4.0 * (config.line_delay + max(config.delay_mismatch, 0.0)) + width + rise + 10 * transition + 2e-9
    return (min(0.0, rise - 10 * transition), tail)


def run_chain(
    config: ChainConfig,
    avalanche: AvalanchePulse | None = None,
    threshold: float | None = None,
    width: float = 1.2e-9,
    rise: float = 1e-9,
    amplitude: float = 4.5,
    transition: float = 200e-12,
    dt: float = DEFAULT_DT,
) -> Traces:
    """Bias pulse through monitor, gate, inverting stage and comparator."""
    span = chain_grid(config, width, rise, dt, transition)
    bias = bias_pulse(rise, rise + width, amplitude, transition, dt, span)
    anode = anode_waveform(bias, avalanche, config, rise_edge=quantize_edge(rise))
    monitor = config.pre_gain * anode
    analog = -config.post_gain * gate_window(monitor, reflected_bias(bias, config), config)
    if threshold is None:
        threshold = threshold_for_charge(1e5, config, width=width, rise=rise,
                                         amplitude=amplitude, transition=transition, dt=dt)
    fired = discriminate(analog, threshold)
    digital = np.zeros(len(analog))
    if fired:
        first = int(np.argmax(np.abs(analog.samples) > threshold))
        n = int(round(config.logic_width / dt))
        digital[first : first + n] = 1.0
    return Traces(monitor, analog, replace(analog, samples=digital), fired)


def threshold_for_charge(q_min: float, config: ChainConfig, pulse: AvalanchePulse | None = None,
                         **shape) -> float:
    """Comparator level at which an avalanche of ``q_min`` electrons just fires.

    The chain is linear in the avalanche, so the gated output for ``q_min`` is
    the no-avalanche output plus ``q_min`` times the unit-charge response;
    the threshold sits a hair below its peak.
    """
    base = pulse or AvalanchePulse()
    unit = replace(base, charge=1.0)
    width = shape.get("width", 1.2e-9)
    rise = shape.get("rise", 1e-9)
    dt = shape.get("dt", DEFAULT_DT)
    amplitude = shape.get("amplitude", 4.5)
    transition = shape.get("transition", 200e-12)
    span = chain_grid(config, width, rise, dt, transition)
    bias = bias_pulse(rise, rise + width, amplitude, transition, dt, span)
    gated = lambda av: gate_window(  # noqa: E731
        config.pre_gain * anode_waveform(bias, av, config, rise_edge=quantize_edge(rise)),
        reflected_bias(bias, config), config,
    )
    response = (gated(unit) - gated(None)) * config.post_gain
    return q_min * response.peak() * (1.0 - 1e-9)


def write_waveform_csv(w: Waveform, path) -> None:
    from .io import atomic_write

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["t_seconds", "volts"])
    for t, v in zip(w.times, w.samples):
        out.writerow([repr(float(t)), repr(float(v))])
    atomic_write(path, buf.getvalue())


def read_waveform_csv(path) -> Waveform:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, v = data[:, 0], data[:, 1]
    dt = float(t[1] - t[0]) if t.size > 1 else DEFAULT_DT
    return Waveform(v, dt, float(t[0]))
