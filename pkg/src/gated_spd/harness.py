"""
Two-counter measurement protocol and the estimators built on it.

The detector is gated at twice the laser rate. Even triggers coincide with
the light pulses and feed counter L; odd triggers fall midway between them
and feed counter D. Comparing D with the light on against the light-off dark
rate isolates afterpulsing.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .blanking import BlankingConfig, dead_time_factor
from .detector import (
    BiasSchedule,
    DetectorParams,
    breakdown_voltage,
    capture_means,
    dark_prob,
    detection_efficiency,
    photon_prob,
    trigger_probs,
)

log = logging.getLogger(__name__)

CHUNK = 1 << 20
BLANK_SPLIT_TIME = 12e-6  # s; afterpulses surviving this long are "long-lived"


@dataclass(frozen=True)
class ProtocolConfig:
    light_rate: float = 250e3  # Hz; gates run at twice this
    mu: float = 0.1
    n_gates: int = 10_000_000  # triggers issued, both channels
    light_on: bool = True
    blanking: BlankingConfig = field(default_factory=BlankingConfig)
    temperature: float = 220.0
    gate_width: float = 1.2e-9
    v_ov: float = DetectorParams.v_ov_ref
    dc_offset: float = 0.5

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not self.light_rate > 0:
            raise ValueError(f"light_rate must be > 0, got {self.light_rate}")
        if isinstance(self.blanking, int):
            object.__setattr__(self, "blanking", BlankingConfig(self.blanking))
        self.schedule  # validates the derived schedule

    @property
    def schedule(self) -> BiasSchedule:
        return BiasSchedule(
            gate_rate=2.0 * self.light_rate,
            gate_width=self.gate_width,
            v_ov=self.v_ov,
            dc_offset=self.dc_offset,
        )

    @property
    def n_blank(self) -> int:
        return self.blanking.n_blank

    def replace(self, **changes) -> "ProtocolConfig":
        if "n_blank" in changes:
            changes["blanking"] = BlankingConfig(int(changes.pop("n_blank")))
        if "gate_rate" in changes:
            changes["light_rate"] = changes.pop("gate_rate") / 2.0
        return replace(self, **changes)


@dataclass(frozen=True)
class CountersLD:
    l_counts: int
    d_counts: int
    l_gates: int  # armed gates
    d_gates: int
    l_blanked: int
    d_blanked: int
    duration: float  # s
    l_causes: tuple[int, int, int] = (0, 0, 0)  # photon, dark, afterpulse
    d_causes: tuple[int, int, int] = (0, 0, 0)
    events: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def triggers(self) -> int:
        return self.l_gates + self.d_gates + self.l_blanked + self.d_blanked

    @property
    def blanked(self) -> int:
        return self.l_blanked + self.d_blanked

    @property
    def counts(self) -> int:
        return self.l_counts + self.d_counts

    @property
    def p_l(self) -> float:
        return self.l_counts / self.l_gates if self.l_gates else math.nan

    @property
    def p_d(self) -> float:
        return self.d_counts / self.d_gates if self.d_gates else math.nan

    @property
    def p_both(self) -> float:
        gates = self.l_gates + self.d_gates
        return self.counts / gates if gates else math.nan

    @property
    def l_rate(self) -> float:
        return self.l_counts / self.duration

    @property
    def d_rate(self) -> float:
        return self.d_counts / self.duration

    @property
    def firing_rate(self) -> float:
        return self.counts / self.duration


@dataclass(frozen=True)
class EstimateSet:
    de: float
    de_err: float
    p_d: float
    p_d_err: float
    p_ap: float
    p_ap_err: float
    p_apl: float
    p_apl_err: float
    p_aps: float
    p_aps_err: float
    firing_rate: float
    firing_rate_err: float


def run_protocol(
    config: ProtocolConfig,
    params: DetectorParams,
    seed=None,
    keep_log: bool = False,
) -> CountersLD:
    """Simulate ``config.n_gates`` triggers of the interleaved protocol.

    Blanking acts on the unified trigger stream, so a click on either channel
    suppresses the following ``n_blank`` triggers of both. With ``keep_log``
    the returned counters carry an ``(n, 2)`` array of (trigger index, cause)
    for every click.
    """
    if config.n_gates <= 0:
        raise ValueError("n_gates must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sched = config.schedule
    t = config.temperature

    p_ph = photon_prob(params, sched.v_ov, config.mu) if config.light_on else 0.0
    p_dk = dark_prob(params, t, sched.v_ov, sched.gate_width)
    taus = np.array([s.lifetime for s in params.traps], dtype=float)
    occ = np.zeros(len(params.traps))
    decay = np.exp(-sched.period / taus)
    trig = trigger_probs(params, sched.v_ov).astype(float).reshape(-1)
    cap = capture_means(params, t).astype(float).reshape(-1)
    counts = np.zeros((2, _kernel.N_COLUMNS), dtype=np.int64)
    no_events = np.zeros((0, 2), dtype=np.int64)

    logs = []
    k = 0
    remaining = 0
    while k < config.n_gates:
        u = rng.random(min(CHUNK, config.n_gates - k))
        events = np.empty((u.size, 2), dtype=np.int64) if keep_log else no_events
        k, _, remaining, n_ev = _kernel.run_triggers(
            k, config.n_gates, remaining, config.n_blank, occ, decay, trig, cap,
            p_ph, p_dk, u, counts, events,
        )
        if keep_log:
            logs.append(events[:n_ev].copy())

    A, B, C = _kernel.ARMED, _kernel.BLANKED, _kernel.CLICKS
    return CountersLD(
        l_counts=int(counts[0, C]),
        d_counts=int(counts[1, C]),
        l_gates=int(counts[0, A]),
        d_gates=int(counts[1, A]),
        l_blanked=int(counts[0, B]),
        d_blanked=int(counts[1, B]),
        duration=config.n_gates / sched.gate_rate,
        l_causes=tuple(int(x) for x in counts[0, C + 1 :]),
        d_causes=tuple(int(x) for x in counts[1, C + 1 :]),
        events=np.concatenate(logs) if keep_log else None,
    )


def _binom_err(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n else math.nan


def estimate_de(light_run: CountersLD, dark_run: CountersLD, mu: float) -> float:
    """Poisson-corrected, dark-subtracted detection efficiency.

    DE = -ln[(1 - P_L) / (1 - P_dark)] / mu with P_L the L-channel click
    fraction of the light run and P_dark the per-gate click fraction of the
    light-off run.
    """
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    p_l, p_dark = light_run.p_l, dark_run.p_both
    if p_l <= p_dark:
        log.warning("light click fraction %.3g <= dark %.3g; DE clamped to 0", p_l, p_dark)
        return 0.0
    return -math.log((1.0 - p_l) / (1.0 - p_dark)) / mu


def estimate_de_err(light_run: CountersLD, dark_run: CountersLD, mu: float) -> float:
    p_l, p_dark = light_run.p_l, dark_run.p_both
    e_l = _binom_err(p_l, light_run.l_gates) / (1.0 - p_l)
    e_d = _binom_err(p_dark, dark_run.l_gates + dark_run.d_gates) / (1.0 - p_dark)
    return math.hypot(e_l, e_d) / mu


def estimate_pap(d_on_rate: float, dark_rate: float, firing_rate: float) -> float:
    """Afterpulse probability: excess interleaved rate per detector fire."""
    if not firing_rate > 0:
        raise ValueError(f"firing_rate must be > 0, got {firing_rate}")
    return max(0.0, (d_on_rate - dark_rate) / firing_rate)


def split_pap(p_ap_total: float, p_ap_blanked_12us: float) -> tuple[float, float]:
    """(short-lived, long-lived) afterpulse components."""
    p_apl = p_ap_blanked_12us
    return max(0.0, p_ap_total - p_apl), p_apl


def dark_rate_per_channel(dark_run: CountersLD) -> float:
    """Light-off rate of one counter, averaging L and D."""
    return 0.5 * dark_run.counts / dark_run.duration


def _pap_and_err(light_run: CountersLD, dark_run: CountersLD, firing: str = "total"):
    fr = light_run.firing_rate if firing == "total" else light_run.l_rate
    if not fr > 0:
        return math.nan, math.nan
    dr = dark_rate_per_channel(dark_run)
    p = estimate_pap(light_run.d_rate, dr, fr)
    err = math.hypot(
        math.sqrt(light_run.d_counts) / light_run.duration,
        0.5 * math.sqrt(dark_run.counts) / dark_run.duration,
    ) / fr
    return p, err


def blank_gates_for(time_s: float, gate_rate: float) -> int:
    return int(round(time_s * gate_rate))


def auto_gates(config: ProtocolConfig, params: DetectorParams, rel_err: float = 0.1,
               floor: int = 1_000_000, cap: int = 400_000_000) -> int:
    """Triggers needed for ``rel_err`` on the light-off dark probability."""
    p = dark_prob(params, config.temperature, config.v_ov, config.gate_width)
    if p <= 0:
        return floor
    need = math.ceil(1.0 / (rel_err**2 * p))
    n = int(min(cap, max(floor, need)))
    return n + (n & 1)


@dataclass(frozen=True)
class PointResult:
    estimates: EstimateSet
    light: CountersLD | None
    light_12us: CountersLD | None
    dark: CountersLD


def measure_point(config: ProtocolConfig, params: DetectorParams, seed=None,
                  firing: str = "total", split: bool = True) -> PointResult:
    """Light-off, light-on and light-on-with-12-us-blanking runs at one setting.

    ``firing`` selects the detector-firing rate in the P_AP denominator:
    ``"total"`` (both counters) or ``"light"`` (L only). With ``split=False``
    the 12 us run is skipped and the long/short components are NaN.
    """
    if firing not in ("total", "light"):
        raise ValueError(f"firing must be 'total' or 'light', got {firing!r}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_dark, s_light, s_split = ss.spawn(3)
    dark = run_protocol(config.replace(light_on=False), params, np.random.default_rng(s_dark))
    p_d = dark.p_both
    p_d_err = _binom_err(p_d, dark.l_gates + dark.d_gates)
    nan = math.nan
    if not config.light_on or config.mu == 0:
        est = EstimateSet(nan, nan, p_d, p_d_err, nan, nan, nan, nan, nan, nan,
                          dark.firing_rate, math.sqrt(dark.counts) / dark.duration)
        return PointResult(est, None, None, dark)

    light = run_protocol(config, params, np.random.default_rng(s_light))
    n_split = blank_gates_for(BLANK_SPLIT_TIME, config.schedule.gate_rate)
    if not split:
        light_12 = None
    elif config.n_blank == n_split:
        light_12 = light
    else:
        light_12 = run_protocol(config.replace(n_blank=n_split), params, np.random.default_rng(s_split))
    de = estimate_de(light, dark, config.mu)
    p_ap, p_ap_err = _pap_and_err(light, dark, firing)
    if light_12 is None:
        p_apl = p_apl_err = p_aps = p_aps_err = nan
    else:
        p_apl, p_apl_err = _pap_and_err(light_12, dark, firing)
        p_aps, _ = split_pap(p_ap, p_apl)
        p_aps_err = math.hypot(p_ap_err, p_apl_err)
    est = EstimateSet(
        de=de,
        de_err=estimate_de_err(light, dark, config.mu),
        p_d=p_d,
        p_d_err=p_d_err,
        p_ap=p_ap,
        p_ap_err=p_ap_err,
        p_apl=p_apl,
        p_apl_err=p_apl_err,
        p_aps=p_aps,
        p_aps_err=p_aps_err,
        firing_rate=light.firing_rate,
        firing_rate_err=math.sqrt(light.counts) / light.duration,
    )
    return PointResult(est, light, light_12, dark)


SWEEP_AXES = ("temperature", "v_ov", "n_blank", "gate_rate", "light_on", "mu")


AXIS_COLUMNS = {
    "temperature": "temperature_K",
    "v_ov": "v_ov_V",
    "n_blank": "n_blank",
    "gate_rate": "gate_rate_Hz",
    "light_on": "light_on",
    "mu": "mu",
}


def _apply(config: ProtocolConfig, coords: dict) -> ProtocolConfig:
    changes = dict(coords)
    if "v_ov" in changes:
        # the gate amplitude rides on the DC bias, so both move together
        changes["dc_offset"] = config.dc_offset - (changes["v_ov"] - config.v_ov)
    if "light_on" in changes:
        changes["light_on"] = bool(changes["light_on"])
    if "n_blank" in changes:
        changes["n_blank"] = int(changes["n_blank"])
    return config.replace(**changes)


def point_row(coords: dict, config: ProtocolConfig, params: DetectorParams, seed, firing="total",
              auto: bool = False, split: bool = True) -> dict:
    """One sweep row; failures come back as a row carrying an ``error`` tag."""
    try:
        cfg = _apply(config, coords)
        if auto:
            cfg = cfg.replace(n_gates=auto_gates(cfg, params))
        res = measure_point(cfg, params, seed, firing, split)
    except Exception as exc:  # a bad point must not abort the grid
        log.warning("sweep point %s failed: %s", coords, exc)
        row = empty_row(coords)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row = result_row(cfg, params, res)
    row["error"] = ""
    return row


COLUMNS = (
    "temperature_K", "v_ov_V", "v_dc_rel_V", "v_bias_dc_V", "gate_rate_Hz", "light_rate_Hz",
    "mu", "light_on", "n_blank", "blank_time_s", "blank_light_pulses", "n_gates",
    "de_true", "de", "de_err", "p_d", "p_d_err", "p_ap", "p_ap_err", "p_apl", "p_apl_err",
    "p_aps", "p_aps_err", "firing_rate_Hz", "firing_rate_err_Hz",
    "l_rate_Hz", "d_rate_Hz", "dark_rate_Hz", "l_prob", "d_prob", "dark_prob",
    "dead_time_factor_light", "dead_time_factor_bias", "error",
)


def empty_row(coords) -> dict:
    row = {c: "" for c in COLUMNS}
    for axis, value in coords.items():
        row[AXIS_COLUMNS[axis]] = value
    return row


def result_row(cfg: ProtocolConfig, params: DetectorParams, res: PointResult) -> dict:
    est, light, dark = res.estimates, res.light, res.dark
    sched = cfg.schedule
    de_true = detection_efficiency(params, cfg.v_ov)
    v_br = breakdown_voltage(params, cfg.temperature)
    nan = math.nan
    row = {
        "temperature_K": cfg.temperature,
        "v_ov_V": cfg.v_ov,
        # DC bias relative to breakdown; overbias tracks DC bias one for one
        "v_dc_rel_V": -cfg.dc_offset,
        "v_bias_dc_V": v_br - cfg.dc_offset,
        "gate_rate_Hz": sched.gate_rate,
        "light_rate_Hz": cfg.light_rate,
        "mu": cfg.mu,
        "light_on": int(cfg.light_on),
        "n_blank": cfg.n_blank,
        "blank_time_s": cfg.n_blank / sched.gate_rate,
        "blank_light_pulses": cfg.n_blank / 2.0,
        "n_gates": cfg.n_gates,
        "de_true": de_true,
        "de": est.de,
        "de_err": est.de_err,
        "p_d": est.p_d,
        "p_d_err": est.p_d_err,
        "p_ap": est.p_ap,
        "p_ap_err": est.p_ap_err,
        "p_apl": est.p_apl,
        "p_apl_err": est.p_apl_err,
        "p_aps": est.p_aps,
        "p_aps_err": est.p_aps_err,
        "firing_rate_Hz": est.firing_rate,
        "firing_rate_err_Hz": est.firing_rate_err,
        "l_rate_Hz": light.l_rate if light else nan,
        "d_rate_Hz": light.d_rate if light else nan,
        "dark_rate_Hz": dark_rate_per_channel(dark),
        "l_prob": light.p_l if light else nan,
        "d_prob": light.p_d if light else nan,
        "dark_prob": dark.p_both,
        "dead_time_factor_light": dead_time_factor(cfg.mu, de_true, cfg.n_blank / 2.0),
        "dead_time_factor_bias": dead_time_factor(cfg.mu, de_true, cfg.n_blank),
    }
    return row


def grid_points(grid: dict) -> list[dict]:
    if not grid:
        raise ValueError("sweep grid is empty")
    for axis in grid:
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    axes = list(grid)
    values = [list(np.atleast_1d(grid[a]).tolist()) for a in axes]
    if any(len(v) == 0 for v in values):
        raise ValueError("sweep grid has an empty axis")
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def point_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(index,))


def _row_job(args):
    return point_row(*args)


def sweep(grid: dict, base: ProtocolConfig, params: DetectorParams, seed: int = 0,
          jobs: int = 1, firing: str = "total", auto: bool = False,
          split: bool = True) -> list[dict]:
    """Measure every point of the cartesian ``grid`` around ``base``.

    Point ``i`` draws its randomness from ``SeedSequence(seed, spawn_key=(i,))``,
    so rows do not depend on ``jobs`` or on completion order.
    """
    points = grid_points(grid)
    work = [(c, base, params, point_seed(seed, i), firing, auto, split)
            for i, c in enumerate(points)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_row_job, work))
    return [_row_job(w) for w in work]
