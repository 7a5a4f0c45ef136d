"""
Recipes that regenerate figure-style datasets from the simulator.

Each recipe returns a list of row dicts whose columns match the schema of
the CSV file it is named after (see :data:`gated_spd.io.SCHEMAS`).
"""

from __future__ import annotations

import math

import numpy as np

from .detector import DetectorParams, breakdown_voltage, overbias_for_efficiency
from .harness import (
    ProtocolConfig,
    blank_gates_for,
    dark_rate_per_channel,
    measure_point,
    point_seed,
    sweep,
)

FIG3_TEMPERATURES = (200.0, 210.0, 220.0, 230.0, 240.0, 250.0, 260.0, 273.0)
FIG5_BLANKS = (0, 1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50)
HIGH_BIAS_STEP = 0.5  # V of extra DC bias for the high-bias operating point


def base_config(params: DetectorParams, de: float = 0.20, **changes) -> ProtocolConfig:
    """Reference operating point: 250 kHz light, 500 kHz gates, 0.1 photons/pulse."""
    cfg = ProtocolConfig(v_ov=overbias_for_efficiency(params, de))
    return cfg.replace(**changes) if changes else cfg


def fig2_pd_vs_de(params: DetectorParams, temperature: float = 220.0,
                  de_values=(0.10, 0.15, 0.20, 0.25, 0.30), seed: int = 2,
                  n_gates: int | None = None, jobs: int = 1) -> list[dict]:
    """Dark probability against measured DE along a bias sweep."""
    base = base_config(params, temperature=temperature, n_gates=n_gates or 10_000_000)
    grid = {"v_ov": [overbias_for_efficiency(params, d) for d in de_values]}
    return sweep(grid, base, params, seed, jobs=jobs, auto=n_gates is None, split=False)


def fig3_pd_vs_T(params: DetectorParams, temperatures=FIG3_TEMPERATURES, de: float = 0.20,
                 seed: int = 3, n_gates: int | None = None, jobs: int = 1) -> list[dict]:
    """Light-off dark probability against temperature at a fixed-DE bias."""
    base = base_config(params, de, light_on=False, n_gates=n_gates or 10_000_000)
    return sweep({"temperature": list(temperatures)}, base, params, seed, jobs=jobs,
                 auto=n_gates is None, split=False)


def fig4_rates(params: DetectorParams, temperature: float = 220.0,
               dc_steps=(-0.5, -0.25, 0.0, 0.25, HIGH_BIAS_STEP), n_blank: int = 6,
               seed: int = 4, n_gates: int = 40_000_000) -> list[dict]:
    """Counter rates against DC bias: light (L), dark, and D with and without blanking."""
    base = base_config(params, temperature=temperature, n_gates=n_gates)
    rows = []
    for i, dv in enumerate(dc_steps):
        cfg = base.replace(v_ov=base.v_ov + dv, dc_offset=base.dc_offset - dv)
        row = {
            "temperature_K": temperature,
            "v_ov_V": cfg.v_ov,
            "v_dc_rel_V": -cfg.dc_offset,
            "v_bias_dc_V": breakdown_voltage(params, temperature) - cfg.dc_offset,
        }
        try:
            ss = point_seed(seed, i)
            s0, s6 = ss.spawn(2)
            r0 = measure_point(cfg, params, s0, split=False)
            r6 = measure_point(cfg.replace(n_blank=n_blank), params, s6, split=False)
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        dark = dark_rate_per_channel(r0.dark)
        b0, b6 = r0.light.d_rate, r6.light.d_rate
        row.update(
            light_rate_Hz=r0.light.l_rate,
            dark_rate_Hz=dark,
            ap_b0_rate_Hz=b0,
            ap_b6_rate_Hz=b6,
            afterpulse_rate_Hz=b0 - dark,
            b6_reduction=1.0 - b6 / b0 if b0 > 0 else math.nan,
            error="",
        )
        rows.append(row)
    return rows


def fig5_pap_vs_blank(params: DetectorParams, temperatures=(200.0, 220.0, 240.0),
                      blanks=FIG5_BLANKS, gate_rate: float = 500e3, seed: int = 5,
                      n_gates: int = 100_000_000, jobs: int = 1) -> list[dict]:
    """Afterpulse probability against blanking time."""
    base = base_config(params, n_gates=n_gates).replace(gate_rate=gate_rate)
    rows = sweep({"temperature": list(temperatures), "n_blank": list(blanks)}, base, params,
                 seed, jobs=jobs, split=False)
    for r in rows:
        r["blank_time_us"] = r["blank_time_s"] * 1e6 if r["blank_time_s"] != "" else ""
    return rows


def fig6_panels(params: DetectorParams, temperatures=(200.0, 220.0, 240.0),
                dc_steps=(-0.5, -0.25, 0.0, 0.25, 0.5), seed: int = 6,
                n_gates: int = 40_000_000, jobs: int = 1) -> list[dict]:
    """Rates, dark probability and P_APS / P_APL against DC bias per temperature."""
    base = base_config(params, n_gates=n_gates)
    grid = {"temperature": list(temperatures), "v_ov": [base.v_ov + d for d in dc_steps]}
    rows = sweep(grid, base, params, seed, jobs=jobs)
    out = []
    for r in rows:
        out.append({
            "temperature_K": r["temperature_K"],
            "v_ov_V": r["v_ov_V"],
            "v_dc_rel_V": r["v_dc_rel_V"],
            "total_rate_Hz": r["d_rate_Hz"],
            "dark_rate_Hz": r["dark_rate_Hz"],
            "p_d": r["p_d"],
            "p_aps": r["p_aps"],
            "p_aps_err": r["p_aps_err"],
            "p_apl": r["p_apl"],
            "p_apl_err": r["p_apl_err"],
            "error": r["error"],
        })
    return out


def apl_bias_sweep(params: DetectorParams, temperature: float = 220.0,
                   dc_steps=(0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5), seed: int = 7,
                   n_gates: int = 200_000_000) -> list[tuple[float, float, float]]:
    """(overbias, P_APL, error) along a DC-bias sweep, for slope fitting.

    The default 1.5 V span and 2e8 triggers per run keep the statistical
    error of an unweighted log-linear slope near 0.025 decades/V.
    """
    base = base_config(params, temperature=temperature, n_gates=n_gates)
    n_split = blank_gates_for(12e-6, base.schedule.gate_rate)
    out = []
    for i, dv in enumerate(dc_steps):
        cfg = base.replace(v_ov=base.v_ov + dv, dc_offset=base.dc_offset - dv, n_blank=n_split)
        est = measure_point(cfg, params, point_seed(seed, i), split=False).estimates
        out.append((cfg.v_ov, est.p_ap, est.p_ap_err))
    return out


RECIPES = {
    "fig2": ("fig2_pd_vs_de.csv", fig2_pd_vs_de),
    "fig3": ("fig3_pd_vs_T.csv", fig3_pd_vs_T),
    "fig4": ("fig4_rates.csv", fig4_rates),
    "fig5": ("fig5_pap_vs_blank.csv", fig5_pap_vs_blank),
    "fig6": ("fig6_panels.csv", fig6_panels),
}


def halving_from_rows(rows) -> float:
    from .calibration import fit_temperature_halving

    ok = [r for r in rows if r.get("error", "") == "" and r["p_d"] > 0]
    return fit_temperature_halving([r["temperature_K"] for r in ok], [r["p_d"] for r in ok])


def blanking_decay(rows, temperature: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(blank time, P_AP, error) arrays for one temperature of a fig5 run."""
    sel = [r for r in rows if r["temperature_K"] == temperature and r.get("error", "") == ""]
    sel.sort(key=lambda r: r["blank_time_s"])
    return (
        np.array([r["blank_time_s"] for r in sel]),
        np.array([r["p_ap"] for r in sel]),
        np.array([r["p_ap_err"] for r in sel]),
    )
