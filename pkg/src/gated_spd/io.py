"""CSV output: documented column sets, deterministic formatting, atomic writes."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path

from .harness import COLUMNS as SWEEP_COLUMNS

OUT_ENV = "GATED_SPD_OUT"

_SWEEP_DOC = {
    "temperature_K": "APD temperature",
    "v_ov_V": "overbias during the gate",
    "v_dc_rel_V": "DC bias relative to breakdown (negative = below)",
    "v_bias_dc_V": "absolute DC bias, breakdown(T) - dc offset",
    "gate_rate_Hz": "bias gate (trigger) rate, twice the light rate",
    "light_rate_Hz": "laser pulse rate",
    "mu": "mean photons per light pulse",
    "light_on": "1 if the laser was on for the light runs",
    "n_blank": "triggers blocked after each detection",
    "blank_time_s": "n_blank / gate_rate",
    "blank_light_pulses": "light pulses blocked after each detection, n_blank / 2",
    "n_gates": "triggers issued per run",
    "de_true": "configured detection efficiency at v_ov",
    "de": "Poisson-corrected, dark-subtracted DE estimate",
    "de_err": "1-sigma error of de",
    "p_d": "light-off dark count probability per armed gate",
    "p_d_err": "binomial 1-sigma error of p_d",
    "p_ap": "afterpulse probability at n_blank",
    "p_ap_err": "1-sigma error of p_ap",
    "p_apl": "long-lived afterpulse probability (12 us blanking)",
    "p_apl_err": "1-sigma error of p_apl",
    "p_aps": "short-lived afterpulse probability, p_ap - p_apl",
    "p_aps_err": "1-sigma error of p_aps",
    "firing_rate_Hz": "detector fires per second, both counters, light on",
    "firing_rate_err_Hz": "Poisson 1-sigma error of firing_rate_Hz",
    "l_rate_Hz": "counter L rate, light on",
    "d_rate_Hz": "counter D rate, light on",
    "dark_rate_Hz": "per-counter rate with light off, (L + D) / 2",
    "l_prob": "counter L clicks per armed L gate, light on",
    "d_prob": "counter D clicks per armed D gate, light on",
    "dark_prob": "clicks per armed gate, light off",
    "dead_time_factor_light": "1 / (1 + mu DE N_B) with N_B = light pulses blanked",
    "dead_time_factor_bias": "1 / (1 + mu DE N_B) with N_B = bias gates blanked",
    "error": "empty, or the failure message for this grid point",
}

SCHEMAS: dict[str, dict[str, str]] = {
    "sweep.csv": _SWEEP_DOC,
    "fig2_pd_vs_de.csv": _SWEEP_DOC,
    "fig3_pd_vs_T.csv": _SWEEP_DOC,
    "fig5_pap_vs_blank.csv": {**_SWEEP_DOC, "blank_time_us": "blanking time in microseconds"},
    "fig4_rates.csv": {
        "temperature_K": "APD temperature",
        "v_ov_V": "overbias during the gate",
        "v_dc_rel_V": "DC bias relative to breakdown",
        "v_bias_dc_V": "absolute DC bias",
        "light_rate_Hz": "counter L rate, light on",
        "dark_rate_Hz": "(L + D) / 2 rate, light off",
        "ap_b0_rate_Hz": "counter D rate, light on, no blanking",
        "ap_b6_rate_Hz": "counter D rate, light on, 6 triggers blanked",
        "afterpulse_rate_Hz": "ap_b0_rate_Hz - dark_rate_Hz",
        "b6_reduction": "1 - ap_b6_rate_Hz / ap_b0_rate_Hz",
        "error": "empty, or the failure message",
    },
    "fig6_panels.csv": {
        "temperature_K": "APD temperature",
        "v_ov_V": "overbias during the gate",
        "v_dc_rel_V": "DC bias relative to breakdown",
        "total_rate_Hz": "counter D rate, light on, no blanking (dark + afterpulse)",
        "dark_rate_Hz": "(L + D) / 2 rate, light off",
        "p_d": "light-off dark probability per gate",
        "p_aps": "short-lived afterpulse probability",
        "p_aps_err": "1-sigma error of p_aps",
        "p_apl": "long-lived afterpulse probability",
        "p_apl_err": "1-sigma error of p_apl",
        "error": "empty, or the failure message",
    },
    "counters.csv": {
        "run": "dark (light off), light, or light_12us",
        "l_counts": "counter L clicks",
        "d_counts": "counter D clicks",
        "l_gates": "armed L gates",
        "d_gates": "armed D gates",
        "l_blanked": "blocked L triggers",
        "d_blanked": "blocked D triggers",
        "duration_s": "simulated wall-clock time",
        "l_photon": "L clicks seeded by a photon",
        "l_dark": "L clicks seeded by a thermal carrier",
        "l_afterpulse": "L clicks seeded by a trapped carrier",
        "d_photon": "D clicks seeded by a photon (always 0)",
        "d_dark": "D clicks seeded by a thermal carrier",
        "d_afterpulse": "D clicks seeded by a trapped carrier",
    },
    "estimates.csv": {
        "quantity": "de, p_d, p_ap, p_apl, p_aps or firing_rate_Hz",
        "value": "estimate",
        "stderr": "1-sigma statistical error",
    },
    "fit_report.csv": {
        "parameter": "amplitude_i, lifetime_i_s, constant, chi2 or decayed_fraction_12us",
        "value": "fitted value",
        "stderr": "1-sigma error from the fit covariance",
    },
    "calibration.csv": {
        "observable": "p_d, de or ap_short_fraction",
        "temperature_K": "temperature of the anchor",
        "target": "anchored value",
        "model": "value from the calibrated parameters",
        "rel_residual": "model / target - 1",
    },
    "waveform_monitor.csv": {"t_seconds": "time", "volts": "amplified anode, before the gate"},
    "waveform_analog.csv": {"t_seconds": "time", "volts": "gated, inverted signal"},
    "waveform_digital.csv": {"t_seconds": "time", "volts": "comparator output, 0 or 1"},
}

assert tuple(_SWEEP_DOC) == SWEEP_COLUMNS


def fmt(v) -> str:
    if hasattr(v, "item"):  # numpy scalar; np.float64 would repr as np.float64(...)
        v = v.item()
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def render_csv(rows, columns) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(columns)
    for row in rows:
        out.writerow([fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_rows(path, rows, columns=None) -> Path:
    """Write ``rows`` (dicts) under the schema registered for the file name."""
    path = Path(path)
    if columns is None:
        columns = list(SCHEMAS[path.name])
    return atomic_write(path, render_csv(rows, columns))


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def schema_markdown() -> str:
    lines = ["# CSV schemas", "", "All quantities are SI; suffixes give the unit (_K, _V, _Hz, _s).", ""]
    for name, cols in SCHEMAS.items():
        lines += [f"## {name}", "", "| column | meaning |", "|---|---|"]
        lines += [f"| `{c}` | {d} |" for c, d in cols.items()]
        lines.append("")
    return "\n".join(lines)
