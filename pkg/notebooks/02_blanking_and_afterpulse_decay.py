# %% [markdown]
# # Blanking and the afterpulse decay
# Sweep the blanking time at 500 kHz, then fit the decay with one and two
# trap species. At 1e8 triggers the slow species sits below the per-point
# noise, so the two-species fit is usually flagged and its best attempt shown.

# %%
import numpy as np

from gated_spd.blanking import dead_time_factor
from gated_spd.calibration import DecayDataset, FitError, fit_decay
from gated_spd.detector import DetectorParams
from gated_spd.figures import blanking_decay, fig5_pap_vs_blank

p = DetectorParams()

# %%
# cost of blanking on the light channel (N_B counted in light pulses)
for n in (0, 1, 3, 10):
    print(f"N_B={n:2d}  dead-time factor {dead_time_factor(0.1, 0.25, n):.4f}")

# %%
# 1e8 triggers per run, about 40 s on one core
rows = fig5_pap_vs_blank(p, temperatures=(220.0,))
t, pap, err = blanking_decay(rows, 220.0)
for ti, pi, ei in zip(t, pap, err):
    print(f"{ti * 1e6:7.1f} us  P_AP = {pi:.3g} +/- {ei:.2g}")

# %%
ok = pap > 0
data = DecayDataset(t[ok], pap[ok], np.maximum(err[ok], 1e-12))
for k in (1, 2):
    try:
        fit = fit_decay(data, k)
    except FitError as exc:  # noisy tails can leave the slow species unresolved
        print(f"k={k}: {exc}")
        fit = exc.best
    print(f"k={k}: chi2={fit.chi2:.1f}  lifetimes={np.round(fit.lifetimes * 1e6, 2)} us")
print(f"decayed by 12 us: {fit.decayed_fraction(12e-6):.3f}")
