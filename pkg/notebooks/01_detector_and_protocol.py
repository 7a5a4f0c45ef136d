# %% [markdown]
# # Detector model and the L/D protocol
# Closed-form operating point, then a Monte Carlo run of the interleaved
# light (L) / dark (D) counters at 220 K and DE = 20 %.

# %%
import numpy as np

from gated_spd.detector import DetectorParams, dark_prob, detection_efficiency, overbias_for_efficiency
from gated_spd.figures import base_config
from gated_spd.harness import measure_point

p = DetectorParams()
v20 = overbias_for_efficiency(p, 0.20)
print(f"overbias for DE 20 %: {v20:.4f} V, DE back: {detection_efficiency(p, v20):.4f}")

# %%
# dark probability per gate halves every dark_halving kelvin of cooling
for t in (200.0, 220.0, 240.0, 273.0):
    print(f"{t:5.0f} K  P_d = {dark_prob(p, t, v20, p.w_ref):.3g}")

# %%
cfg = base_config(p, 0.20, n_gates=10_000_000)
res = measure_point(cfg, p, seed=1)
e = res.estimates
print(f"DE    = {e.de:.4f} +/- {e.de_err:.4f}")
print(f"P_d   = {e.p_d:.3g} +/- {e.p_d_err:.2g}")
print(f"P_AP  = {e.p_ap:.3g} +/- {e.p_ap_err:.2g}")
print(f"P_APL = {e.p_apl:.3g}   P_APS = {e.p_aps:.3g}")

# %%
# raw counters behind the estimates
for name in ("dark", "light", "light_12us"):
    c = getattr(res, name)
    print(f"{name:11s} L={c.l_counts:8d}  D={c.d_counts:6d}  gates/channel={c.l_gates}")
