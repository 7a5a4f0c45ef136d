# %% [markdown]
# # Calibration against anchor values
# Fit the dark-count reference and halving interval to two anchors, then
# check the result against the model's own temperature sweep.

# %%
import numpy as np

from gated_spd.calibration import Target, calibrate, fit_temperature_halving
from gated_spd.config import dump_detector
from gated_spd.detector import DetectorParams, dark_prob, overbias_for_efficiency

targets = [Target("p_d", 1e-6, 220.0, de=0.2), Target("p_d", 3e-5, 273.0, de=0.2)]
res = calibrate(targets, DetectorParams(p_dark_ref=3e-6), free=("p_dark_ref", "dark_halving"))
for row in res.table:
    print(row)

# %%
p = res.params
v = overbias_for_efficiency(p, 0.2)
temps = np.arange(200.0, 280.0, 10.0)
pd = [dark_prob(p, t, v, p.w_ref) for t in temps]
print(f"halving recovered from the sweep: {fit_temperature_halving(temps, pd):.3f} K")

# %%
print(dump_detector(p))
