# %% [markdown]
# # Signal chain
# The bias pulse reaches the anode directly and via a reflected copy; the two
# cancel inside the gate window, leaving only the avalanche.

# %%
import numpy as np

from gated_spd.signal_chain import (
    AvalanchePulse,
    ChainConfig,
    bias_pulse,
    cancellation_residual,
    chain_grid,
    run_chain,
)

cfg = ChainConfig()

# %%
b = bias_pulse(1e-9, 2.2e-9, span=chain_grid(cfg))
print(f"matched residual: {cancellation_residual(b, cfg):.2e}")
for m in (5e-12, 20e-12, 80e-12):
    mis = ChainConfig(delay_mismatch=m)
    bm = bias_pulse(1e-9, 2.2e-9, span=chain_grid(mis))
    print(f"mismatch {m * 1e12:4.0f} ps: residual {cancellation_residual(bm, mis):.3g}")

# %%
for q in (0.0, 0.99e5, 1e5, 1e6):
    tr = run_chain(cfg, AvalanchePulse(charge=q) if q else None)
    print(f"charge {q:8.3g} e  fired={tr.fired}  analog peak {np.max(np.abs(tr.analog.samples)):.3g}")
