"""Compiled inner loop for long gate sequences.

Mirrors detector.step_gate / detector.blank_gates / blanking.on_trigger gate by
gate so that, fed the same uniforms, it reproduces the pure-Python path.
"""

import numpy as np
from numba import njit

# counts[channel, column]
ARMED, BLANKED, CLICKS, BY_PHOTON, BY_DARK, BY_AFTERPULSE = range(6)
N_COLUMNS = 6
TINY = 1e-250


@njit(cache=True)
def _hazard(p):
    if p >= 1.0:
        return np.inf
    return -np.log1p(-p)


@njit(cache=True)
def _attribute(v, p_photon, p_dark, p_ap):
    h0 = _hazard(p_photon)
    h1 = _hazard(p_dark)
    h2 = _hazard(p_ap)
    if h0 == np.inf or h1 == np.inf or h2 == np.inf:
        h0 = 1.0 if h0 == np.inf else 0.0
        h1 = 1.0 if h1 == np.inf else 0.0
        h2 = 1.0 if h2 == np.inf else 0.0
    total = h0 + h1 + h2
    edge = h0 / total
    if v < edge:
        return 1
    edge += h1 / total
    if v < edge:
        return 2
    if h2 > 0:
        return 3
    return 2 if h1 > 0 else 1


@njit(cache=True)
def run_triggers(
    start,
    n_triggers,
    remaining,
    n_blank,
    occ,
    decay,
    trig,
    cap,
    p_photon,
    p_dark,
    u,
    counts,
    events,
):
    """Process triggers ``start .. n_triggers-1`` until uniforms run out.

    Even trigger indices are light-synchronized (channel 0), odd ones are the
    interleaved gates (channel 1). ``occ`` is updated in place. Returns
    (next trigger index, uniforms used, blanking counter, events written).
    """
    n_species = occ.shape[0]
    k = start
    pos = 0
    n_events = 0
    n_u = u.shape[0]
    while k < n_triggers:
        ch = k & 1
        if remaining > 0:
            remaining -= 1
            counts[ch, BLANKED] += 1
        else:
            if pos == n_u:
                break
            counts[ch, ARMED] += 1
            pp = p_photon if ch == 0 else 0.0
            keep = 1.0
            for i in range(n_species):
                term = occ[i] * trig[i]
                if term > 1.0:
                    term = 1.0
                keep *= 1.0 - term
            p_ap = 1.0 - keep
            p_tot = 1.0 - (1.0 - pp) * (1.0 - p_dark) * (1.0 - p_ap)
            x = u[pos]
            pos += 1
            if x < p_tot:
                cause = _attribute(x / p_tot, pp, p_dark, p_ap)
                counts[ch, CLICKS] += 1
                counts[ch, CLICKS + cause] += 1
                for i in range(n_species):
                    occ[i] += cap[i]
                remaining = n_blank
                if events.shape[0] > 0:
                    events[n_events, 0] = k
                    events[n_events, 1] = cause
                    n_events += 1
        for i in range(n_species):
            occ[i] *= decay[i]
            if occ[i] < TINY:
                occ[i] = 0.0  # keep out of subnormal range, which is ~50x slower
        k += 1
    return k, pos, remaining, n_events
