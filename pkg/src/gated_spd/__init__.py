"""Gated-mode InGaAs APD single-photon detector simulator."""
