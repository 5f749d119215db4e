"""Spectrally positive Levy processes, scale functions and explosion of nonlinear CSBPs."""
