"""Shared test helpers."""

import numpy as np

from sdepca.noise import IncrementBundle


def hand_bundle(dB, h, A=None):
    """Bundle with given increments, closed-form diagonal and optional Levy area."""
    dB = np.asarray(dB, dtype=float)
    d = dB.shape[-1]
    A = np.zeros((d, d)) if A is None else np.asarray(A, dtype=float)
    I = 0.5 * np.outer(dB, dB) + A
    I[np.arange(d), np.arange(d)] = 0.5 * (dB * dB - h)
    return IncrementBundle(0, 1, h, dB, I, A)
