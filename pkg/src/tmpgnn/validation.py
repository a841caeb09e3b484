"""Input validation and seeding helpers shared by the estimators."""
from __future__ import annotations

import numbers
import zlib

import numpy as np


class GraphValidationError(ValueError):
    """Input graph or configuration violates a documented invariant."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``last_iterate`` holds the final state so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None, gap=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.gap = gap


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.integer)):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a Generator")


def substream(seed, name):
    """Independent generator for a named component under one master seed.

    The same ``(seed, name)`` always yields the same stream, and distinct
    names give statistically independent streams.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))


def check_probability(value, name, open_interval=False):
    value = float(value)
    if open_interval:
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    elif not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_graph(g):
    from .graph import TemporalMultilayerGraph

    if not isinstance(g, TemporalMultilayerGraph):
        raise TypeError(f"expected a TemporalMultilayerGraph, got {type(g).__name__}")
    return g


def check_square(m, name="matrix"):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m
