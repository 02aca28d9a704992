"""Deterministic random streams.

Every random draw in this package comes from a Philox4x64-10 counter-based
bit generator keyed with two 64-bit words ``(seed, stream)``.  Because the
key fully determines the stream, independent streams (one per bootstrap
resample, per synthetic trace, per reparameterization step, ...) can be
opened in any order, in parallel, and still reproduce bit-identical draws.

Stream numbers are namespaced with the ``Stream`` constants below so that
e.g. bootstrap resample 3 and synthetic trace 3 never share a key.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Stream:
    """Namespace offsets keeping per-purpose Philox keys disjoint."""

    BOOTSTRAP = 0x01 << 56
    SYNTH_TRACE = 0x02 << 56
    PARAM_INIT = 0x03 << 56
    REPARAM = 0x04 << 56
    SHUFFLE = 0x05 << 56
    SYNTH_CORPUS = 0x06 << 56


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator over the Philox4x64-10 stream keyed ``(seed, stream)``."""
    key = [int(seed) & _MASK64, int(stream) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key))


def substream(seed: int, namespace: int, index: int) -> np.random.Generator:
    """Generator for item ``index`` inside a namespaced family of streams."""
    if index < 0:
        raise ValueError(f"stream index must be non-negative, got {index}")
    return philox(seed, namespace + index)
