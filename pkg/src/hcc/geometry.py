"""Hidden-state trajectory metrics at sentence boundaries.

For each sentence t the local update is ``dh_t = h_t - h_{t-1}``.  From it:

* displacement ``D_t = ||dh_t||``,
* forward progress ``G_t = <dh_t, h_T - h_{t-1}> / (||h_T - h_{t-1}|| + eps)``,
  the component of the update aligned with the direction toward the
  trace's terminal state,
* efficiency ``E_t = G_t / (D_t + eps)``,
* per-token variants ``D_t / n_t`` and ``G_t / n_t``,
* curvature ``1 - cos(dh_{t-1}, dh_t)`` for t > 1 (undefined at t = 1).

All divisions are guarded by ``eps``; |G_t| <= D_t always holds because the
guard only shrinks the quotient.  At t = T the remaining direction equals
dh_T itself, so G_T is within eps-rounding of D_T; this is inherent to the
definition and deliberately not special-cased.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import EditorAnnotation, TraceRecord

DEFAULT_EPSILON = 1e-8

GEOMETRY_METRICS = (
    "displacement",
    "forward_progress",
    "efficiency",
    "disp_per_token",
    "prog_per_token",
    "curvature",
)


@dataclass(frozen=True)
class GeometrySeries:
    """Per-sentence geometry values for one trace (arrays of length T).

    ``curvature[0]`` is NaN: the direction change needs two updates.
    """

    trace_id: str
    epsilon: float
    displacement: np.ndarray
    forward_progress: np.ndarray
    efficiency: np.ndarray
    disp_per_token: np.ndarray
    prog_per_token: np.ndarray
    curvature: np.ndarray

    def metric(self, name: str) -> np.ndarray:
        if name not in GEOMETRY_METRICS:
            raise KeyError(f"unknown geometry metric {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class GroupGeometryMeans:
    """Per-trace means of each metric over retained / removed sentences.

    A group with no sentences has mean None (absent, not zero).  Curvature
    means skip t = 1.
    """

    trace_id: str
    retained: dict[str, Optional[float]]
    removed: dict[str, Optional[float]]


def state_updates(hidden: np.ndarray) -> np.ndarray:
    """Local updates dh_t = h_t - h_{t-1} for t = 1..T; shape (T, D)."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[0] < 2:
        raise ValueError(f"hidden track needs at least 2 rows, got shape {hidden.shape}")
    return hidden[1:] - hidden[:-1]


def geometry_series(trace: TraceRecord, epsilon: float = DEFAULT_EPSILON) -> GeometrySeries:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    hidden = np.asarray(trace.hidden, dtype=np.float64)
    updates = state_updates(hidden)  # (T, D)
    terminal = hidden[-1]

    displacement = np.linalg.norm(updates, axis=1)
    remaining = terminal[None, :] - hidden[:-1]  # h_T - h_{t-1}
    remaining_norm = np.linalg.norm(remaining, axis=1)
    forward = np.einsum("td,td->t", updates, remaining) / (remaining_norm + epsilon)
    efficiency = forward / (displacement + epsilon)

    tokens = np.array([s.token_count for s in trace.sentences], dtype=np.float64)
    curvature = np.full(len(updates), np.nan)
    if len(updates) > 1:
        dots = np.einsum("td,td->t", updates[:-1], updates[1:])
        norms = displacement[:-1] * displacement[1:]
        curvature[1:] = 1.0 - dots / (norms + epsilon)

    return GeometrySeries(
        trace_id=trace.id,
        epsilon=epsilon,
        displacement=displacement,
        forward_progress=forward,
        efficiency=efficiency,
        disp_per_token=displacement / tokens,
        prog_per_token=forward / tokens,
        curvature=curvature,
    )


def group_means(series: GeometrySeries, annotation: EditorAnnotation) -> GroupGeometryMeans:
    """Average each metric within the retained and removed segments."""
    t_count = len(series.displacement)
    if len(annotation.delete_labels) != t_count:
        raise ValueError(
            f"annotation covers {len(annotation.delete_labels)} sentences, "
            f"series has {t_count}"
        )
    c = annotation.boundary
    slices = {"retained": slice(0, c), "removed": slice(c, t_count)}

    def mean_of(values: np.ndarray, sl: slice) -> Optional[float]:
        chunk = values[sl]
        chunk = chunk[~np.isnan(chunk)]
        return float(chunk.mean()) if chunk.size else None

    out = {}
    for group, sl in slices.items():
        out[group] = {name: mean_of(series.metric(name), sl) for name in GEOMETRY_METRICS}
    return GroupGeometryMeans(trace_id=series.trace_id, retained=out["retained"], removed=out["removed"])
