"""Adaptive edge selection: when to add edges, how many, and how to weight them.

Stage 0 admits the warm-start prefix of a fixed easy-to-hard ranking. Each
later stage is one selection event: the addition ratio decays geometrically
(floored at 0.05), the admitted prefix grows, and every admitted edge is
weighted by the fraction of selection events it has been present for.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from perseus.errors import ValidationError
from perseus.graph import WeightedAdjacency, round_half_up

RATIO_FLOOR = 0.05


def next_ratio(r, lam) -> float:
    """Decay the addition ratio: ``min(max(lam * r, 0.05), r)``.

    A ratio already below the floor (only possible for a tiny warm start) is
    raised to the floor so that the schedule always terminates.
    """
    if not 0 < lam <= 1:
        raise ValidationError(f"decay must lie in (0, 1], got {lam}")
    if r < RATIO_FLOOR:
        return RATIO_FLOOR
    return min(max(lam * r, RATIO_FLOOR), r)


def max_stages(r0) -> int:
    """Upper bound on stages (warm start included) before all edges are in."""
    return 1 + max(0, math.ceil((1 - max(r0, 0.0)) / RATIO_FLOOR - 1e-9))


@dataclass
class CurriculumState:
    """Progress of the edge schedule over a graph with ``m`` edges.

    ``admitted_stage[i]`` is the stage at which the edge in row ``i`` of the
    graph's edge array was admitted, or -1. ``ratio_sum`` accumulates every
    stage's ratio so the admitted count is rounded once, cumulatively.
    """

    m: int
    s: int = -1
    r: float = 0.0
    k: int = 0
    ratio_sum: float = 0.0
    admitted_stage: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.admitted_stage is None:
            self.admitted_stage = np.full(self.m, -1, dtype=np.int64)

    @property
    def complete(self) -> bool:
        return self.k >= self.m

    def admitted(self) -> np.ndarray:
        """Row indices of admitted edges."""
        return np.flatnonzero(self.admitted_stage >= 0)


def select_edges(ranking, state: CurriculumState, r) -> int:
    """Open stage ``state.s + 1`` with ratio ``r`` and admit the next prefix.

    The admitted count becomes ``min(m, max(k + 1, round(m * sum of ratios)))``
    so every event admits at least one edge while edges remain. Returns the
    number of newly admitted edges.
    """
    ranking = np.asarray(ranking, dtype=np.int64)
    if ranking.shape != (state.m,):
        raise ValidationError(f"ranking has {ranking.shape[0]} edges, state expects {state.m}")
    if r < 0:
        raise ValidationError("ratio must be nonnegative")
    state.s += 1
    state.r = float(r)
    state.ratio_sum += float(r)
    if state.k >= state.m:
        return 0
    target = round_half_up(state.m * state.ratio_sum)
    if state.s > 0:
        target = max(target, state.k + 1)
    k = min(state.m, target)
    new = ranking[state.k : k]
    state.admitted_stage[new] = state.s
    state.k = k
    return int(new.size)


def edge_weights(state: CurriculumState, edges, n) -> WeightedAdjacency:
    """Average of the admitted adjacencies over all selection events so far.

    With ``s`` selection events after the warm start, an edge admitted at
    stage ``i >= 1`` is present in ``s - i + 1`` of them and gets weight
    ``(s - i + 1) / s``; warm-start edges are present in all of them and get
    weight 1. Before the first selection every admitted edge weighs 1.
    """
    idx = state.admitted()
    stages = state.admitted_stage[idx]
    s = state.s
    if s <= 0:
        w = np.ones(idx.size)
    else:
        w = (s - np.maximum(stages, 1) + 1) / s
    return WeightedAdjacency(n, np.asarray(edges)[idx], w)


@dataclass
class AdvanceMonitor:
    """Patience-based plateau detector on validation loss."""

    patience: int = 10
    min_delta: float = 0.0
    best_val: float = math.inf
    epochs_since_best: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")

    def reset(self):
        self.best_val = math.inf
        self.epochs_since_best = 0


def should_advance(monitor: AdvanceMonitor, new_val_loss) -> bool:
    """Record one epoch's validation loss; True once it has plateaued.

    An epoch improves when the loss drops by more than ``min_delta`` below
    the best seen so far.
    """
    if new_val_loss < monitor.best_val - monitor.min_delta:
        monitor.best_val = float(new_val_loss)
        monitor.epochs_since_best = 0
    else:
        monitor.epochs_since_best += 1
    return monitor.epochs_since_best >= monitor.patience


class Curriculum:
    """Drives :class:`CurriculumState` along a fixed ranking.

    Parameters
    ----------
    order : array_like of int
        Edge row indices from easiest to hardest.
    edges : ndarray of shape (m, 2)
        The graph's edge array the indices refer to.
    n : int
        Node count.
    warm_ratio : float
        Fraction of edges admitted at stage 0.
    decay : float
        Multiplicative ratio decay per selection event.
    """

    def __init__(self, order, edges, n, warm_ratio=0.2, decay=0.5):
        if not 0 <= warm_ratio <= 1:
            raise ValidationError(f"warm ratio must lie in [0, 1], got {warm_ratio}")
        if not 0 < decay <= 1:
            raise ValidationError(f"decay must lie in (0, 1], got {decay}")
        self.order = np.asarray(order, dtype=np.int64)
        self.edges = np.asarray(edges, dtype=np.int64)
        self.n = n
        self.decay = decay
        self.state = CurriculumState(m=self.edges.shape[0])
        self.log: list[dict] = []
        new = select_edges(self.order, self.state, warm_ratio)
        self.log.append(self._entry(new, None))

    def _entry(self, new, val_loss):
        return {
            "stage": self.state.s,
            "r": self.state.r,
            "k": self.state.k,
            "new_edges": new,
            "val_loss_at_advance": val_loss,
        }

    @property
    def complete(self) -> bool:
        return self.state.complete

    def advance(self, val_loss=None) -> int:
        """Run one selection event; returns the number of new edges."""
        r = next_ratio(self.state.r, self.decay)
        new = select_edges(self.order, self.state, r)
        self.log.append(self._entry(new, val_loss))
        return new

    def weights(self) -> WeightedAdjacency:
        return edge_weights(self.state, self.edges, self.n)

    def write_log(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.log:
                fh.write(json.dumps(row) + "\n")
