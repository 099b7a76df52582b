"""Synthetic graphs, addition-only structure attacks and the perturbed-edge curve.

The attacks here are cheap stand-ins for gradient-based poisoning. Both only
add edges, so a :class:`PerturbationRecord` can always be undone by deleting
its ``added`` set.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from perseus.errors import PoolExhaustedError, ValidationError
from perseus.graph import Graph, canonical_edges, round_half_up
from perseus.metrics import EdgeScoreTable, jaccard_matrix


@dataclass(frozen=True, eq=False)
class PerturbationRecord:
    rate: float
    added: np.ndarray
    removed: np.ndarray

    def __post_init__(self):
        raw_added = np.asarray(self.added, dtype=np.int64).reshape(-1, 2)
        raw_removed = np.asarray(self.removed, dtype=np.int64).reshape(-1, 2)
        added = canonical_edges(raw_added)
        removed = canonical_edges(raw_removed)
        if added.shape[0] != raw_added.shape[0] or removed.shape[0] != raw_removed.shape[0]:
            raise ValidationError("record contains duplicate or self-loop edges")
        if {tuple(e) for e in added.tolist()} & {tuple(e) for e in removed.tolist()}:
            raise ValidationError("an edge cannot be both added and removed")
        object.__setattr__(self, "added", added)
        object.__setattr__(self, "removed", removed)

    @property
    def size(self) -> int:
        return int(self.added.shape[0] + self.removed.shape[0])

    def apply(self, g: Graph) -> Graph:
        """Perturb the clean graph ``g``."""
        clean = g.edge_set()
        added = {tuple(e) for e in self.added.tolist()}
        removed = {tuple(e) for e in self.removed.tolist()}
        if added & clean:
            raise ValidationError("record adds an edge already in the graph")
        if not removed <= clean:
            raise ValidationError("record removes an edge not in the graph")
        return g.with_edges(sorted((clean - removed) | added))

    def invert(self, g: Graph) -> Graph:
        """Recover the clean graph from the perturbed graph ``g``."""
        edges = g.edge_set()
        added = {tuple(e) for e in self.added.tolist()}
        removed = {tuple(e) for e in self.removed.tolist()}
        if not added <= edges:
            raise ValidationError("record is inconsistent with the perturbed graph")
        return g.with_edges(sorted((edges - added) | removed))

    def to_json(self, path):
        Path(path).write_text(
            json.dumps(
                {"rate": self.rate, "added": self.added.tolist(), "removed": self.removed.tolist()}
            )
        )

    @classmethod
    def from_json(cls, path) -> "PerturbationRecord":
        data = json.loads(Path(path).read_text())
        try:
            return cls(float(data["rate"]), data.get("added", []), data.get("removed", []))
        except KeyError as exc:
            raise ValidationError(f"{path}: missing key {exc}") from None


def _check_rate(rate):
    if not 0 < rate <= 1:
        raise ValidationError(f"perturbation rate must lie in (0, 1], got {rate}")


def random_flip_attack(g: Graph, rate, seed=0) -> tuple[Graph, PerturbationRecord]:
    """Add ``round(rate * m)`` edges drawn uniformly from the non-edges."""
    _check_rate(rate)
    budget = round_half_up(rate * g.m)
    free = g.n * (g.n - 1) // 2 - g.m
    if budget > free:
        raise PoolExhaustedError(budget, free)
    rng = np.random.default_rng(seed)
    existing = g.edge_set()
    chosen: set[tuple[int, int]] = set()
    if budget > free // 2:
        iu, ju = np.triu_indices(g.n, k=1)
        pool = [(int(a), int(b)) for a, b in zip(iu, ju) if (a, b) not in existing]
        picks = rng.choice(len(pool), size=budget, replace=False)
        chosen = {pool[i] for i in picks}
    else:
        while len(chosen) < budget:
            a, b = (int(x) for x in rng.integers(0, g.n, size=2))
            if a == b:
                continue
            e = (min(a, b), max(a, b))
            if e not in existing:
                chosen.add(e)
    record = PerturbationRecord(rate, sorted(chosen), [])
    return record.apply(g), record


def heterophily_attack(g: Graph, rate, seed=0, *, J=None) -> tuple[Graph, PerturbationRecord]:
    """Add ``round(rate * m)`` edges between dissimilar nodes of different classes.

    Candidates are non-adjacent pairs with different labels whose feature
    Jaccard similarity is strictly below the median similarity over the
    existing edges. The budget is drawn uniformly from that pool.
    """
    _check_rate(rate)
    if g.y is None:
        raise ValidationError("heterophily attack needs node labels")
    budget = round_half_up(rate * g.m)
    if budget == 0:
        return g, PerturbationRecord(rate, [], [])
    if J is None:
        J = jaccard_matrix(g)
    threshold = np.median(J[g.edges[:, 0], g.edges[:, 1]])
    mask = (g.y[:, None] != g.y[None, :]) & (J < threshold)
    mask[g.edges[:, 0], g.edges[:, 1]] = False
    mask = np.triu(mask, k=1)
    iu, ju = np.nonzero(mask)
    if iu.size < budget:
        raise PoolExhaustedError(budget, int(iu.size))
    picks = np.random.default_rng(seed).choice(iu.size, size=budget, replace=False)
    record = PerturbationRecord(rate, np.stack([iu[picks], ju[picks]], axis=1), [])
    return record.apply(g), record


def sbm_generate(n, blocks, p_in, p_out, feature_dim, flip_prob, seed=0) -> Graph:
    """Stochastic block model with noisy block-indicator features.

    Nodes are assigned to ``blocks`` contiguous, near-equal blocks, which are
    also their labels. Feature columns are split into ``blocks`` contiguous
    groups; a node has ones exactly on its block's group, after which every
    bit is flipped independently with probability ``flip_prob``.
    """
    if blocks < 2:
        raise ValidationError("need at least 2 blocks")
    if n < blocks:
        raise ValidationError("need at least one node per block")
    if not (0 <= p_out < p_in <= 1):
        raise ValidationError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_dim < blocks:
        raise ValidationError("feature_dim must be at least the number of blocks")
    if not 0 <= flip_prob <= 1:
        raise ValidationError("flip_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    y = np.arange(n) * blocks // n
    same = y[:, None] == y[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n)) < prob
    iu, ju = np.nonzero(np.triu(draw, k=1))
    group = np.arange(feature_dim) * blocks // feature_dim
    X = (group[None, :] == y[:, None]).astype(np.float64)
    flips = rng.random(X.shape) < flip_prob
    X = np.where(flips, 1.0 - X, X)
    return Graph(n, np.stack([iu, ju], axis=1), X, y, blocks)


@dataclass(frozen=True, eq=False)
class RatioCurve:
    """Fraction of perturbed (``r_p``) and clean (``r_o``) edges among the easiest ``k``."""

    grid: np.ndarray
    k: np.ndarray
    r_p: np.ndarray
    r_o: np.ndarray

    def auc(self) -> float:
        """Trapezoidal area under the ``r_p`` curve over the grid."""
        if self.grid.size < 2:
            return float(self.r_p.sum() * (self.grid[0] if self.grid.size else 0.0))
        return float(np.trapezoid(self.r_p, self.grid))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "k", "r_p", "r_o"])
            for r, k, rp, ro in zip(self.grid, self.k, self.r_p, self.r_o):
                w.writerow([f"{r:.2f}", int(k), repr(float(rp)), repr(float(ro))])


def perturbed_ratio_curve(table: EdgeScoreTable, record: PerturbationRecord, grid_step=0.05) -> RatioCurve:
    """Share of perturbed edges among the ``k = round(r*m)`` easiest edges.

    ``m`` is the edge count of the attacked graph the table ranks. Grid
    points with ``k = 0`` are left out.
    """
    if not 0 < grid_step <= 1:
        raise ValidationError("grid_step must lie in (0, 1]")
    edges = table.edges
    index = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    perturbed = np.zeros(table.m, dtype=bool)
    for u, v in record.added.tolist():
        i = index.get((u, v))
        if i is None:
            raise ValidationError(f"added edge ({u}, {v}) missing from the scored graph")
        perturbed[i] = True
    for u, v in record.removed.tolist():
        if (u, v) in index:
            raise ValidationError(f"removed edge ({u}, {v}) still present in the scored graph")
    hits = np.concatenate([[0], np.cumsum(perturbed[table.order])])
    steps = round_half_up(1 / grid_step)
    grid = np.round(np.arange(1, steps + 1) * grid_step, 10)
    grid = grid[grid <= 1 + 1e-12]
    ks = np.array([round_half_up(r * table.m) for r in grid], dtype=np.int64)
    keep = ks > 0
    grid, ks = grid[keep], ks[keep]
    r_p = hits[ks] / ks
    return RatioCurve(grid, ks, r_p, 1.0 - r_p)
