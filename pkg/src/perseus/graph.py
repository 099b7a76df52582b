"""Graph container, file I/O, component extraction, splits and GCN propagation."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from perseus.errors import DimensionError, ParseError, ValidationError


def round_half_up(x: float) -> int:
    """Round a nonnegative count to the nearest integer, halves going up.

    Python's built-in ``round`` uses banker's rounding, which makes edge
    budgets jump around for ratios such as 0.05 * 50.
    """
    return int(math.floor(x + 0.5 + 1e-9))


def canonical_edges(pairs, n=None) -> np.ndarray:
    """Return ``pairs`` as a sorted, deduplicated ``(m, 2)`` array with ``u < v``.

    Self-loops are dropped silently; callers that need to report them count
    them beforehand.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if n is not None and arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ValidationError(f"edge endpoint outside [0, {n})")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keep = lo != hi
    out = np.stack([lo[keep], hi[keep]], axis=1)
    if out.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(out, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph.

    Edges are stored once per unordered pair as rows ``(u, v)`` with
    ``u < v``, sorted lexicographically. Self-loops are never stored; the
    propagation operator adds them itself (see :func:`normalize_adjacency`).

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : array_like of shape (m, 2)
        Node pairs. Any orientation, duplicates and self-loops are accepted
        and canonicalised.
    X : ndarray of shape (n, d_f)
        Node features.
    y : ndarray of shape (n,), optional
        Integer class labels in ``[0, C)``.
    """

    n: int
    edges: np.ndarray
    X: np.ndarray
    y: np.ndarray | None = None
    C: int = field(default=0)

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("node count must be nonnegative")
        edges = canonical_edges(self.edges, self.n)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.n:
            raise DimensionError(
                f"feature matrix has shape {X.shape}, expected {self.n} rows"
            )
        y = self.y
        C = self.C
        if y is not None:
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (self.n,):
                raise DimensionError(f"labels have shape {y.shape}, expected ({self.n},)")
            if self.n and y.min() < 0:
                raise ValidationError("labels must be nonnegative")
            C = max(C, int(y.max()) + 1 if self.n else 0)
            y.setflags(write=False)
        edges.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "C", C)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def d_f(self) -> int:
        return int(self.X.shape[1])

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def adjacency(self, weights=None) -> sp.csr_matrix:
        """Symmetric sparse adjacency, optionally with per-edge weights."""
        w = np.ones(self.m) if weights is None else np.asarray(weights, dtype=np.float64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        A = sp.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        )
        return A.tocsr()

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def with_edges(self, edges) -> "Graph":
        """Same nodes, features and labels over a different edge set."""
        return Graph(self.n, edges, self.X, self.y, self.C)


@dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/validation/test node index arrays."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        a, b, c = set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())
        if a & b or a & c or b & c:
            raise ValidationError("split masks overlap")

    def to_json(self, path):
        Path(path).write_text(
            json.dumps({k: getattr(self, k).tolist() for k in ("train", "val", "test")})
        )

    @classmethod
    def from_json(cls, path, n=None) -> "SplitMasks":
        data = json.loads(Path(path).read_text())
        masks = cls(data["train"], data["val"], data["test"])
        if n is not None:
            for idx in (masks.train, masks.val, masks.test):
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise ValidationError(f"split index outside [0, {n})")
        return masks


@dataclass(frozen=True, eq=False)
class WeightedAdjacency:
    """Symmetric edge weights in (0, 1] over a subset of a graph's edges."""

    n: int
    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != edges.shape[0]:
            raise DimensionError("one weight per edge required")
        if w.size and (w.min() <= 0 or w.max() > 1):
            raise ValidationError("edge weights must lie in (0, 1]")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise ValidationError(f"edge endpoint outside [0, {self.n})")
        if edges.size and np.any(edges[:, 0] == edges[:, 1]):
            raise ValidationError("self-loops are not allowed")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_graph(cls, g: Graph) -> "WeightedAdjacency":
        return cls(g.n, g.edges, np.ones(g.m))

    def matrix(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        w = self.weights
        return sp.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        ).tocsr()


def normalize_adjacency(wa: WeightedAdjacency) -> sp.csr_matrix:
    """GCN propagation operator ``D^-1/2 (W + I) D^-1/2``.

    ``D`` is the degree matrix of ``W + I``, so every degree is at least one
    and isolated nodes keep a unit self-loop.
    """
    W = wa.matrix() + sp.identity(wa.n, format="csr")
    d = np.asarray(W.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(d))
    return (inv_sqrt @ W @ inv_sqrt).tocsr()


# ---------------------------------------------------------------------------
# File formats


def _read_edge_list(path, n=None):
    pairs = []
    self_loops = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 'u<TAB>v', got {text!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {text!r}") from None
            if u < 0 or v < 0 or (n is not None and (u >= n or v >= n)):
                raise ParseError(path, lineno, f"node id outside [0, {n})")
            if u == v:
                self_loops += 1
                continue
            pairs.append((u, v))
    return pairs, self_loops


def read_features(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "missing 'n,d_f' header") from None
        try:
            n, d_f = (int(x) for x in header)
        except ValueError:
            raise ParseError(path, 1, f"bad header {header!r}, expected 'n,d_f'") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_f:
                raise ParseError(path, lineno, f"expected {d_f} values, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise ParseError(path, lineno, "non-numeric feature value") from None
    if len(rows) != n:
        raise DimensionError(f"{path}: header declares {n} rows, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n, d_f)


def read_labels(path, n) -> np.ndarray:
    y = np.full(n, -1, dtype=np.int64)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0].strip() == "node_id":
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, "expected 'node_id,label'")
            try:
                node, label = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError(path, lineno, "non-integer node id or label") from None
            if not 0 <= node < n:
                raise ValidationError(f"{path}:{lineno}: node id {node} outside [0, {n})")
            if label < 0:
                raise ValidationError(f"{path}:{lineno}: negative label {label}")
            y[node] = label
    missing = np.flatnonzero(y < 0)
    if missing.size:
        raise ValidationError(f"{path}: {missing.size} nodes have no label (first: {missing[0]})")
    return y


def load_graph(edge_list_path, features_path, labels_path=None) -> Graph:
    """Load a graph from an edge list, a feature CSV and an optional label CSV.

    Reversed and repeated edge lines collapse to one undirected edge.
    Self-loop lines are dropped and reported through a ``UserWarning``.
    """
    X = read_features(features_path)
    n = X.shape[0]
    pairs, self_loops = _read_edge_list(edge_list_path, n)
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop line(s) from {edge_list_path}")
    y = read_labels(labels_path, n) if labels_path is not None else None
    return Graph(n, pairs, X, y)


def read_edge_list(path, n) -> np.ndarray:
    """Canonical edges of an edge-list file over ``n`` known nodes."""
    pairs, self_loops = _read_edge_list(path, n)
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop line(s) from {path}")
    return canonical_edges(pairs, n)


def write_edge_list(edges, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in np.asarray(edges).reshape(-1, 2):
            fh.write(f"{int(u)}\t{int(v)}\n")


def save_graph(g: Graph, edge_list_path, features_path, labels_path=None):
    """Write ``g`` in the formats read by :func:`load_graph`."""
    write_edge_list(g.edges, edge_list_path)
    with open(features_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([g.n, g.d_f])
        # repr round-trips float64 exactly
        for row in g.X:
            w.writerow([repr(float(x)) for x in row])
    if labels_path is not None:
        if g.y is None:
            raise ValidationError("graph has no labels to save")
        with open(labels_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "label"])
            for i, label in enumerate(g.y):
                w.writerow([i, int(label)])


# ---------------------------------------------------------------------------
# Preprocessing


def largest_connected_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on the largest connected component.

    Returns
    -------
    sub : Graph
        Component relabeled to ``0..n_c-1`` preserving original id order.
    old_ids : ndarray of shape (n_c,)
        ``old_ids[new_id]`` is the node's id in ``g``.

    Ties between equally large components go to the one holding the
    smallest original node id.
    """
    if g.n == 0:
        raise ValidationError("cannot take the largest component of an empty graph")
    _, comp = connected_components(g.adjacency(), directed=False)
    sizes = np.bincount(comp)
    best = sizes.max()
    # components are numbered in order of their smallest node, so the first
    # maximal one holds the smallest id
    winner = int(np.flatnonzero(sizes == best)[0])
    old_ids = np.flatnonzero(comp == winner)
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[old_ids] = np.arange(old_ids.size)
    keep = (new_id[g.edges[:, 0]] >= 0) & (new_id[g.edges[:, 1]] >= 0)
    edges = new_id[g.edges[keep]]
    y = g.y[old_ids] if g.y is not None else None
    return Graph(old_ids.size, edges, g.X[old_ids], y, g.C), old_ids


def random_split(g: Graph | int, ratios=(0.1, 0.1, 0.8), seed=0) -> SplitMasks:
    """Seeded random train/val/test split.

    Train and validation sizes are ``floor(ratio * n)``; every remaining node
    goes to test.
    """
    n = g if isinstance(g, int) else g.n
    if n < 3:
        raise ValidationError("need at least 3 nodes to split")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be 3 nonnegative numbers summing to 1, got {ratios}")
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    return SplitMasks(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )
