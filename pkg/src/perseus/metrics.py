"""Per-edge difficulty scores and the easy-to-hard edge ranking.

Three scores are provided: PageRank edge centrality, feature Jaccard
similarity, and global homophily (GloHom), which reads each edge's entry of
``M J M`` with ``M = (I - alpha*S)^-1`` for a propagation operator ``S``.
For every score a larger value means an easier edge.

The Jaccard matrix and ``M`` are dense ``n x n``; memory is O(n^2), which is
fine up to roughly 20k nodes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from perseus.errors import SingularityError, ValidationError
from perseus.graph import Graph

METRICS = ("pagerank-centrality", "jaccard", "glohom", "random")
SHORT_NAMES = {"cen": "pagerank-centrality", "jac": "jaccard", "glo": "glohom"}


@dataclass(frozen=True, eq=False)
class EdgeScoreTable:
    """Scores for each edge of a graph and their easy-to-hard order.

    ``order[i]`` is the row of ``edges`` holding the i-th easiest edge.
    """

    metric: str
    edges: np.ndarray
    scores: np.ndarray
    order: np.ndarray
    normalized: np.ndarray

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def ranking(self) -> np.ndarray:
        """Edges as ``(m, 2)`` rows sorted easy to hard."""
        return self.edges[self.order]

    def rank_of(self) -> np.ndarray:
        """0-based rank of every edge row."""
        rank = np.empty(self.m, dtype=np.int64)
        rank[self.order] = np.arange(self.m)
        return rank

    def to_csv(self, path):
        """Write ``u,v,score,rank`` rows in rank order."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "score", "rank"])
            for rank, i in enumerate(self.order):
                u, v = self.edges[i]
                w.writerow([int(u), int(v), repr(float(self.scores[i])), rank])

    @classmethod
    def from_csv(cls, path, metric) -> "EdgeScoreTable":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = np.array([[int(r["u"]), int(r["v"])] for r in rows], dtype=np.int64).reshape(-1, 2)
        scores = np.array([float(r["score"]) for r in rows])
        # re-sort rows to canonical edge order so the table matches Graph.edges
        idx = np.lexsort((edges[:, 1], edges[:, 0]))
        return make_table(metric, edges[idx], scores[idx])


def rank_edges(edges, scores) -> tuple[np.ndarray, np.ndarray]:
    """Order edges by descending score with deterministic tie-breaking.

    Ties are broken by the smaller endpoint, then the larger, both ascending.
    The raw scores decide the order, so the min-max normalisation returned
    alongside can never reorder anything.

    Returns
    -------
    order : ndarray of int
        Row indices of ``edges`` from easiest to hardest.
    normalized : ndarray of float
        Scores min-max scaled to ``[0, 1]``; all zeros if the scores are
        constant.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValidationError("cannot rank an empty score map")
    if scores.shape[0] != edges.shape[0]:
        raise ValidationError("one score per edge required")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    order = np.lexsort((hi, lo, -scores))
    span = scores.max() - scores.min()
    if span > 0:
        normalized = (scores - scores.min()) / span
    else:
        normalized = np.zeros_like(scores)
    return order, normalized


def make_table(metric, edges, scores) -> EdgeScoreTable:
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    order, normalized = rank_edges(edges, scores)
    return EdgeScoreTable(metric, np.asarray(edges, dtype=np.int64), np.asarray(scores, dtype=np.float64), order, normalized)


# ---------------------------------------------------------------------------
# PageRank centrality


@dataclass(frozen=True)
class PageRankResult:
    scores: np.ndarray
    converged: bool
    iterations: int


def pagerank(g: Graph, d=0.85, tol=1e-10, max_iter=1000) -> PageRankResult:
    """Unnormalised PageRank ``PR(u) = (1-d) + d * sum_{v~u} PR(v) / deg(v)``.

    Plain fixed-point iteration from the all-ones vector. The returned
    vector is the iterate whose own update was below ``tol``, so its
    fixed-point residual is below ``tol`` as well. Isolated nodes get
    ``1 - d``. Hitting ``max_iter`` sets ``converged=False`` and issues a
    ``RuntimeWarning``.
    """
    if not 0 <= d < 1:
        raise ValidationError(f"damping must lie in [0, 1), got {d}")
    A = g.adjacency()
    deg = g.degrees().astype(np.float64)
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    pr = np.ones(g.n)
    for it in range(1, max_iter + 1):
        new = (1 - d) + d * (A @ (pr * inv_deg))
        delta = np.max(np.abs(new - pr)) if g.n else 0.0
        if delta < tol:
            return PageRankResult(pr, True, it)
        pr = new
    warnings.warn(f"PageRank did not converge in {max_iter} iterations", RuntimeWarning)
    return PageRankResult(pr, False, max_iter)


def edge_centrality(pr, g: Graph) -> EdgeScoreTable:
    """Edge score ``PR(u) + PR(v)``; central edges rank as easy."""
    pr = np.asarray(getattr(pr, "scores", pr), dtype=np.float64)
    if pr.shape != (g.n,):
        raise ValidationError(f"expected {g.n} PageRank values, got {pr.shape}")
    return make_table("pagerank-centrality", g.edges, pr[g.edges[:, 0]] + pr[g.edges[:, 1]])


# ---------------------------------------------------------------------------
# Jaccard


def binarize(X, threshold=0.0) -> np.ndarray:
    return (np.asarray(X) > threshold).astype(np.float64)


def jaccard_matrix(g: Graph | np.ndarray, binarize_threshold=0.0) -> np.ndarray:
    """Dense pairwise Jaccard similarity of binarised node features.

    Pairs of all-zero vectors get 0; every nonzero vector has similarity 1
    with itself.
    """
    X = g.X if isinstance(g, Graph) else np.asarray(g)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValidationError("Jaccard similarity needs at least one feature column")
    B = sp.csr_matrix(binarize(X, binarize_threshold))
    inter = np.asarray((B @ B.T).todense(), dtype=np.float64)
    size = np.asarray(B.sum(axis=1)).ravel()
    union = size[:, None] + size[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def jaccard_scores(g: Graph, J) -> EdgeScoreTable:
    """Edge score ``J[u, v]``; similar endpoints rank as easy."""
    J = np.asarray(J)
    return make_table("jaccard", g.edges, J[g.edges[:, 0], g.edges[:, 1]])


# ---------------------------------------------------------------------------
# Global homophily


@dataclass(frozen=True)
class GloHomConfig:
    """Settings for the GloHom score.

    ``mode`` is ``"exact"`` (dense inverse), ``"series"`` (truncated Neumann
    sum up to order ``K``) or ``"auto"`` (exact up to ``exact_max_n`` nodes).
    ``operator`` is ``"raw"`` (adjacency), ``"sym"`` (``D^-1/2 A D^-1/2``) or
    ``"auto"``, which keeps the raw adjacency only while
    ``alpha * rho(A) < 1``.
    """

    alpha: float = 0.5
    mode: str = "auto"
    K: int = 4
    operator: str = "auto"
    exact_max_n: int = 2000

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValidationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.mode not in ("auto", "exact", "series"):
            raise ValidationError(f"unknown GloHom mode {self.mode!r}")
        if self.operator not in ("auto", "raw", "sym"):
            raise ValidationError(f"unknown GloHom operator {self.operator!r}")
        if self.K < 0:
            raise ValidationError("series order K must be nonnegative")


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix."""
    n = A.shape[0]
    if n == 0:
        return 0.0
    if n <= 500:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        return float(np.max(np.abs(np.linalg.eigvalsh(dense))))
    vals = scipy.sparse.linalg.eigsh(
        sp.csr_matrix(A, dtype=np.float64), k=1, which="LM", return_eigenvectors=False
    )
    return float(np.abs(vals).max())


def sym_normalized(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=np.float64)
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    D = sp.diags(inv_sqrt)
    return (D @ A @ D).tocsr()


def propagation_operator(g: Graph, cfg: GloHomConfig) -> sp.csr_matrix:
    A = g.adjacency()
    if cfg.operator == "sym":
        return sym_normalized(A)
    if cfg.operator == "raw":
        return A
    if cfg.alpha * spectral_radius(A) < 1:
        return A
    return sym_normalized(A)


def resolvent(S, alpha, *, mode="exact", K=4) -> np.ndarray:
    """``(I - alpha*S)^-1`` exactly, or its Neumann sum up to order ``K``."""
    n = S.shape[0]
    if mode == "exact":
        dense = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=np.float64)
        lhs = np.eye(n) - alpha * dense
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                return scipy.linalg.solve(lhs, np.eye(n), assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularityError(
                f"I - alpha*A is singular for alpha={alpha}; use series mode "
                f"or a degree-normalised operator ({exc})"
            ) from None
    if mode == "series":
        if alpha * spectral_radius(S) >= 1:
            raise ValidationError(
                f"Neumann series diverges: alpha * rho = {alpha * spectral_radius(S):.4g} >= 1"
            )
        S = sp.csr_matrix(S, dtype=np.float64)
        M = np.eye(n)
        term = np.eye(n)
        for _ in range(K):
            term = alpha * np.asarray(S @ term)
            M += term
        return M
    raise ValidationError(f"unknown resolvent mode {mode!r}")


def glohom_scores(g: Graph, J, cfg: GloHomConfig | None = None) -> EdgeScoreTable:
    """Edge score ``[M J M]_{uv}``; the smallest entries flag suspicious edges."""
    cfg = cfg or GloHomConfig()
    J = np.asarray(J, dtype=np.float64)
    if J.shape != (g.n, g.n):
        raise ValidationError(f"J must be {g.n}x{g.n}, got {J.shape}")
    S = propagation_operator(g, cfg)
    mode = cfg.mode
    if mode == "auto":
        mode = "exact" if g.n <= cfg.exact_max_n else "series"
    M = resolvent(S, cfg.alpha, mode=mode, K=cfg.K)
    JM = J @ M
    u, v = g.edges[:, 0], g.edges[:, 1]
    scores = np.einsum("ij,ji->i", M[u], JM[:, v])
    return make_table("glohom", g.edges, scores)


@dataclass(frozen=True)
class DeltaHom:
    """Change in global homophily when one edge is removed.

    ``direct`` recomputes ``<M', J> - <M, J>``. ``closed_form`` is
    ``-2 alpha [M' J M]_{kl}`` and is only exact when ``[M' J M]`` happens
    to be symmetric at ``(k, l)``. ``symmetric_form`` is
    ``-alpha ([M' J M]_{kl} + [M' J M]_{lk})``, which always equals
    ``direct`` up to rounding.
    """

    direct: float
    closed_form: float
    symmetric_form: float


def delta_hom_exact(g: Graph, edge, J, alpha) -> DeltaHom:
    """Exact change in ``<(I - alpha*A)^-1, J>`` from deleting ``edge``."""
    k, l = sorted(int(x) for x in edge)
    edges = g.edges
    hit = np.flatnonzero((edges[:, 0] == k) & (edges[:, 1] == l))
    if hit.size == 0:
        raise ValidationError(f"edge ({k}, {l}) is not in the graph")
    J = np.asarray(J, dtype=np.float64)
    A = g.adjacency().toarray()
    A_removed = A.copy()
    A_removed[k, l] = A_removed[l, k] = 0.0
    M = resolvent(A, alpha, mode="exact")
    M_removed = resolvent(A_removed, alpha, mode="exact")
    direct = float(np.sum(M_removed * J) - np.sum(M * J))
    P = M_removed @ J @ M
    return DeltaHom(direct, float(-2 * alpha * P[k, l]), float(-alpha * (P[k, l] + P[l, k])))


def random_table(g: Graph, seed=0) -> EdgeScoreTable:
    """Uniformly random ranking; a null model for the observation curves."""
    scores = np.random.default_rng(seed).permutation(g.m).astype(np.float64)
    return make_table("random", g.edges, scores)


def score_graph(g: Graph, metric: str, cfg: GloHomConfig | None = None, *, damping=0.85, threshold=0.0, J=None):
    """Build the :class:`EdgeScoreTable` for ``metric`` (long or short name)."""
    metric = SHORT_NAMES.get(metric, metric)
    if metric == "pagerank-centrality":
        return edge_centrality(pagerank(g, damping), g)
    if metric == "jaccard":
        return jaccard_scores(g, jaccard_matrix(g, threshold) if J is None else J)
    if metric == "glohom":
        return glohom_scores(g, jaccard_matrix(g, threshold) if J is None else J, cfg)
    raise ValidationError(f"unknown metric {metric!r}")
