"""Curriculum-learning defence for GNNs: edge difficulty scoring, adaptive
edge scheduling and stage-wise GCN training."""

from perseus.attacks import (
    PerturbationRecord,
    RatioCurve,
    heterophily_attack,
    perturbed_ratio_curve,
    random_flip_attack,
    sbm_generate,
)
from perseus.curriculum import (
    AdvanceMonitor,
    Curriculum,
    CurriculumState,
    edge_weights,
    next_ratio,
    select_edges,
    should_advance,
)
from perseus.graph import (
    Graph,
    SplitMasks,
    WeightedAdjacency,
    largest_connected_component,
    load_graph,
    normalize_adjacency,
    random_split,
    save_graph,
)
from perseus.metrics import (
    EdgeScoreTable,
    GloHomConfig,
    delta_hom_exact,
    edge_centrality,
    glohom_scores,
    jaccard_matrix,
    jaccard_scores,
    pagerank,
    rank_edges,
    score_graph,
)
from perseus.model import (
    ModelParams,
    TrainConfig,
    evaluate,
    forward,
    gradients,
    loss,
    run_perseus,
    run_plain,
    train_stage,
)

__version__ = "0.1.0"
