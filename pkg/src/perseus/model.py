"""Two-layer GCN classifier with manual gradients and the curriculum training loop."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from perseus.curriculum import AdvanceMonitor, Curriculum, should_advance
from perseus.errors import DimensionError, TrainingError, ValidationError
from perseus.graph import Graph, SplitMasks, WeightedAdjacency, normalize_adjacency, random_split
from perseus.metrics import GloHomConfig, score_graph


@dataclass
class ModelParams:
    W1: np.ndarray
    W2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.W1.copy(), self.W2.copy())

    @classmethod
    def init(cls, d_f, hidden, C, seed=0) -> "ModelParams":
        """Glorot-uniform initialisation."""
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        return cls(glorot(d_f, hidden), glorot(hidden, C))

    def save(self, path):
        """Flat binary: int64 array count, int64 (rows, cols) per array, then
        row-major little-endian float64 data."""
        arrays = (self.W1, self.W2)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<q", len(arrays)))
            for a in arrays:
                fh.write(struct.pack("<qq", *a.shape))
            for a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<q", fh.read(8))
            if count != 2:
                raise ValidationError(f"{path}: expected 2 weight arrays, found {count}")
            shapes = [struct.unpack("<qq", fh.read(16)) for _ in range(count)]
            arrays = []
            for rows, cols in shapes:
                raw = fh.read(8 * rows * cols)
                if len(raw) != 8 * rows * cols:
                    raise ValidationError(f"{path}: truncated parameter file")
                arrays.append(np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64))
        return cls(*arrays)


@dataclass(frozen=True)
class TrainConfig:
    """Training and curriculum hyperparameters.

    The defaults follow the usual GCN surrogate: 64 hidden units, dropout
    0.5, learning rate 0.01, weight decay 5e-4 on the first layer.
    """

    learning_rate: float = 0.01
    max_epochs_per_stage: int = 200
    dropout_rate: float = 0.5
    weight_decay: float = 5e-4
    seed: int = 0
    hidden: int = 64
    patience: int = 10
    min_delta: float = 0.0
    warm_ratio: float = 0.2
    decay: float = 0.5
    optimizer: str = "adam"
    glohom: GloHomConfig = field(default_factory=GloHomConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.hidden < 1:
            raise ValidationError("hidden width must be at least 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        if self.max_epochs_per_stage < 0:
            raise ValidationError("max_epochs_per_stage must be nonnegative")
        if self.optimizer not in ("adam", "gd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, data) -> "TrainConfig":
        data = dict(data)
        if isinstance(data.get("glohom"), dict):
            data["glohom"] = GloHomConfig(**data["glohom"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**data)


def _check_shapes(params, X, A_hat):
    n, d_f = X.shape
    if A_hat.shape != (n, n):
        raise DimensionError(f"propagation matrix is {A_hat.shape}, expected ({n}, {n})")
    if params.W1.shape[0] != d_f:
        raise DimensionError(f"W1 has {params.W1.shape[0]} rows, features have {d_f} columns")
    if params.W2.shape[0] != params.W1.shape[1]:
        raise DimensionError("W1 and W2 hidden widths differ")


def dropout_mask(shape, rate, rng) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is off."""
    if rate <= 0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(params: ModelParams, X, A_hat, mask=None, *, AX=None):
    """``logits = A_hat relu(A_hat X W1) W2`` with optional dropout on the hidden layer.

    ``mask`` is a multiplier from :func:`dropout_mask`; pass ``AX`` to reuse a
    precomputed ``A_hat @ X``. Returns the logits and a cache for
    :func:`gradients`.
    """
    X = np.asarray(X, dtype=np.float64)
    _check_shapes(params, X, A_hat)
    if AX is None:
        AX = A_hat @ X
    Z1 = AX @ params.W1
    H = np.maximum(Z1, 0.0)
    Hd = H if mask is None else H * mask
    AH = A_hat @ Hd
    logits = AH @ params.W2
    return logits, {"AX": AX, "Z1": Z1, "AH": AH, "mask": mask}


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_mask(mask):
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValidationError("mask must select at least one node")
    return mask


def loss(logits, y, mask, params: ModelParams | None = None, weight_decay=0.0) -> float:
    """Mean softmax cross-entropy over ``mask`` plus ``weight_decay * ||W1||^2``."""
    mask = _check_mask(mask)
    logp = _log_softmax(np.asarray(logits)[mask])
    value = -float(np.mean(logp[np.arange(mask.size), np.asarray(y)[mask]]))
    if params is not None and weight_decay:
        value += weight_decay * float(np.sum(params.W1**2))
    return value


def gradients(params: ModelParams, X, A_hat, y, mask, weight_decay=0.0, dropout=None, *, AX=None):
    """Analytic gradient of :func:`loss` through :func:`forward`.

    Returns ``(loss_value, dW1, dW2)``. ``dropout`` is the hidden-layer
    multiplier used in the forward pass, if any.
    """
    mask = _check_mask(mask)
    logits, cache = forward(params, X, A_hat, dropout, AX=AX)
    value = loss(logits, y, mask, params, weight_decay)
    logp = _log_softmax(logits[mask])
    G = np.zeros_like(logits)
    G[mask] = np.exp(logp)
    G[mask, np.asarray(y)[mask]] -= 1.0
    G /= mask.size
    dW2 = cache["AH"].T @ G
    # A_hat is symmetric
    dHd = A_hat @ (G @ params.W2.T)
    dH = dHd if dropout is None else dHd * dropout
    dZ1 = dH * (cache["Z1"] > 0)
    dW1 = cache["AX"].T @ dZ1
    if weight_decay:
        dW1 = dW1 + 2.0 * weight_decay * params.W1
    return value, np.asarray(dW1), np.asarray(dW2)


def evaluate(params: ModelParams, X, A_hat, y, mask, *, logits=None) -> float:
    """Accuracy on ``mask``; argmax ties resolve to the smallest class index."""
    mask = _check_mask(mask)
    if logits is None:
        logits, _ = forward(params, X, A_hat)
    pred = np.argmax(np.asarray(logits)[mask], axis=1)
    return float(np.mean(pred == np.asarray(y)[mask]))


class Optimizer:
    """Full-batch update rule: plain gradient descent or Adam."""

    def __init__(self, kind="adam", lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.kind = kind
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.moments = None

    def step(self, params: ModelParams, grads) -> ModelParams:
        if self.kind == "gd":
            return ModelParams(*(p - self.lr * g for p, g in zip((params.W1, params.W2), grads)))
        if self.moments is None:
            self.moments = [(np.zeros_like(g), np.zeros_like(g)) for g in grads]
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip((params.W1, params.W2), grads)):
            m, v = self.moments[i]
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.moments[i] = (m, v)
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return ModelParams(*out)


@dataclass
class StageResult:
    params: ModelParams
    epochs: list[dict]
    advanced: bool
    best_val_loss: float


def train_stage(
    params: ModelParams,
    X,
    A_hat,
    y,
    masks: SplitMasks,
    cfg: TrainConfig,
    monitor: AdvanceMonitor | None = None,
    *,
    stage=0,
    epoch_offset=0,
    optimizer: Optimizer | None = None,
) -> StageResult:
    """Train on one fixed propagation matrix until validation loss plateaus.

    Returns the parameters of the best-validation epoch. If no epoch runs,
    the input parameters come back unchanged with ``advanced=False``.
    Dropout masks are seeded by ``(cfg.seed, epoch_offset + epoch)``.
    """
    monitor = monitor or AdvanceMonitor(cfg.patience, cfg.min_delta)
    optimizer = optimizer or Optimizer(cfg.optimizer, cfg.learning_rate)
    X = np.asarray(X, dtype=np.float64)
    AX = A_hat @ X
    best = params.copy()
    best_val = math.inf
    rows = []
    advanced = False
    for epoch in range(cfg.max_epochs_per_stage):
        rng = np.random.default_rng([cfg.seed, epoch_offset + epoch])
        drop = dropout_mask((X.shape[0], params.hidden), cfg.dropout_rate, rng)
        train_loss, dW1, dW2 = gradients(
            params, X, A_hat, y, masks.train, cfg.weight_decay, drop, AX=AX
        )
        if not math.isfinite(train_loss):
            raise TrainingError(epoch, stage)
        params = optimizer.step(params, (dW1, dW2))
        logits, _ = forward(params, X, A_hat, AX=AX)
        val_loss = loss(logits, y, masks.val)
        if not math.isfinite(val_loss):
            raise TrainingError(epoch, stage)
        val_acc = evaluate(params, X, A_hat, y, masks.val, logits=logits)
        rows.append(
            {"stage": stage, "epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_acc": val_acc}
        )
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
        if should_advance(monitor, val_loss):
            advanced = True
            break
    return StageResult(best, rows, advanced, best_val)


@dataclass
class RunResult:
    """Outcome of one run, evaluated at the returned parameters without dropout.

    ``train_loss`` is the full objective (cross-entropy plus weight decay);
    ``val_loss`` is the plain cross-entropy.
    """

    params: ModelParams
    stage_log: list[dict]
    epoch_log: list[dict]
    test_acc: float
    val_acc: float
    train_loss: float
    val_loss: float
    admitted: np.ndarray
    final_adjacency: WeightedAdjacency

    @property
    def stages(self) -> int:
        return len(self.stage_log)

    def write_epoch_log(self, path):
        write_epoch_log(self.epoch_log, path)


def write_epoch_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["stage", "epoch", "train_loss", "val_loss", "val_acc"])
        w.writeheader()
        for row in rows:
            w.writerow(row)


def run_perseus(
    g: Graph,
    metric="glo",
    cfg: TrainConfig | None = None,
    split: SplitMasks | None = None,
    *,
    table=None,
    curriculum=True,
) -> RunResult:
    """Train with the edge curriculum.

    Edges are ranked once with ``metric`` (``cen``, ``jac`` or ``glo``; or
    pass a ready ``table``). Stage 0 trains on the warm-start prefix; every
    plateau in validation loss triggers a selection event that admits more
    edges and re-weights them. After the last edge is in, one more stage
    trains on the full weighted graph. Parameters carry over between stages.

    With ``curriculum=False`` every edge is admitted with weight 1 from the
    start and a single stage is trained.
    """
    cfg = cfg or TrainConfig()
    if g.y is None:
        raise ValidationError("training needs node labels")
    split = split or random_split(g, (0.1, 0.1, 0.8), cfg.seed)
    if curriculum:
        table = table if table is not None else score_graph(g, metric, cfg.glohom)
        order = table.order
        warm = cfg.warm_ratio
    else:
        order = np.arange(g.m)
        warm = 1.0
    cur = Curriculum(order, g.edges, g.n, warm_ratio=warm, decay=cfg.decay)
    params = ModelParams.init(g.d_f, cfg.hidden, g.C, cfg.seed)
    optimizer = Optimizer(cfg.optimizer, cfg.learning_rate)
    epoch_log: list[dict] = []
    while True:
        wa = cur.weights()
        A_hat = normalize_adjacency(wa)
        result = train_stage(
            params, g.X, A_hat, g.y, split, cfg, stage=cur.state.s,
            epoch_offset=len(epoch_log), optimizer=optimizer,
        )
        params = result.params
        epoch_log.extend(result.epochs)
        if cur.complete:
            break
        cur.advance(result.best_val_loss)
    logits, _ = forward(params, g.X, A_hat)
    return RunResult(
        params=params,
        stage_log=cur.log,
        epoch_log=epoch_log,
        test_acc=evaluate(params, g.X, A_hat, g.y, split.test, logits=logits),
        val_acc=evaluate(params, g.X, A_hat, g.y, split.val, logits=logits),
        train_loss=loss(logits, g.y, split.train, params, cfg.weight_decay),
        val_loss=loss(logits, g.y, split.val),
        admitted=cur.state.admitted(),
        final_adjacency=wa,
    )


def run_plain(g: Graph, cfg: TrainConfig | None = None, split: SplitMasks | None = None) -> RunResult:
    """Same model and early stopping on the full unweighted graph."""
    return run_perseus(g, cfg=cfg, split=split, curriculum=False)

