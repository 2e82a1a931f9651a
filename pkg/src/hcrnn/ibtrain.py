"""Information-bottleneck training of a hidden layer ``X -> T -> Y``.

The hidden layer content ``t`` (one row per sample, values in (0, 1)) is
optimized directly to minimize

    Tr(C_{X_O} C_{T_I}) - beta * Tr(C_{T_O} C_{Y_I})

where ``C_A = A A^T`` are kernels of scaled marginal features.  Traces are
evaluated as squared Frobenius norms of the small ``A^T B`` moment matrices,
so no ``n x n`` product is ever formed.  Gradient steps are taken on the
stretched variable ``s = Phi^{-1}(t)`` which keeps ``t`` inside (0, 1).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from .basis import BasisSet, FeatureMatrix, features, marginal_basis, poly_table
from .normalize import rank_normalize

log = logging.getLogger(__name__)

# Phi(8) < 1 in float64; beyond it t would round to exactly 1
STRETCH_LIMIT = 8.0
INIT_MODES = ("uniform-random", "feature-pca")
UPDATE_MODES = ("layer-content", "weight-ema")
TRACE_HEADER = ("epoch", "compression_term", "prediction_term", "objective")


class IbDivergence(RuntimeError):
    """The objective got worse for too many consecutive epochs."""


@dataclass
class IbConfig:
    beta: float = 1.0
    degree_in: int = 2
    degree_out: int = 2
    alpha: float = 1e-2
    eta: float = 0.05
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    init: str = "uniform-random"
    update_mode: str = "layer-content"
    patience: int = 10

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if self.degree_in < 1 or self.degree_out < 1:
            raise ValueError("degree_in and degree_out must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {UPDATE_MODES}")


@dataclass(frozen=True, eq=False)
class HiddenLayer:
    """Layer content ``t`` and its stretched twin ``s`` with ``t = Phi(s)``."""

    values: np.ndarray
    stretched: np.ndarray

    @classmethod
    def from_stretched(cls, s) -> "HiddenLayer":
        s = np.clip(np.asarray(s, dtype=float), -STRETCH_LIMIT, STRETCH_LIMIT)
        return cls(ndtr(s), s)

    @classmethod
    def from_values(cls, t) -> "HiddenLayer":
        t = np.asarray(t, dtype=float)
        if t.ndim == 1:
            t = t.reshape(-1, 1)
        if np.any((t <= 0) | (t >= 1)):
            raise ValueError("hidden layer values must lie strictly inside (0, 1)")
        return cls.from_stretched(ndtri(t))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Mixed moments between two feature blocks, ``theta = src^T dst``."""

    theta: np.ndarray
    src_basis: BasisSet
    dst_basis: BasisSet

    def __post_init__(self):
        if self.theta.shape != (len(self.src_basis) - 1, len(self.dst_basis) - 1):
            raise ValueError("weight matrix shape does not match its feature bases")


def layer_features(values, degree: int) -> FeatureMatrix:
    """Marginal features ``f_1..f_degree`` of every column of a layer."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    return features(marginal_basis(values.shape[1], degree), values)


def estimate_weights(src: FeatureMatrix, dst: FeatureMatrix) -> WeightMatrix:
    if src.n != dst.n:
        raise ValueError(f"row mismatch: {src.n} vs {dst.n}")
    return WeightMatrix(src.values.T @ dst.values, src.basis, dst.basis)


def ema_weights(current: np.ndarray, batch: np.ndarray, eta: float) -> np.ndarray:
    """``theta_bar + eta * (theta - theta_bar)``."""
    return current + eta * (batch - current)


def _layer_values(t) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(t, HiddenLayer):
        return t.values, t.stretched
    t = np.asarray(t, dtype=float)
    return (t.reshape(-1, 1) if t.ndim == 1 else t), None


def ib_terms(xO: FeatureMatrix, t, yI: FeatureMatrix, cfg: IbConfig) -> tuple[float, float]:
    """Compression ``||X_O^T T_I||_F^2`` and prediction ``||T_O^T Y_I||_F^2``."""
    values, _ = _layer_values(t)
    if not xO.n == yI.n == values.shape[0]:
        raise ValueError("X, T and Y must have the same number of rows")
    tI = layer_features(values, cfg.degree_in)
    tO = tI if cfg.degree_out == cfg.degree_in else layer_features(values, cfg.degree_out)
    comp = float(np.sum((xO.values.T @ tI.values) ** 2))
    pred = float(np.sum((tO.values.T @ yI.values) ** 2))
    return comp, pred


def ib_objective(xO: FeatureMatrix, t, yI: FeatureMatrix, cfg: IbConfig) -> float:
    comp, pred = ib_terms(xO, t, yI, cfg)
    return comp - cfg.beta * pred


def ib_gradient(xO: FeatureMatrix, t, yI: FeatureMatrix, cfg: IbConfig,
                space: str = "t", bracket: str = "features") -> np.ndarray:
    """Analytic gradient of :func:`ib_objective` with respect to the layer content.

    ``space="s"`` returns the gradient over the stretched variable (the
    t-gradient times the standard normal pdf).  ``bracket="features"``
    multiplies ``X (X^T T_p)``; ``"kernel"`` forms ``(X X^T) T_p`` and is
    only meant for cross-checking.
    """
    values, stretched = _layer_values(t)
    n = values.shape[0]
    if not xO.n == yI.n == n:
        raise ValueError("X, T and Y must have the same number of rows")
    top = max(cfg.degree_in, cfg.degree_out)
    table = poly_table(values, top) / np.sqrt(n)
    dtable = poly_table(values, top, derivative=True)
    X = xO.values
    Y = yI.values
    if bracket == "features":
        def x_side(tp):
            return X @ (X.T @ tp)

        def y_side(tp):
            return Y @ (Y.T @ tp)
    elif bracket == "kernel":
        Cx = X @ X.T
        Cy = Y @ Y.T

        def x_side(tp):
            return Cx @ tp

        def y_side(tp):
            return Cy @ tp
    else:
        raise ValueError(f"unknown bracket {bracket!r}")
    grad = np.zeros_like(values)
    for p in range(1, cfg.degree_in + 1):
        grad += x_side(table[..., p]) * dtable[..., p]
    for p in range(1, cfg.degree_out + 1):
        grad -= cfg.beta * y_side(table[..., p]) * dtable[..., p]
    grad *= 2.0 / np.sqrt(n)
    if space == "t":
        return grad
    if space == "s":
        s = ndtri(values) if stretched is None else stretched
        return grad * norm.pdf(s)
    raise ValueError(f"unknown space {space!r}")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    compression_term: float
    prediction_term: float
    objective: float


@dataclass
class IbResult:
    layer: HiddenLayer
    theta_xt: WeightMatrix
    theta_ty: WeightMatrix
    trace: list[TraceRow]
    initial: TraceRow
    config: IbConfig = field(repr=False)


def write_trace_csv(trace, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(TRACE_HEADER)
    for row in trace:
        writer.writerow([row.epoch, repr(row.compression_term), repr(row.prediction_term), repr(row.objective)])


def _initial_layer(x_data, n_t: int, cfg: IbConfig, rng) -> HiddenLayer:
    n = x_data.shape[0]
    if cfg.init == "uniform-random":
        return HiddenLayer.from_values(rng.uniform(0.05, 0.95, size=(n, n_t)))
    feats = layer_features(x_data, cfg.degree_out).raw()
    feats = feats - feats.mean(axis=0)
    _, _, vt = np.linalg.svd(feats, full_matrices=False)
    k = min(n_t, vt.shape[0])
    scores = feats @ vt[:k].T
    if k < n_t:
        scores = np.column_stack([scores, rng.standard_normal((n, n_t - k))])
    return HiddenLayer.from_values(rank_normalize(scores))


def _scaled(raw: np.ndarray, rows, basis: BasisSet) -> FeatureMatrix:
    block = raw[rows]
    return FeatureMatrix(block / np.sqrt(block.shape[0]), basis)


def ib_train(x_data, y_data, n_t: int, cfg: IbConfig | None = None) -> IbResult:
    """Optimize hidden-layer content between normalized ``x_data`` and ``y_data``.

    Each epoch visits shuffled mini-batches.  Both update modes descend the
    stretched layer content, ``s <- s - alpha * dL/ds``, on the batch rows;
    ``weight-ema`` additionally keeps running weights
    ``theta_bar += eta (theta_batch - theta_bar)`` and returns them, while
    ``layer-content`` re-estimates the weights from the final layer.  The
    trace holds full-data terms at the end of each epoch.
    """
    cfg = cfg or IbConfig()
    x_data = np.asarray(x_data, dtype=float)
    y_data = np.asarray(y_data, dtype=float)
    x_data = x_data.reshape(-1, 1) if x_data.ndim == 1 else x_data
    y_data = y_data.reshape(-1, 1) if y_data.ndim == 1 else y_data
    if x_data.shape[0] != y_data.shape[0]:
        raise ValueError("x_data and y_data must have the same number of rows")
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    n = x_data.shape[0]
    rng = np.random.default_rng(cfg.seed)

    xO_full = layer_features(x_data, cfg.degree_out)
    yI_full = layer_features(y_data, cfg.degree_in)
    x_raw, y_raw = xO_full.raw(), yI_full.raw()
    basis_tI = marginal_basis(n_t, cfg.degree_in)
    basis_tO = marginal_basis(n_t, cfg.degree_out)

    layer = _initial_layer(x_data, n_t, cfg, rng)
    s = layer.stretched.copy()

    def snapshot(epoch: int) -> TraceRow:
        comp, pred = ib_terms(xO_full, ndtr(s), yI_full, cfg)
        return TraceRow(epoch, comp, pred, comp - cfg.beta * pred)

    initial = snapshot(0)
    theta_xt = estimate_weights(xO_full, layer_features(ndtr(s), cfg.degree_in)).theta
    theta_ty = estimate_weights(layer_features(ndtr(s), cfg.degree_out), yI_full).theta

    batch = min(n, cfg.batch_size)
    trace: list[TraceRow] = []
    worse = 0
    previous = initial.objective
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            xb = _scaled(x_raw, rows, xO_full.basis)
            yb = _scaled(y_raw, rows, yI_full.basis)
            hb = HiddenLayer.from_stretched(s[rows])
            s[rows] = np.clip(s[rows] - cfg.alpha * ib_gradient(xb, hb, yb, cfg, space="s"),
                              -STRETCH_LIMIT, STRETCH_LIMIT)
            if cfg.update_mode == "weight-ema":
                tb = ndtr(s[rows])
                theta_xt = ema_weights(theta_xt, estimate_weights(xb, layer_features(tb, cfg.degree_in)).theta,
                                       cfg.eta)
                theta_ty = ema_weights(theta_ty, estimate_weights(layer_features(tb, cfg.degree_out), yb).theta,
                                       cfg.eta)
        row = snapshot(epoch)
        trace.append(row)
        log.debug("epoch %d: compression=%.6g prediction=%.6g objective=%.6g",
                  epoch, row.compression_term, row.prediction_term, row.objective)
        worse = worse + 1 if row.objective > previous else 0
        previous = row.objective
        if worse >= cfg.patience:
            raise IbDivergence(
                f"objective increased for {worse} consecutive epochs (epoch {epoch}, "
                f"objective {row.objective:.6g}); lower alpha (now {cfg.alpha})"
            )

    layer = HiddenLayer.from_stretched(s)
    tI = layer_features(layer.values, cfg.degree_in)
    tO = layer_features(layer.values, cfg.degree_out)
    if cfg.update_mode == "layer-content":
        w_xt = estimate_weights(xO_full, tI)
        w_ty = estimate_weights(tO, yI_full)
    else:
        w_xt = WeightMatrix(theta_xt, xO_full.basis, basis_tI)
        w_ty = WeightMatrix(theta_ty, basis_tO, yI_full.basis)
    return IbResult(layer, w_xt, w_ty, trace, initial, cfg)


def config_dict(cfg: IbConfig) -> dict:
    return asdict(cfg)
