"""Two-class linear classifier head trained on frozen embedding features.

Softmax cross-entropy with optional L2 weight penalty and balanced class
weighting, minimized by seeded mini-batch gradient descent.  The analytic
gradient is exposed separately so it can be checked against finite
differences.  Also provides seeded Gaussian random projection for shrinking
feature dimension ahead of training.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .store import EmbeddingSet

MODEL_MAGIC = b"CURM"


class TrainError(ValueError):
    """Bad training inputs: single-class labels, non-finite features, shape mismatch."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 128
    l2: float = 1e-4
    seed: int = 0
    class_weighting: str = "balanced"  # "none" | "balanced"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise TrainError("learning_rate, epochs and batch_size must be positive")
        if self.l2 < 0:
            raise TrainError("l2 must be non-negative")
        if self.class_weighting not in ("none", "balanced"):
            raise TrainError(f"unknown class_weighting {self.class_weighting!r}")


@dataclass
class LinearModel:
    weights: np.ndarray  # (dim, 2)
    bias: np.ndarray  # (2,)
    config: TrainConfig
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ProjectionConfig:
    target_dim: int
    seed: int = 0
    identity: bool = False


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise TrainError(f"features must be 2-D, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise TrainError("features contain NaN or infinity")
    return features


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def example_weights(labels: np.ndarray, class_weighting: str) -> np.ndarray:
    """Per-example loss weights: 1, or M / (2 * count(class)) when balanced."""
    labels = np.asarray(labels)
    m = len(labels)
    if class_weighting == "none":
        return np.ones(m)
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    w = np.where(counts > 0, m / (2.0 * np.maximum(counts, 1)), 0.0)
    return w[labels]


def loss(
    model: LinearModel,
    features: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> float:
    """Weighted mean softmax cross-entropy plus l2 * ||W||^2."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if weights is None:
        weights = example_weights(labels, model.config.class_weighting)
    probs = _softmax(features @ model.weights + model.bias)
    eps = 1e-300
    ce = -np.log(np.maximum(probs[np.arange(len(labels)), labels], eps))
    return float(np.mean(weights * ce) + model.config.l2 * np.sum(model.weights**2))


def gradient(
    model: LinearModel,
    features: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ``loss`` with respect to (weights, bias)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    m = len(labels)
    if weights is None:
        weights = example_weights(labels, model.config.class_weighting)
    probs = _softmax(features @ model.weights + model.bias)
    delta = probs.copy()
    delta[np.arange(m), labels] -= 1.0
    delta *= weights[:, None] / m
    d_weights = features.T @ delta + 2.0 * model.config.l2 * model.weights
    d_bias = delta.sum(axis=0)
    return d_weights, d_bias


def train(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> LinearModel:
    """Fit the head by seeded mini-batch gradient descent from a zero init.

    When ``batch_size >= M`` the whole dataset is one batch in row order
    (no shuffling), so full-batch runs are exactly reproducible.
    """
    features = _check_features(features)
    labels = np.asarray(labels, dtype=np.int64)
    m, dim = features.shape
    if labels.shape != (m,):
        raise TrainError(f"labels shape {labels.shape} does not match {m} rows")
    if m < 2 or len(np.unique(labels)) < 2:
        raise TrainError("training needs at least two examples with both classes present")
    if labels.min() < 0 or labels.max() > 1:
        raise TrainError("labels must be binary (0 or 1)")

    weights_all = example_weights(labels, cfg.class_weighting)
    model = LinearModel(weights=np.zeros((dim, 2)), bias=np.zeros(2), config=cfg)
    rng = np.random.default_rng(cfg.seed)
    full_batch = cfg.batch_size >= m
    for _ in range(cfg.epochs):
        order = np.arange(m) if full_batch else rng.permutation(m)
        for lo in range(0, m, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            dw, db = gradient(model, features[idx], labels[idx], weights_all[idx])
            model.weights -= cfg.learning_rate * dw
            model.bias -= cfg.learning_rate * db
        model.loss_history.append(loss(model, features, labels, weights_all))
    return model


def predict_proba(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Softmax of affine scores; each row sums to one."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != model.dim:
        raise TrainError(f"feature dim {features.shape[1]} != model dim {model.dim}")
    return _softmax(features @ model.weights + model.bias)


def random_project(embedding_set: EmbeddingSet, cfg: ProjectionConfig) -> EmbeddingSet:
    """Project vectors to ``target_dim`` with a seeded Gaussian matrix scaled
    by 1/sqrt(target_dim); metadata is preserved row for row."""
    dim = embedding_set.dim
    if not 1 <= cfg.target_dim <= dim:
        raise TrainError(f"target_dim must be in [1, {dim}], got {cfg.target_dim}")
    if cfg.identity:
        if cfg.target_dim != dim:
            raise TrainError("identity projection requires target_dim == dim")
        return embedding_set
    rng = np.random.default_rng(cfg.seed)
    projection = rng.normal(size=(dim, cfg.target_dim)) / np.sqrt(cfg.target_dim)
    projected = embedding_set.vectors.astype(np.float64) @ projection
    return EmbeddingSet(projected.astype(np.float32), embedding_set.meta)


def save_model(model: LinearModel, path: Union[str, Path]) -> None:
    """Model file: magic CURM, u32 dim, weights (dim x 2) then bias (2) as LE f32."""
    out = MODEL_MAGIC + struct.pack("<I", model.dim)
    out += model.weights.astype("<f4").tobytes(order="C")
    out += model.bias.astype("<f4").tobytes()
    Path(path).write_bytes(out)


def load_model(path: Union[str, Path], cfg: Optional[TrainConfig] = None) -> LinearModel:
    buf = Path(path).read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise TrainError(f"bad magic in {path}")
    (dim,) = struct.unpack_from("<I", buf, 4)
    expected = 8 + dim * 2 * 4 + 2 * 4
    if len(buf) != expected:
        raise TrainError(f"model file is {len(buf)} bytes, expected {expected}")
    weights = np.frombuffer(buf, dtype="<f4", count=dim * 2, offset=8).reshape(dim, 2)
    bias = np.frombuffer(buf, dtype="<f4", count=2, offset=8 + dim * 2 * 4)
    return LinearModel(
        weights=weights.astype(np.float64),
        bias=bias.astype(np.float64),
        config=cfg or TrainConfig(),
    )


__all__ = [
    "LinearModel",
    "ProjectionConfig",
    "TrainConfig",
    "TrainError",
    "example_weights",
    "gradient",
    "load_model",
    "loss",
    "predict_proba",
    "random_project",
    "save_model",
    "train",
]
