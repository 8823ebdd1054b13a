"""Class-weighted multi-label binary cross-entropy.

The score used both as the training loss and the evaluation metric: BCE per
class, weighted with the "any" class counting twice, weights normalised to
sum to one, averaged over samples.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

CLIP_EPS = 1e-7


def clip_probabilities(p):
    return np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS)


@dataclass(frozen=True)
class ClassWeighting:
    """Normalised per-class weights; ``any_index`` marks the doubled class."""

    weights: tuple
    any_index: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("weights must be finite, nonnegative, and not all zero")
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))

    @classmethod
    def default(cls, num_classes, any_index=None):
        w = np.ones(num_classes)
        if any_index is not None:
            w[any_index] = 2.0
        return cls(tuple(w), any_index)

    @classmethod
    def for_classes(cls, class_names):
        """Default weighting, doubling the class named ``any`` if present."""
        lowered = [c.lower() for c in class_names]
        any_index = lowered.index("any") if "any" in lowered else None
        return cls.default(len(lowered), any_index)

    def as_array(self):
        return np.asarray(self.weights)


def _weights_array(w, num_classes):
    if w is None:
        w = ClassWeighting.default(num_classes)
    if isinstance(w, ClassWeighting):
        arr = w.as_array()
    else:
        arr = np.asarray(w, dtype=np.float64)
        arr = arr / arr.sum()
    if arr.shape != (num_classes,):
        raise ShapeError("class weights must have one entry per class", arr.shape, (num_classes,))
    return arr


def _validate(pred, labels):
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.ndim != 2 or pred.shape != labels.shape:
        raise ShapeError("predictions and labels must be matching 2-D arrays", pred.shape, labels.shape)
    bad = (labels != 0) & (labels != 1)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise DomainError("labels must be 0 or 1", idx, float(labels[tuple(idx)]))
    bad = ~((pred >= 0) & (pred <= 1))
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise DomainError("predictions must lie in [0, 1]", idx, float(pred[tuple(idx)]))
    return pred, labels


def weighted_bce(pred, labels, weights=None):
    """Mean over samples of the class-weighted binary cross-entropy.

    ``weights`` is a :class:`ClassWeighting`, a raw weight vector (normalised
    here) or ``None`` for uniform weights.
    """
    pred, labels = _validate(pred, labels)
    w = _weights_array(weights, pred.shape[1])
    p = clip_probabilities(pred)
    per_elem = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    return float((per_elem @ w).mean())


def weighted_bce_grad(pred, labels, weights=None):
    """Gradient of :func:`weighted_bce` with respect to ``pred``.

    The clip acts as a stop-gradient: entries strictly outside
    ``[CLIP_EPS, 1 - CLIP_EPS]`` get zero; entries on the boundary use the
    formula at the boundary value.
    """
    pred, labels = _validate(pred, labels)
    w = _weights_array(weights, pred.shape[1])
    inside = (pred >= CLIP_EPS) & (pred <= 1.0 - CLIP_EPS)
    p = clip_probabilities(pred)
    grad = w * (p - labels) / (p * (1.0 - p)) / pred.shape[0]
    return np.where(inside, grad, 0.0)
