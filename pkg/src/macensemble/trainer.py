"""Supervised end-to-end fitting of ``f`` and ``g``.

Each minibatch draws a random subset of ``round(0.8 N)`` sub-models, combines
them through the mean reducer, scores the result with the class-weighted BCE
and takes one Adam step on the joint parameters of ``f`` and ``g``.
Validation uses all sub-models; the parameters from the best validation
epoch are returned.
"""
import copy
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .combine import MacModel, closed_form_batch, combine_batch, reduce_latent
from .data import LabelMatrix, PredictionTensor
from .errors import EmptyEnsembleError, ShapeError, TrainingDivergedError
from .metric import ClassWeighting, weighted_bce, weighted_bce_grad
from .mlp import DEFAULT_BLOCK, DEFAULT_TRUNK, Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    split_fractions: tuple = (0.8, 0.1, 0.1)
    subsample_fraction: float = 0.8
    batch_size: int = 500
    learning_rate: float = 1e-3
    max_epochs: int = 60
    patience_epochs: int = 5
    seed: int = 0
    latent_dim: int = 1
    trunk: tuple = DEFAULT_TRUNK
    block: int = DEFAULT_BLOCK
    # "batch": fresh sub-model subset per minibatch; "epoch": one per epoch
    subsample_per: str = "batch"

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        self.trunk = tuple(int(w) for w in self.trunk)
        if len(self.split_fractions) != 3 or min(self.split_fractions) <= 0:
            raise ValueError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must be in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience_epochs < 1:
            raise ValueError("batch_size >= 1, max_epochs >= 0 and patience_epochs >= 1 required")
        if self.subsample_per not in ("batch", "epoch"):
            raise ValueError("subsample_per must be 'batch' or 'epoch'")

    def to_dict(self):
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["trunk"] = list(self.trunk)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    test_score: float | None = None
    stopped_early: bool = False
    num_sub_models: int = 0
    subset_size: int = 0
    split_sizes: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def to_dict(self, include_timing=False):
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock_seconds")
        return d

    def to_json(self, include_timing=False):
        """Canonical JSON; timing is excluded by default so reruns are byte-identical."""
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


def _values(x):
    if isinstance(x, (PredictionTensor, LabelMatrix)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _weighting(labels, weighting):
    if weighting is not None:
        return weighting
    if isinstance(labels, LabelMatrix):
        return ClassWeighting.for_classes(labels.class_names)
    return ClassWeighting.default(_values(labels).shape[1])


def subset_size(n, fraction):
    """``max(1, round(fraction * n))`` with halves rounded up."""
    return max(1, min(n, int(math.floor(fraction * n + 0.5))))


def stratified_split(labels, fractions=(0.8, 0.1, 0.1), seed=0):
    """Partition sample indices so each split keeps the per-class positive rates.

    Samples are keyed by their rarest positive class (or "no positive"),
    shuffled, grouped by key, then dealt to splits by a largest-remainder
    schedule that hits the target sizes to within one sample. When some
    class has fewer positives than there are splits the key degrades to the
    joint "any positive" indicator.
    """
    y = _values(labels)
    if y.ndim != 2:
        raise ShapeError("labels must be samples x classes", y.shape)
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or (fr <= 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    s = y.shape[0]
    counts = y.sum(axis=0)
    present = counts > 0
    if (present & (counts < len(fr))).any():
        warnings.warn("a class has fewer positives than splits; stratifying on the joint "
                      "any-positive label only", stacklevel=2)
        key = y.max(axis=1).astype(np.int64) if y.shape[1] else np.zeros(s, dtype=np.int64)
    else:
        # rarest positive class per sample, -1 for all-negative samples
        order = np.argsort(counts, kind="stable")
        key = np.full(s, -1, dtype=np.int64)
        for rank, c in reversed(list(enumerate(order))):
            if present[c]:
                key[y[:, c] > 0] = rank
    rng = np.random.default_rng(seed)
    perm = rng.permutation(s)
    perm = perm[np.argsort(key[perm], kind="stable")]
    assigned = np.zeros(len(fr))
    split_of = np.empty(s, dtype=np.int64)
    for p in range(s):
        j = int(np.argmax((p + 1) * fr - assigned))
        assigned[j] += 1
        split_of[p] = j
    return tuple(np.sort(perm[split_of == j]) for j in range(len(fr)))


def derive_seeds(seed):
    """Independent integer seeds for the split, init, shuffle and subset streams."""
    names = ("split", "init", "shuffle", "subset")
    children = np.random.SeedSequence(seed).spawn(len(names))
    out = {"run": int(seed)}
    out.update({n: int(c.generate_state(1)[0]) for n, c in zip(names, children)})
    return out


def config_split(labels, cfg):
    """The (train, val, test) split :func:`train` uses for ``cfg``."""
    return stratified_split(labels, cfg.split_fractions, derive_seeds(cfg.seed)["split"])


def _flat_params(model):
    return model.f.params + model.g.params


def loss_and_grads(model, x, y, weighting):
    """Batch loss and gradients for ``f.params + g.params`` on ``x`` of shape ``(B, k, C)``.

    A non-finite forward pass gives ``(nan, None)``.
    """
    b, k, c = x.shape
    lat = model.latent_dim
    flat = np.ascontiguousarray(x.reshape(-1, 1))
    z, f_cache = model.f.forward_with_cache(flat)
    zbar = reduce_latent("mean", z.reshape(b, k, c, lat)).reshape(-1, lat)
    p, g_cache = model.g.forward_with_cache(zbar)
    pred = p.reshape(b, c)
    if not np.isfinite(pred).all():
        return math.nan, None
    loss = weighted_bce(pred, y, weighting)
    dp = weighted_bce_grad(pred, y, weighting)
    g_grads, dzbar = model.g.backward(zbar, dp.reshape(-1, 1), g_cache)
    # the mean spreads its upstream gradient evenly over the k members
    dz = np.broadcast_to((dzbar / k).reshape(b, 1, c, lat), (b, k, c, lat)).reshape(-1, lat)
    f_grads, _ = model.f.backward(flat, np.ascontiguousarray(dz), f_cache, input_grad=False)
    return loss, f_grads + g_grads


def train_step(model, optimizer, x, y, weighting):
    """One forward/backward/Adam update on a batch ``x`` of shape ``(B, k, C)``.

    Returns the batch loss (before the update).
    """
    loss, grads = loss_and_grads(model, x, y, weighting)
    if grads is not None:
        optimizer.step(_flat_params(model), grads)
    return loss


def _check_inputs(x, y):
    if x.ndim != 3 or y.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[2] != y.shape[1]:
        raise ShapeError("predictions (S, N, C) and labels (S, C) disagree", x.shape, y.shape)


def train(predictions, labels, cfg=None, weighting=None, model=None):
    """Fit a :class:`MacModel`; returns ``(model, TrainReport)``."""
    cfg = cfg or TrainConfig()
    weighting = _weighting(labels, weighting)
    x = _values(predictions)
    y = _values(labels)
    _check_inputs(x, y)
    n = x.shape[1]
    if n < 1:
        raise EmptyEnsembleError("training needs at least one sub-model")
    if n < 2 and cfg.subsample_fraction < 1:
        log.warning("only one sub-model; subsampling has no effect")
    start = time.perf_counter()

    seeds = derive_seeds(cfg.seed)
    split_seed, init_seed, shuffle_seed, subset_seed = (
        seeds[k] for k in ("split", "init", "shuffle", "subset"))
    train_idx, val_idx, test_idx = stratified_split(y, cfg.split_fractions, split_seed)
    if model is None:
        model = MacModel.initialize(init_seed, cfg.latent_dim, cfg.trunk, cfg.block)
    optimizer = Adam(_flat_params(model), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    subset_rng = np.random.default_rng(subset_seed)
    k = subset_size(n, cfg.subsample_fraction)

    report = TrainReport(num_sub_models=n, subset_size=k,
                         split_sizes=[len(train_idx), len(val_idx), len(test_idx)],
                         seeds=seeds,
                         config=cfg.to_dict())
    best = model.copy()
    best_val = math.inf
    since_best = 0
    for epoch in range(cfg.max_epochs):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        subset = np.sort(subset_rng.choice(n, size=k, replace=False))
        losses = []
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[lo:lo + cfg.batch_size]
            if cfg.subsample_per == "batch" and bi > 0:
                subset = np.sort(subset_rng.choice(n, size=k, replace=False))
            xb = x[rows][:, subset, :]
            loss = train_step(model, optimizer, xb, y[rows], weighting)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi}: loss={loss}, "
                    f"batch pred range [{xb.min():.3g}, {xb.max():.3g}], "
                    f"max |param| {max(float(np.abs(p).max()) for p in _flat_params(model)):.3g}")
            losses.append(loss)
        report.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        val = evaluate(model, x[val_idx], y[val_idx], weighting=weighting)
        report.val_loss.append(val)
        log.info("epoch %d train %.6f val %.6f", epoch, report.train_loss[-1], val)
        if val < best_val:
            best_val = val
            best = model.copy()
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience_epochs:
                report.stopped_early = True
                break
    report.best_val_loss = None if report.best_epoch is None else best_val
    report.test_score = evaluate(best, x[test_idx], y[test_idx], weighting=weighting)
    report.wall_clock_seconds = time.perf_counter() - start
    return best, report


def evaluate(model, predictions, labels, subset=None, weighting=None):
    """Weighted BCE of the combination over ``subset`` (default: all sub-models)."""
    weighting = _weighting(labels, weighting)
    x = _values(predictions)
    y = _values(labels)
    _check_inputs(x, y)
    if subset is not None:
        subset = list(subset)
        if not subset:
            raise EmptyEnsembleError("evaluation subset is empty")
        bad = [i for i in subset if not 0 <= i < x.shape[1]]
        if bad:
            raise IndexError(f"sub-model indices out of range: {bad}")
        x = x[:, subset, :]
    return weighted_bce(predict(model, x), y, weighting)


def evaluate_closed_form(kind, predictions, labels, subset=None, weighting=None):
    """Weighted BCE of a closed-form baseline combiner."""
    weighting = _weighting(labels, weighting)
    x = _values(predictions)
    if subset is not None:
        x = x[:, list(subset), :]
    return weighted_bce(closed_form_batch(kind, x), _values(labels), weighting)


def predict(model, predictions, chunk_rows=None):
    """``combine_batch`` over sample chunks to bound activation memory."""
    x = _values(predictions)
    s, n, c = x.shape
    if chunk_rows is None:
        width = sum(getattr(model.f, "trunk", (1,))) + 3 * getattr(model.f, "block", 1)
        chunk_rows = max(1, int(2e7 // max(width, 1)))
    per = max(1, chunk_rows // max(n * c, 1))
    if per >= s:
        return combine_batch(model, x)
    return np.concatenate([combine_batch(model, x[i:i + per]) for i in range(0, s, per)])


@dataclass
class ScorePoint:
    n: int
    mean_score: float
    std: float
    repeats: int
    scores: list


def score_vs_n_experiment(model, predictions, labels, n_values, repeats=4, seed=0, weighting=None):
    """Mean and std of the score over random sub-model groups of each size.

    Each repeat draws a fresh group without replacement. The std is the
    population std (0 when ``repeats == 1``; that case is flagged via
    ``ScorePoint.repeats``).
    """
    x = _values(predictions)
    n_total = x.shape[1]
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    bad = [n for n in n_values if not 1 <= n <= n_total]
    if bad:
        raise ValueError(f"group sizes must be in [1, {n_total}], got {bad}")
    if repeats == 1:
        log.warning("repeats=1: std reported as 0 by convention")
    rng = np.random.default_rng(seed)
    out = []
    for n in n_values:
        scores = []
        for _ in range(repeats):
            subset = np.sort(rng.choice(n_total, size=n, replace=False))
            scores.append(evaluate(model, x, labels, subset, weighting))
        out.append(ScorePoint(int(n), float(np.mean(scores)), float(np.std(scores)), repeats, scores))
    return out


def score_table_csv(points):
    lines = ["n,mean_score,std"]
    lines += [f"{p.n},{p.mean_score!r},{p.std!r}" for p in points]
    return "\n".join(lines) + "\n"


def clone_config(cfg, **changes):
    new = copy.deepcopy(cfg)
    for key, value in changes.items():
        setattr(new, key, value)
    new.__post_init__()
    return new
