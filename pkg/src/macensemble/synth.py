"""Synthetic ensembles of imperfect sub-models over rare multi-label targets.

Every sub-model sees a noisy score per (sample, class)

    score = +/-logit(base_accuracy) + d + e

with the sign following the true label, ``d`` a difficulty term shared by
all sub-models and ``e`` the sub-model's own noise. It reports the posterior
probability of a positive given its own score (prior = class prevalence),
so each member is calibrated on its own, and then distorts it as
``p ** calibration_skew``. The shared term keeps members correlated the way
models trained on the same data are; the skew gives a learned non-linear
``f`` something to correct.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .combine import MacModel, trace_functions
from .data import LabelMatrix, PredictionTensor, append_sub_models
from .metric import CLIP_EPS, ClassWeighting, weighted_bce
from .trainer import TrainConfig, config_split, evaluate, evaluate_closed_form, score_vs_n_experiment, train

log = logging.getLogger(__name__)

RSNA_CLASSES = ("epidural", "intraparenchymal", "intraventricular", "subarachnoid", "subdural", "any")


@dataclass(frozen=True)
class SubModelProfile:
    base_accuracy: float = 0.8
    calibration_skew: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.base_accuracy <= 1.0:
            raise ValueError("base_accuracy must be in [0.5, 1]")
        if not self.calibration_skew > 0:
            raise ValueError("calibration_skew must be > 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


def _logit(p):
    p = np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_labels(num_samples, class_prevalences, seed, class_names=None):
    """Sub-type labels from independent Bernoulli draws plus a derived "any" column."""
    prev = np.asarray(class_prevalences, dtype=np.float64)
    if prev.ndim != 1 or prev.size == 0 or ((prev <= 0) | (prev >= 1)).any():
        raise ValueError("class prevalences must lie strictly inside (0, 1)")
    rng = np.random.default_rng([seed, 0])
    sub = (rng.random((num_samples, prev.size)) < prev).astype(np.float64)
    values = np.concatenate([sub, sub.max(axis=1, keepdims=True)], axis=1)
    if class_names is None:
        class_names = (list(RSNA_CLASSES) if prev.size == 5
                       else [f"class_{i}" for i in range(prev.size)] + ["any"])
    ids = [f"s{i:06d}" for i in range(num_samples)]
    return LabelMatrix(values, ids, list(class_names))


def generate(num_samples, num_classes, class_prevalences, profiles, seed=0,
             shared_noise_scale=1.0, class_names=None, id_prefix="m"):
    """Draw labels and one prediction column per profile.

    ``class_prevalences`` covers the ``num_classes - 1`` sub-types; the last
    class is "any". Each sub-model's noise comes from ``(seed, profile.seed)``,
    so adding profiles never changes earlier sub-models.
    """
    if not profiles:
        raise ValueError("need at least one sub-model profile")
    if len(class_prevalences) != num_classes - 1:
        raise ValueError(f"expected {num_classes - 1} sub-type prevalences, got {len(class_prevalences)}")
    if shared_noise_scale < 0:
        raise ValueError("shared_noise_scale must be >= 0")
    labels = generate_labels(num_samples, class_prevalences, seed, class_names)
    y = labels.values
    prev = np.asarray(class_prevalences, dtype=np.float64)
    prior = np.append(prev, 1.0 - np.prod(1.0 - prev))
    shared = np.random.default_rng([seed, 1]).standard_normal(y.shape) * shared_noise_scale
    cols = [_predict(profile, y, prior, shared, shared_noise_scale, seed) for profile in profiles]
    ids = [f"{id_prefix}{i:03d}" for i in range(len(profiles))]
    return PredictionTensor(np.stack(cols, axis=1), labels.sample_ids, ids, labels.class_names), labels


def _predict(profile, y, prior, shared, shared_scale, seed):
    rng = np.random.default_rng([seed, 2, profile.seed])
    noise = rng.standard_normal(y.shape) * profile.noise_scale
    var = shared_scale ** 2 + profile.noise_scale ** 2
    if profile.base_accuracy >= 1.0 or var == 0.0:
        p = y.copy()  # noiseless or perfectly separating evidence
    else:
        mu = float(_logit(profile.base_accuracy))
        score = (2.0 * y - 1.0) * mu + shared + noise
        # posterior log-odds of a +/-mu Gaussian shift model with variance var
        p = _sigmoid(_logit(prior) + 2.0 * mu * score / var)
    p = p ** profile.calibration_skew
    return np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS)


def random_profiles(count, seed, accuracy=(0.75, 0.9), skew=(1.0, 1.0), noise=(0.5, 1.5),
                    first_seed=0):
    """Profiles with parameters drawn uniformly (skew log-uniformly) from ranges."""
    rng = np.random.default_rng([seed, 3])
    acc = rng.uniform(*accuracy, size=count)
    gam = np.exp(rng.uniform(np.log(skew[0]), np.log(skew[1]), size=count))
    sd = rng.uniform(*noise, size=count)
    return [SubModelProfile(float(a), float(g), float(s), first_seed + i)
            for i, (a, g, s) in enumerate(zip(acc, gam, sd))]


@dataclass
class BenchmarkPreset:
    """Everything a benchmark run needs besides the output directory."""

    num_samples: int = 20000
    num_sub_models: int = 40
    train_sub_models: int = 20
    sub_type_prevalence: float = 0.03
    shared_noise_scale: float = 1.5
    accuracy: tuple = (0.85, 0.9)
    skew: tuple = (0.5, 2.0)
    noise: tuple = (0.75, 1.25)
    seed: int = 2020
    infer_n: tuple = (5, 10, 20, 30, 40)
    infer_repeats: int = 4
    train_k: tuple = (5, 10, 20, 40)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


PRESETS = {
    # desk-scale analogue of the 310/460-model experiment
    "paper-analog": lambda: BenchmarkPreset(
        train=TrainConfig(max_epochs=12, patience_epochs=3, seed=7, trunk=(16, 16), block=32)),
    # small and quick; used by the test-suite smoke checks
    "smoke": lambda: BenchmarkPreset(
        num_samples=3000, num_sub_models=12, train_sub_models=6, infer_n=(2, 6, 12),
        infer_repeats=2, train_k=(3, 6),
        train=TrainConfig(max_epochs=4, patience_epochs=2, seed=7, trunk=(8, 8), block=16)),
    # the bundled 200-sample CSV fixture
    "fixture": lambda: BenchmarkPreset(
        num_samples=200, num_sub_models=8, train_sub_models=4, sub_type_prevalence=0.08,
        infer_n=(2, 4, 8), infer_repeats=2, train_k=(2, 4), seed=11,
        train=TrainConfig(max_epochs=5, patience_epochs=3, batch_size=50, seed=3, trunk=(8, 8),
                          block=16)),
}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None


def preset_profiles(p):
    """Profiles for a preset; sub-models ``>= train_sub_models`` are the unseen ones.

    Unseen sub-models cycle through the seen profiles' parameters with fresh
    noise seeds, so both groups come from the same population.
    """
    seen = random_profiles(p.train_sub_models, p.seed, p.accuracy, p.skew, p.noise)
    unseen = [replace(seen[i % len(seen)], seed=p.train_sub_models + i)
              for i in range(p.num_sub_models - p.train_sub_models)]
    return seen + unseen


def generate_preset(p):
    """Data for a preset: (full tensor, labels)."""
    return generate(p.num_samples, 6, [p.sub_type_prevalence] * 5, preset_profiles(p), p.seed,
                    p.shared_noise_scale)


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)  # (method, train_k, infer_n, score)
    infer_curve: list = field(default_factory=list)
    baselines: dict = field(default_factory=dict)
    mac_score: float | None = None
    mac_score_train_n: float | None = None
    unseen_gain: float | None = None
    trace_summary: dict = field(default_factory=dict)
    train_reports: dict = field(default_factory=dict)
    preset: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_csv(self):
        lines = ["method,train_k,infer_n,score"]
        for method, k, n, score in self.rows:
            lines.append(f"{method},{'' if k is None else k},{n},{score!r}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True, default=float) + "\n"


def run_paper_protocol(predictions, labels, p):
    """Table-2 style comparison plus the two score-vs-N sweeps.

    Sub-models ``[0, train_sub_models)`` are the "trained" ensemble; the
    remainder are appended only at inference. Baselines and MAC are scored on
    the test split the trainer holds out, using all sub-models.

    Returns ``(main_model, report)``.
    """
    start = time.perf_counter()
    report = BenchmarkReport(preset=p.to_dict())
    weighting = ClassWeighting.for_classes(labels.class_names)
    n_all = predictions.num_sub_models
    seen = predictions.select(range(p.train_sub_models))
    unseen = predictions.select(range(p.train_sub_models, n_all))
    full = append_sub_models(seen, unseen)

    # every training run shares the same split, so the held-out test rows are common
    model, rep = train(seen, labels, p.train, weighting)
    test_rows = config_split(labels.values, p.train)[2]
    xt = full.values[test_rows]
    yt = labels.values[test_rows]
    report.train_reports[str(p.train_sub_models)] = rep.to_dict(include_timing=True)

    for kind in ("arithmetic", "geometric", "harmonic"):
        score = evaluate_closed_form(kind, xt, yt, weighting=weighting)
        report.baselines[kind] = score
        report.rows.append((kind, None, n_all, score))
    for kind in ("arithmetic",):
        score = evaluate_closed_form(kind, xt[:, :p.train_sub_models], yt, weighting=weighting)
        report.baselines[f"{kind}@{p.train_sub_models}"] = score
        report.rows.append((kind, None, p.train_sub_models, score))

    report.mac_score_train_n = evaluate(model, xt[:, :p.train_sub_models], yt, weighting=weighting)
    report.mac_score = evaluate(model, xt, yt, weighting=weighting)
    report.unseen_gain = (report.mac_score_train_n - report.mac_score) / report.mac_score_train_n
    report.rows.append(("mac", p.train_sub_models, p.train_sub_models, report.mac_score_train_n))
    report.rows.append(("mac", p.train_sub_models, n_all, report.mac_score))

    curve = score_vs_n_experiment(model, xt, yt, [n for n in p.infer_n if n <= n_all],
                                  p.infer_repeats, seed=p.seed, weighting=weighting)
    report.infer_curve = [asdict(pt) for pt in curve]
    for pt in curve:
        report.rows.append(("mac_infer_sweep", p.train_sub_models, pt.n, pt.mean_score))

    for k in p.train_k:
        if k == p.train_sub_models:
            mk = model
        else:
            mk, rk = train(full.select(range(k)), labels, p.train, weighting)
            report.train_reports[str(k)] = rk.to_dict(include_timing=True)
        score = evaluate(mk, xt, yt, weighting=weighting)
        report.rows.append(("mac_train_sweep", k, n_all, score))

    report.trace_summary = trace_functions(model).summary()
    report.seconds = time.perf_counter() - start
    return model, report


def per_model_scores(predictions, labels):
    weighting = ClassWeighting.for_classes(labels.class_names)
    return [weighted_bce(predictions.values[:, j], labels.values, weighting)
            for j in range(predictions.num_sub_models)]


__all__ = [
    "SubModelProfile", "BenchmarkPreset", "BenchmarkReport", "PRESETS", "generate",
    "generate_labels", "generate_preset", "preset", "preset_profiles", "random_profiles", "run_paper_protocol",
    "per_model_scores", "MacModel",
]
