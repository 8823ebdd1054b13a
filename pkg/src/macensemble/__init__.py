"""Learned model-agnostic combination of ensemble predictions.

Each sub-model prediction is mapped into a latent space by ``f``, the
latent vectors are reduced with a permutation-invariant reducer and ``g``
maps the result back to probabilities. Both transforms are small MLPs
trained on weighted binary cross-entropy.
"""
from importlib import resources

__version__ = "0.1.0"

from .combine import (CLOSED_FORMS, REDUCERS, AnalyticTransform, FunctionTrace, MacModel,
                      closed_form_batch, combine_batch, combine_closed_form,
                      combine_hierarchical, combine_weighted, reduce_latent, trace_functions)
from .data import (LabelMatrix, PredictionTensor, append_sub_models, load_labels,
                   load_predictions, save_labels, save_predictions)
from .errors import (AnyConsistencyError, DataFormatError, DomainError, EmptyEnsembleError,
                     MacError, ModelFormatError, ShapeError, TrainingDivergedError, VersionError)
from .kernel import get_backend, set_backend
from .metric import ClassWeighting, weighted_bce, weighted_bce_grad
from .mlp import Adam, Mlp, init_mlp
from .trainer import (TrainConfig, TrainReport, evaluate, predict, score_vs_n_experiment,
                      train)


def fixture_paths():
    """``(prediction csv paths, label csv path)`` of the bundled 200-sample fixture."""
    root = resources.files(__name__) / "data" / "fixture"
    preds = sorted((root / "predictions").iterdir(), key=lambda p: p.name)
    return [str(p) for p in preds if p.name.endswith(".csv")], str(root / "labels.csv")
