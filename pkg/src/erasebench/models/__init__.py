from .base import (
    COUNT_KINDS,
    GRADIENT_KINDS,
    MODEL_KINDS,
    Checkpoint,
    ModelHyper,
    RecModel,
    SampleSet,
    topk_from_scores,
)
from .counts import ItemKNNModel, PopModel, RandomModel, exact_unlearn_counts
from .embedding import BPRMF, LightGCN, lightgcn_propagate, normalized_adjacency
from .quadratic import QuadraticModel
from .training import NegativeSampler, fit_model, model_from_checkpoint, train


def predict_topk(model, user: int, k: int, exclude_seen: bool = True, dataset=None) -> list[int]:
    return model.predict_topk(user, k, exclude_seen, dataset)


def loss_grad(model, samples, coefficients=None):
    return model.loss_grad(samples, coefficients)


def hvp_apply(model, samples, coefficients, v, damping: float = 0.0):
    return model.hvp(samples, coefficients, v, damping)


__all__ = [
    "BPRMF",
    "COUNT_KINDS",
    "Checkpoint",
    "GRADIENT_KINDS",
    "ItemKNNModel",
    "LightGCN",
    "MODEL_KINDS",
    "ModelHyper",
    "NegativeSampler",
    "PopModel",
    "QuadraticModel",
    "RandomModel",
    "RecModel",
    "SampleSet",
    "exact_unlearn_counts",
    "fit_model",
    "hvp_apply",
    "lightgcn_propagate",
    "loss_grad",
    "model_from_checkpoint",
    "normalized_adjacency",
    "predict_topk",
    "topk_from_scores",
    "train",
]
