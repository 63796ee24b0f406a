from typing import Tuple
import logging
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax

from src.association.features import FeatureSchema
from src.errors import ConsistencyError, EmptyDatasetError
from src.model.classifier import MlpModel, masks_from_inputs, predict_logits

logger = logging.getLogger(__name__)


def negative_log_likelihood(
    logits: np.ndarray,
    labels: np.ndarray,
    masks: np.ndarray,
    temperature: float = 1.0
) -> float:
    scaled = np.where(masks, logits / temperature, -np.inf)
    log_probs = log_softmax(scaled, axis=-1)
    return float(-np.mean(log_probs[np.arange(len(labels)), labels]))


def fit_temperature(
    logits: np.ndarray,
    labels: np.ndarray,
    masks: np.ndarray,
    bounds: Tuple[float, float] = (0.05, 20.0)
) -> float:
    """Temperature minimizing validation NLL; never worse than T = 1."""
    if len(labels) == 0:
        raise EmptyDatasetError("Temperature scaling needs a non-empty validation set")

    def objective(log_t: float) -> float:
        return negative_log_likelihood(logits, labels, masks, math.exp(log_t))

    result = minimize_scalar(
        objective,
        bounds=(math.log(bounds[0]), math.log(bounds[1])),
        method='bounded',
    )
    temperature = math.exp(result.x)
    if objective(result.x) > negative_log_likelihood(logits, labels, masks, 1.0):
        temperature = 1.0
    return temperature


def calibrate(
    model: MlpModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    schema: FeatureSchema
) -> float:
    """Fit and install the model temperature on a held-out set."""
    logits = predict_logits(model, inputs)
    masks = masks_from_inputs(inputs, schema)
    temperature = fit_temperature(logits, labels, masks)

    before = np.argmax(np.where(masks, logits, -np.inf), axis=-1)
    after = np.argmax(np.where(masks, logits / temperature, -np.inf), axis=-1)
    if not np.array_equal(before, after):
        logger.error("Temperature scaling changed a decision")
        raise ConsistencyError("temperature scaling must not change argmax decisions")

    nll_before = negative_log_likelihood(logits, labels, masks, 1.0)
    nll_after = negative_log_likelihood(logits, labels, masks, temperature)
    model.temperature.fill_(temperature)
    logger.info(f"Calibrated temperature T={temperature:.4f} (NLL {nll_before:.4f} -> {nll_after:.4f})")
    return temperature
