from typing import Optional, Sequence, Tuple
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.association.features import AssembledInput, FeatureSchema
from src.association.screening import NEW_VESSEL, ScreenResult
from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

DESK_WIDTHS = (64, 64, 32)
FULL_WIDTHS = (2000, 2000, 1000)
MASK_VALUE = -1e9


class MlpModel(nn.Module):
    """Fully connected link classifier: k candidate logits plus New Vessel."""

    def __init__(
        self,
        input_width: int,
        k: int,
        hidden: Sequence[int] = DESK_WIDTHS,
        schema_fingerprint: str = "",
        seed: Optional[int] = None
    ):
        super().__init__()
        self.input_width = input_width
        self.k = k
        self.hidden = tuple(int(h) for h in hidden)
        self.schema_fingerprint = schema_fingerprint
        self.register_buffer('temperature', torch.tensor(1.0))

        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            layers = []
            width = input_width
            for h in self.hidden:
                layers.extend([nn.Linear(width, h), nn.ReLU()])
                width = h
            layers.append(nn.Linear(width, k + 1))
            self.net = nn.Sequential(*layers)

    @classmethod
    def from_schema(
        cls,
        schema: FeatureSchema,
        hidden: Sequence[int] = DESK_WIDTHS,
        seed: Optional[int] = None
    ) -> "MlpModel":
        return cls(schema.input_width, schema.k, hidden, schema.fingerprint, seed)

    @property
    def widths(self) -> Tuple[int, ...]:
        return (self.input_width, *self.hidden, self.k + 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_width:
            raise ConfigurationError(
                f"Input width {x.shape[-1]} does not match model width {self.input_width}"
            )
        return self.net(x)


def masked_logits(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Push logits of empty slots to a large negative value."""
    return logits.masked_fill(~mask, MASK_VALUE)


def smoothed_targets(targets: torch.Tensor, mask: torch.Tensor, epsilon: float) -> torch.Tensor:
    """(1 - eps) on the true class plus eps spread uniformly over valid classes."""
    valid = mask.to(torch.float32)
    uniform = valid / valid.sum(dim=-1, keepdim=True)
    one_hot = F.one_hot(targets, num_classes=mask.shape[-1]).to(torch.float32)
    return (1.0 - epsilon) * one_hot + epsilon * uniform


def smoothed_cross_entropy(
    logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    epsilon: float = 0.0
) -> torch.Tensor:
    log_probs = F.log_softmax(masked_logits(logits, mask), dim=-1)
    log_probs = torch.where(mask, log_probs, torch.zeros_like(log_probs))
    target = smoothed_targets(targets, mask, epsilon).to(log_probs.dtype)
    return -(target * log_probs).sum(dim=-1).mean()


def masks_from_inputs(inputs: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Recover slot masks from the mask column stored in each slot."""
    return inputs[..., schema.mask_columns()] > 0.5


def predict_logits(model: MlpModel, inputs: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Raw (untempered) logits for a batch of assembled inputs."""
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            chunk = torch.as_tensor(inputs[start:start + batch_size], dtype=torch.float32)
            outputs.append(model(chunk).numpy())
    if not outputs:
        return np.zeros((0, model.k + 1), dtype=np.float32)
    return np.concatenate(outputs)


def masked_softmax(logits: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    scaled = np.where(mask, logits / temperature, -np.inf)
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    weights = np.where(mask, np.exp(scaled), 0.0)
    return weights / weights.sum(axis=-1, keepdims=True)


def argmax_prefer_new(probabilities: np.ndarray, mask: np.ndarray) -> int:
    """Index of the most probable valid class; ties go to New Vessel, then lowest slot."""
    best = np.max(probabilities[mask])
    winners = np.flatnonzero(mask & (probabilities == best))
    new_slot = probabilities.size - 1
    return new_slot if new_slot in winners else int(winners[0])


@dataclass
class Assignment:
    decision: int  # candidate slot, or NEW_VESSEL
    probabilities: np.ndarray
    track_id: int  # NEW_VESSEL until committed

    @property
    def is_new_vessel(self) -> bool:
        return self.decision == NEW_VESSEL


def classify(
    model: MlpModel,
    result: ScreenResult,
    inputs: AssembledInput,
    schema: FeatureSchema
) -> Assignment:
    """Run the classifier on one assembled input and pick a slot."""
    if model.schema_fingerprint != schema.fingerprint:
        raise ConfigurationError("Model was trained against a different feature schema")
    if not result.candidates:
        probabilities = np.zeros(schema.k + 1)
        probabilities[-1] = 1.0
        return Assignment(NEW_VESSEL, probabilities, NEW_VESSEL)

    model.eval()
    with torch.no_grad():
        logits = model(torch.as_tensor(inputs.values[None, :], dtype=torch.float32)).numpy()[0]
    probabilities = masked_softmax(logits, inputs.mask, float(model.temperature))
    slot = argmax_prefer_new(probabilities, inputs.mask)
    if slot == schema.k:
        return Assignment(NEW_VESSEL, probabilities, NEW_VESSEL)
    return Assignment(slot, probabilities, result.candidates[slot].track_id)
