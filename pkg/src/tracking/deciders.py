from typing import Optional
import logging
from abc import ABC, abstractmethod

import numpy as np

from src.association.features import FeatureBuilder, FeatureSchema
from src.association.screening import NEW_VESSEL, EndpointStore, ScreenResult
from src.errors import ConfigurationError, ConsistencyError
from src.geo.kinematics import Posit
from src.model.classifier import Assignment, MlpModel, classify

logger = logging.getLogger(__name__)


def _one_hot(result: ScreenResult, slot: int, k: int) -> Assignment:
    probabilities = np.zeros(k + 1)
    if slot == NEW_VESSEL:
        probabilities[k] = 1.0
        return Assignment(NEW_VESSEL, probabilities, NEW_VESSEL)
    probabilities[slot] = 1.0
    return Assignment(slot, probabilities, result.candidates[slot].track_id)


class Decider(ABC):
    """Chooses one of the screened candidates or New Vessel for a query."""

    name = "decider"
    needs_truth = False

    def __init__(self, k: int):
        self.k = k

    @abstractmethod
    def decide(self, query: Posit, result: ScreenResult, store: EndpointStore) -> Assignment:
        """Assignment for `query` given its screen; must not modify `store`."""
        ...


class GreedyDecider(Decider):
    """Lowest link score wins unless New Vessel scores lower."""

    name = "greedy"

    def decide(self, query: Posit, result: ScreenResult, store: EndpointStore) -> Assignment:
        """Best-ranked candidate if it beats the New Vessel score."""
        if result.candidates and result.candidates[0].score < result.new_vessel_score:
            return _one_hot(result, 0, self.k)
        return _one_hot(result, NEW_VESSEL, self.k)


class OracleDecider(Decider):
    """Picks the true class whenever the screen contains it, else New Vessel."""

    name = "oracle"
    needs_truth = True

    def decide(self, query: Posit, result: ScreenResult, store: EndpointStore) -> Assignment:
        """One-hot assignment on the oracle choice."""
        return _one_hot(result, self.choice(result), self.k)

    @staticmethod
    def choice(result: ScreenResult) -> int:
        """Slot of the true predecessor, or NEW_VESSEL when it is a start or was screened out."""
        if result.truth_in_screen is None:
            raise ConsistencyError("Oracle decisions need ground truth in the screen result")
        if result.truth_in_screen and result.true_slot is not None:
            return result.true_slot
        return NEW_VESSEL


class SimulatedDecider(Decider):
    """Oracle choice with probability p, otherwise a random other option."""

    name = "simulated"
    needs_truth = True

    def __init__(self, k: int, p: float, seed: int = 0):
        super().__init__(k)
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"p must lie in [0, 1], got {p}")
        self.p = p
        self.rng = np.random.default_rng(seed)

    def decide(self, query: Posit, result: ScreenResult, store: EndpointStore) -> Assignment:
        """Oracle choice with probability p, else a uniformly drawn wrong option."""
        correct = OracleDecider.choice(result)
        options = list(range(len(result.candidates))) + [NEW_VESSEL]
        wrong = [o for o in options if o != correct]
        if not wrong or self.rng.random() < self.p:
            return _one_hot(result, correct, self.k)
        return _one_hot(result, wrong[int(self.rng.integers(len(wrong)))], self.k)


class ClassifierDecider(Decider):
    """Arg-max of the calibrated MLP over the k + 1 slots."""

    name = "classifier"

    def __init__(self, model: MlpModel, schema: FeatureSchema):
        super().__init__(schema.k)
        self.model = model
        self.schema = schema
        self.builder = FeatureBuilder(schema)

    def decide(self, query: Posit, result: ScreenResult, store: EndpointStore) -> Assignment:
        """Build the feature input for this screen and classify it; unused slots are masked."""
        inputs = self.builder.assemble(query, result, store)
        return classify(self.model, result, inputs, self.schema)


def make_decider(
    name: str,
    k: int,
    model: Optional[MlpModel] = None,
    schema: Optional[FeatureSchema] = None,
    p: float = 1.0,
    seed: int = 0
) -> Decider:
    """Decider by CLI name; `p` and `seed` only apply to the simulated one."""
    if name == "greedy":
        return GreedyDecider(k)
    if name == "oracle":
        return OracleDecider(k)
    if name == "simulated":
        return SimulatedDecider(k, p, seed)
    if name == "classifier":
        if model is None or schema is None:
            raise ConfigurationError("The classifier decider needs a model and its schema")
        return ClassifierDecider(model, schema)
    raise ConfigurationError(f"Unknown decider: {name}")
