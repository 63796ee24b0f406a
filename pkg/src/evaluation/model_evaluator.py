from typing import Any, Dict, List, Sequence
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from src.association.features import FeatureSchema
from src.model.classifier import (
    MlpModel,
    argmax_prefer_new,
    masked_softmax,
    masks_from_inputs,
    predict_logits,
)
from src.model.data_preparation import TrainingExamples

logger = logging.getLogger(__name__)


@dataclass
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    rows: List[ClassMetrics]
    macro: ClassMetrics
    accuracy: float
    total: int
    confusion: np.ndarray = field(repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'total': self.total,
            'macro': vars(self.macro),
            'classes': [vars(r) for r in self.rows],
        }

    def format_table(self) -> str:
        lines = [f"{'class':>10} {'precision':>10} {'recall':>10} {'f1-score':>10} {'support':>10}"]
        for r in self.rows:
            lines.append(f"{r.label:>10} {r.precision:>10.4f} {r.recall:>10.4f} {r.f1:>10.4f} {r.support:>10d}")
        lines.append("")
        lines.append(f"{'accuracy':>10} {'':>10} {'':>10} {self.accuracy:>10.4f} {self.total:>10d}")
        m = self.macro
        lines.append(f"{'macro avg':>10} {m.precision:>10.4f} {m.recall:>10.4f} {m.f1:>10.4f} {m.support:>10d}")
        return "\n".join(lines)


def class_label(index: int, k: int) -> str:
    """Slot index to report label: candidates are 1..k, the last class is New."""
    return "New" if index == k else str(index + 1)


def classification_report(
    predicted: Sequence[int],
    truth: Sequence[int],
    k: int
) -> ClassificationReport:
    """Per-class precision/recall/F1 over classes present in truth or predictions."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    labels = sorted(set(truth.tolist()) | set(predicted.tolist()))
    if not labels:
        empty = ClassMetrics("macro avg", 0.0, 0.0, 0.0, 0)
        return ClassificationReport([], empty, 0.0, 0, np.zeros((0, 0), dtype=np.int64))

    precision, recall, f1, support = precision_recall_fscore_support(
        truth, predicted, labels=labels, zero_division=0
    )
    rows = [
        ClassMetrics(class_label(c, k), float(p), float(r), float(f), int(s))
        for c, p, r, f, s in zip(labels, precision, recall, f1, support)
    ]
    macro = ClassMetrics(
        "macro avg",
        float(np.mean(precision)),
        float(np.mean(recall)),
        float(np.mean(f1)),
        int(np.sum(support)),
    )
    return ClassificationReport(
        rows=rows,
        macro=macro,
        accuracy=float(np.mean(predicted == truth)),
        total=len(truth),
        confusion=confusion_matrix(truth, predicted, labels=labels),
    )


class ModelEvaluator:
    """Scores a trained classifier on held-out examples."""

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.batch_size = config.get('batch_size', 4096)

    def evaluate(
        self,
        model: MlpModel,
        examples: TrainingExamples,
        schema: FeatureSchema
    ) -> ClassificationReport:
        try:
            logits = predict_logits(model, examples.inputs, self.batch_size)
            masks = masks_from_inputs(examples.inputs, schema)
            probabilities = masked_softmax(logits, masks, float(model.temperature))
            predicted = [argmax_prefer_new(p, m) for p, m in zip(probabilities, masks)]
            report = classification_report(predicted, examples.labels, schema.k)
            logger.info(f"Classification accuracy {report.accuracy:.4f} on {report.total} examples")
            return report
        except Exception as e:
            logger.error(f"Error evaluating model: {e}")
            raise
