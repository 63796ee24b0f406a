from typing import Any, Dict, List, Optional, Sequence, Tuple
import copy
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import torch
from torch.optim.lr_scheduler import MultiStepLR
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from src.association.features import FeatureSchema
from src.errors import ConfigurationError, EmptyDatasetError, TrainingDivergedError
from src.model.calibration import calibrate
from src.model.classifier import (
    DESK_WIDTHS,
    MlpModel,
    masks_from_inputs,
    predict_logits,
    smoothed_cross_entropy,
)
from src.model.data_preparation import TrainingExamples

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    batch_size: int = 1000
    learning_rate: float = 1e-3
    lr_milestones: Tuple[float, ...] = (0.6, 0.85)  # fractions of total epochs
    lr_gamma: float = 0.1
    label_smoothing: float = 0.05
    clip_norm: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    validation_fraction: float = 0.1
    hidden: Tuple[int, ...] = DESK_WIDTHS
    calibrate: bool = True
    show_progress: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be at least 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "TrainConfig":
        return cls(
            epochs=config.get('epochs', 120),
            batch_size=config.get('batch_size', 1000),
            learning_rate=config.get('learning_rate', 1e-3),
            lr_milestones=tuple(config.get('lr_milestones', (0.6, 0.85))),
            lr_gamma=config.get('lr_gamma', 0.1),
            label_smoothing=config.get('label_smoothing', 0.05),
            clip_norm=config.get('clip_norm', 1.0),
            weight_decay=config.get('weight_decay', 0.0),
            seed=config.get('seed', 0),
            validation_fraction=config.get('validation_fraction', 0.1),
            hidden=tuple(config.get('hidden', DESK_WIDTHS)),
            calibrate=config.get('calibrate', True),
            show_progress=config.get('show_progress', False),
        )


@dataclass
class TrainingHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    temperature: float = 1.0


class TrainingWorkflow:
    """Supervised training of the link classifier on oracle-labeled examples."""

    def __init__(self, cfg: TrainConfig, output_dir: Optional[Path] = None):
        self.cfg = cfg
        self.output_dir = Path(output_dir) if output_dir else None
        if self.output_dir:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        self.history = TrainingHistory()
        self.epoch = 0

    def split(self, examples: TrainingExamples) -> Tuple[np.ndarray, np.ndarray]:
        """Deterministic train/validation index split."""
        order = np.random.default_rng(self.cfg.seed).permutation(len(examples))
        n_val = int(round(len(examples) * self.cfg.validation_fraction))
        if n_val == 0:
            return order, order
        return order[n_val:], order[:n_val]

    def train(self, examples: TrainingExamples, schema: FeatureSchema) -> MlpModel:
        """Minimize smoothed cross-entropy; keep the weights with best validation loss."""
        if len(examples) == 0:
            raise EmptyDatasetError("Cannot train on an empty dataset")
        if examples.inputs.shape[1] != schema.input_width:
            raise ConfigurationError(
                f"Examples have width {examples.inputs.shape[1]}, schema expects {schema.input_width}"
            )
        if examples.labels.min() < 0 or examples.labels.max() > schema.k:
            raise ConfigurationError(f"Labels must lie in 0..{schema.k}")

        try:
            train_idx, val_idx = self.split(examples)
            masks = examples.masks
            x = torch.as_tensor(examples.inputs, dtype=torch.float32)
            y = torch.as_tensor(examples.labels, dtype=torch.int64)
            m = torch.as_tensor(masks, dtype=torch.bool)

            model = MlpModel.from_schema(schema, self.cfg.hidden, seed=self.cfg.seed)
            optimizer = torch.optim.Adam(
                model.parameters(), lr=self.cfg.learning_rate, weight_decay=self.cfg.weight_decay
            )
            scheduler = MultiStepLR(
                optimizer,
                milestones=sorted({max(1, int(f * self.cfg.epochs)) for f in self.cfg.lr_milestones}),
                gamma=self.cfg.lr_gamma,
            )
            loader = DataLoader(
                TensorDataset(x[train_idx], y[train_idx], m[train_idx]),
                batch_size=self.cfg.batch_size,
                shuffle=True,
                generator=torch.Generator().manual_seed(self.cfg.seed),
            )

            logger.info(
                f"Training {model.widths} on {len(train_idx)} examples, "
                f"validating on {len(val_idx)}"
            )
            best_state = copy.deepcopy(model.state_dict())
            epochs = tqdm(range(self.cfg.epochs), desc="Training", disable=not self.cfg.show_progress)
            for epoch in epochs:
                self.epoch = epoch
                train_loss = self._train_epoch(model, loader, optimizer)
                val_loss = self._evaluate(model, x[val_idx], y[val_idx], m[val_idx])
                self.history.train_loss.append(train_loss)
                self.history.val_loss.append(val_loss)
                self.history.learning_rate.append(scheduler.get_last_lr()[0])
                scheduler.step()

                if val_loss < self.history.best_val_loss:
                    self.history.best_val_loss = val_loss
                    self.history.best_epoch = epoch
                    best_state = copy.deepcopy(model.state_dict())
                    self._save_checkpoint(model, val_loss)
                epochs.set_postfix({'train': f"{train_loss:.4f}", 'val': f"{val_loss:.4f}"})

            model.load_state_dict(best_state)
            logger.info(
                f"Best validation loss {self.history.best_val_loss:.4f} at epoch {self.history.best_epoch}"
            )
            if self.cfg.calibrate:
                self.history.temperature = calibrate(
                    model, examples.inputs[val_idx], examples.labels[val_idx], schema
                )
            return model

        except TrainingDivergedError:
            raise
        except Exception as e:
            logger.error(f"Error in training: {e}")
            raise

    def _train_epoch(
        self,
        model: MlpModel,
        loader: DataLoader,
        optimizer: torch.optim.Optimizer
    ) -> float:
        model.train()
        total, count = 0.0, 0
        for inputs, targets, masks in loader:
            optimizer.zero_grad()
            loss = smoothed_cross_entropy(model(inputs), targets, masks, self.cfg.label_smoothing)
            if not torch.isfinite(loss):
                logger.error(f"Non-finite loss at epoch {self.epoch}")
                raise TrainingDivergedError(
                    f"loss became {loss.item()} at epoch {self.epoch}; "
                    "lower the learning rate or check the feature schema"
                )
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), self.cfg.clip_norm)
            optimizer.step()
            total += loss.item() * len(targets)
            count += len(targets)
        return total / count

    @staticmethod
    def _evaluate(model: MlpModel, x: torch.Tensor, y: torch.Tensor, m: torch.Tensor) -> float:
        model.eval()
        with torch.no_grad():
            return float(smoothed_cross_entropy(model(x), y, m, 0.0))

    def _save_checkpoint(self, model: MlpModel, val_loss: float):
        if not self.output_dir:
            return
        path = self.output_dir / 'checkpoint-best.pt'
        torch.save({'epoch': self.epoch, 'model_state_dict': model.state_dict(), 'loss': val_loss}, path)
        logger.debug(f"Saved checkpoint: {path}")

    def get_training_info(self) -> Dict[str, Any]:
        return {
            'epochs_completed': self.epoch + 1,
            'best_epoch': self.history.best_epoch,
            'best_val_loss': self.history.best_val_loss,
            'final_train_loss': self.history.train_loss[-1] if self.history.train_loss else None,
            'temperature': self.history.temperature,
            'timestamp': datetime.now().isoformat(),
        }


def training_accuracy(model: MlpModel, examples: TrainingExamples, schema: FeatureSchema) -> float:
    """Fraction of examples whose masked argmax equals the label."""
    logits = predict_logits(model, examples.inputs)
    masks = masks_from_inputs(examples.inputs, schema)
    predicted = np.argmax(np.where(masks, logits, -np.inf), axis=-1)
    return float(np.mean(predicted == examples.labels))
