"""Test configurations and stream builders."""
from typing import Any, Dict, List, Sequence, Tuple
from dataclasses import replace

import numpy as np

from src.association.features import FeatureSchema
from src.config.run_config import DEFAULTS, deep_merge
from src.geo.kinematics import CV, Posit, ProjectionModel, project, posits_from_records
from src.ingestion.data_loader import truth_labels
from src.ingestion.preprocessing import PreprocessConfig, preprocess
from src.ingestion.synthetic import SynthConfig, generate_synthetic
from src.model.data_preparation import TrainingExamples

ZONE = '15N'
ORIGIN = (500_000.0, 3_100_000.0)

TEST_CONFIG: Dict[str, Any] = deep_merge(DEFAULTS, {
    'screening': {'k': 8},
    'training': {
        'epochs': 5,
        'batch_size': 64,
        'validation_fraction': 0.2,
        'calibrate': False,
    },
    'synthetic': {'n_vessels': 12, 'days': 2},
})


def straight_track(
    n: int,
    dt: float = 1800.0,
    x0: float = ORIGIN[0],
    y0: float = ORIGIN[1],
    v: float = 4.0,
    psi: float = 0.0,
    t0: float = 0.0,
    model: ProjectionModel = CV
) -> List[Posit]:
    """Noiseless reports of one vessel, exactly consistent with `model`."""
    p = Posit(t0, x0, y0, v, psi, ZONE)
    track = [p]
    for _ in range(n - 1):
        p = project(p, dt, model)
        track.append(p)
    return track


def interleave(*tracks: Sequence[Posit]) -> Tuple[List[Posit], Dict[int, int]]:
    """Merge vessel tracks into one sorted stream; truth maps point id to vessel index."""
    tagged = sorted(
        (p.t, vessel, i, p)
        for vessel, track in enumerate(tracks)
        for i, p in enumerate(track)
    )
    posits, truth = [], {}
    for point_id, (_, vessel, _, p) in enumerate(tagged):
        posits.append(replace(p, source_id=point_id))
        truth[point_id] = vessel
    return posits, truth


def synthetic_stream(
    n_vessels: int = 12,
    days: int = 1,
    seed: int = 0,
    scenario: str = 'mixed'
) -> Tuple[List[Posit], Dict[int, int]]:
    """Preprocessed synthetic posits and their ground-truth labels."""
    records = generate_synthetic(SynthConfig(n_vessels=n_vessels, days=days, seed=seed, scenario=scenario))
    records = preprocess(records, PreprocessConfig(), seed=seed)
    return posits_from_records(records), truth_labels(records)


def random_examples(schema: FeatureSchema, n: int, seed: int = 0) -> TrainingExamples:
    """Random inputs with well-formed slot masks and labels on valid slots."""
    rng = np.random.default_rng(seed)
    inputs = rng.normal(size=(n, schema.input_width)).astype(np.float32)
    masks = np.zeros((n, schema.k + 1), dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        filled = int(rng.integers(0, schema.k + 1))
        masks[i, :filled] = True
        masks[i, -1] = True
        valid = np.flatnonzero(masks[i])
        labels[i] = valid[int(rng.integers(len(valid)))]
    inputs[:, schema.mask_columns()] = masks.astype(np.float32)
    return TrainingExamples(inputs, labels, masks, np.zeros(n, dtype=np.int64))
