"""Epochs to scaled train/validation/test features, split by trial."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    EpochSet,
    FeatureTensor,
    WindowConfig,
    apply_scale,
    build_features,
    common_average_reference,
    fit_scale_bounds,
    pearson_adjacency,
    stratified_trial_split,
)

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


@dataclass
class Prepared:
    train: FeatureTensor
    val: FeatureTensor
    test: FeatureTensor
    adjacency_init: np.ndarray
    n_classes: int
    n_nodes: int
    train_trials: np.ndarray
    val_trials: np.ndarray
    test_trials: np.ndarray


def prepare(epochs: EpochSet, window: WindowConfig, seed: int) -> Prepared:
    """CAR, trial-level stratified split, windowing, features, min-max scaling.

    Scaling bounds and the Pearson adjacency are fitted on training trials
    only, so nothing from validation or test trials leaks into them.
    """
    car = common_average_reference(epochs)
    rest, test_trials = stratified_trial_split(car.labels, TEST_FRACTION, seed)
    inner_train, inner_val = stratified_trial_split(car.labels[rest], VAL_FRACTION, seed + 1)
    train_trials, val_trials = rest[inner_train], rest[inner_val]

    feats = build_features(car, window)
    parts = []
    for trials in (train_trials, val_trials, test_trials):
        parts.append(feats.subset(np.isin(feats.trial_index, trials)))
    bounds = fit_scale_bounds(parts[0])
    train, val, test = (apply_scale(p, bounds) for p in parts)
    train.x = train.x.astype(np.float32)
    val.x = val.x.astype(np.float32)
    test.x = test.x.astype(np.float32)
    adjacency = pearson_adjacency(car.subset(train_trials))
    return Prepared(train, val, test, adjacency, epochs.n_classes, epochs.n_channels,
                    train_trials, val_trials, test_trials)
