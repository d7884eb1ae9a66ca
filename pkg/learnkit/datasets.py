from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import InvalidSpecError, ShapeError


@dataclass(frozen=True)
class Dataset:
    """
    Feature matrix and labels of one dataset (or of one batch of it).

    Attributes
    ----------
    features : np.ndarray
        Real matrix of shape (n_samples, n_features).
    labels : np.ndarray
        Integer class ids for classification, real targets for regression.
    n_classes : Optional[int]
        Declared class count, ``None`` for regression data.
    """
    features: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int] = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(
                f'Features must be 2-D, got shape {self.features.shape}.')
        if len(self.labels) != len(self.features):
            raise ShapeError(
                f'{len(self.features)} feature rows but '
                f'{len(self.labels)} labels.')
        if len(self.features) == 0:
            raise InvalidSpecError('A dataset needs at least one sample.')
        if not np.all(np.isfinite(self.features)):
            raise InvalidSpecError('Feature rows must be finite.')
        if self.n_classes is not None:
            if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
                raise InvalidSpecError(
                    f'Labels must lie in [0, {self.n_classes}).')

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def subset(self, indices: np.ndarray) -> 'Dataset':
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            n_classes=self.n_classes,
        )

    def label_histogram(self) -> np.ndarray:
        if self.n_classes is None:
            raise InvalidSpecError('Regression data has no label histogram.')
        return np.bincount(self.labels, minlength=self.n_classes)


class SyntheticSpec(BaseModel):
    """Mixture-of-Gaussians classification task."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    n_classes: int = Field(default=2, ge=2)
    n_features: int = 10
    n_samples: int = 1000
    separation: float = Field(default=3.0, ge=0.0)
    seed: int = Field(default=0, ge=0)


def _class_means(n_classes: int, n_features: int, separation: float,
                 rng: np.random.Generator) -> np.ndarray:
    # Means sit at distance `separation` from each other whenever an
    # orthonormal set of directions exists.
    directions = rng.standard_normal((n_features, n_classes))
    if n_classes <= n_features:
        directions, _ = np.linalg.qr(directions)
    else:
        directions /= np.linalg.norm(directions, axis=0, keepdims=True)
    return directions.T * (separation / np.sqrt(2.0))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    Draws a mixture-of-Gaussians classification dataset.

    Labels are balanced (cyclic, then shuffled); every class is an isotropic
    unit-variance Gaussian around its own mean. Identical specs give
    byte-identical datasets.

    Parameters
    ----------
    spec : SyntheticSpec
        Class count, feature count, sample count, separation and seed.

    Returns
    -------
    Dataset
        ``n_samples`` rows with labels in ``[0, n_classes)``.

    Raises
    ------
    InvalidSpecError
        If there are no samples or features, or fewer samples than classes.
    """
    if spec.n_samples <= 0 or spec.n_features <= 0:
        raise InvalidSpecError(
            'Synthetic data needs positive sample and feature counts, got '
            f'n_samples={spec.n_samples}, n_features={spec.n_features}.')
    if spec.n_samples < spec.n_classes:
        raise InvalidSpecError(
            f'n_samples={spec.n_samples} is below n_classes={spec.n_classes}.')

    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec.n_classes, spec.n_features, spec.separation, rng)
    labels = np.arange(spec.n_samples) % spec.n_classes
    rng.shuffle(labels)
    noise = rng.standard_normal((spec.n_samples, spec.n_features))
    features = means[labels] + noise

    return Dataset(features=features, labels=labels.astype(np.int64),
                   n_classes=spec.n_classes)


def generate_regression(n_features: int, n_samples: int, noise: float,
                        seed: int) -> Dataset:
    """Linear targets ``x @ w + b + noise`` for the linear learner."""
    if n_samples <= 0 or n_features <= 0:
        raise InvalidSpecError(
            'Regression data needs positive sample and feature counts.')
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(n_features)
    bias = rng.standard_normal()
    features = rng.standard_normal((n_samples, n_features))
    targets = features @ weights + bias + noise * rng.standard_normal(n_samples)
    return Dataset(features=features, labels=targets)


def train_test_split(ds: Dataset, test_fraction: float,
                     seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise InvalidSpecError(
            f'test_fraction must lie in (0, 1), got {test_fraction}.')
    n_test = int(round(ds.n_samples * test_fraction))
    if n_test == 0 or n_test == ds.n_samples:
        raise InvalidSpecError(
            f'Cannot split {ds.n_samples} samples with fraction '
            f'{test_fraction}.')
    order = np.random.default_rng(seed).permutation(ds.n_samples)
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


class BatchSampler:
    """
    Mini-batches drawn without replacement from one client's indices.

    The index order is reshuffled with the generator handed to
    ``start_round``; within a round consecutive batches walk through the
    permutation and a fresh permutation is drawn once it is exhausted.
    """

    def __init__(self, indices: np.ndarray, batch_size: int):
        if batch_size <= 0:
            raise InvalidSpecError(f'batch_size must be positive, got {batch_size}.')
        self.indices = np.asarray(indices)
        self.batch_size = min(batch_size, len(self.indices))
        self._order = self.indices
        self._cursor = 0
        self._rng = None

    def start_round(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._order = rng.permutation(self.indices)
        self._cursor = 0

    def next_batch(self) -> np.ndarray:
        if self._rng is None:
            raise RuntimeError('start_round must be called before sampling.')
        if self._cursor + self.batch_size > len(self._order):
            self._order = self._rng.permutation(self.indices)
            self._cursor = 0
        batch = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return batch
