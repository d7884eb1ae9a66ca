"""
Small learners with analytic gradients.

Every learner keeps its parameters as one flat vector (``ModelParams``) so
that the federated pipeline can quantize, transmit and average updates
without knowing the architecture.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from core.errors import InvalidSpecError, ShapeError
from learnkit.datasets import Dataset

GradientVector = NDArray[np.float64]

LINEAR = 'linear'
LOGISTIC = 'logistic'
MLP = 'mlp'


@dataclass(frozen=True)
class Architecture:
    kind: str
    layer_sizes: tuple[int, ...]
    activation: str = 'identity'

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def dimension(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out
                   in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


@dataclass(frozen=True)
class ModelParams:
    vector: np.ndarray
    architecture: Architecture

    def __post_init__(self):
        if self.vector.shape != (self.architecture.dimension,):
            raise ShapeError(
                f'Parameter vector of shape {self.vector.shape} does not '
                f'match dimension {self.architecture.dimension}.')

    @property
    def dimension(self) -> int:
        return self.architecture.dimension

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.vector)))

    def replace(self, vector: np.ndarray) -> 'ModelParams':
        return ModelParams(vector=vector, architecture=self.architecture)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    encoded = np.zeros((len(labels), n_classes))
    encoded[np.arange(len(labels)), labels] = 1.0
    return encoded


class Learner(ABC):
    """A differentiable model over flat parameter vectors."""

    def __init__(self, architecture: Architecture):
        self.architecture = architecture

    @property
    def dimension(self) -> int:
        return self.architecture.dimension

    def _check(self, params: ModelParams, batch: Dataset) -> None:
        if params.architecture != self.architecture:
            raise ShapeError('Parameters belong to a different architecture.')
        if batch.n_features != self.architecture.n_inputs:
            raise ShapeError(
                f'Batch has {batch.n_features} features, model expects '
                f'{self.architecture.n_inputs}.')

    def init_params(self, rng: Optional[np.random.Generator] = None) -> ModelParams:
        return ModelParams(np.zeros(self.dimension), self.architecture)

    def loss(self, params: ModelParams, batch: Dataset) -> float:
        self._check(params, batch)
        return self._loss(params.vector, batch)

    def gradient(self, params: ModelParams, batch: Dataset) -> GradientVector:
        self._check(params, batch)
        return self._gradient(params.vector, batch)

    @abstractmethod
    def _loss(self, vector: np.ndarray, batch: Dataset) -> float:
        ...

    @abstractmethod
    def _gradient(self, vector: np.ndarray, batch: Dataset) -> GradientVector:
        ...

    @abstractmethod
    def predict(self, params: ModelParams, features: np.ndarray) -> np.ndarray:
        ...


class LinearRegression(Learner):
    """Half mean squared error of an affine predictor."""

    def __init__(self, n_features: int):
        super().__init__(Architecture(LINEAR, (n_features, 1)))

    def _split(self, vector):
        return vector[:-1], vector[-1]

    def _loss(self, vector, batch):
        weights, bias = self._split(vector)
        residual = batch.features @ weights + bias - batch.labels
        return float(0.5 * np.mean(residual ** 2))

    def _gradient(self, vector, batch):
        weights, bias = self._split(vector)
        residual = batch.features @ weights + bias - batch.labels
        n = batch.n_samples
        return np.concatenate([batch.features.T @ residual / n,
                               [residual.sum() / n]])

    def predict(self, params, features):
        weights, bias = self._split(params.vector)
        return features @ weights + bias


class LogisticRegression(Learner):
    """Multinomial logistic regression (softmax cross-entropy)."""

    def __init__(self, n_features: int, n_classes: int):
        super().__init__(Architecture(LOGISTIC, (n_features, n_classes),
                                      activation='softmax'))
        self.n_features = n_features
        self.n_classes = n_classes

    def _split(self, vector):
        n_weights = self.n_features * self.n_classes
        weights = vector[:n_weights].reshape(self.n_features, self.n_classes)
        return weights, vector[n_weights:]

    def _log_probs(self, vector, features):
        weights, bias = self._split(vector)
        return _log_softmax(features @ weights + bias)

    def _loss(self, vector, batch):
        log_probs = self._log_probs(vector, batch.features)
        return float(-log_probs[np.arange(batch.n_samples), batch.labels].mean())

    def _gradient(self, vector, batch):
        probs = np.exp(self._log_probs(vector, batch.features))
        delta = (probs - _one_hot(batch.labels, self.n_classes)) / batch.n_samples
        return np.concatenate([(batch.features.T @ delta).ravel(),
                               delta.sum(axis=0)])

    def predict(self, params, features):
        return np.argmax(self._log_probs(params.vector, features), axis=1)


class TanhMLP(Learner):
    """One tanh hidden layer followed by a softmax output layer."""

    def __init__(self, n_features: int, n_hidden: int, n_classes: int):
        super().__init__(Architecture(MLP, (n_features, n_hidden, n_classes),
                                      activation='tanh'))
        self.n_features = n_features
        self.n_hidden = n_hidden
        self.n_classes = n_classes

    def init_params(self, rng=None):
        if rng is None:
            raise InvalidSpecError('The MLP needs a generator to break symmetry.')
        w1 = rng.standard_normal((self.n_features, self.n_hidden))
        w1 /= np.sqrt(self.n_features)
        w2 = rng.standard_normal((self.n_hidden, self.n_classes))
        w2 /= np.sqrt(self.n_hidden)
        vector = np.concatenate([w1.ravel(), np.zeros(self.n_hidden),
                                 w2.ravel(), np.zeros(self.n_classes)])
        return ModelParams(vector, self.architecture)

    def _split(self, vector):
        f, h, c = self.n_features, self.n_hidden, self.n_classes
        w1 = vector[:f * h].reshape(f, h)
        b1 = vector[f * h:f * h + h]
        offset = f * h + h
        w2 = vector[offset:offset + h * c].reshape(h, c)
        b2 = vector[offset + h * c:]
        return w1, b1, w2, b2

    def _forward(self, vector, features):
        w1, b1, w2, b2 = self._split(vector)
        hidden = np.tanh(features @ w1 + b1)
        return hidden, _log_softmax(hidden @ w2 + b2)

    def _loss(self, vector, batch):
        _, log_probs = self._forward(vector, batch.features)
        return float(-log_probs[np.arange(batch.n_samples), batch.labels].mean())

    def _gradient(self, vector, batch):
        _, _, w2, _ = self._split(vector)
        hidden, log_probs = self._forward(vector, batch.features)
        delta_out = (np.exp(log_probs) - _one_hot(batch.labels, self.n_classes))
        delta_out /= batch.n_samples
        delta_hidden = (delta_out @ w2.T) * (1.0 - hidden ** 2)
        return np.concatenate([
            (batch.features.T @ delta_hidden).ravel(),
            delta_hidden.sum(axis=0),
            (hidden.T @ delta_out).ravel(),
            delta_out.sum(axis=0),
        ])

    def predict(self, params, features):
        _, log_probs = self._forward(params.vector, features)
        return np.argmax(log_probs, axis=1)


def build_model(kind: str, n_features: int, n_classes: Optional[int] = None,
                n_hidden: int = 16) -> Learner:
    if kind == LINEAR:
        return LinearRegression(n_features)
    if n_classes is None:
        raise InvalidSpecError(f'A {kind} learner needs a class count.')
    if kind == LOGISTIC:
        return LogisticRegression(n_features, n_classes)
    if kind == MLP:
        return TanhMLP(n_features, n_hidden, n_classes)
    raise InvalidSpecError(f'Unknown learner kind {kind!r}.')


def loss(model: Learner, params: ModelParams, batch: Dataset) -> float:
    """Mean per-sample loss of ``params`` on ``batch``."""
    return model.loss(params, batch)


def gradient(model: Learner, params: ModelParams, batch: Dataset,
             rng: Optional[np.random.Generator] = None,
             batch_size: Optional[int] = None) -> GradientVector:
    """
    Exact gradient of ``loss`` on ``batch``.

    Given ``rng`` and a ``batch_size`` below the batch length, the gradient
    is taken on that many rows drawn without replacement instead, an
    unbiased estimate of the full-batch gradient.
    """
    if rng is not None and batch_size is not None and batch_size < batch.n_samples:
        if batch_size < 1:
            raise InvalidSpecError(f'Batch size must be positive, got {batch_size}.')
        batch = batch.subset(rng.choice(batch.n_samples, batch_size, replace=False))
    return model.gradient(params, batch)


def stochastic_gradient(model: Learner, params: ModelParams, dataset: Dataset,
                        batch_indices: np.ndarray) -> GradientVector:
    return model.gradient(params, dataset.subset(batch_indices))


def sgd_step(params: ModelParams, g: GradientVector, eta: float) -> ModelParams:
    if eta <= 0:
        raise InvalidSpecError(f'Learning rate must be positive, got {eta}.')
    if g.shape != params.vector.shape:
        raise ShapeError(
            f'Gradient of shape {g.shape} does not match parameters '
            f'{params.vector.shape}.')
    return params.replace(params.vector - eta * g)


def accuracy(model: Learner, params: ModelParams, ds: Dataset) -> float:
    if not ds.is_classification:
        raise InvalidSpecError('Accuracy is defined for classifiers only.')
    return float(np.mean(model.predict(params, ds.features) == ds.labels))
