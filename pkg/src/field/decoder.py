"""
Decoders mapping point features to intensity and class logits

``shared`` is a single MLP emitting 1 + K channels, so appearance and
structure share every hidden unit. ``two_branch`` and ``two_stage`` are the
ablation topologies.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.module import Linear, Module
from src.autodiff.tensor import Tensor
from src.core.config import DecoderConfig
from src.core.exceptions import ConfigError, ShapeError


@dataclass
class DecodedPoints:
    """Tape-level decoder outputs: intensity (N, 1) and logits (N, K)"""

    intensity: Tensor
    logits: Tensor

    def probabilities(self) -> Tensor:
        return ops.softmax(self.logits)


@dataclass
class FieldOutput:
    intensity: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_class: np.ndarray

    @classmethod
    def from_logits(cls, intensity: np.ndarray, logits: np.ndarray) -> "FieldOutput":
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probabilities = e / e.sum(axis=-1, keepdims=True)
        return cls(
            intensity=np.asarray(intensity),
            logits=np.asarray(logits),
            probabilities=probabilities,
            predicted_class=np.argmax(probabilities, axis=-1).astype(np.uint16),
        )


class MLP(Module):
    """``hidden_layers`` relu layers of ``width`` then a linear output layer"""

    def __init__(self, in_features: int, out_features: int, hidden_layers: int, width: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.hidden = []
        previous = in_features
        for i in range(hidden_layers):
            self.hidden.append(self.add_module(f"hidden{i}", Linear(previous, width, rng, dtype)))
            previous = width
        self.output = self.add_module("output", Linear(previous, out_features, rng, dtype))

    def features(self, x: Tensor) -> Tensor:
        for layer in self.hidden:
            x = ops.relu(layer(x))
        return x

    def __call__(self, x: Tensor) -> Tensor:
        return self.output(self.features(x))


class BaseDecoder(Module, ABC):
    """Abstract base class for all decoder topologies"""

    topology: str = ""

    def __init__(self, config: DecoderConfig, in_features: int):
        super().__init__()
        if config.topology != self.topology:
            raise ConfigError(f"{type(self).__name__} cannot serve topology {config.topology!r}")
        self.config = config
        self.in_features = in_features

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def _check_input(self, features: Tensor) -> None:
        if features.data.ndim != 2 or features.shape[1] != self.in_features:
            raise ShapeError(f"decoder expects (N, {self.in_features}) features, got {features.shape}")

    def decode(self, features: Tensor) -> DecodedPoints:
        self._check_input(features)
        return self._decode(features)

    @abstractmethod
    def _decode(self, features: Tensor) -> DecodedPoints:
        """Topology-specific forward pass"""
        pass

    __call__ = decode


class SharedDecoder(BaseDecoder):
    topology = "shared"

    def __init__(self, config: DecoderConfig, in_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(config, in_features)
        self.mlp = self.add_module("mlp", MLP(
            in_features, 1 + config.num_classes, config.hidden_layers, config.width, rng, dtype))

    def _decode(self, features: Tensor) -> DecodedPoints:
        out = self.mlp(features)
        return DecodedPoints(intensity=ops.columns(out, 0, 1), logits=ops.columns(out, 1, 1 + self.num_classes))


class TwoBranchDecoder(BaseDecoder):
    topology = "two_branch"

    def __init__(self, config: DecoderConfig, in_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(config, in_features)
        self.intensity_mlp = self.add_module("intensity", MLP(
            in_features, 1, config.hidden_layers, config.width, rng, dtype))
        self.class_mlp = self.add_module("classes", MLP(
            in_features, config.num_classes, config.hidden_layers, config.width, rng, dtype))

    def _decode(self, features: Tensor) -> DecodedPoints:
        return DecodedPoints(intensity=self.intensity_mlp(features), logits=self.class_mlp(features))


class TwoStageDecoder(BaseDecoder):
    """Classifier reads the intensity MLP's last hidden layer plus its intensity"""

    topology = "two_stage"

    def __init__(self, config: DecoderConfig, in_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(config, in_features)
        self.intensity_mlp = self.add_module("intensity", MLP(
            in_features, 1, config.hidden_layers, config.width, rng, dtype))
        self.class_mlp = self.add_module("classes", MLP(
            config.width + 1, config.num_classes, config.hidden_layers, config.width, rng, dtype))

    def _decode(self, features: Tensor) -> DecodedPoints:
        hidden = self.intensity_mlp.features(features)
        intensity = self.intensity_mlp.output(hidden)
        logits = self.class_mlp(ops.concat([hidden, intensity], axis=1))
        return DecodedPoints(intensity=intensity, logits=logits)


DECODERS = {cls.topology: cls for cls in (SharedDecoder, TwoBranchDecoder, TwoStageDecoder)}


def make_decoder(config: DecoderConfig, in_features: int, rng: np.random.Generator, dtype=np.float32) -> BaseDecoder:
    try:
        decoder_cls = DECODERS[config.topology]
    except KeyError as e:
        raise ConfigError(f"unknown decoder topology {config.topology!r}") from e
    return decoder_cls(config, in_features, rng, dtype)

