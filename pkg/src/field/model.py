"""
The full image-conditioned field: encoder + hash tables + decoder

Parameters live under ``encoder.*``, ``field.hash.*`` and ``field.decoder.*``.
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from src.autodiff.checkpoint import load_checkpoint, save_checkpoint
from src.autodiff.module import Module, Parameter
from src.autodiff.tensor import DTYPES, Tensor
from src.core.config import ExperimentConfig, build_experiment_config, flatten_config
from src.core.exceptions import CheckpointError, ConfigError
from src.encoder.unet import ViewEncoder
from src.field.decoder import BaseDecoder, DecodedPoints, make_decoder
from src.field.hash_encoding import HashEncoder
from src.field.sampler import sample_point_features
from src.projector.geometry import BiplanarGeometry

logger = structlog.get_logger(__name__)

PARAMETER_GROUPS = ("encoder", "hash", "decoder")
_GROUP_PREFIX = {"encoder": "encoder.", "hash": "field.hash.", "decoder": "field.decoder."}


class NeuralField(Module):
    def __init__(self, config: ExperimentConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.channels = config.encoder.output_channels
        self.hash = self.add_module("hash", HashEncoder(config.hash, rng, dtype))
        in_features = 2 * self.channels + self.hash.output_dim
        self.decoder: BaseDecoder = self.add_module("decoder", make_decoder(config.decoder, in_features, rng, dtype))

    @property
    def in_features(self) -> int:
        return self.decoder.in_features

    def decode_points(self, points: np.ndarray, f_pa: Tensor, f_lat: Tensor, geometry: BiplanarGeometry) -> DecodedPoints:
        features = sample_point_features(points, f_pa, f_lat, geometry, self.hash, self.channels)
        return self.decoder(features)


class SpiderModel(Module):
    """Shared view encoder feeding the implicit field"""

    def __init__(self, config: ExperimentConfig, geometry: BiplanarGeometry, precision: Optional[str] = None):
        super().__init__()
        self.config = config
        self.geometry = geometry
        self.precision = precision or config.train.precision
        dtype = DTYPES[self.precision]
        rng = np.random.default_rng(config.train.seed)
        self.encoder = self.add_module("encoder", ViewEncoder(config.encoder, rng, dtype))
        self.field = self.add_module("field", NeuralField(config, rng, dtype))
        self.logger = logger.bind(topology=config.decoder.topology, precision=self.precision)
        self.logger.debug("model_built", parameters=self.num_parameters(), in_features=self.field.in_features)

    @property
    def num_classes(self) -> int:
        return self.config.decoder.num_classes

    def encode_views(self, drr_pa: np.ndarray, drr_lat: np.ndarray) -> Tuple[Tensor, Tensor]:
        return self.encoder(drr_pa), self.encoder(drr_lat)

    def forward_points(self, drr_pa: np.ndarray, drr_lat: np.ndarray, points: np.ndarray) -> DecodedPoints:
        f_pa, f_lat = self.encode_views(drr_pa, drr_lat)
        return self.field.decode_points(points, f_pa, f_lat, self.geometry)

    def parameter_groups(self) -> Dict[str, List[Parameter]]:
        groups: Dict[str, List[Parameter]] = {g: [] for g in PARAMETER_GROUPS}
        for name, param in self.named_parameters():
            for group, prefix in _GROUP_PREFIX.items():
                if name.startswith(prefix):
                    groups[group].append(param)
        return groups

    def meta(self) -> Dict:
        return {
            "config": flatten_config(self.config),
            "geometry": self.geometry.model_dump(mode="json"),
        }

    def save(self, path: Path | str, extra: Optional[Dict] = None) -> None:
        meta = self.meta()
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: Path | str, precision: Optional[str] = None) -> "SpiderModel":
        state, meta = load_checkpoint(path)
        if "config" not in meta or "geometry" not in meta:
            raise CheckpointError(f"{path}: checkpoint meta lacks config/geometry")
        config = build_experiment_config(meta["config"])
        geometry = BiplanarGeometry.model_validate(meta["geometry"])
        model = cls(config, geometry, precision=precision)
        model.load_state_dict(state)
        return model

    def check_geometry(self, geometry: BiplanarGeometry) -> None:
        if geometry != self.geometry:
            raise ConfigError("input geometry differs from the geometry the model was trained with")
