"""
Shared-weight UNet view encoder

One parameter set encodes both radiographs. Each level runs two 3x3
conv + relu blocks; the down path halves with 2x2 average pooling, the up
path doubles with nearest upsampling followed by a 3x3 conv, then
concatenates the skip of equal size. A final 1x1 conv maps to the output
channels with no activation.
"""
from typing import List, Union

import numpy as np
import structlog

from src.autodiff import ops
from src.autodiff.module import Conv2d, Module
from src.autodiff.tensor import Tensor
from src.core.config import UNetConfig
from src.core.exceptions import DomainError, ShapeError

logger = structlog.get_logger(__name__)


class ConvBlock(Module):
    """Two 3x3 conv + relu"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv2d(in_channels, out_channels, 3, rng, dtype))
        self.conv2 = self.add_module("conv2", Conv2d(out_channels, out_channels, 3, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


class ViewEncoder(Module):
    def __init__(self, config: UNetConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        channels = list(config.channels)
        self.down: List[ConvBlock] = []
        previous = config.in_channels
        for level, width in enumerate(channels):
            self.down.append(self.add_module(f"down{level}", ConvBlock(previous, width, rng, dtype)))
            previous = width
        self.up_convs: List[Conv2d] = []
        self.up_blocks: List[ConvBlock] = []
        for level in reversed(range(config.depth - 1)):
            self.up_convs.append(self.add_module(f"upconv{level}", Conv2d(channels[level + 1], channels[level], 3, rng, dtype)))
            self.up_blocks.append(self.add_module(f"up{level}", ConvBlock(2 * channels[level], channels[level], rng, dtype)))
        self.head = self.add_module("head", Conv2d(channels[0], config.output_channels, 1, rng, dtype))

    @property
    def output_channels(self) -> int:
        return self.config.output_channels

    def _as_input(self, image: Union[np.ndarray, Tensor]) -> Tensor:
        if isinstance(image, Tensor):
            x = image
        else:
            array = np.asarray(image)
            if array.ndim == 2:
                array = array[None]
            x = Tensor(array, dtype=self.head.weight.dtype)
        if x.data.ndim != 3 or x.shape[0] != self.config.in_channels:
            raise ShapeError(f"encoder expects ({self.config.in_channels}, H, W), got {x.shape}")
        factor = 1 << (self.config.depth - 1)
        if x.shape[1] % factor or x.shape[2] % factor:
            raise ShapeError(f"image {x.shape[1]}x{x.shape[2]} not divisible by {factor} (depth {self.config.depth})")
        if x.data.size and (x.data.min() < 0.0 or x.data.max() > 1.0):
            raise DomainError("encoder input must be normalized to [0, 1]")
        return x

    def encode(self, image: Union[np.ndarray, Tensor]) -> Tensor:
        """(1, H, W) radiograph -> (C, H, W) feature map"""
        x = self._as_input(image)
        skips = []
        for level, block in enumerate(self.down):
            x = block(x)
            if level < self.config.depth - 1:
                skips.append(x)
                x = ops.avg_pool2(x)
        for up_conv, up_block in zip(self.up_convs, self.up_blocks):
            x = ops.relu(up_conv(ops.upsample_nearest(x)))
            x = up_block(ops.channel_concat([x, skips.pop()]))
        return self.head(x)

    __call__ = encode
