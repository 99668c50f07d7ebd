"""Small convolutional backbone producing a 4-level feature pyramid.

A stem block (conv/ReLU/pool) takes the image to stride 2, then four
conv blocks continue to strides 4, 8, 16 and 32.  Each block's output is
passed through a 1x1 lateral conv to a uniform channel width; the four
lateral outputs form the pyramid shared by the RPN and every ROI head.
The lateral convs are the separately-freezable "fpn" component.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, MaxPool2x2, ReLU

PYRAMID_STRIDES = (4, 8, 16, 32)


class Backbone:
    """Stem plus four conv blocks; ``forward`` returns the block taps."""

    def __init__(self, rng_for, in_channels=3, stem_channels=16,
                 block_channels=(16, 32, 32, 32)):
        self.block_channels = tuple(block_channels)
        self.stem = Conv2d("stem", in_channels, stem_channels, 3, 1, rng_for("stem"))
        self.blocks = []
        prev = stem_channels
        for k, ch in enumerate(self.block_channels, start=1):
            self.blocks.append(Conv2d(f"block{k}", prev, ch, 3, 1, rng_for(f"block{k}")))
            prev = ch
        self.relu = ReLU()
        self.pool = MaxPool2x2()

    def forward(self, images: np.ndarray):
        """images (N, 3, H, W) with H, W multiples of 32 -> list of 4 taps."""
        n, c, h, w = images.shape
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"image size {h}x{w} must be a multiple of 32")
        caches = []
        x, c_stem = self.stem.forward(images)
        x, r_stem = self.relu.forward(x)
        x, p_stem = self.pool.forward(x)
        caches.append((c_stem, r_stem, p_stem))
        taps = []
        for block in self.blocks:
            x, c_b = block.forward(x)
            x, r_b = self.relu.forward(x)
            x, p_b = self.pool.forward(x)
            caches.append((c_b, r_b, p_b))
            taps.append(x)
        return taps, caches

    def backward(self, caches, grad_taps):
        """Backprop the 4 tap gradients through blocks and stem."""
        grads: dict = {}
        grad_x = None
        for idx in range(len(self.blocks) - 1, -1, -1):
            g = grad_taps[idx] if grad_x is None else grad_taps[idx] + grad_x
            c_b, r_b, p_b = caches[idx + 1]
            g, _ = self.pool.backward(p_b, g)
            g, _ = self.relu.backward(r_b, g)
            g, block_grads = self.blocks[idx].backward(c_b, g)
            for pname, arr in block_grads.items():
                grads[f"backbone/{self.blocks[idx].name}/{pname}"] = arr
            grad_x = g
        c_stem, r_stem, p_stem = caches[0]
        g, _ = self.pool.backward(p_stem, grad_x)
        g, _ = self.relu.backward(r_stem, g)
        _, stem_grads = self.stem.backward(c_stem, g)
        for pname, arr in stem_grads.items():
            grads[f"backbone/stem/{pname}"] = arr
        return grads

    def param_paths(self):
        out = {}
        for pname, arr in self.stem.params.items():
            out[f"backbone/stem/{pname}"] = arr
        for block in self.blocks:
            for pname, arr in block.params.items():
                out[f"backbone/{block.name}/{pname}"] = arr
        return out

    def no_decay_paths(self):
        paths = {f"backbone/stem/{p}" for p in self.stem.no_decay}
        for block in self.blocks:
            paths |= {f"backbone/{block.name}/{p}" for p in block.no_decay}
        return paths


class Laterals:
    """1x1 convs mapping each backbone tap to the shared pyramid width."""

    def __init__(self, rng_for, block_channels, out_channels):
        self.out_channels = out_channels
        self.convs = [
            Conv2d(f"lateral{l}", ch, out_channels, 1, 0, rng_for(f"lateral{l}"))
            for l, ch in enumerate(block_channels)
        ]

    def forward(self, taps):
        pyramid = []
        caches = []
        for conv, tap in zip(self.convs, taps):
            y, cache = conv.forward(tap)
            pyramid.append(y)
            caches.append(cache)
        return pyramid, caches

    def backward(self, caches, grad_pyramid, need_input_grad: bool):
        grads: dict = {}
        grad_taps = []
        for conv, cache, g in zip(self.convs, caches, grad_pyramid):
            grad_tap, conv_grads = conv.backward(cache, g)
            for pname, arr in conv_grads.items():
                grads[f"fpn/{conv.name}/{pname}"] = arr
            grad_taps.append(grad_tap if need_input_grad else None)
        return grads, grad_taps

    def param_paths(self):
        out = {}
        for conv in self.convs:
            for pname, arr in conv.params.items():
                out[f"fpn/{conv.name}/{pname}"] = arr
        return out

    def no_decay_paths(self):
        paths = set()
        for conv in self.convs:
            paths |= {f"fpn/{conv.name}/{p}" for p in conv.no_decay}
        return paths
