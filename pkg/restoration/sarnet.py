"""
Five-branch subspace-attention restoration network.

Branch 1 sees the Time-max channel at full resolution; branches 2 to 5 each
fuse one ascending-frequency triplet of water-band amplitude and phase
images with the downsampled features of the branch above. A decoder
upsamples, concatenates the skip features, applies channel attention and a
Conv-block per scale; a 1x1 conv plus sigmoid emits the restored image.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from imaging.spectral import N_BANDS, FeatureStack
from lib.tensorio import Image2D
from restoration import autograd as ag
from restoration.autograd import NnTensor
from restoration.layers import CAM, SAFM, Conv2d, ConvBlock, Module

LOGGER = logging.getLogger(__name__)

N_BRANCHES = 5
BAND_TRIPLET = 3
INPUT_CHANNELS = 1 + 2 * N_BANDS


@dataclass(frozen=True)
class SarnetConfig:
    base_channels: int = 16
    subspace_dim: int = 4
    block_kernel: int = 1
    stem_kernel: int = 3
    cam_reduction: int = 4
    max_channels: int = 64

    def __post_init__(self) -> None:
        if self.base_channels < self.subspace_dim:
            raise ValueError("base_channels must be >= subspace_dim")
        if self.block_kernel % 2 == 0 or self.stem_kernel % 2 == 0:
            raise ValueError("conv kernels must be odd")
        if self.subspace_dim < 1 or self.cam_reduction < 1:
            raise ValueError("subspace_dim and cam_reduction must be >= 1")
        for s in range(1, N_BRANCHES):
            total = self.width(s) + self.width(s + 1)
            if total % self.cam_reduction:
                raise ValueError(f"decoder width {total} is not divisible by cam_reduction {self.cam_reduction}")

    def width(self, branch: int) -> int:
        """Channel width of branch 1..5."""
        return min(self.base_channels * 2 ** (branch - 1), self.max_channels)

    @property
    def widths(self) -> List[int]:
        return [self.width(s) for s in range(1, N_BRANCHES + 1)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SarnetConfig":
        known = {k: raw[k] for k in cls.__dataclass_fields__ if k in raw}
        return cls(**known)


def parameter_count(cfg: SarnetConfig) -> int:
    """Closed-form trainable parameter count (BN affine included, buffers not)."""
    c = cfg.widths
    total = ConvBlock.count(1, c[0], cfg.stem_kernel)
    for s in range(1, N_BRANCHES):
        total += SAFM.count(c[s - 1], c[s], cfg.subspace_dim)
        total += ConvBlock.count(c[s], c[s], cfg.block_kernel)
    for s in range(N_BRANCHES - 2, -1, -1):
        merged = c[s + 1] + c[s]
        total += CAM.count(merged, cfg.cam_reduction)
        total += ConvBlock.count(merged, c[s], cfg.block_kernel)
    return total + c[0] + 1


def band_slices(branch: int) -> Tuple[slice, slice]:
    """Amplitude and phase channel slices of branch 2..5 within the 24 band channels."""
    start = BAND_TRIPLET * (branch - 2)
    return slice(start, start + BAND_TRIPLET), slice(N_BANDS + start, N_BANDS + start + BAND_TRIPLET)


class Sarnet(Module):
    def __init__(self, cfg: SarnetConfig = SarnetConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.widths
        self.stem = ConvBlock(1, c[0], cfg.stem_kernel, rng)
        self.fusions = [SAFM(BAND_TRIPLET, BAND_TRIPLET, c[s - 1], c[s], cfg.subspace_dim, rng) for s in range(1, N_BRANCHES)]
        self.encoders = [ConvBlock(c[s], c[s], cfg.block_kernel, rng) for s in range(1, N_BRANCHES)]
        # Decoder lists are indexed by the scale they produce (0 = finest).
        self.attentions = [CAM(c[s + 1] + c[s], cfg.cam_reduction, rng) for s in range(N_BRANCHES - 1)]
        self.decoders = [ConvBlock(c[s + 1] + c[s], c[s], cfg.block_kernel, rng) for s in range(N_BRANCHES - 1)]
        self.head = Conv2d(c[0], 1, 1, rng)

    def forward(self, x: NnTensor) -> NnTensor:
        """(batch, 25, H, W) feature stacks to (batch, 1, H, W) restored images."""
        if x.ndim != 4 or x.shape[1] != INPUT_CHANNELS:
            raise ValueError(f"expected (batch, {INPUT_CHANNELS}, H, W) input, got {x.shape}")
        factor = 2 ** (N_BRANCHES - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ValueError(f"height and width must be divisible by {factor}, got {x.shape[2]}x{x.shape[3]}")

        bands = x[:, 1:, :, :]
        skips: List[NnTensor] = []
        feat = self.stem(x[:, 0:1, :, :])
        skips.append(feat)
        for s in range(1, N_BRANCHES):
            feat = ag.downsample_half(feat)
            bands = ag.downsample_half(bands)
            amp_idx, phase_idx = band_slices(s + 1)
            amp, phase = bands[:, amp_idx], bands[:, phase_idx]
            feat = self.encoders[s - 1](self.fusions[s - 1](amp, phase, feat))
            skips.append(feat)

        out = skips[-1]
        for s in range(N_BRANCHES - 2, -1, -1):
            merged = ag.concat([ag.upsample_double(out), skips[s]], axis=1)
            out = self.decoders[s](self.attentions[s](merged))
        return ag.sigmoid(self.head(out))


def stack_input(stacks: Sequence[FeatureStack], timemax: Sequence[np.ndarray] = ()) -> np.ndarray:
    """(batch, 25, H, W) network input; ``timemax`` optionally overrides channel 0."""
    batch = np.stack([s.channels for s in stacks]).astype(np.float64)
    for i, tm in enumerate(timemax):
        batch[i, 0] = tm
    return batch


def sarnet_forward(timemax: Image2D, bands: FeatureStack, net: Sarnet) -> Image2D:
    """Restore one projection with batch norm in eval mode."""
    was_training = net.training
    net.eval()
    try:
        out = net(NnTensor(stack_input([bands], [timemax.data])))
    finally:
        net.train(was_training)
    return Image2D(out.data[0, 0], timemax.pitch_mm)
