"""
Network building blocks: convolution, batch norm, Conv-block, the
subspace attention fusion module and the channel attention module.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from restoration import autograd as ag
from restoration.autograd import NnTensor, Parameter

MGS_EPS = 1e-8


class Module:
    """Minimal container: parameters and child modules are found by attribute."""

    training = True

    def __call__(self, *args, **kwargs) -> NnTensor:
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs) -> NnTensor:
        raise NotImplementedError

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, bias: bool = True):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), (out_ch, in_ch, kernel, kernel)), "weight")
        self.bias = Parameter(np.zeros(out_ch), "bias") if bias else None

    def forward(self, x: NnTensor) -> NnTensor:
        return ag.conv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.state: Dict[str, object] = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        yield prefix + "running_mean", self.state["running_mean"]
        yield prefix + "running_var", self.state["running_var"]

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        self.state[name] = np.asarray(value, dtype=np.float64)

    def forward(self, x: NnTensor) -> NnTensor:
        self.state["mode"] = "train" if self.training else "eval"
        return ag.batchnorm2d(x, self.gamma, self.beta, self.state)


class ConvBlock(Module):
    """Conv-block(L): (conv L x L, batch norm, ReLU) twice."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_ch, out_ch, kernel, rng)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, kernel, rng)
        self.bn2 = BatchNorm2d(out_ch)

    def forward(self, x: NnTensor) -> NnTensor:
        x = ag.relu(self.bn1(self.conv1(x)))
        return ag.relu(self.bn2(self.conv2(x)))

    @staticmethod
    def count(in_ch: int, out_ch: int, kernel: int) -> int:
        return kernel * kernel * (in_ch * out_ch + out_ch * out_ch) + 6 * out_ch


def gram_schmidt(v: NnTensor, eps: float = MGS_EPS) -> NnTensor:
    """Modified Gram-Schmidt over the rows of (batch, k, n); returns (batch, k, n)."""
    basis: List[NnTensor] = []
    for i in range(v.shape[1]):
        u = v[:, i : i + 1, :]
        for q in basis:
            u = u - (u * q).sum(axis=2, keepdims=True) * q
        norm = ag.sqrt((u * u).sum(axis=2, keepdims=True) + eps)
        basis.append(u / norm)
    return ag.concat(basis, axis=1)


class SAFM(Module):
    """Subspace attention fusion of amplitude, phase and upper-scale features.

    Amplitude and phase are embedded by 1x1 convs; a 1x1 conv over both
    embeddings yields k basis maps, orthonormalised along the flattened
    spatial axis. Every source is projected onto the basis, the three
    coefficient sets are mixed by a per-channel softmax, and the mixture is
    mapped back through the basis. A residual 1x1 conv of the raw inputs is
    added. All convs are bias-free, so zero inputs give a zero output.
    """

    def __init__(self, in_amp: int, in_phase: int, in_upper: int, channels: int, subspace_dim: int, rng: np.random.Generator):
        if channels < subspace_dim:
            raise ValueError(f"channels ({channels}) must be >= subspace_dim ({subspace_dim})")
        self.channels = channels
        self.embed_amp = Conv2d(in_amp, channels, 1, rng, bias=False)
        self.embed_phase = Conv2d(in_phase, channels, 1, rng, bias=False)
        self.embed_upper = Conv2d(in_upper, channels, 1, rng, bias=False)
        self.basis = Conv2d(2 * channels, subspace_dim, 1, rng, bias=False)
        self.attention = Parameter(rng.normal(0.0, 1.0 / math.sqrt(subspace_dim), (subspace_dim, 1)), "attention")
        self.residual = Conv2d(in_amp + in_phase + in_upper, channels, 1, rng, bias=False)
        self.last_basis: np.ndarray = np.zeros(0)

    def forward(self, amp: NnTensor, phase: NnTensor, upper: NnTensor) -> NnTensor:
        spatial = amp.shape[2:]
        if phase.shape[2:] != spatial or upper.shape[2:] != spatial:
            raise ValueError(f"SAFM inputs disagree spatially: {amp.shape}, {phase.shape}, {upper.shape}")
        batch = amp.shape[0]
        n = spatial[0] * spatial[1]

        ea = self.embed_amp(amp)
        ep = self.embed_phase(phase)
        eu = self.embed_upper(upper)
        v = self.basis(ag.concat([ea, ep], axis=1)).reshape(batch, -1, n)
        q = gram_schmidt(v)
        self.last_basis = q.data

        q_t = q.transpose(0, 2, 1)
        coeffs = [e.reshape(batch, self.channels, n) @ q_t for e in (ea, ep, eu)]  # batch, c, k
        logits = ag.concat([c @ self.attention for c in coeffs], axis=2)  # batch, c, 3
        weights = ag.softmax(logits, axis=2)
        mixed = coeffs[0] * weights[:, :, 0:1]
        for s in (1, 2):
            mixed = mixed + coeffs[s] * weights[:, :, s : s + 1]
        fused = (mixed @ q).reshape(batch, self.channels, spatial[0], spatial[1])
        return fused + self.residual(ag.concat([amp, phase, upper], axis=1))

    @staticmethod
    def count(in_upper: int, channels: int, subspace_dim: int, in_amp: int = 3, in_phase: int = 3) -> int:
        embeds = (in_amp + in_phase + in_upper) * channels
        return 2 * embeds + 2 * channels * subspace_dim + subspace_dim


class CAM(Module):
    """Channel attention: squeeze, bottleneck 1x1 convs, sigmoid gate."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if channels % reduction:
            raise ValueError(f"{channels} channels are not divisible by reduction {reduction}")
        self.squeeze = Conv2d(channels, channels // reduction, 1, rng)
        self.excite = Conv2d(channels // reduction, channels, 1, rng)
        self.last_gates: np.ndarray = np.zeros(0)

    def gates(self, x: NnTensor) -> NnTensor:
        pooled = x.mean(axis=(2, 3), keepdims=True)
        return ag.sigmoid(self.excite(ag.relu(self.squeeze(pooled))))

    def forward(self, x: NnTensor) -> NnTensor:
        g = self.gates(x)
        self.last_gates = g.data
        return x * g

    @staticmethod
    def count(channels: int, reduction: int) -> int:
        hidden = channels // reduction
        return 2 * channels * hidden + hidden + channels
