"""
Toy training loop, inference and the parameter archive for the restoration
network.

A parameter archive is a directory holding ``manifest.yml`` (config plus an
ordered name -> file index) and one THZT tensor per parameter or batch-norm
buffer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from tqdm import tqdm

from imaging.spectral import FeatureStack
from lib import runtime, tensorio
from lib.tensorio import Image2D
from restoration import autograd as ag
from restoration.autograd import NnTensor, Parameter
from restoration.layers import BatchNorm2d, Module
from restoration.sarnet import N_BRANCHES, Sarnet, SarnetConfig, stack_input

LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yml"
ARCHIVE_VERSION = 1

Sample = Tuple[FeatureStack, Image2D]


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0

    def step(self) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for p in self.params:
            if p.grad is None:
                continue
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * p.grad
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * p.grad ** 2
            m_hat = p.m / correction1
            v_hat = p.v / correction2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 4

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


class TrainResult(NamedTuple):
    net: Sarnet
    losses: List[float]


def _arrays(dataset: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ValueError("training needs at least one sample")
    x = stack_input([stack for stack, _ in dataset])
    y = np.stack([truth.data for _, truth in dataset])[:, None, :, :].astype(np.float64)
    if x.shape[2:] != y.shape[2:]:
        raise ValueError(f"feature stacks {x.shape[2:]} and ground truths {y.shape[2:]} differ in size")
    factor = 2 ** (N_BRANCHES - 1)
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ValueError(f"image height and width must be divisible by {factor}, got {x.shape[2]}x{x.shape[3]}")
    return x, y


def train(
    dataset: Sequence[Sample],
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    cfg: SarnetConfig = SarnetConfig(),
    batch_size: int = 4,
    net: Optional[Sarnet] = None,
) -> TrainResult:
    """Fit a network to (feature stack, ground truth) pairs with Adam on MSE.

    Batches are drawn from a seeded shuffle each epoch; the returned history
    holds the sample-weighted mean batch loss of every epoch.
    """
    TrainConfig(epochs, lr, seed, batch_size)
    x, y = _arrays(dataset)
    if net is None:
        net = Sarnet(cfg, seed=seed)
    net.train()
    optimizer = Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    n = x.shape[0]

    losses: List[float] = []
    for epoch in tqdm(range(epochs), desc="train", disable=not runtime.progress_enabled(), leave=False):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            net.zero_grad()
            loss = ag.mse_loss(net(NnTensor(x[idx])), y[idx])
            loss.backward()
            optimizer.step()
            total += float(loss.data) * idx.size
        losses.append(total / n)
        if epoch == 0 or (epoch + 1) % max(1, epochs // 10) == 0:
            LOGGER.info("Epoch %d/%d: loss %.6g", epoch + 1, epochs, losses[-1])
    return TrainResult(net, losses)


def infer(net: Sarnet, stacks: Sequence[FeatureStack], pitch_mm: float = 1.0, batch_size: int = 4) -> List[Image2D]:
    """Restored images for every stack, batch norm in eval mode."""
    was_training = net.training
    net.eval()
    outputs: List[Image2D] = []
    try:
        for start in range(0, len(stacks), batch_size):
            out = net(NnTensor(stack_input(stacks[start : start + batch_size])))
            outputs.extend(Image2D(img[0], pitch_mm) for img in out.data)
    finally:
        net.train(was_training)
    return outputs


def evaluate_loss(net: Sarnet, dataset: Sequence[Sample]) -> float:
    x, y = _arrays(dataset)
    was_training = net.training
    net.eval()
    try:
        return float(ag.mse_loss(net(NnTensor(x)), y).data)
    finally:
        net.train(was_training)


# ---------------------------------------------------------------------------
# Parameter archive
# ---------------------------------------------------------------------------


def _batchnorms(net: Module, prefix: str = "") -> Iterable[Tuple[str, BatchNorm2d]]:
    for name, child in net.children():
        if isinstance(child, BatchNorm2d):
            yield prefix + name, child
        else:
            yield from _batchnorms(child, f"{prefix}{name}.")


def _file_name(name: str) -> str:
    return name.replace(".", "_") + ".thzt"


def save_parameters(net: Sarnet, directory: Union[str, Path]) -> Path:
    """Write every parameter and batch-norm buffer plus the manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, p in net.named_parameters():
        tensorio.write_thzt(p.data, root / _file_name(name))
        entries.append({"name": name, "file": _file_name(name), "shape": list(p.shape), "kind": "parameter"})
    for name, buf in net.named_buffers():
        tensorio.write_thzt(buf, root / _file_name(name))
        entries.append({"name": name, "file": _file_name(name), "shape": list(buf.shape), "kind": "buffer"})

    manifest = {"version": ARCHIVE_VERSION, "config": net.cfg.to_dict(), "tensors": entries}
    with (root / MANIFEST_NAME).open("w", encoding="utf-8") as handle:
        yaml.safe_dump(manifest, handle, sort_keys=False)
    LOGGER.info("Saved %d tensors (%d parameters) to %s", len(entries), net.parameter_count(), root)
    return root


def load_parameters(directory: Union[str, Path]) -> Sarnet:
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"{root} has no {MANIFEST_NAME}")
    with manifest_path.open("r", encoding="utf-8") as handle:
        manifest = yaml.safe_load(handle) or {}
    if manifest.get("version") != ARCHIVE_VERSION:
        raise tensorio.ThztFormatError(f"{manifest_path}: unsupported archive version {manifest.get('version')!r}")

    net = Sarnet(SarnetConfig.from_dict(manifest.get("config", {})))
    params = dict(net.named_parameters())
    norms = dict(_batchnorms(net))
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        data = tensorio.read_thzt(root / entry["file"]).astype(np.float64)
        if entry.get("kind") == "buffer":
            owner, _, buffer_name = name.rpartition(".")
            if owner not in norms:
                raise tensorio.ThztFormatError(f"{manifest_path}: unknown buffer {name!r}")
            norms[owner].load_buffer(buffer_name, data)
            continue
        if name not in params:
            raise tensorio.ThztFormatError(f"{manifest_path}: unknown parameter {name!r}")
        if params[name].shape != data.shape:
            raise tensorio.ThztFormatError(f"{manifest_path}: {name} has shape {data.shape}, expected {params[name].shape}")
        params[name].data = data
    LOGGER.info("Loaded %d tensors from %s", len(manifest.get("tensors", [])), root)
    return net

