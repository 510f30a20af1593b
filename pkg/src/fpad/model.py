"""Configurable DenseNet family for binary live/spoof scoring.

Topology: stem conv, alternating dense blocks and transitions, then
BN-ReLU-GlobalAvgPool-Linear-Sigmoid. A dense layer is
BN-ReLU-1x1conv(factor*k)-BN-ReLU-3x3conv(k) with bottleneck enabled, else
BN-ReLU-3x3conv(k); its input is the channel concatenation of everything
produced before it in the block. A transition is BN, 1x1 conv to
floor(compression*C), and 2x2 average pooling.

Checkpoints are a magic string, a JSON header (config, named tensor manifest
with offsets, payload digest), and little-endian float32 payloads in manifest
order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .errors import (
    BuildError,
    CheckpointDigestError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ShapeError,
)

CHECKPOINT_MAGIC = b"FPADNET1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenseNetConfig:
    growth_rate: int = 12
    block_layers: tuple = (6, 12, 24, 16)
    stem_filters: int = 24
    stem_kernel: int = 3
    bottleneck: bool = True
    bottleneck_factor: int = 4
    compression: float = 0.5
    input_channels: int = 3
    input_size: int = 256

    def __post_init__(self):
        if self.growth_rate < 1:
            raise BuildError(f"growth_rate must be >= 1, got {self.growth_rate}")
        if not self.block_layers or any(n < 1 for n in self.block_layers):
            raise BuildError(f"block_layers must be positive, got {self.block_layers}")
        if self.stem_filters < 1:
            raise BuildError(f"stem_filters must be >= 1, got {self.stem_filters}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise BuildError(f"stem_kernel must be odd and positive, got {self.stem_kernel}")
        if not 0.0 < self.compression <= 1.0:
            raise BuildError(f"compression must be in (0, 1], got {self.compression}")
        if self.input_channels not in (1, 3):
            raise BuildError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.bottleneck and self.bottleneck_factor < 1:
            raise BuildError(f"bottleneck_factor must be >= 1, got {self.bottleneck_factor}")
        object.__setattr__(self, "block_layers", tuple(int(n) for n in self.block_layers))
        n_trans = len(self.block_layers) - 1
        divisor = 2**n_trans
        if self.input_size < divisor or self.input_size % divisor:
            raise BuildError(
                f"input_size {self.input_size} must be a positive multiple of {divisor} "
                f"(one 2x2 pool per transition, {n_trans} transitions)"
            )

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_layers"] = list(self.block_layers)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "DenseNetConfig":
        obj = dict(obj)
        obj["block_layers"] = tuple(obj["block_layers"])
        return cls(**obj)


# Desk-scale preset: same code path, minutes not hours.
TINY = DenseNetConfig(block_layers=(2, 2), input_size=32)


def channel_plan(config: DenseNetConfig) -> list[int]:
    """Channel widths at every stage boundary: stem, each block exit, each
    transition exit. C_out = C_in + layers*k inside a block, then
    floor(compression*C) at a transition."""
    plan = [config.stem_filters]
    channels = config.stem_filters
    for i, n_layers in enumerate(config.block_layers):
        channels += n_layers * config.growth_rate
        plan.append(channels)
        if i != len(config.block_layers) - 1:
            channels = int(config.compression * channels)
            plan.append(channels)
    return plan


def conv_layer_count(config: DenseNetConfig) -> int:
    """Counted layers: stem + convs per dense layer + one per transition +
    the classifier."""
    per_layer = 2 if config.bottleneck else 1
    return 1 + per_layer * sum(config.block_layers) + (len(config.block_layers) - 1) + 1


def planned_param_count(config: DenseNetConfig, head_units: int = 1) -> int:
    """Closed-form trainable parameter count (BN gamma/beta included, running
    stats and nothing else excluded); must agree with a per-tensor recount of
    the built model."""
    k = config.growth_rate
    total = config.stem_kernel**2 * config.input_channels * config.stem_filters
    channels = config.stem_filters
    for i, n_layers in enumerate(config.block_layers):
        for j in range(n_layers):
            cin = channels + j * k
            if config.bottleneck:
                mid = config.bottleneck_factor * k
                total += 2 * cin + cin * mid + 2 * mid + 9 * mid * k
            else:
                total += 2 * cin + 9 * cin * k
        channels += n_layers * k
        if i != len(config.block_layers) - 1:
            out = int(config.compression * channels)
            total += 2 * channels + channels * out
            channels = out
    total += 2 * channels
    total += channels * head_units + head_units
    return total


class DenseLayer:
    def __init__(self, in_channels: int, config: DenseNetConfig, rng, name: str, dtype):
        k = config.growth_rate
        self.concat = nn.ChannelConcat(name=f"{name}.concat", dtype=dtype)
        if config.bottleneck:
            mid = config.bottleneck_factor * k
            self.ops = [
                nn.BatchNorm2d(in_channels, name=f"{name}.bn1", dtype=dtype),
                nn.ReLU(name=f"{name}.relu1", dtype=dtype),
                nn.Conv2d(in_channels, mid, 1, rng=rng, name=f"{name}.conv1", dtype=dtype),
                nn.BatchNorm2d(mid, name=f"{name}.bn2", dtype=dtype),
                nn.ReLU(name=f"{name}.relu2", dtype=dtype),
                nn.Conv2d(mid, k, 3, padding=1, rng=rng, name=f"{name}.conv2", dtype=dtype),
            ]
        else:
            self.ops = [
                nn.BatchNorm2d(in_channels, name=f"{name}.bn", dtype=dtype),
                nn.ReLU(name=f"{name}.relu", dtype=dtype),
                nn.Conv2d(in_channels, k, 3, padding=1, rng=rng, name=f"{name}.conv", dtype=dtype),
            ]

    def layers(self) -> list[nn.Layer]:
        return [self.concat] + self.ops

    def forward(self, features: list[np.ndarray]) -> np.ndarray:
        x = self.concat.forward(features)
        for op in self.ops:
            x = op.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        g = grad_out
        for op in reversed(self.ops):
            g = op.backward(g)
        return self.concat.backward(g)


class DenseBlock:
    def __init__(self, in_channels: int, n_layers: int, config: DenseNetConfig, rng, name: str, dtype):
        self.layers_: list[DenseLayer] = []
        for j in range(n_layers):
            cin = in_channels + j * config.growth_rate
            self.layers_.append(DenseLayer(cin, config, rng, f"{name}.layer{j + 1}", dtype))
        self.out_concat = nn.ChannelConcat(name=f"{name}.concat_out", dtype=dtype)
        self.out_channels = in_channels + n_layers * config.growth_rate

    def layers(self) -> list[nn.Layer]:
        out = []
        for lay in self.layers_:
            out.extend(lay.layers())
        out.append(self.out_concat)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        features = [x]
        for lay in self.layers_:
            features.append(lay.forward(features))
        return self.out_concat.forward(features)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        feat_grads = self.out_concat.backward(grad_out)
        for lay in reversed(self.layers_):
            g_new = feat_grads.pop()
            parts = lay.backward(g_new)
            for idx, part in enumerate(parts):
                feat_grads[idx] = feat_grads[idx] + part
        return feat_grads[0]


class Transition:
    def __init__(self, in_channels: int, config: DenseNetConfig, rng, name: str, dtype):
        self.out_channels = int(config.compression * in_channels)
        self.ops = [
            nn.BatchNorm2d(in_channels, name=f"{name}.bn", dtype=dtype),
            nn.Conv2d(in_channels, self.out_channels, 1, rng=rng, name=f"{name}.conv", dtype=dtype),
            nn.AvgPool2d(2, name=f"{name}.pool", dtype=dtype),
        ]

    def layers(self) -> list[nn.Layer]:
        return self.ops

    def forward(self, x: np.ndarray) -> np.ndarray:
        for op in self.ops:
            x = op.forward(x)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        for op in reversed(self.ops):
            g = op.backward(g)
        return g


class DenseNet:
    """Built model; use build_model() rather than constructing directly."""

    def __init__(self, config: DenseNetConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.training = True
        pad = (config.stem_kernel - 1) // 2
        self.stem = nn.Conv2d(
            config.input_channels,
            config.stem_filters,
            config.stem_kernel,
            padding=pad,
            rng=rng,
            name="stem",
            dtype=dtype,
        )
        self.stages: list = []
        channels = config.stem_filters
        for i, n_layers in enumerate(config.block_layers):
            block = DenseBlock(channels, n_layers, config, rng, f"block{i + 1}", dtype)
            self.stages.append(block)
            channels = block.out_channels
            if i != len(config.block_layers) - 1:
                trans = Transition(channels, config, rng, f"transition{i + 1}", dtype)
                self.stages.append(trans)
                channels = trans.out_channels
        self.head_bn = nn.BatchNorm2d(channels, name="head.bn", dtype=dtype)
        self.head_relu = nn.ReLU(name="head.relu", dtype=dtype)
        self.head_pool = nn.GlobalAvgPool(name="head.pool", dtype=dtype)
        self.head_linear = nn.Linear(channels, 1, rng=rng, name="head.linear", dtype=dtype)
        self.head_sigmoid = nn.Sigmoid(name="head.sigmoid", dtype=dtype)
        self.feature_channels = channels
        self._last_forward: Optional[str] = None

    def _all_layers(self) -> list[nn.Layer]:
        out = [self.stem]
        for stage in self.stages:
            out.extend(stage.layers())
        out.extend([self.head_bn, self.head_relu, self.head_pool, self.head_linear, self.head_sigmoid])
        return out

    def train(self) -> None:
        self.training = True
        for lay in self._all_layers():
            lay.train()

    def eval(self) -> None:
        self.training = False
        for lay in self._all_layers():
            lay.eval()

    def parameters(self) -> list[nn.Tensor]:
        out = []
        for lay in self._all_layers():
            out.extend(lay.params())
        return out

    def named_parameters(self) -> list[tuple[str, nn.Tensor]]:
        return [(t.name, t) for t in self.parameters()]

    def buffers(self) -> list[nn.Tensor]:
        out = []
        for lay in self._all_layers():
            out.extend(lay.buffers())
        return out

    def named_buffers(self) -> list[tuple[str, nn.Tensor]]:
        return [(t.name, t) for t in self.buffers()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _check_input(self, x: np.ndarray) -> None:
        c, s = self.config.input_channels, self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (c, s, s):
            raise ShapeError("model", f"expected (N, {c}, {s}, {s}) input, got {x.shape}")

    def forward_logits(self, x: np.ndarray) -> np.ndarray:
        self._check_input(x)
        h = self.stem.forward(x.astype(self.dtype, copy=False))
        for stage in self.stages:
            h = stage.forward(h)
        h = self.head_bn.forward(h)
        h = self.head_relu.forward(h)
        h = self.head_pool.forward(h)
        h = self.head_linear.forward(h)
        self._last_forward = "logits"
        return h.reshape(-1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        logits = self.forward_logits(x)
        probs = self.head_sigmoid.forward(logits)
        self._last_forward = "probs"
        return probs

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(output) of the last forward call; returns
        d(loss)/d(input). grad is per-sample, shape (N,)."""
        if self._last_forward is None:
            raise ShapeError("model", "backward called before any forward")
        g = np.asarray(grad, dtype=self.dtype)
        if self._last_forward == "probs":
            g = self.head_sigmoid.backward(g)
        self._last_forward = None
        g = self.head_linear.backward(g.reshape(-1, 1))
        g = self.head_pool.backward(g)
        g = self.head_relu.backward(g)
        g = self.head_bn.backward(g)
        for stage in reversed(self.stages):
            g = stage.backward(g)
        return self.stem.backward(g)


def build_model(config: DenseNetConfig, seed: int = 0, dtype=np.float32) -> DenseNet:
    rng = np.random.default_rng(seed)
    return DenseNet(config, rng, dtype=dtype)


def count_trainable_params(model: DenseNet) -> int:
    return int(sum(p.size for p in model.parameters()))


def save_checkpoint(model: DenseNet, path) -> None:
    if model.dtype != np.float32:
        raise CheckpointError(f"checkpoints are float32 only, model is {model.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    param_ids = {id(t) for t in model.parameters()}
    for name, tensor in model.named_parameters() + model.named_buffers():
        kind = "param" if id(tensor) in param_ids else "buffer"
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(tensor.data.shape),
                "kind": kind,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "param_count": count_trainable_params(model),
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    tmp.replace(path)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise CheckpointTruncatedError(f"{path}: truncated before header length")
        (header_len,) = struct.unpack("<I", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) < header_len:
            raise CheckpointTruncatedError(f"{path}: truncated inside header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format_version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    return header


def load_checkpoint(path) -> DenseNet:
    path = Path(path)
    header = read_checkpoint_header(path)
    with open(path, "rb") as fh:
        fh.seek(len(CHECKPOINT_MAGIC))
        (header_len,) = struct.unpack("<I", fh.read(4))
        fh.seek(len(CHECKPOINT_MAGIC) + 4 + header_len)
        payload = fh.read()
    expected = sum(e["nbytes"] for e in header["tensors"])
    if len(payload) < expected:
        raise CheckpointTruncatedError(
            f"{path}: payload {len(payload)} bytes, manifest expects {expected}"
        )
    digest = hashlib.sha256(payload[:expected]).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointDigestError(f"{path}: payload digest mismatch")
    config = DenseNetConfig.from_json(header["config"])
    model = build_model(config, seed=0)
    tensors = dict(model.named_parameters() + model.named_buffers())
    manifest_names = [e["name"] for e in header["tensors"]]
    if sorted(manifest_names) != sorted(tensors):
        raise CheckpointError(f"{path}: tensor manifest does not match the architecture")
    for entry in header["tensors"]:
        tensor = tensors[entry["name"]]
        shape = tuple(entry["shape"])
        if tensor.data.shape != shape:
            raise CheckpointError(
                f"{path}: tensor {entry['name']} shape {shape} != model {tensor.data.shape}"
            )
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        tensor.data[...] = arr
    recount = count_trainable_params(model)
    if recount != header["param_count"]:
        raise CheckpointError(
            f"{path}: header param_count {header['param_count']} != recount {recount}"
        )
    return model


def calibration_search(target: int = 561_002) -> list[dict]:
    """Parameter-count grid over the undocumented architecture choices,
    sorted by distance to the target count. Pure arithmetic, no models built."""
    results = []
    base = DenseNetConfig()
    for bottleneck, factor in [(False, 0), (True, 2), (True, 3), (True, 4), (True, 6)]:
        for compression in (0.5, 1.0):
            for head_units in (1, 2):
                config = dataclasses.replace(
                    base,
                    bottleneck=bottleneck,
                    bottleneck_factor=factor if bottleneck else 4,
                    compression=compression,
                )
                count = planned_param_count(config, head_units=head_units)
                results.append(
                    {
                        "bottleneck": bottleneck,
                        "bottleneck_factor": factor if bottleneck else None,
                        "compression": compression,
                        "head_units": head_units,
                        "params": count,
                        "delta": count - target,
                    }
                )
    results.sort(key=lambda r: abs(r["delta"]))
    return results
