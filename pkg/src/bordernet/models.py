"""LeNet-5 and the two variants with a fixed 4-filter front end, plus checkpoints.

Architecture (all variants share the LeNet part)::

    [front: 4 x conv(1->1, 7x7, pad 3, no bias)]      BorderNet / RandomNet only
    conv(1->6, 5x5, pad 2) - ReLU - maxpool 2x2
    conv(6->16, 5x5)       - ReLU - maxpool 2x2
    flatten(400) - dense(120) - ReLU - dense(84) - ReLU - dense(10)

Weights are uniform in +-sqrt(1/fan_in) from ``numpy.random.default_rng(seed)``,
drawn in layer order; biases start at zero. Vanilla, BorderNet and RandomNet
built with the same seed therefore share identical LeNet initial weights.
"""

from __future__ import annotations

import enum
import json
import struct
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import (
    BadMagicError,
    DimensionOverflowError,
    FormatError,
    TruncatedFileError,
    VariantMismatchError,
    VersionMismatchError,
)
from .filter_bank import BankKind, FilterBank

INPUT_SHAPE = (1, 28, 28)
NUM_CLASSES = 10


class Variant(str, enum.Enum):
    VANILLA = "vanilla"
    BORDERNET = "bordernet"
    RANDOMNET = "randomnet"


_VARIANT_TAG = {Variant.VANILLA: 0, Variant.BORDERNET: 1, Variant.RANDOMNET: 2}
_TAG_VARIANT = {v: k for k, v in _VARIANT_TAG.items()}


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

class Conv:
    def __init__(self, name, weight, bias=None, pad=0, trainable=True):
        self.name = name
        self.pad = pad
        self.weight = nx.Parameter(weight, trainable=trainable, name=f"{name}.weight")
        self.bias = None if bias is None else nx.Parameter(bias, trainable=trainable, name=f"{name}.bias")

    @property
    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        b = None if self.bias is None else self.bias.value
        if not self.weight.trainable or self.weight.value.shape[:2] == (1, 1):
            # no column matrix to keep: frozen, or handled by the 1->1 fast paths
            return nx.conv2d_forward(x, self.weight.value, b, self.pad), (x, None)
        out, cols = nx.conv2d_forward_cols(x, self.weight.value, b, self.pad)
        return out, (x, cols)

    def backward(self, g, cache, need_input_grad):
        x, cols = cache
        gx, gw, gb = nx.conv2d_backward(g, x, self.weight.value, self.pad, need_input_grad, cols=cols)
        if self.weight.trainable:
            self.weight.grad += gw
            if self.bias is not None:
                self.bias.grad += gb
        return gx


class Dense:
    def __init__(self, name, weight, bias):
        self.name = name
        self.weight = nx.Parameter(weight, name=f"{name}.weight")
        self.bias = nx.Parameter(bias, name=f"{name}.bias")

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return nx.dense_forward(x, self.weight.value, self.bias.value), x

    def backward(self, g, x, need_input_grad):
        gx, gw, gb = nx.dense_backward(g, x, self.weight.value, need_input_grad)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ReLU:
    name = "relu"
    params = []

    def forward(self, x):
        return nx.relu_forward(x), x

    def backward(self, g, x, need_input_grad):
        return nx.relu_backward(g, x)


class MaxPool:
    name = "maxpool"
    params = []

    def forward(self, x):
        return nx.maxpool2x2_forward(x)

    def backward(self, g, argmax, need_input_grad):
        return nx.maxpool2x2_backward(g, argmax)


class Flatten:
    name = "flatten"
    params = []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape, need_input_grad):
        return g.reshape(shape)


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------

class Network:
    """An ordered layer list with explicit forward and backward passes.

    ``logits`` keeps no state and is safe to call from several threads at
    once. ``loss_and_backward`` accumulates into the parameters' ``grad``
    buffers and so needs a single writer.
    """

    def __init__(self, variant, layers, seed, front_bank=None, front_trainable=False):
        self.variant = Variant(variant)
        self.layers = layers
        self.seed = seed
        self.front_bank = front_bank
        self.front_trainable = front_trainable

    @property
    def params(self) -> list[nx.Parameter]:
        return [p for layer in self.layers for p in layer.params]

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.value) for p in self.params]

    def stored_parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def trainable_parameter_count(self) -> int:
        return sum(p.size for p in self.params if p.trainable)

    @property
    def frozen_prefix(self) -> int:
        """Number of leading layers whose output never depends on a trainable parameter."""
        for i, layer in enumerate(self.layers):
            if any(p.trainable for p in layer.params):
                return i
        return len(self.layers)

    def front_kernels(self) -> np.ndarray | None:
        fronts = [l for l in self.layers if l.name.startswith("front.")]
        if not fronts:
            return None
        return np.stack([l.weight.value[0, 0] for l in fronts])

    def metadata(self) -> dict:
        return {
            "variant": self.variant.value,
            "seed": self.seed,
            "front_trainable": self.front_trainable,
            "front_bank": None if self.front_bank is None else self.front_bank.metadata(),
            "activation": "relu",
            "pooling": "max2x2",
            "init": "uniform(+-sqrt(1/fan_in)), zero bias",
            "stored_parameters": self.stored_parameter_count(),
            "trainable_parameters": self.trainable_parameter_count(),
        }

    def forward_range(self, x, start: int = 0, stop: int | None = None) -> np.ndarray:
        x = nx.as_tensor(x)
        for layer in self.layers[start:stop]:
            x, _ = layer.forward(x)
        return x

    def logits(self, x, start: int = 0) -> np.ndarray:
        """Forward pass; ``start`` skips layers already applied to ``x``."""
        return self.forward_range(x, start)

    def loss_and_backward(self, x, labels, start: int = 0) -> tuple[float, np.ndarray]:
        """Mean cross-entropy of the batch; adds its gradients into ``param.grad``."""
        caches = []
        h = nx.as_tensor(x)
        for layer in self.layers[start:]:
            h, cache = layer.forward(h)
            caches.append(cache)
        loss, g = nx.softmax_cross_entropy(h, labels)
        stop = max(start, self.frozen_prefix)
        for offset in range(len(self.layers) - 1, stop - 1, -1):
            layer = self.layers[offset]
            g = layer.backward(g, caches[offset - start], need_input_grad=offset > stop)
        return loss, h

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _lenet_layers(seed: int) -> list:
    rng = np.random.default_rng(seed)
    zeros = lambda n: np.zeros(n, dtype=np.float32)  # noqa: E731
    return [
        Conv("conv1", _uniform(rng, (6, 1, 5, 5), 25), zeros(6), pad=2),
        ReLU(),
        MaxPool(),
        Conv("conv2", _uniform(rng, (16, 6, 5, 5), 150), zeros(16), pad=0),
        ReLU(),
        MaxPool(),
        Flatten(),
        Dense("fc1", _uniform(rng, (120, 400), 400), zeros(120)),
        ReLU(),
        Dense("fc2", _uniform(rng, (84, 120), 120), zeros(84)),
        ReLU(),
        Dense("fc3", _uniform(rng, (10, 84), 84), zeros(10)),
    ]


def _front_layers(bank: FilterBank, trainable: bool) -> list:
    return [Conv(f"front.{i}", bank.conv_weights(i), None, pad=3, trainable=trainable) for i in range(4)]


def build_vanilla(seed: int) -> Network:
    return Network(Variant.VANILLA, _lenet_layers(seed), seed)


def _build_fronted(variant, seed, bank, trainable, kind):
    if bank.kind is not kind:
        raise ValueError(f"{variant.value} needs a {kind.value} filter bank, got {bank.kind.value}")
    layers = _front_layers(bank, trainable) + _lenet_layers(seed)
    return Network(variant, layers, seed, front_bank=bank, front_trainable=trainable)


def build_bordernet(seed: int, bank: FilterBank, trainable: bool = False) -> Network:
    return _build_fronted(Variant.BORDERNET, seed, bank, trainable, BankKind.ORIENTED)


def build_randomnet(seed: int, bank: FilterBank, trainable: bool = False) -> Network:
    return _build_fronted(Variant.RANDOMNET, seed, bank, trainable, BankKind.RANDOM)


# --------------------------------------------------------------------------
# checkpoints
#
#   b"BNET" | u32 version | u32 variant tag | u32 flags | u32 tensor count
#   per tensor: u32 name length | name (UTF-8) | u32 rank | u32 dims[rank] | f32 data
#
# All integers and floats little-endian. Flag bit 0: front filters trainable.
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BNET"
CHECKPOINT_VERSION = 1
_MAX_RANK = 8
_MAX_ELEMENTS = 1 << 31


def checkpoint_bytes(net: Network) -> bytes:
    tensors = net.named_tensors()
    out = [
        CHECKPOINT_MAGIC,
        struct.pack("<IIII", CHECKPOINT_VERSION, _VARIANT_TAG[net.variant], int(net.front_trainable), len(tensors)),
    ]
    for name, value in tensors:
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(net: Network, path, sidecar: dict | None = None) -> Path:
    """Write the binary checkpoint and a human-readable ``<path>.json`` sidecar."""
    path = Path(path)
    path.write_bytes(checkpoint_bytes(net))
    meta = net.metadata()
    if sidecar:
        meta.update(sidecar)
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def parse_checkpoint(data: bytes) -> tuple[Variant, bool, list[tuple[str, np.ndarray]]]:
    if len(data) < 4:
        raise TruncatedFileError("checkpoint shorter than its magic bytes")
    r = _Reader(data)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic bytes)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    tag = r.u32()
    if tag not in _TAG_VARIANT:
        raise FormatError(f"unknown network variant tag {tag}")
    flags = r.u32()
    count = r.u32()
    tensors = []
    for _ in range(count):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        if rank > _MAX_RANK:
            raise DimensionOverflowError(f"tensor {name!r} has rank {rank} > {_MAX_RANK}")
        dims = [r.u32() for _ in range(rank)]
        n = 1
        for d in dims:
            n *= d
        if n >= _MAX_ELEMENTS:
            raise DimensionOverflowError(f"tensor {name!r} declares {n} elements")
        raw = r.take(4 * n)
        tensors.append((name, np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return _TAG_VARIANT[tag], bool(flags & 1), tensors


def load_checkpoint(path, expected_variant=None) -> Network:
    variant, trainable, tensors = parse_checkpoint(Path(path).read_bytes())
    if expected_variant is not None and Variant(expected_variant) is not variant:
        raise VariantMismatchError(f"checkpoint holds a {variant.value} network, not {Variant(expected_variant).value}")
    net = network_from_tensors(variant, trainable, tensors)
    sidecar = Path(path).with_name(Path(path).name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        net.seed = meta.get("seed")
        bank_meta = meta.get("front_bank")
        if net.front_bank is not None and bank_meta:
            net.front_bank = FilterBank(
                kernels=net.front_bank.kernels,
                kind=net.front_bank.kind,
                normalization=bank_meta["normalization"],
                seed=bank_meta["seed"],
                labels=tuple(bank_meta["labels"]),
            )
    return net


def network_from_tensors(variant: Variant, front_trainable: bool, tensors) -> Network:
    values = dict(tensors)
    layers = _lenet_layers(0)
    if variant is not Variant.VANILLA:
        kind = BankKind.ORIENTED if variant is Variant.BORDERNET else BankKind.RANDOM
        try:
            kernels = np.stack([values[f"front.{i}.weight"][0, 0] for i in range(4)])
        except KeyError as e:
            raise FormatError(f"{variant.value} checkpoint lacks front filter {e}") from None
        bank = FilterBank(kernels=kernels, kind=kind)
        layers = _front_layers(bank, front_trainable) + layers
    else:
        bank = None
    net = Network(variant, layers, seed=None, front_bank=bank, front_trainable=front_trainable)
    expected = [p.name for p in net.params]
    if [name for name, _ in tensors] != expected:
        raise FormatError(f"checkpoint tensors {[n for n, _ in tensors]} do not match {variant.value} layout")
    for p in net.params:
        v = values[p.name]
        if v.shape != p.value.shape:
            raise FormatError(f"tensor {p.name!r} has shape {v.shape}, expected {p.value.shape}")
        p.value[...] = v
    return net
