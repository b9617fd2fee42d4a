"""Oriented stripe filters and their random, parameter-matched counterparts."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .pnm import to_uint8, upscale, write_pgm

KERNEL_SIZE = 7
STRIPE_WIDTH = 3
_BANK_MAGIC = b"FBNK"


class Orientation(str, enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    DIAGONAL_MAIN = "diagonal_main"
    DIAGONAL_ANTI = "diagonal_anti"


ORIENTATION_ORDER = (
    Orientation.HORIZONTAL,
    Orientation.VERTICAL,
    Orientation.DIAGONAL_MAIN,
    Orientation.DIAGONAL_ANTI,
)


class BankKind(str, enum.Enum):
    ORIENTED = "oriented"
    RANDOM = "random"


class Normalization(str, enum.Enum):
    RAW = "raw"
    L1 = "l1"


def make_oriented_filter(orientation, size: int = KERNEL_SIZE, stripe_width: int = STRIPE_WIDTH) -> np.ndarray:
    """Binary ``size x size`` kernel with a centred stripe of ones.

    Diagonal stripes are bands ``|r - c| <= half`` (or the anti-diagonal
    equivalent), so their width is counted along rows, not perpendicular
    to the stripe.
    """
    orientation = Orientation(orientation)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"filter size must be odd and positive, got {size}")
    if stripe_width < 1 or stripe_width > size:
        raise ValueError(f"stripe width must be in [1, {size}], got {stripe_width}")
    half = (stripe_width - 1) / 2
    mid = (size - 1) / 2
    r, c = np.indices((size, size))
    if orientation is Orientation.HORIZONTAL:
        on = np.abs(r - mid) <= half
    elif orientation is Orientation.VERTICAL:
        on = np.abs(c - mid) <= half
    elif orientation is Orientation.DIAGONAL_MAIN:
        on = np.abs(r - c) <= half
    else:
        on = np.abs(r + c - (size - 1)) <= half
    return on.astype(np.float32)


@dataclass(frozen=True)
class FilterBank:
    """Four 7x7 kernels applied in order, each as a 1->1 channel convolution."""

    kernels: np.ndarray = field(repr=False)  # (4, 7, 7) float32
    kind: BankKind
    normalization: Normalization = Normalization.RAW
    seed: int | None = None
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        k = np.ascontiguousarray(self.kernels, dtype=np.float32)
        if k.shape != (4, KERNEL_SIZE, KERNEL_SIZE):
            raise ValueError(f"a filter bank holds four {KERNEL_SIZE}x{KERNEL_SIZE} kernels, got {k.shape}")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "kind", BankKind(self.kind))
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.normalization == other.normalization
            and self.seed == other.seed
            and self.labels == other.labels
            and self.kernels.tobytes() == other.kernels.tobytes()
        )

    __hash__ = None

    def conv_weights(self, i: int) -> np.ndarray:
        """Kernel ``i`` shaped (1, 1, 7, 7) for :func:`conv2d_forward`."""
        return self.kernels[i][None, None].copy()

    def metadata(self) -> dict:
        return {
            "kind": self.kind.value,
            "normalization": self.normalization.value,
            "seed": self.seed,
            "labels": list(self.labels),
        }

    # serialization: b"FBNK", u32 LE metadata length, UTF-8 JSON metadata, 196 float32 LE
    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata(), sort_keys=True).encode()
        return _BANK_MAGIC + struct.pack("<I", len(meta)) + meta + self.kernels.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FilterBank":
        if data[:4] != _BANK_MAGIC:
            raise ValueError("not a serialized filter bank")
        (n,) = struct.unpack_from("<I", data, 4)
        meta = json.loads(data[8:8 + n].decode())
        body = data[8 + n:]
        if len(body) != 4 * 4 * KERNEL_SIZE * KERNEL_SIZE:
            raise ValueError("serialized filter bank has the wrong payload size")
        kernels = np.frombuffer(body, dtype="<f4").reshape(4, KERNEL_SIZE, KERNEL_SIZE)
        return cls(
            kernels=kernels,
            kind=meta["kind"],
            normalization=meta["normalization"],
            seed=meta["seed"],
            labels=tuple(meta["labels"]),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FilterBank":
        return cls.from_bytes(Path(path).read_bytes())


def make_oriented_filter_bank(normalize: bool = False) -> FilterBank:
    bank = FilterBank(
        kernels=np.stack([make_oriented_filter(o) for o in ORIENTATION_ORDER]),
        kind=BankKind.ORIENTED,
        labels=tuple(o.value for o in ORIENTATION_ORDER),
    )
    return normalize_l1(bank) if normalize else bank


def _random_kernel(seed: int, index: int) -> np.ndarray:
    # PCG64 keyed by SeedSequence((seed, index)) gives the same stream on every platform
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, index])
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.random((KERNEL_SIZE, KERNEL_SIZE), dtype=np.float32)


def make_random_filter_bank(seed: int, normalize: bool = False) -> FilterBank:
    """Four kernels with i.i.d. entries uniform on [0, 1), one PCG64 stream per kernel."""
    bank = FilterBank(
        kernels=np.stack([_random_kernel(seed, i) for i in range(4)]),
        kind=BankKind.RANDOM,
        seed=int(seed),
        labels=tuple(f"random_{i}" for i in range(4)),
    )
    return normalize_l1(bank) if normalize else bank


def normalize_l1(bank: FilterBank) -> FilterBank:
    """Divide each kernel by the sum of its absolute entries."""
    k = bank.kernels.astype(np.float64)
    norms = np.abs(k).sum(axis=(1, 2))
    if np.any(norms == 0):
        raise ValueError("cannot L1-normalize a filter bank containing an all-zero kernel")
    out = (k / norms[:, None, None]).astype(np.float32)
    return replace(bank, kernels=out, normalization=Normalization.L1)


def format_grid(kernel: np.ndarray) -> str:
    """Plain-text rendering, one kernel row per line."""
    k = np.asarray(kernel)
    if np.all(k == np.rint(k)):
        return "\n".join(" ".join(str(int(v)) for v in row) for row in k) + "\n"
    return "\n".join(" ".join(f"{v:.6f}" for v in row) for row in k) + "\n"


def export_bank(bank: FilterBank, directory, prefix: str, scale: int = 16) -> list[Path]:
    """Write each kernel as ``<prefix>_<label>.txt`` and an upscaled ``.pgm``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    lo, hi = float(bank.kernels.min()), float(bank.kernels.max())
    lo = min(lo, 0.0)
    for kernel, label in zip(bank.kernels, bank.labels):
        txt = directory / f"{prefix}_{label}.txt"
        txt.write_text(format_grid(kernel))
        img, _, _ = to_uint8(kernel, lo, hi)
        pgm = directory / f"{prefix}_{label}.pgm"
        write_pgm(pgm, upscale(img, scale))
        written += [txt, pgm]
    return written
