"""Twenty-kernel SRM high-pass bank used as the first convolution.

The bank ships as ``data/srm_bank_v1.txt``; :func:`canonical_kernels` rebuilds
the same values from the integer stencils and is what generated the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .tensor import Tensor, conv2d

ASSET = "srm_bank_v1.txt"
HEADER = "srm-bank v1 count=20"
KERNEL_SIZE = 5
BANK_SIZE = 20
HPF_LR_SCALE = 5e-6

# (dy, dx) unit steps; index order fixes the channel order of the bank
_AXES = {"h": (0, 1), "v": (1, 0), "d1": (1, 1), "d2": (1, -1)}
_DIRS = {
    "e": (0, 1), "se": (1, 1), "s": (1, 0), "sw": (1, -1),
    "w": (0, -1), "nw": (-1, -1), "n": (-1, 0), "ne": (-1, 1),
}

_KB = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=np.float64)
_KV = np.array(
    [
        [-1, 2, -2, 2, -1],
        [2, -6, 8, -6, 2],
        [-2, 8, -12, 8, -2],
        [2, -6, 8, -6, 2],
        [-1, 2, -2, 2, -1],
    ],
    dtype=np.float64,
)
# edge predictors: upper half of the square stencils, rotated per orientation
_EDGE3 = np.array([[-1, 2, -1], [2, -4, 2], [0, 0, 0]], dtype=np.float64)
_EDGE5 = np.where(np.arange(5)[:, None] < 3, _KV, 0.0)
_EDGE_ROTATIONS = {"up": 0, "left": 1, "down": 2}


def _embed(stencil: np.ndarray) -> np.ndarray:
    out = np.zeros((KERNEL_SIZE, KERNEL_SIZE))
    k = stencil.shape[0]
    o = (KERNEL_SIZE - k) // 2
    out[o:o + k, o:o + k] = stencil
    return out


def _line(coeffs, offsets, step) -> np.ndarray:
    out = np.zeros((KERNEL_SIZE, KERNEL_SIZE))
    for c, t in zip(coeffs, offsets):
        out[2 + t * step[0], 2 + t * step[1]] = c
    return out


def canonical_kernels() -> list[tuple[str, np.ndarray]]:
    """Build the bank: 4 second-order, 8 third-order, KB, KV, 3 EDGE3x3, 3 EDGE5x5."""
    bank = []
    for name, step in _AXES.items():
        bank.append((f"2nd_{name}", _line([1, -2, 1], [-1, 0, 1], step) / 2.0))
    for name, step in _DIRS.items():
        bank.append((f"3rd_{name}", _line([-1, 3, -3, 1], [-1, 0, 1, 2], step) / 3.0))
    bank.append(("kb", _embed(_KB) / 4.0))
    bank.append(("kv", _KV / 12.0))
    for name, r in _EDGE_ROTATIONS.items():
        bank.append((f"edge3_{name}", _embed(np.rot90(_EDGE3, r)) / 4.0))
    for name, r in _EDGE_ROTATIONS.items():
        bank.append((f"edge5_{name}", np.rot90(_EDGE5, r) / 12.0))
    return [(n, np.ascontiguousarray(k)) for n, k in bank]


def format_bank(kernels: list[tuple[str, np.ndarray]]) -> str:
    lines = [f"srm-bank v1 count={len(kernels)}"]
    lines += [
        "# composition: 2nd order x4 (h, v, d1, d2) /2; 3rd order x8 directions /3;",
        "# KB 3x3 /4; KV 5x5 /12; EDGE3x3 (up, left, down) /4; EDGE5x5 (up, left, down) /12.",
        "# 3x3 stencils are centred in 5x5 with zeros. Values are shortest round-trip reprs.",
    ]
    for name, k in kernels:
        lines.append(name)
        lines += [" ".join(repr(float(v)) for v in row) for row in k]
    return "\n".join(lines) + "\n"


def parse_bank(text: str) -> list[tuple[str, np.ndarray]]:
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows or not rows[0].startswith("srm-bank v1 count="):
        raise ValueError("missing 'srm-bank v1 count=N' header")
    count = int(rows[0].split("=", 1)[1])
    body = rows[1:]
    if len(body) != count * (KERNEL_SIZE + 1):
        raise ValueError(f"expected {count} kernels of {KERNEL_SIZE} rows each")
    kernels = []
    for i in range(count):
        block = body[i * (KERNEL_SIZE + 1):(i + 1) * (KERNEL_SIZE + 1)]
        values = np.array([[float(v) for v in r.split()] for r in block[1:]])
        if values.shape != (KERNEL_SIZE, KERNEL_SIZE):
            raise ValueError(f"kernel {block[0]!r} is not {KERNEL_SIZE}x{KERNEL_SIZE}")
        kernels.append((block[0], values))
    return kernels


@dataclass
class FilterBank:
    kernels: Tensor
    names: list[str]
    learnable: bool = True
    learning_rate_scale: float = HPF_LR_SCALE

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def load_bank(path: str | Path | None = None) -> FilterBank:
    if path is None:
        text = resources.files("cisnet.data").joinpath(ASSET).read_text()
    else:
        text = Path(path).read_text()
    kernels = parse_bank(text)
    weights = np.stack([k for _, k in kernels])[:, None, :, :]
    return FilterBank(Tensor(weights, requires_grad=True), [n for n, _ in kernels])


def build_bank() -> FilterBank:
    """The canonical bank, read from the shipped asset."""
    bank = load_bank()
    if len(bank) != BANK_SIZE:
        raise ValueError(f"asset holds {len(bank)} kernels, expected {BANK_SIZE}")
    return bank


def hpf_forward(image, bank: FilterBank) -> Tensor:
    """Residuals of x[N,1,H,W] under every kernel, same spatial size."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"hpf_forward expects grayscale [N,1,H,W], got {x.shape}")
    return conv2d(x, bank.kernels, None, stride=1, padding=KERNEL_SIZE // 2)
