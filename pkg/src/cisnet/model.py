"""Network assembly: preprocessing, fusion, Type-1 and Type-2 blocks, classifier.

The network is an ordered list of :class:`Block` objects. Each block owns one
linear layer (convolution or fully-connected) followed by a fixed post-map, so
bias calibration can walk the blocks in order and see every pre-bias output.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .layers import GLOBAL, SublinearConfig, TruncationConfig, prelu, spl, sublinear_map, truncate
from .rng import rng_for
from .srm import FilterBank, build_bank
from .tensor import Tensor, avg_pool, conv2d, fully_connected, no_grad, relu, reshape

GROUPS = ("hpf", "fusion", "type1", "type2", "fc")
PRELU_INIT = 0.25
FC_INIT_VARIANCE = 0.01


@dataclass(frozen=True)
class NetworkConfig:
    input_size: tuple[int, int] = (64, 64)
    truncation: TruncationConfig = TruncationConfig()
    spl: SublinearConfig = SublinearConfig()
    # fusion, Type-1 blocks..., Type-2 blocks...
    channels: tuple[int, ...] = (32, 32, 64, 64, 128)
    n_type1: int = 2
    n_type2: int = 2
    dilation_type2: int = 2
    hpf_names: tuple[str, ...] | None = None  # subset of the bank; None keeps all 20
    seed: int = 0

    def __post_init__(self):
        if len(self.channels) != 1 + self.n_type1 + self.n_type2:
            raise ValueError("channels must list fusion + every Type-1 and Type-2 block")
        if self.n_type2 < 1:
            raise ValueError("at least one Type-2 block is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truncation"]["threshold"] = _encode_float(self.truncation.threshold)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        t = dict(d.pop("truncation"))
        t["threshold"] = float(t["threshold"])
        hpf = d.pop("hpf_names", None)
        return cls(
            truncation=TruncationConfig(**t),
            spl=SublinearConfig(**d.pop("spl")),
            input_size=tuple(d.pop("input_size")),
            channels=tuple(d.pop("channels")),
            hpf_names=None if hpf is None else tuple(hpf),
            **d,
        )


def _encode_float(v: float):
    return "inf" if math.isinf(v) else v


class Conv:
    def __init__(self, name: str, cin: int, cout: int, k: int, dilation: int = 1, bias: bool = True):
        self.name = name
        self.dilation = dilation
        self.padding = dilation * (k - 1) // 2
        self.weight = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor, with_bias: bool = True) -> Tensor:
        b = self.bias if with_bias else None
        return conv2d(x, self.weight, b, stride=1, padding=self.padding, dilation=self.dilation)


class Dense:
    def __init__(self, name: str, din: int, dout: int):
        self.name = name
        self.weight = Tensor(np.zeros((dout, din)), requires_grad=True)
        self.bias = Tensor(np.zeros(dout), requires_grad=True)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor, with_bias: bool = True) -> Tensor:
        return fully_connected(x, self.weight, self.bias if with_bias else None)


@dataclass
class Block:
    name: str
    group: str
    linear: Conv | Dense
    post: Callable[[Tensor], Tensor]
    extra: dict[str, Tensor] = field(default_factory=dict)

    def forward(self, x: Tensor) -> Tensor:
        return self.post(self.linear(x))


class CISNet:
    """Layer graph; build with :func:`build_network`."""

    def __init__(self, cfg: NetworkConfig, bank: FilterBank | None = None):
        self.cfg = cfg
        bank = build_bank() if bank is None else bank
        kernels = bank.kernels.data
        if cfg.hpf_names is not None:
            kernels = kernels[[bank.index(n) for n in cfg.hpf_names]]
        self.initialized = False
        self.blocks: list[Block] = []
        h, w = cfg.input_size

        hpf = Conv("hpf", 1, kernels.shape[0], 5, bias=False)
        hpf.weight.data[...] = kernels
        self.blocks.append(Block("hpf", "hpf", hpf, lambda x: truncate(x, cfg.truncation)))

        cin = kernels.shape[0]
        fusion = Conv("fusion", cin, cfg.channels[0], 3)
        slope = Tensor(np.full(cfg.channels[0], PRELU_INIT), requires_grad=True)
        self.blocks.append(
            Block("fusion", "fusion", fusion, lambda x, a=slope: prelu(x, a), {"slope": slope})
        )
        cin = cfg.channels[0]

        for i in range(cfg.n_type1):
            cout = cfg.channels[1 + i]
            if h % 2 or w % 2:
                raise ValueError(f"spatial extent {h}x{w} exhausted at Type-1 block {i + 1}")
            conv = Conv(f"type1_{i + 1}", cin, cout, 3)
            self.blocks.append(Block(conv.name, "type1", conv, lambda x: avg_pool(relu(x), 2)))
            h, w, cin = h // 2, w // 2, cout

        for i in range(cfg.n_type2):
            cout = cfg.channels[1 + cfg.n_type1 + i]
            last = i == cfg.n_type2 - 1
            conv = Conv(f"type2_{i + 1}", cin, cout, 3, dilation=cfg.dilation_type2)
            if last:
                post = self._final_post
            else:
                win = cfg.spl.window
                if win == GLOBAL or h % win or w % win:
                    raise ValueError(f"spatial extent {h}x{w} exhausted at Type-2 block {i + 1}")
                scfg = SublinearConfig(cfg.spl.gamma1, cfg.spl.gamma2, win)
                post = lambda x, c=scfg: spl(relu(x), c)
                h, w = h // win, w // win
            self.blocks.append(Block(conv.name, "type2", conv, post))
            cin = cout

        self.feature_size = (h, w)
        fc = Dense("fc", cin, 2)
        self.blocks.append(Block("fc", "fc", fc, lambda x: x))
        self._capture: list | None = None

    def _final_post(self, x: Tensor) -> Tensor:
        g = SublinearConfig(self.cfg.spl.gamma1, self.cfg.spl.gamma2, GLOBAL)
        maps = sublinear_map(relu(x), g.gamma1)
        if self._capture is not None:
            self._capture.append(maps)
        pooled = sublinear_map(avg_pool(maps, maps.shape[2:]), g.gamma2)
        return reshape(pooled, (pooled.shape[0], pooled.shape[1]))

    # -- parameters

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for b in self.blocks:
            params[f"{b.name}.weight"] = b.linear.weight
            if b.linear.bias is not None:
                params[f"{b.name}.bias"] = b.linear.bias
            for k, t in b.extra.items():
                params[f"{b.name}.{k}"] = t
        return params

    def parameter_groups(self) -> dict[str, str]:
        return {
            f"{b.name}.{k}": b.group
            for b in self.blocks
            for k in ["weight", "bias", *b.extra]
            if k != "bias" or b.linear.bias is not None
        }

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.named_parameters().values())

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    # -- forward

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        for b in self.blocks:
            x = b.forward(x)
        return x

    __call__ = forward

    def forward_with_maps(self, x) -> tuple[Tensor, Tensor]:
        """Logits plus the final feature maps that enter the global pooling."""
        self._capture = []
        try:
            logits = self.forward(x)
            return logits, self._capture[0]
        finally:
            self._capture = None


def build_network(cfg: NetworkConfig | None = None, bank: FilterBank | None = None) -> CISNet:
    net = CISNet(cfg or NetworkConfig(), bank)
    init_weights(net, net.cfg.seed)
    return net


def init_weights(net: CISNet, seed: int) -> None:
    """He-normal N(0, 2/out_channels) for convolutions, N(0, 0.01) for the classifier.

    The SRM front end keeps its bank values; biases start at zero and PReLU
    slopes at 0.25.
    """
    rng = rng_for(seed, "init")
    for b in net.blocks:
        lin = b.linear
        if b.group == "hpf":
            continue
        var = FC_INIT_VARIANCE if isinstance(lin, Dense) else 2.0 / lin.out_channels
        lin.weight.data[...] = rng.normal(0.0, math.sqrt(var), size=lin.weight.shape)
        if lin.bias is not None:
            lin.bias.data[...] = 0.0
        for t in b.extra.values():
            t.data[...] = PRELU_INIT
    net.initialized = True


def as_batch(images) -> np.ndarray:
    a = np.asarray(images, dtype=np.float64)
    if a.ndim == 3:
        a = a[:, None]
    return a


def calibrate_biases(net: CISNet, images, chunk: int = 25) -> dict[str, float]:
    """Set every bias so that its layer's output has zero mean over ``images``.

    Blocks are calibrated in order, each on activations produced by the
    already-calibrated blocks before it. Returns the post-calibration mean
    absolute channel mean per calibrated layer.
    """
    x = as_batch(images)
    if len(x) == 0:
        raise ValueError("bias calibration needs a non-empty init set")
    acts = [Tensor(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    residual: dict[str, float] = {}
    with no_grad():
        for b in net.blocks:
            pre = [b.linear(a, with_bias=False) for a in acts]
            if b.linear.bias is not None:
                axes = (0, 2, 3) if pre[0].ndim == 4 else (0,)
                count = sum(p.data.size // p.shape[1] for p in pre)
                total = sum(p.data.sum(axis=axes) for p in pre)
                b.linear.bias.data[...] = -total / count
                pre = [b.linear(a) for a in acts]
                means = sum(p.data.sum(axis=axes) for p in pre) / count
                residual[b.name] = float(np.abs(means).max())
            acts = [b.post(p) for p in pre]
    return residual
