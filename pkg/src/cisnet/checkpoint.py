"""Checkpoint container.

Layout::

    CISNET-CHECKPOINT 1\\n
    <manifest: one line of JSON, sorted keys>\\n
    <raw little-endian float64 payloads, concatenated in manifest order>

The manifest lists every array (name, shape, dtype, byte offset), the epoch,
the base and current learning rates, the RNG state (master seed and epoch
counter, from which every shuffle is re-derived), the network config and its
fingerprint, the training config, the optimizer step and the loss history.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import NetworkConfig, build_network
from .stego import atomic_write
from .train import EpochRecord, TrainConfig, Trainer

MAGIC = b"CISNET-CHECKPOINT 1\n"
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net_config: NetworkConfig
    train_config: TrainConfig
    epoch: int
    adam_step: int
    arrays: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # -- construction

    @classmethod
    def capture(cls, trainer: Trainer, **meta) -> "Checkpoint":
        arrays = {}
        for name, t in trainer.net.named_parameters().items():
            arrays[f"param/{name}"] = t.data.copy()
            arrays[f"adam_m/{name}"] = trainer.optimizer.m[name].copy()
            arrays[f"adam_v/{name}"] = trainer.optimizer.v[name].copy()
        return cls(
            net_config=trainer.net.cfg,
            train_config=trainer.cfg,
            epoch=trainer.epoch,
            adam_step=trainer.optimizer.step_count,
            arrays=arrays,
            history=[{"epoch": r.epoch, "loss": r.loss, "rates": r.rates} for r in trainer.history],
            step_losses=list(trainer.step_losses),
            meta=dict(meta),
        )

    def restore(self) -> Trainer:
        """Rebuild the network, optimizer state and counters exactly."""
        net = build_network(self.net_config)
        trainer = Trainer(net, self.train_config)
        for name, t in net.named_parameters().items():
            for prefix, target in (("param", t.data), ("adam_m", trainer.optimizer.m[name]),
                                   ("adam_v", trainer.optimizer.v[name])):
                key = f"{prefix}/{name}"
                if key not in self.arrays:
                    raise CheckpointError(f"checkpoint lacks {key}")
                if self.arrays[key].shape != target.shape:
                    raise CheckpointError(f"{key}: shape {self.arrays[key].shape} != {target.shape}")
                target[...] = self.arrays[key]
        trainer.optimizer.step_count = self.adam_step
        trainer.epoch = self.epoch
        trainer.history = [EpochRecord(h["epoch"], h["loss"], dict(h["rates"])) for h in self.history]
        trainer.step_losses = list(self.step_losses)
        return trainer

    def parameters(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.arrays.items() if k.startswith("param/")}

    # -- serialisation

    def manifest(self) -> dict:
        entries = []
        offset = 0
        for name, a in self.arrays.items():
            nbytes = a.size * 8
            entries.append({"name": name, "shape": list(a.shape), "dtype": DTYPE,
                            "offset": offset, "nbytes": nbytes})
            offset += nbytes
        tc = asdict(self.train_config)
        tc["curriculum"] = list(tc["curriculum"])
        return {
            "arrays": entries,
            "epoch": self.epoch,
            "adam_step": self.adam_step,
            "learning_rates": {"base": self.train_config.learning_rates,
                               "current": self.train_config.rates_at(self.epoch)},
            "rng": {"seed": self.train_config.seed, "epoch": self.epoch},
            "network": self.net_config.to_dict(),
            "fingerprint": self.net_config.fingerprint(),
            "train": tc,
            "history": self.history,
            "step_losses": self.step_losses,
            "meta": self.meta,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.manifest(), sort_keys=True, allow_nan=False).encode()
        body = b"".join(np.ascontiguousarray(a, dtype=DTYPE).tobytes() for a in self.arrays.values())
        return MAGIC + head + b"\n" + body

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if not raw.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic)")
        end = raw.find(b"\n", len(MAGIC))
        if end < 0:
            raise CheckpointError("truncated manifest")
        try:
            man = json.loads(raw[len(MAGIC):end])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from exc
        body = raw[end + 1:]
        arrays = {}
        for e in man["arrays"]:
            if e["dtype"] != DTYPE:
                raise CheckpointError(f"{e['name']}: unsupported dtype {e['dtype']}")
            chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise CheckpointError(f"{e['name']}: truncated payload")
            arrays[e["name"]] = np.frombuffer(chunk, dtype=DTYPE).astype(np.float64).reshape(e["shape"])
        net_cfg = NetworkConfig.from_dict(man["network"])
        if net_cfg.fingerprint() != man["fingerprint"]:
            raise CheckpointError("network config does not match its fingerprint")
        tc = dict(man["train"])
        tc["curriculum"] = tuple(tc["curriculum"])
        return cls(
            net_config=net_cfg,
            train_config=TrainConfig(**tc),
            epoch=man["epoch"],
            adam_step=man["adam_step"],
            arrays=arrays,
            history=man["history"],
            step_losses=man["step_losses"],
            meta=man["meta"],
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_bytes(p.read_bytes())

