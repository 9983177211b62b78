"""On-disk datasets: cover PGMs, materialised stegos and ``cover_path seed payload`` manifests."""

from __future__ import annotations

import os
from pathlib import Path

from .rng import derive_seed, rng_for
from .stego import EMBEDDERS, atomic_write, load_pgm, save_pgm, synthetic_cover
from .train import PairSet, augment_rotations


def payload_tag(payload: float) -> str:
    return f"p{payload:g}"


def manifest_name(split: str, payload: float) -> str:
    return f"{split}_{payload_tag(payload)}.txt"


def stego_path(root: Path, payload: float, name: str) -> Path:
    return Path(root) / "stegos" / payload_tag(payload) / f"{name}.pgm"


def scan_covers(directory) -> dict[str, Path]:
    """Cover name (file stem) -> path for every ``*.pgm`` in ``directory``."""
    found: dict[str, Path] = {}
    for p in sorted(Path(directory).glob("*.pgm")):
        if p.stem in found:
            raise ValueError(f"duplicate cover name {p.stem!r}")
        found[p.stem] = p
    if not found:
        raise FileNotFoundError(f"no .pgm covers in {directory}")
    return found


def split_names(names, test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Deterministic train/test split; identical for every payload of a run."""
    names = sorted(names)
    if len(set(names)) != len(names):
        raise ValueError("duplicate cover names")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    order = rng_for(seed, "split").permutation(len(names))
    n_test = max(1, int(round(test_fraction * len(names))))
    test = sorted(names[i] for i in order[:n_test])
    train = sorted(names[i] for i in order[n_test:])
    return train, test


def prepare(out_dir, covers: dict[str, Path], payloads, seed: int, test_fraction: float = 0.2,
            embedder: str = "adaptive", augment: bool = False) -> dict[str, Path]:
    """Write per-payload train/test manifests and the stego PGMs they refer to.

    With ``augment`` the training covers gain three rotated copies, written
    next to the other outputs, before embedding.
    """
    out = Path(out_dir)
    train, test = split_names(covers, test_fraction, seed)
    images = {n: load_pgm(p) for n, p in covers.items()}
    paths = dict(covers)
    if augment:
        rot_dir = out / "covers_rotated"
        rot_dir.mkdir(parents=True, exist_ok=True)
        extra = []
        for n in train:
            rotated = augment_rotations(images[n][None])[1:]
            for k, r in enumerate(rotated, start=1):
                rn = f"{n}_r{90 * k}"
                if rn in images:
                    raise ValueError(f"duplicate cover name {rn!r}")
                images[rn] = r
                paths[rn] = rot_dir / f"{rn}.pgm"
                save_pgm(r, paths[rn])
                extra.append(rn)
        train = sorted(train + extra)

    embed = EMBEDDERS[embedder]
    written = {}
    for payload in payloads:
        sdir = stego_path(out, payload, "x").parent
        sdir.mkdir(parents=True, exist_ok=True)
        for split, names in (("train", train), ("test", test)):
            rows = []
            for n in names:
                s = derive_seed(seed, "embed", n, repr(float(payload)))
                pair = embed(images[n], payload, s, name=n)
                save_pgm(pair.stego, stego_path(out, payload, n))
                rel = os.path.relpath(Path(paths[n]).resolve(), out.resolve())
                rows.append(f"{rel} {s} {float(payload)!r}\n")
            mpath = out / manifest_name(split, payload)
            atomic_write(mpath, "".join(rows).encode())
            written[mpath.name] = mpath
    return written


def read_manifest(path) -> list[tuple[Path, int, float]]:
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'cover_path seed payload'")
        cover = Path(parts[0])
        if not cover.is_absolute():
            cover = path.parent / cover
        rows.append((cover, int(parts[1]), float(parts[2])))
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


def load_manifest(path, embedder: str = "adaptive") -> PairSet:
    """Pairs listed in a manifest; stegos come from disk when materialised,
    otherwise they are regenerated from the recorded seed."""
    path = Path(path)
    embed = EMBEDDERS[embedder]
    pairs = []
    seen = set()
    for cover_path, seed, payload in read_manifest(path):
        name = cover_path.stem
        if name in seen:
            raise ValueError(f"{path}: duplicate cover name {name!r}")
        seen.add(name)
        pair = embed(load_pgm(cover_path), payload, seed, name=name)
        stored = stego_path(path.parent, payload, name)
        if stored.is_file():
            pair.stego = load_pgm(stored)
        pairs.append(pair)
    return PairSet.from_pairs(pairs)


def write_synthetic_covers(out_dir, count: int, size: int, seed: int) -> dict[str, Path]:
    d = Path(out_dir) / "covers"
    d.mkdir(parents=True, exist_ok=True)
    covers = {}
    for i in range(count):
        name = f"syn{i:05d}"
        covers[name] = d / f"{name}.pgm"
        save_pgm(synthetic_cover(size, derive_seed(seed, "cover", i)), covers[name])
    return covers

