"""Desk-scale cover/stego source.

Covers are 8-bit grayscale arrays of shape (1, H, W). The adaptive embedder
changes pixel i by +-1 with probability ``exp(-lam * cost_i)``, ``lam`` solved
so that the expected number of changes is ``payload * H * W / 2``. This rate
convention stands in for the coding-theoretic relation of real embedders.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

COST_EPS = 0.1
# spatial scales of the synthetic cover generator, in pixels, so larger
# covers are statistically a mosaic of 64x64 ones
BASE_SIGMA = 8.0
TEXTURE_SIGMA = 6.4


@dataclass
class CoverStegoPair:
    cover: np.ndarray        # uint8 (1, H, W)
    stego: np.ndarray        # uint8 (1, H, W)
    change_map: np.ndarray   # int8 in {-1, 0, 1}
    prob_map: np.ndarray     # float64 in [0, 1]
    payload_bpp: float
    seed: int
    name: str = ""


def _plane(image) -> np.ndarray:
    a = np.asarray(image)
    if a.ndim == 3:
        if a.shape[0] != 1:
            raise ValueError(f"grayscale image expected, got shape {a.shape}")
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"grayscale image expected, got shape {a.shape}")
    return a.astype(np.float64)


def toy_cost(cover) -> np.ndarray:
    """1 / (3x3 local std + 0.1): flat regions are expensive, texture cheap."""
    x = _plane(cover)
    # centring keeps sq - mean^2 from cancelling badly on bright flat areas
    x = x - x.min()
    mean = ndimage.uniform_filter(x, size=3, mode="reflect")
    sq = ndimage.uniform_filter(x * x, size=3, mode="reflect")
    # round-off can push the variance slightly below zero
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return 1.0 / (std + COST_EPS)


def change_probabilities(cost: np.ndarray, payload_bpp: float) -> np.ndarray:
    """Per-pixel change probability exp(-lam*cost) with sum = payload*N/2."""
    if not 0.0 <= payload_bpp <= 1.0:
        raise ValueError(f"payload must lie in [0, 1], got {payload_bpp}")
    cost = np.asarray(cost, dtype=np.float64)
    if not (np.isfinite(cost).all() and (cost > 0).all()):
        raise ValueError("costs must be finite and strictly positive")
    target = payload_bpp * 0.5 * cost.size
    if target == 0:
        return np.zeros_like(cost)
    c = cost - cost.min()
    # exp(-lam*cost) = exp(-lam*cmin) * exp(-lam*c); solve in log-space for stability
    def excess(lam):
        return np.log(np.exp(-lam * c).sum()) - lam * cost.min() - np.log(target)

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("could not bracket the embedding multiplier")
    if excess(0.0) <= 0:
        lam = 0.0
    else:
        lam = optimize.brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return np.exp(-lam * cost)


def _embed(cover, probs: np.ndarray, payload_bpp: float, seed: int, name: str) -> CoverStegoPair:
    x = np.asarray(cover)
    plane = x[0] if x.ndim == 3 else x
    rng = np.random.default_rng(seed)
    u = rng.random(plane.shape)
    sign = np.where(rng.random(plane.shape) < 0.5, -1, 1)
    change = np.where(u < probs, sign, 0).astype(np.int8)
    stego = np.clip(plane.astype(np.int16) + change, 0, 255).astype(np.uint8)
    return CoverStegoPair(
        cover=plane.astype(np.uint8)[None],
        stego=stego[None],
        change_map=change[None],
        prob_map=probs[None].astype(np.float64),
        payload_bpp=float(payload_bpp),
        seed=int(seed),
        name=name,
    )


def embed_adaptive(cover, payload_bpp: float, seed: int, cost=None, name: str = "") -> CoverStegoPair:
    """Toy content-adaptive +-1 embedding; ``cost`` defaults to :func:`toy_cost`."""
    cost = toy_cost(cover) if cost is None else np.asarray(cost, dtype=np.float64)
    return _embed(cover, change_probabilities(cost, payload_bpp), payload_bpp, seed, name)


def embed_lsb_matching(cover, payload_bpp: float, seed: int, name: str = "") -> CoverStegoPair:
    """Non-adaptive +-1 embedding with uniform change rate payload/2."""
    if not 0.0 <= payload_bpp <= 1.0:
        raise ValueError(f"payload must lie in [0, 1], got {payload_bpp}")
    plane = _plane(cover)
    probs = np.full(plane.shape, payload_bpp * 0.5)
    return _embed(cover, probs, payload_bpp, seed, name)


EMBEDDERS = {"adaptive": embed_adaptive, "lsbm": embed_lsb_matching}


# ---------------------------------------------------------------- covers


def synthetic_cover(size: int = 64, seed: int = 0, texture: float = 6.0) -> np.ndarray:
    """Smooth Gaussian field plus a few smoothed-noise texture patches, quantised."""
    rng = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=BASE_SIGMA, mode="wrap")
    base = 128.0 + 30.0 * base / (base.std() + 1e-12) + rng.uniform(-25, 25)
    # amplitude map: smooth blobs where texture lives
    amp = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=TEXTURE_SIGMA, mode="wrap")
    amp = np.clip((amp / (amp.std() + 1e-12)) - rng.uniform(-0.5, 0.7), 0.0, None)
    fine = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=0.7)
    fine /= fine.std() + 1e-12
    image = base + texture * rng.uniform(0.5, 1.5) * amp * fine
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)[None]


def half_smooth_half_noisy(size: int = 64, seed: int = 0, noise: float = 20.0) -> np.ndarray:
    """Left half a gentle ramp, right half white noise around mid-gray."""
    rng = np.random.default_rng(seed)
    img = np.empty((size, size))
    half = size // 2
    img[:, :half] = 100.0 + np.linspace(0.0, 4.0, half)[None, :]
    img[:, half:] = 128.0 + noise * rng.standard_normal((size, size - half))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)[None]


def center_crop(image, size: int) -> np.ndarray:
    a = np.asarray(image)
    h, w = a.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"cannot crop {h}x{w} to {size}")
    t, l = (h - size) // 2, (w - size) // 2
    return a[..., t:t + size, l:l + size].copy()


def downscale(image, factor: int) -> np.ndarray:
    """Block-mean downscaling by an integer factor, rounded back to uint8."""
    a = _plane(image)
    h, w = a.shape
    if h % factor or w % factor:
        raise ValueError("extent not divisible by factor")
    m = a.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return np.clip(np.rint(m), 0, 255).astype(np.uint8)[None]


# ---------------------------------------------------------------- PGM


class PGMError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_pgm(path) -> np.ndarray:
    """Read a binary 8-bit P5 file into a uint8 array of shape (1, H, W)."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise PGMError(f"{path}: malformed header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise PGMError(f"{path}: only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise PGMError(f"{path}: bad dimensions {width}x{height}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise PGMError(f"{path}: missing whitespace after header")
    pos += 1
    payload = raw[pos:pos + width * height]
    if len(payload) != width * height:
        raise PGMError(f"{path}: truncated payload ({len(payload)} of {width * height} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(1, height, width).copy()


def pgm_bytes(image) -> bytes:
    a = np.asarray(image)
    plane = a[0] if a.ndim == 3 else a
    if plane.ndim != 2:
        raise PGMError(f"cannot write shape {a.shape} as PGM")
    if plane.dtype != np.uint8:
        if plane.min() < 0 or plane.max() > 255:
            raise PGMError("values outside [0, 255]")
        plane = np.rint(plane).astype(np.uint8)
    h, w = plane.shape
    return b"P5\n%d %d\n255\n" % (w, h) + plane.tobytes()


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_pgm(image, path) -> None:
    atomic_write(path, pgm_bytes(image))
