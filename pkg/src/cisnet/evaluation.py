"""Detection error, ROC/AUC and class activation maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .model import CISNet
from .tensor import Tensor, no_grad


@dataclass
class EvalReport:
    scores: np.ndarray
    labels: np.ndarray
    pe: float
    best_threshold: float
    roc: np.ndarray   # (k, 2): (P_FA, 1 - P_MD), sorted by decreasing threshold
    auc: float


def _check_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (cover) or 1 (stego)")
    if y.min() == y.max():
        raise ValueError("both classes are required")
    return s, y.astype(np.int64)


def detection_error(scores, labels) -> EvalReport:
    """Minimum of (P_MD + P_FA) / 2 over every distinct decision threshold.

    An image is called stego when its score exceeds the threshold. Candidate
    thresholds are the midpoints between sorted unique scores plus one below
    the minimum and one above the maximum.
    """
    s, y = _check_labels(scores, labels)
    u = np.unique(s)
    thresholds = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])[::-1]
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    # counts of positives/negatives with score > t, for each threshold t
    pos_sorted = np.sort(s[y == 1])
    neg_sorted = np.sort(s[y == 0])
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="right")
    fp = n_neg - np.searchsorted(neg_sorted, thresholds, side="right")
    p_fa = fp / n_neg
    p_md = (n_pos - tp) / n_pos
    p_det = tp / n_pos
    pe_all = 0.5 * (p_md + p_fa)
    best = int(np.argmin(pe_all))
    roc = np.stack([p_fa, p_det], axis=1)
    auc = float(np.trapezoid(p_det, p_fa))
    return EvalReport(s, y, float(pe_all[best]), float(thresholds[best]), roc, auc)


# ---------------------------------------------------------------- CAM


@dataclass
class CamMap:
    raw: np.ndarray        # (h, w) at feature resolution
    upscaled: np.ndarray   # (H, W) at input resolution
    class_index: int


def class_activation_map(maps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted channel sum: maps (K, h, w), weights (K,) -> (h, w)."""
    maps = np.asarray(maps, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if maps.ndim != 3 or weights.shape != (maps.shape[0],):
        raise ValueError(f"need maps (K,h,w) and K weights, got {maps.shape} and {weights.shape}")
    return np.tensordot(weights, maps, axes=1)


def bilinear_upscale(raw: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = raw.shape
    zoom = (shape[0] / h, shape[1] / w)
    out = ndimage.zoom(raw, zoom, order=1, mode="nearest", grid_mode=True)
    if out.shape != tuple(shape):
        raise ValueError(f"upscale produced {out.shape}, wanted {shape}")
    return out


def cam(net: CISNet, image, class_index: int = 1, post_map: bool = False) -> CamMap:
    """Class activation map from the feature maps entering the global pool.

    With ``post_map`` the outer sublinear map is applied to the feature maps
    before weighting; by default the raw pre-pool maps are used.
    """
    if not getattr(net, "initialized", False):
        raise ValueError("network has not been initialised")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("cam works on one image at a time")
    with no_grad():
        _, maps = net.forward_with_maps(Tensor(x))
    f = maps.data[0]
    if post_map:
        g = net.cfg.spl.gamma2
        f = np.sign(f) * np.abs(f) ** g
    weights = net.blocks[-1].linear.weight.data[class_index]
    raw = class_activation_map(f, weights)
    return CamMap(raw, bilinear_upscale(raw, x.shape[2:]), class_index)


@dataclass
class CamComparison:
    spearman: float
    top_decile_overlap: float
    constant: bool


def cam_vs_probmap(cmap: CamMap | np.ndarray, prob_map) -> CamComparison:
    """Spearman rank correlation and top-10% overlap between a CAM and a probability map."""
    c = np.asarray(cmap.upscaled if isinstance(cmap, CamMap) else cmap, dtype=np.float64)
    if np.size(prob_map) != c.size:
        raise ValueError(f"extent mismatch: cam {c.shape} vs prob_map {np.shape(prob_map)}")
    p = np.asarray(prob_map, dtype=np.float64)
    c, p = c.ravel(), p.ravel()
    if np.ptp(c) == 0 or np.ptp(p) == 0:
        return CamComparison(0.0, 0.0, True)
    rho = float(stats.spearmanr(c, p).statistic)
    k = max(1, int(round(0.1 * c.size)))
    top_c = set(np.argsort(-c, kind="stable")[:k])
    top_p = set(np.argsort(-p, kind="stable")[:k])
    return CamComparison(rho, len(top_c & top_p) / k, False)
