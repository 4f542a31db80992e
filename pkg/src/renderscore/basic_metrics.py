"""Non-transport similarity metrics and per-instance score bookkeeping.

All scores are normalized to [0, 1] with 1 meaning identical, and a failed
render zeroes every score downstream (see ScoreSet.failure).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import (DimensionMismatch, ImageTooSmall, InsufficientData,
                     ZeroVector)
from .images import COLOR_TOLERANCE, GrayImage, ImageGrid, modal_color

SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class ActivationVector:
    """Penultimate-layer CNN activations for one image."""

    dim: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if self.dim < 1 or v.shape[0] != self.dim:
            raise DimensionMismatch(f"dim {self.dim} vs {v.shape[0]} values")
        if not np.isfinite(v).all():
            raise ValueError("activation values must be finite")
        object.__setattr__(self, "values", v)


def load_activation_vector(path) -> ActivationVector:
    """Read the provider JSON format: {"dim": N, "values": [...]}."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ActivationVector(dim=int(doc["dim"]), values=np.asarray(doc["values"]))


@dataclass
class ScoreSet:
    """Per-instance metric results; cis/edit_similarity may be absent (None)."""

    render_success: bool
    ems: float = 0.0
    pixel_similarity: float = 0.0
    ssim: float = 0.0
    cis: float | None = None
    edit_similarity: float | None = None

    @classmethod
    def failure(cls, with_cis: bool = False, with_edit: bool = False) -> "ScoreSet":
        """All-zero scores for a render that did not succeed."""
        return cls(render_success=False,
                   cis=0.0 if with_cis else None,
                   edit_similarity=0.0 if with_edit else None)

    def as_dict(self) -> dict:
        return asdict(self)


def pixel_similarity(x: ImageGrid, xh: ImageGrid) -> float:
    """Fraction of matching pixels among locations where either image has content.

    The modal color over the union of both images' pixels is treated as
    background; locations where both images are background are excluded from
    the comparison. Two pixels match when every channel differs by at most
    2% of full scale. Returns 1.0 when there is no content at all.
    """
    if (x.width, x.height) != (xh.width, xh.height):
        raise DimensionMismatch(f"{x.width}x{x.height} vs {xh.width}x{xh.height}")
    a = x.pixels.astype(np.float64)
    b = xh.pixels.astype(np.float64)
    if a.shape[2] != b.shape[2]:
        # compare in the common 3-channel space
        if a.shape[2] == 1:
            a = np.repeat(a, 3, axis=2)
        else:
            b = np.repeat(b, 3, axis=2)
    union = np.concatenate([a.reshape(-1, a.shape[2]),
                            b.reshape(-1, b.shape[2])])
    background = modal_color(union.astype(np.uint8)).astype(np.float64)
    a_bg = (np.abs(a - background) <= COLOR_TOLERANCE).all(axis=2)
    b_bg = (np.abs(b - background) <= COLOR_TOLERANCE).all(axis=2)
    evaluated = ~(a_bg & b_bg)
    if not evaluated.any():
        return 1.0
    match = (np.abs(a - b) <= COLOR_TOLERANCE).all(axis=2)
    return float(match[evaluated].sum() / evaluated.sum())


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW) -> np.ndarray:
    """Per-window structural similarity over the valid (unpadded) region.

    Uniform window, sample-normalized (co)variances, stabilizers on unit
    dynamic range.
    """
    np_win = window * window
    cov_norm = np_win / (np_win - 1)
    ux = uniform_filter(x, size=window)
    uy = uniform_filter(y, size=window)
    uxx = uniform_filter(x * x, size=window)
    uyy = uniform_filter(y * y, size=window)
    uxy = uniform_filter(x * y, size=window)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    s = ((2 * ux * uy + SSIM_C1) * (2 * vxy + SSIM_C2)) / \
        ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
    pad = (window - 1) // 2
    return s[pad:s.shape[0] - pad, pad:s.shape[1] - pad]


def ssim_normalized(x: GrayImage, xh: GrayImage) -> float:
    """Mean SSIM mapped from [-1, 1] onto [0, 1]."""
    if (x.width, x.height) != (xh.width, xh.height):
        raise DimensionMismatch(f"{x.width}x{x.height} vs {xh.width}x{xh.height}")
    if min(x.width, x.height) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs both sides >= {SSIM_WINDOW}")
    mean = float(ssim_map(x.values, xh.values).mean())
    return (1.0 + mean) / 2.0


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance (insert/delete/substitute, unit costs).

    Row-wise DP with vectorized rows; the sequential insertion recurrence
    cur[j] = min(cand[j], cur[j-1]+1) telescopes to a prefix minimum of
    cand[k]-k, which keeps each row a handful of array operations.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(b) > len(a):
        a, b = b, a
    n = len(b)
    bv = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    idx = np.arange(n + 1, dtype=np.int64)
    prev = idx.copy()
    cand = np.empty(n + 1, dtype=np.int64)
    for i, ch in enumerate(a, start=1):
        code = ord(ch)
        cand[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (bv != code), out=cand[1:])
        prev = np.minimum(cand, np.minimum.accumulate(cand - idx) + idx)
    return int(prev[-1])


def edit_similarity(a: str, b: str) -> float:
    """1 − levenshtein/max(len); two empty strings count as identical."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def cis(a: ActivationVector, b: ActivationVector) -> float:
    """Cosine similarity between activation vectors, shifted onto [0, 1]."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims {a.dim} vs {b.dim}")
    na = np.linalg.norm(a.values)
    nb = np.linalg.norm(b.values)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("CIS is undefined for zero vectors")
    cosine = float(np.dot(a.values, b.values) / (na * nb))
    return min(1.0, max(0.0, 0.5 * (1.0 + cosine)))


def metric_correlations(scores: dict[str, np.ndarray],
                        method: str = "pearson") -> tuple[np.ndarray, list[str]]:
    """Correlation matrix across metric columns (callers pre-filter rows).

    Constant columns produce NaN off-diagonal entries (undefined
    correlation); the diagonal is exactly 1. ``method`` is "pearson"
    (default) or "spearman" (ranks, then Pearson).
    """
    names = list(scores.keys())
    if not names:
        raise InsufficientData("no metric columns")
    cols = [np.asarray(scores[k], dtype=np.float64) for k in names]
    n = cols[0].shape[0]
    if n < 2 or any(c.shape[0] != n for c in cols):
        raise InsufficientData("need >= 2 rows of equal length")
    data = np.column_stack(cols)
    if method == "spearman":
        data = np.argsort(np.argsort(data, axis=0), axis=0).astype(np.float64)
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    constant = data.std(axis=0) == 0.0
    centered = data - data.mean(axis=0)
    denom = np.sqrt((centered ** 2).sum(axis=0))
    denom[constant] = 1.0
    normed = centered / denom
    mat = normed.T @ normed
    mat[constant, :] = np.nan
    mat[:, constant] = np.nan
    np.fill_diagonal(mat, 1.0)
    mat = np.clip(mat, -1.0, 1.0, out=mat)
    np.fill_diagonal(mat, 1.0)
    return mat, names
