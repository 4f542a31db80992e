"""Transport-based image similarity.

Four layers, from classic to composite:

- ``classic_emd``: earth mover's distance between grayscale histograms.
  Spatial information is discarded, so it is invariant to any pixel
  rearrangement.
- ``emd_p``: EMD between two patches viewed as 3-D point clouds
  (x, y, value), with ground cost  ‖Δ(x,y)‖₂ + value_weight·|Δvalue|  in
  normalized units. Patch coordinates live in the parent image's frame, so
  identical patches at different positions are a positive distance apart.
- ``emd_block``: the two-scale metric. Both images are split into a
  grid×grid tiling; tiles are matched by a transportation solve whose cost
  couples intra-patch EMD with the distance between patch centers. Moving a
  coherent block of content a short distance is cheap; scattering the same
  pixels across the image is expensive.
- ``ems``: emd_block normalized against the reference's distance to the
  worst constant image (all-black or all-white) and flipped into a [0, 1]
  similarity, 1 meaning identical.

Exact solves on full-resolution patches are quadratic in patch pixel count,
so the block metric bounds each patch's support: patches larger than
``patch_support`` per axis are area-averaged down to that many cells before
the transport solve (mass, value means, and centroids are preserved).
Several shortcuts are exact, not approximations: identical-content tile
pairs cost exactly their translation distance, and constant/constant pairs
of the same shape have the closed form ‖Δorigin‖ + value_weight·|Δvalue|
(both follow from Jensen's inequality: no plan beats pure translation when
the marginals are translates of each other).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateReference, DimensionMismatch, GridMismatch
from .images import GrayImage, PatchGrid, normalized_coords, split_patches
from .transport import Signature, emd_value, solve_transport


@dataclass(frozen=True)
class EmsConfig:
    """Knobs for the block earth-mover similarity.

    grid: patches per side (grid² tiles overall).
    max_dim: images are area-averaged down so max(W, H) <= max_dim before
        the block metric runs.
    value_weight: scale on the |Δvalue| term of the patch ground cost,
        relative to normalized spatial distance.
    patch_support: per-axis bound on support points per patch; larger
        patches are coarsened (exact for images up to grid*patch_support
        on a side).
    """

    grid: int = 8
    max_dim: int = 512
    value_weight: float = 1.0
    patch_support: int = 8

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if self.max_dim < self.grid:
            raise ValueError("max_dim must be >= grid")
        if self.value_weight <= 0:
            raise ValueError("value_weight must be > 0")
        if self.patch_support < 1:
            raise ValueError("patch_support must be >= 1")


@dataclass(frozen=True)
class EmsResult:
    """Block earth-mover similarity plus its raw ingredients."""

    ems: float
    emd_block: float
    denominator: float
    worst_constant: str  # "black" | "white"


def grayscale_signature(img: GrayImage) -> Signature:
    """Histogram of gray values as a unit-mass signature."""
    values, counts = np.unique(img.values, return_counts=True)
    weights = counts / img.values.size
    return Signature(values[:, None], weights)


def classic_emd(x: GrayImage, xh: GrayImage) -> float:
    """EMD between grayscale histograms with |Δvalue| ground cost.

    Both values and cost live in [0, 1], so the result does too. Purely
    histogram-based: any permutation of either image's pixels leaves it
    unchanged.
    """
    if (x.width, x.height) != (xh.width, xh.height):
        raise DimensionMismatch(
            f"{x.width}x{x.height} vs {xh.width}x{xh.height}")
    sa = grayscale_signature(x)
    sb = grayscale_signature(xh)
    cost = np.abs(sa.points[:, 0][:, None] - sb.points[:, 0][None, :])
    return emd_value(sa, sb, cost)


def multidim_signature(patch: GrayImage, origin: tuple[float, float] = (0.0, 0.0),
                       parent_size: tuple[int, int] | None = None) -> Signature:
    """One support point per pixel: ((x, y) in parent frame, value), uniform mass.

    ``origin`` is the patch's top-left position in normalized parent
    coordinates; ``parent_size`` (W, H) fixes the pixel spacing 1/(W-1).
    Standalone patches default to being their own parent.
    """
    h, w = patch.values.shape
    if parent_size is None:
        pw, ph = w, h
    else:
        pw, ph = parent_size
    sx = 1.0 / (pw - 1) if pw > 1 else 0.0
    sy = 1.0 / (ph - 1) if ph > 1 else 0.0
    xs = origin[0] + np.arange(w) * sx
    ys = origin[1] + np.arange(h) * sy
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel(), patch.values.ravel()])
    weights = np.full(h * w, 1.0 / (h * w))
    return Signature(points, weights)


def point_cloud_cost(pa: np.ndarray, pb: np.ndarray,
                     value_weight: float = 1.0) -> np.ndarray:
    """Ground cost between (x, y, value) points: ‖Δxy‖₂ + value_weight·|Δv|."""
    dxy = np.sqrt(
        (pa[:, None, 0] - pb[None, :, 0]) ** 2
        + (pa[:, None, 1] - pb[None, :, 1]) ** 2)
    dv = np.abs(pa[:, None, 2] - pb[None, :, 2])
    return dxy + value_weight * dv


def emd_p(patch_a: GrayImage, origin_a: tuple[float, float],
          patch_b: GrayImage, origin_b: tuple[float, float],
          parent_size: tuple[int, int] | None = None,
          value_weight: float = 1.0) -> float:
    """Exact EMD between two patches as multidimensional signatures."""
    sa = multidim_signature(patch_a, origin_a, parent_size)
    sb = multidim_signature(patch_b, origin_b, parent_size)
    cost = point_cloud_cost(sa.points, sb.points, value_weight)
    return emd_value(sa, sb, cost)


# ---------------------------------------------------------------------------
# fast block machinery
# ---------------------------------------------------------------------------

def _overlap_matrix(old: int, new: int) -> np.ndarray:
    """Row-stochastic (new, old) matrix averaging old cells into new ones."""
    if new == old:
        return np.eye(old)
    scale = old / new
    out = np.zeros((new, old))
    for i in range(new):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(old, int(np.ceil(hi)))
        for j in range(j0, j1):
            out[i, j] = min(hi, j + 1) - max(lo, j)
    return out / scale


def area_resize(values: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Exact area-average resample of a float raster."""
    h, w = values.shape
    if (new_h, new_w) == (h, w):
        return values
    return _overlap_matrix(h, new_h) @ values @ _overlap_matrix(w, new_w).T


def _working_values(img: GrayImage, cfg: EmsConfig) -> np.ndarray:
    """Downscale to the metric's working resolution (no-op when within bound)."""
    h, w = img.values.shape
    long_side = max(h, w)
    if long_side <= cfg.max_dim:
        return img.values
    if w >= h:
        nw = cfg.max_dim
        nh = max(cfg.grid, (h * cfg.max_dim) // w)
    else:
        nh = cfg.max_dim
        nw = max(cfg.grid, (w * cfg.max_dim) // h)
    # averaging cannot leave [0, 1]; clamp float rounding residue
    return np.clip(area_resize(img.values, nh, nw), 0.0, 1.0)


def _coarse_edges(n: int, cells: int) -> np.ndarray:
    return (np.arange(cells + 1) * n) // cells


class _TileTable:
    """Per-tile support data for one image's tiling, deduplicated by content.

    For each tile: coarse cell values, masses, local coordinates (offsets
    from the tile origin in the parent's normalized frame), a content id
    shared by identical tiles of identical shape, and a constant-value
    marker. Origins are kept in pixels so tile-pair deltas are exact keys.
    """

    def __init__(self, grid_obj: PatchGrid, cfg: EmsConfig):
        w, h = grid_obj.parent_width, grid_obj.parent_height
        sx = 1.0 / (w - 1) if w > 1 else 0.0
        sy = 1.0 / (h - 1) if h > 1 else 0.0
        self.scale = (sx, sy)
        self.centers = grid_obj.centers
        self.origins = grid_obj.origins
        self.values: list[np.ndarray] = []
        self.masses: list[np.ndarray] = []
        self.local_xy: list[np.ndarray] = []
        self.content_id: list[int] = []
        self.const_val: list[float | None] = []
        self.shape_id: list[tuple[int, int]] = []
        seen: dict = {}
        layout_cache: dict = {}
        for tile in grid_obj.patches:
            tv = tile.values
            th, tw = tv.shape
            cells_r = min(th, cfg.patch_support)
            cells_c = min(tw, cfg.patch_support)
            key_layout = (th, tw)
            if key_layout not in layout_cache:
                er = _coarse_edges(th, cells_r)
                ec = _coarse_edges(tw, cells_c)
                # cell centroids = mean member-pixel offset, in parent units
                cyc = np.array([np.arange(er[i], er[i + 1]).mean() for i in range(cells_r)]) * sy
                cxc = np.array([np.arange(ec[i], ec[i + 1]).mean() for i in range(cells_c)]) * sx
                gx, gy = np.meshgrid(cxc, cyc)
                counts = np.outer(np.diff(er), np.diff(ec)).astype(np.float64)
                layout_cache[key_layout] = (
                    er, ec, np.column_stack([gx.ravel(), gy.ravel()]),
                    (counts / (th * tw)).ravel())
            er, ec, xy, mass = layout_cache[key_layout]
            if cells_r == th and cells_c == tw:
                vals = tv.ravel().astype(np.float64)
            else:
                sums = np.add.reduceat(np.add.reduceat(tv, er[:-1], axis=0), ec[:-1], axis=1)
                counts = np.outer(np.diff(er), np.diff(ec))
                vals = (sums / counts).ravel()
            ckey = (th, tw, np.round(vals, 12).tobytes())
            cid = seen.setdefault(ckey, len(seen))
            self.values.append(vals)
            self.masses.append(mass)
            self.local_xy.append(xy)
            self.content_id.append(cid)
            self.shape_id.append((th, tw))
            self.const_val.append(float(vals[0]) if np.all(vals == vals[0]) else None)


def _block_costs(ta: _TileTable, tb: _TileTable, cfg: EmsConfig) -> np.ndarray:
    """All tile-pair costs: EMD between patches plus center distance."""
    k = len(ta.values)
    sx, sy = ta.scale
    vw = cfg.value_weight
    out = np.empty((k, k))
    pair_cache: dict = {}
    spatial_cache: dict = {}
    for t in range(k):
        va = ta.values[t]
        ca = ta.const_val[t]
        for u in range(k):
            dx_px = int(ta.origins[t, 0] - tb.origins[u, 0])
            dy_px = int(ta.origins[t, 1] - tb.origins[u, 1])
            key = (ta.content_id[t], tb.content_id[u], dx_px, dy_px)
            cached = pair_cache.get(key)
            if cached is None:
                dx = dx_px * sx
                dy = dy_px * sy
                shift = np.hypot(dx, dy)
                vb = tb.values[u]
                cb = tb.const_val[u]
                same_shape = ta.shape_id[t] == tb.shape_id[u]
                if ta is tb:
                    identical = same_shape and ta.content_id[t] == tb.content_id[u]
                else:
                    identical = same_shape and np.array_equal(va, vb)
                if identical:
                    # identical content: pure translation is optimal
                    cached = shift
                elif same_shape and cb is not None:
                    # constant demand side: the value term is fixed by the
                    # supply marginals, and translation is spatially optimal
                    cached = shift + vw * float(np.dot(ta.masses[t], np.abs(va - cb)))
                elif same_shape and ca is not None:
                    cached = shift + vw * float(np.dot(tb.masses[u], np.abs(vb - ca)))
                else:
                    skey = (ta.shape_id[t], tb.shape_id[u], dx_px, dy_px)
                    spatial = spatial_cache.get(skey)
                    if spatial is None:
                        xa = ta.local_xy[t]
                        xb = tb.local_xy[u]
                        spatial = np.sqrt(
                            (xa[:, None, 0] + dx - xb[None, :, 0]) ** 2
                            + (xa[:, None, 1] + dy - xb[None, :, 1]) ** 2)
                        spatial_cache[skey] = spatial
                    cost = spatial + vw * np.abs(va[:, None] - vb[None, :])
                    cached = emd_value(ta.masses[t], tb.masses[u], cost)
                pair_cache[key] = cached
            center = np.hypot(ta.centers[t, 0] - tb.centers[u, 0],
                              ta.centers[t, 1] - tb.centers[u, 1])
            out[t, u] = cached + center
    return out


def block_cost_matrix(grid_a: PatchGrid, grid_b: PatchGrid,
                      cfg: EmsConfig | None = None) -> np.ndarray:
    """K×K matrix of patch-pair costs (intra-patch EMD + center distance)."""
    cfg = cfg or EmsConfig()
    if (grid_a.rows, grid_a.cols) != (grid_b.rows, grid_b.cols):
        raise GridMismatch("patch grids differ in shape")
    if (grid_a.parent_width, grid_a.parent_height) != \
            (grid_b.parent_width, grid_b.parent_height):
        raise GridMismatch("patch grids come from different image sizes")
    return _block_costs(_TileTable(grid_a, cfg), _TileTable(grid_b, cfg), cfg)


def _table_for(values: np.ndarray, cfg: EmsConfig) -> _TileTable:
    return _TileTable(split_patches(GrayImage(values), cfg.grid), cfg)


def _block_emd(ta: _TileTable, tb: _TileTable, cfg: EmsConfig) -> float:
    cost = _block_costs(ta, tb, cfg)
    k = cost.shape[0]
    masses = np.full(k, 1.0 / k)
    plan = solve_transport(masses, masses, cost)
    return plan.objective / plan.moved_mass


def emd_block(x: GrayImage, xh: GrayImage, cfg: EmsConfig | None = None) -> float:
    """Two-scale earth mover's distance over a grid×grid tiling."""
    cfg = cfg or EmsConfig()
    if (x.width, x.height) != (xh.width, xh.height):
        raise DimensionMismatch(
            f"{x.width}x{x.height} vs {xh.width}x{xh.height}")
    return _block_emd(_table_for(_working_values(x, cfg), cfg),
                      _table_for(_working_values(xh, cfg), cfg), cfg)


def ems(x: GrayImage, xh: GrayImage, cfg: EmsConfig | None = None) -> EmsResult:
    """Earth mover similarity: 1 − emd_block/denominator, clamped to [0, 1].

    The denominator is the reference's emd_block against whichever constant
    image (all-black or all-white) is farther from it, so 0 means "no more
    similar than the worst flat image" and 1 means identical.
    """
    cfg = cfg or EmsConfig()
    if (x.width, x.height) != (xh.width, xh.height):
        raise DimensionMismatch(
            f"{x.width}x{x.height} vs {xh.width}x{xh.height}")
    wx = _working_values(x, cfg)
    wh = _working_values(xh, cfg)
    ta = _table_for(wx, cfg)
    d = _block_emd(ta, _table_for(wh, cfg), cfg)
    d_black = _block_emd(ta, _table_for(np.zeros_like(wx), cfg), cfg)
    d_white = _block_emd(ta, _table_for(np.ones_like(wx), cfg), cfg)
    if d_black >= d_white:
        denominator, worst = d_black, "black"
    else:
        denominator, worst = d_white, "white"
    if denominator <= 0.0:
        raise DegenerateReference("reference is equidistant (0) from both constants")
    score = min(1.0, max(0.0, 1.0 - d / denominator))
    return EmsResult(ems=score, emd_block=d, denominator=denominator,
                     worst_constant=worst)
