"""Image loading, color reduction, geometric normalization, patching and hashing.

Everything upstream of the metric math lives here. All functions are pure:
they never mutate their inputs and are safe to call from concurrent workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import BlankImage, ImageTooSmall

# Per-channel tolerance for "same color as" tests, 2% of full 8-bit scale.
COLOR_TOLERANCE = 0.02 * 255.0

# Post-crop content below this fraction of the original area counts as blank.
BLANK_AREA_FRACTION = 0.01

GRAY_LEVELS = 256


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """A W×H raster with 8-bit pixels, 1 or 3 channels, row-major (H, W, C)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be (H, W, 1|3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance raster with values in [0, 1], quantized to 256 levels on load."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"values must be (H, W), got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("gray values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Tiling of a gray image into rows×cols tiles that jointly partition it.

    ``patch_width``/``patch_height`` are the base tile sizes; when the image
    is not divisible by the grid, the last tile in each row/column absorbs
    the remainder, so edge tiles may be larger. ``centers`` holds per-tile
    centroids of member-pixel coordinates, normalized to [0, 1]²; ``origins``
    holds the top-left pixel of each tile in the parent image.
    """

    patches: list[GrayImage]
    rows: int
    cols: int
    patch_width: int
    patch_height: int
    centers: np.ndarray  # (K, 2) normalized (x, y)
    origins: np.ndarray = field(default=None)  # (K, 2) pixel (col, row)
    parent_width: int = 0
    parent_height: int = 0


def normalized_coords(n: int) -> np.ndarray:
    """Pixel coordinates 0..n-1 mapped onto [0, 1] (a single pixel maps to 0)."""
    if n <= 1:
        return np.zeros(n, dtype=np.float64)
    return np.arange(n, dtype=np.float64) / (n - 1)


def load_image(path) -> ImageGrid:
    """Read a PNG or JPEG file into an ImageGrid (grayscale stays 1-channel)."""
    with Image.open(path) as im:
        if im.mode in ("L",):
            arr = np.asarray(im, dtype=np.uint8)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageGrid(arr)


def save_image(img: ImageGrid, path) -> None:
    """Write an ImageGrid as PNG."""
    px = img.pixels
    if px.shape[2] == 1:
        Image.fromarray(px[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(px, mode="RGB").save(path, format="PNG")


def to_grayscale(img: ImageGrid) -> GrayImage:
    """Convert to luminance with ITU-R 601 weights, scaled to [0, 1].

    1-channel input passes through scaled; output is quantized to 256 levels
    (k/255), so repeated application is exact.
    """
    px = img.pixels.astype(np.float64)
    if img.channels == 1:
        gray = px[:, :, 0]
    else:
        gray = 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]
    levels = np.clip(np.rint(gray), 0, 255)
    return GrayImage(levels / 255.0)


def resize_to_bound(img: ImageGrid, max_dim: int) -> ImageGrid:
    """Downscale so max(W, H) == max_dim, preserving aspect, by area averaging.

    Images already within the bound are returned unchanged. The short side is
    floored (1920×1080 at bound 512 becomes 512×288).
    """
    if max_dim < 8:
        raise ValueError("max_dim must be >= 8")
    w, h = img.width, img.height
    long_side = max(w, h)
    if long_side <= max_dim:
        return img
    if w >= h:
        new_w = max_dim
        new_h = max(1, (h * max_dim) // w)
    else:
        new_h = max_dim
        new_w = max(1, (w * max_dim) // h)
    return _resize(img, new_w, new_h)


def _resize(img: ImageGrid, new_w: int, new_h: int) -> ImageGrid:
    """Resample to an exact size: box filter down, bilinear up."""
    if (new_w, new_h) == (img.width, img.height):
        return img
    shrinking = new_w <= img.width and new_h <= img.height
    resample = Image.Resampling.BOX if shrinking else Image.Resampling.BILINEAR
    px = img.pixels
    if px.shape[2] == 1:
        pil = Image.fromarray(px[:, :, 0], mode="L")
        out = np.asarray(pil.resize((new_w, new_h), resample), dtype=np.uint8)[:, :, None]
    else:
        pil = Image.fromarray(px, mode="RGB")
        out = np.asarray(pil.resize((new_w, new_h), resample), dtype=np.uint8)
    return ImageGrid(out)


def modal_color(pixels: np.ndarray) -> np.ndarray:
    """Most frequent color in an (N, C) or (H, W, C) array; ties break lexicographically."""
    flat = pixels.reshape(-1, pixels.shape[-1])
    colors, counts = np.unique(flat, axis=0, return_counts=True)
    return colors[np.argmax(counts)]


def normalize_pair(reference: ImageGrid, candidate: ImageGrid) -> tuple[ImageGrid, ImageGrid]:
    """Bring the candidate to the reference's exact dimensions.

    The candidate is scaled to fit inside the reference (aspect preserved,
    upscaling allowed), then padded on the right/bottom with its own modal
    color. The reference is returned unchanged; both outputs share W×H.
    Idempotent: a candidate already at reference size is untouched.
    """
    if candidate.channels != reference.channels:
        if reference.channels == 3:
            candidate = ImageGrid(np.repeat(candidate.pixels, 3, axis=2))
        else:
            candidate = to_grayscale_grid(candidate)
    rw, rh = reference.width, reference.height
    cw, ch = candidate.width, candidate.height
    if (cw, ch) == (rw, rh):
        return reference, candidate
    scale = min(rw / cw, rh / ch)
    new_w = min(rw, max(1, int(cw * scale + 0.5)))
    new_h = min(rh, max(1, int(ch * scale + 0.5)))
    scaled = _resize(candidate, new_w, new_h)
    pad_color = modal_color(candidate.pixels)
    canvas = np.empty((rh, rw, reference.channels), dtype=np.uint8)
    canvas[:, :] = pad_color
    canvas[:new_h, :new_w] = scaled.pixels
    return reference, ImageGrid(canvas)


def to_grayscale_grid(img: ImageGrid) -> ImageGrid:
    """Collapse a 3-channel image to a 1-channel ImageGrid (helper for padding)."""
    if img.channels == 1:
        return img
    g = to_grayscale(img)
    return ImageGrid(np.rint(g.values * 255.0).astype(np.uint8)[:, :, None])


def _tile_edges(n: int, grid: int) -> np.ndarray:
    """Tile boundaries along one axis: equal base tiles, remainder absorbed by the last."""
    base = n // grid
    edges = np.arange(grid + 1, dtype=np.int64) * base
    edges[grid] = n
    return edges


def split_patches(img: GrayImage, grid: int = 8) -> PatchGrid:
    """Split into grid×grid tiles that partition the image exactly.

    Tile centers are the centroids of member-pixel normalized coordinates,
    which makes a 1×1 tile's center coincide with its pixel's coordinate.
    """
    w, h = img.width, img.height
    if w < grid or h < grid:
        raise ImageTooSmall(f"{w}x{h} image cannot be split into a {grid}x{grid} grid")
    xs = _tile_edges(w, grid)
    ys = _tile_edges(h, grid)
    cx = normalized_coords(w)
    cy = normalized_coords(h)
    patches: list[GrayImage] = []
    centers = np.empty((grid * grid, 2), dtype=np.float64)
    origins = np.empty((grid * grid, 2), dtype=np.int64)
    k = 0
    for r in range(grid):
        for c in range(grid):
            tile = img.values[ys[r]:ys[r + 1], xs[c]:xs[c + 1]]
            patches.append(GrayImage(tile))
            centers[k, 0] = cx[xs[c]:xs[c + 1]].mean()
            centers[k, 1] = cy[ys[r]:ys[r + 1]].mean()
            origins[k, 0] = xs[c]
            origins[k, 1] = ys[r]
            k += 1
    return PatchGrid(
        patches=patches,
        rows=grid,
        cols=grid,
        patch_width=w // grid,
        patch_height=h // grid,
        centers=centers,
        origins=origins,
        parent_width=w,
        parent_height=h,
    )


def crop_to_content(img: ImageGrid) -> ImageGrid:
    """Trim border rows/columns that match the modal border color.

    The border color is the mode over the 1-pixel frame; rows/columns whose
    pixels all fall within the 2% color tolerance of it are trimmed from all
    four sides. Raises BlankImage when the remaining content covers less
    than 1% of the original area.
    """
    px = img.pixels
    h, w = px.shape[:2]
    if h >= 2 and w >= 2:
        frame = np.concatenate([
            px[0, :, :], px[-1, :, :], px[1:-1, 0, :], px[1:-1, -1, :],
        ])
    else:
        frame = px.reshape(-1, px.shape[2])
    border = modal_color(frame).astype(np.float64)
    diff = np.abs(px.astype(np.float64) - border)
    is_bg = (diff <= COLOR_TOLERANCE).all(axis=2)
    content_rows = np.where(~is_bg.all(axis=1))[0]
    content_cols = np.where(~is_bg.all(axis=0))[0]
    if content_rows.size == 0 or content_cols.size == 0:
        raise BlankImage("no non-background content")
    r0, r1 = content_rows[0], content_rows[-1] + 1
    c0, c1 = content_cols[0], content_cols[-1] + 1
    if (r1 - r0) * (c1 - c0) < BLANK_AREA_FRACTION * h * w:
        raise BlankImage("content area below 1% of the original image")
    if (r0, r1, c0, c1) == (0, h, 0, w):
        return img
    return ImageGrid(px[r0:r1, c0:c1].copy())


def content_hash(img: ImageGrid) -> str:
    """SHA-256 over dimensions, channel count and raw pixel bytes, as lowercase hex."""
    h = hashlib.sha256()
    h.update(f"{img.width}x{img.height}x{img.channels}:".encode())
    h.update(np.ascontiguousarray(img.pixels).tobytes())
    return h.hexdigest()
