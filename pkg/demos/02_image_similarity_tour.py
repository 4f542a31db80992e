"""What each image metric sees: identical, translated, shuffled, inverted.

The point of the block earth-mover similarity is the translated-vs-shuffled
row: classic histogram EMD cannot tell them apart, while the block metric
rewards coherent movement and punishes scattering.

Run:  python demos/02_image_similarity_tour.py
"""

import numpy as np

from renderscore import (EmsConfig, GrayImage, classic_emd, ems,
                         pixel_similarity, ssim_normalized)
from renderscore.images import ImageGrid


def gray(a):
    return GrayImage(np.asarray(a, dtype=np.float64))


def rgb(a):
    arr = np.rint(np.asarray(a) * 255).astype(np.uint8)
    return ImageGrid(np.repeat(arr[:, :, None], 3, axis=2))


# a mostly-white page with a few dense content blocks
rng = np.random.default_rng(42)
img = np.ones((128, 128))
for r, c in [(0, 1), (2, 3), (4, 1), (5, 5), (1, 6), (6, 2), (3, 0), (7, 4)]:
    img[r * 16:(r + 1) * 16, c * 16:(c + 1) * 16] = \
        rng.random((16, 16)) < 0.5
img = np.round(img * 255) / 255

translated = np.ones_like(img)
translated[:, 16:] = img[:, :-16]          # everything one patch right

shuffled = img.ravel().copy()
rng.shuffle(shuffled)                      # same histogram, no structure
shuffled = shuffled.reshape(img.shape)

inverted = 1.0 - img

cfg = EmsConfig()
candidates = [("identical", img), ("translated 1 patch", translated),
              ("pixel shuffle", shuffled), ("inverted", inverted)]

print(f"{'candidate':>20} {'EMS':>7} {'classic EMD':>12} "
      f"{'pixel sim':>10} {'SSIM':>7}")
for name, cand in candidates:
    e = ems(gray(img), gray(cand), cfg).ems
    c = classic_emd(gray(img), gray(cand))
    p = pixel_similarity(rgb(img), rgb(cand))
    s = ssim_normalized(gray(img), gray(cand))
    print(f"{name:>20} {e:7.3f} {c:12.3f} {p:10.3f} {s:7.3f}")

print("\nclassic EMD calls the shuffle identical (0.000) because it only "
      "sees the histogram;\nthe block metric separates it from the "
      "translation, which preserves structure.")
