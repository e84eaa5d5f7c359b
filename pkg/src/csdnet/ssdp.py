"""Discrepancy parsing: pattern map, adaptive rectangle mask, crop augment.

The differentiable part is small: the pattern map P (a 1x1 projection of the
feature map) and the sigmoid-gated refinement of features by P. Everything
derived from the image-resolution map (binarization, connected components,
crop-and-zoom) is pure data augmentation and deliberately carries no
gradient, so those functions work on plain numpy arrays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import diagnostics
from . import tensor as T
from .tensor import Tensor


@dataclass
class PatternMap:
    """Feature-resolution score map plus its image-resolution resize.

    ``p`` stays on the tape (it gates the refinement); ``p_img`` feeds the
    non-differentiable mask path only.
    """

    p: Tensor
    p_img: np.ndarray


@dataclass
class DiscrepancyMask:
    """Binary image-size mask whose 1-region is one filled rectangle."""

    mask: np.ndarray
    rect: tuple[int, int, int, int]  # top, left, height, width


def pattern_map(x: Tensor, kernel: Tensor, img_h: int, img_w: int) -> PatternMap:
    """Project features to a score map and resize it to image resolution."""
    p = T.conv2d_1x1(x, kernel)
    p_img = T.bilinear_resize_array(p.data, img_h, img_w)
    return PatternMap(p=p, p_img=p_img)


def binarize(p_img: np.ndarray) -> np.ndarray:
    """1 where the map strictly exceeds its mean, else 0.

    The strict inequality makes a constant map binarize to all zeros; the
    mask builder below covers that case with a full-image fallback.
    """
    p_img = np.asarray(p_img, dtype=np.float64)
    return (p_img > p_img.mean()).astype(np.uint8)


def _grow_to_square(rect, h, w):
    top, left, rh, rw = rect
    side = max(rh, rw)
    # Center the square on the rectangle, shift into bounds, clamp to the
    # image extent when the image itself is smaller than the square.
    top = top - (side - rh) // 2
    left = left - (side - rw) // 2
    top = min(max(top, 0), max(h - side, 0))
    left = min(max(left, 0), max(w - side, 0))
    return top, left, min(side, h - top), min(side, w - left)


def largest_component_mask(b: np.ndarray, square: bool = False) -> DiscrepancyMask:
    """Fill the bounding box of the largest 4-connected 1-region of ``b``.

    Ties go to the component whose lexicographically smallest (row, col)
    cell comes first. An all-zero map falls back to the whole image so a
    constant pattern map still yields a usable (identity) augmentation.
    ``square`` optionally grows the box to a square clipped at the borders.
    """
    b = np.asarray(b)
    if b.ndim != 2:
        raise ValueError(f"largest_component_mask: expected a 2-d map, got shape {b.shape}")
    h, w = b.shape
    seen = np.zeros((h, w), dtype=bool)
    best = None  # (size, seed_cell, bbox); row-major seed is the component min
    for i in range(h):
        for j in range(w):
            if not b[i, j] or seen[i, j]:
                continue
            size = 0
            minr = maxr = i
            minc = maxc = j
            queue = deque([(i, j)])
            seen[i, j] = True
            while queue:
                r, c = queue.popleft()
                size += 1
                if r < minr:
                    minr = r
                elif r > maxr:
                    maxr = r
                if c < minc:
                    minc = c
                elif c > maxc:
                    maxc = c
                if r > 0 and b[r - 1, c] and not seen[r - 1, c]:
                    seen[r - 1, c] = True
                    queue.append((r - 1, c))
                if r + 1 < h and b[r + 1, c] and not seen[r + 1, c]:
                    seen[r + 1, c] = True
                    queue.append((r + 1, c))
                if c > 0 and b[r, c - 1] and not seen[r, c - 1]:
                    seen[r, c - 1] = True
                    queue.append((r, c - 1))
                if c + 1 < w and b[r, c + 1] and not seen[r, c + 1]:
                    seen[r, c + 1] = True
                    queue.append((r, c + 1))
            if best is None or size > best[0]:
                best = (size, (i, j), (minr, minc, maxr, maxc))

    if best is None:
        rect = (0, 0, h, w)
    else:
        minr, minc, maxr, maxc = best[2]
        rect = (minr, minc, maxr - minr + 1, maxc - minc + 1)
        if square:
            rect = _grow_to_square(rect, h, w)

    mask = np.zeros((h, w))
    top, left, rh, rw = rect
    mask[top : top + rh, left : left + rw] = 1.0
    return DiscrepancyMask(mask=mask, rect=rect)


def augment(image: np.ndarray, mask: DiscrepancyMask) -> np.ndarray:
    """Crop the image to the mask rectangle and zoom back to full size.

    Equivalent to keeping the support of image * mask and rescaling it.
    Pure data augmentation: the result is a constant input to the augmented
    branch and no gradient flows back to the source image.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"augment: expected a (3, h, w) image, got shape {image.shape}")
    h, w = image.shape[1:]
    top, left, rh, rw = mask.rect
    if rh < 1 or rw < 1 or top < 0 or left < 0 or top + rh > h or left + rw > w:
        raise ValueError(f"augment: rect {mask.rect} out of bounds for {h}x{w}")
    diagnostics.bump("ssdp.augment_calls")
    crop = image[:, top : top + rh, left : left + rw]
    return T.bilinear_resize_array(crop, h, w)


def refine(x: Tensor, p: Tensor) -> Tensor:
    """Gate every feature channel by sigmoid(p); fully differentiable."""
    if p.data.ndim != 2 or x.data.ndim != 3 or p.shape != x.shape[1:]:
        raise ValueError(f"refine: pattern map {p.shape} does not match features {x.shape}")
    return T.scale_channels(x, T.sigmoid(p))
