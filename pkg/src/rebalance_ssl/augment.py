"""Pixel-exact image transform kernels and the weak/strong augmentation policies.

All kernels map an (H, W, 3) uint8 array to another array of the same
shape with intensities in [0, 255].  Every random choice flows through an
explicit ``numpy.random.Generator``, so a fixed stream reproduces output
bytes exactly.  Geometric transforms fill exposed regions by reflection
(symmetric mirroring including the edge pixel), which keeps satellite
tiles free of out-of-distribution black borders.

Magnitude semantics for the enhancement transforms (Brightness, Color,
Sharpness) follow the blend convention

    out = (1 - m) * original + m * fully_enhanced

so m = 0 is the identity and the configured ranges stay gentle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imgdata import validate_image

# Strong-policy pool: name -> (lo, hi) magnitude range, or None if the
# transform is parameterless.  Contrast is deliberately absent.
TRANSFORM_RANGES: dict[str, tuple[float, float] | None] = {
    "AutoContrast": None,
    "Brightness": (0.1, 0.2),
    "Color": (0.05, 0.95),
    "Hue": (-0.1, 0.1),
    "Equalize": None,
    "Identity": None,
    "Posterize": None,
    "Shift": (0.1, 0.2),
    "Rotate": (-30.0, 30.0),
    "Sharpness": (0.5, 1.0),
    "ShearX": (0.1, 0.2),
    "ShearY": (0.1, 0.2),
    "Solarize": None,
    "TranslateX": (0.0, 1.0),
    "TranslateY": (0.0, 1.0),
}

STRONG_POOL = tuple(TRANSFORM_RANGES)

# Parameterless transforms that still draw their own knob from the stream.
POSTERIZE_BITS = (4, 8)  # inclusive
SOLARIZE_THRESHOLD = (128, 255)  # inclusive


def _to_uint8(x: np.ndarray) -> np.ndarray:
    """Clip to [0, 255] and round half-up back to uint8."""
    return np.clip(np.floor(x + 0.5), 0.0, 255.0).astype(np.uint8)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV on float arrays in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    # hue sector selection; delta == 0 -> hue 0
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB on float arrays in [0, 1]."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def _warp(img: np.ndarray, matrix: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Inverse-map affine warp about the image center, bilinear, reflect fill."""
    offset = center - matrix @ center
    out = np.empty_like(img, dtype=np.float64)
    for c in range(3):
        out[..., c] = ndimage.affine_transform(
            img[..., c].astype(np.float64),
            matrix,
            offset=offset,
            order=1,
            mode="reflect",
        )
    return _to_uint8(out)


def _translate_int(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer-pixel translation with reflective fill (content moves by +dy, +dx)."""
    h, w = img.shape[:2]
    py, px = abs(dy), abs(dx)
    if py == 0 and px == 0:
        return img.copy()
    padded = np.pad(img, ((py, py), (px, px), (0, 0)), mode="symmetric")
    y0 = py - dy
    x0 = px - dx
    return padded[y0 : y0 + h, x0 : x0 + w].copy()


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def autocontrast(img: np.ndarray) -> np.ndarray:
    """Per-channel linear stretch so the darkest pixel maps to 0, brightest to 255."""
    out = img.astype(np.float64)
    for c in range(3):
        lo = out[..., c].min()
        hi = out[..., c].max()
        if hi > lo:
            out[..., c] = (out[..., c] - lo) * (255.0 / (hi - lo))
    return _to_uint8(out)


def brightness(img: np.ndarray, m: float) -> np.ndarray:
    """Blend toward the fully bright (white) image: out = (1-m)*v + m*255."""
    return _to_uint8((1.0 - m) * img.astype(np.float64) + m * 255.0)


def color(img: np.ndarray, m: float) -> np.ndarray:
    """Blend toward the fully saturated image (S=1 in HSV, H and V kept).

    Pixels with zero saturation have no hue and stay gray.
    """
    x = img.astype(np.float64) / 255.0
    hsv = rgb_to_hsv(x)
    hsv[..., 1] = np.where(hsv[..., 1] > 0.0, 1.0, 0.0)
    saturated = hsv_to_rgb(hsv)
    return _to_uint8(((1.0 - m) * x + m * saturated) * 255.0)


def hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by ``shift`` of the hue circle via RGB->HSV->RGB with clamping."""
    x = img.astype(np.float64) / 255.0
    hsv = rgb_to_hsv(x)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return _to_uint8(hsv_to_rgb(hsv) * 255.0)


def equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization via the classic CDF remap."""
    out = np.empty_like(img)
    n = img.shape[0] * img.shape[1]
    for c in range(3):
        channel = img[..., c]
        hist = np.bincount(channel.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = cdf[np.nonzero(hist)[0][0]]
        if cdf_min == n:  # constant channel: leave untouched
            out[..., c] = channel
            continue
        lut = np.floor((cdf - cdf_min) * 255.0 / (n - cdf_min) + 0.5)
        out[..., c] = np.clip(lut, 0, 255).astype(np.uint8)[channel]
    return out


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    """Keep the top ``bits`` bits of every intensity."""
    if not 1 <= bits <= 8:
        raise ValueError(f"posterize bits must lie in [1, 8], got {bits}")
    mask = np.uint8(0xFF & (0xFF << (8 - bits)))
    return img & mask


def shift(img: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Translate by round(fraction * dimension) pixels in a random axis direction."""
    direction = int(rng.integers(0, 4))  # 0:+x 1:-x 2:+y 3:-y
    h, w = img.shape[:2]
    if direction < 2:
        d = int(np.floor(fraction * w + 0.5))
        dx = d if direction == 0 else -d
        return _translate_int(img, 0, dx)
    d = int(np.floor(fraction * h + 0.5))
    dy = d if direction == 2 else -d
    return _translate_int(img, dy, 0)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the center (positive = counter-clockwise), reflect fill."""
    if degrees == 0.0:
        return img.copy()
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # inverse rotation in (row, col) coordinates
    matrix = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    center = (np.asarray(img.shape[:2], dtype=np.float64) - 1.0) / 2.0
    return _warp(img, matrix, center)


SHARPNESS_KERNEL = np.array(
    [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]
) / 13.0


def sharpness(img: np.ndarray, m: float) -> np.ndarray:
    """Blend toward the unsharp-masked image (2*v - smoothed)."""
    x = img.astype(np.float64)
    out = np.empty_like(x)
    for c in range(3):
        smoothed = ndimage.convolve(x[..., c], SHARPNESS_KERNEL, mode="reflect")
        out[..., c] = (1.0 - m) * x[..., c] + m * (2.0 * x[..., c] - smoothed)
    return _to_uint8(out)


def shear_x(img: np.ndarray, factor: float) -> np.ndarray:
    """Shift each row horizontally by factor * (distance from center row)."""
    matrix = np.array([[1.0, 0.0], [-factor, 1.0]])
    center = (np.asarray(img.shape[:2], dtype=np.float64) - 1.0) / 2.0
    return _warp(img, matrix, center)


def shear_y(img: np.ndarray, factor: float) -> np.ndarray:
    """Shift each column vertically by factor * (distance from center column)."""
    matrix = np.array([[1.0, -factor], [0.0, 1.0]])
    center = (np.asarray(img.shape[:2], dtype=np.float64) - 1.0) / 2.0
    return _warp(img, matrix, center)


def solarize(img: np.ndarray, threshold: int) -> np.ndarray:
    """Invert every intensity at or above the threshold."""
    return np.where(img >= threshold, 255 - img, img)


def translate_x(img: np.ndarray, fraction: float) -> np.ndarray:
    """Shift content right by round(fraction * width) pixels, reflect fill."""
    return _translate_int(img, 0, int(np.floor(fraction * img.shape[1] + 0.5)))


def translate_y(img: np.ndarray, fraction: float) -> np.ndarray:
    """Shift content down by round(fraction * height) pixels, reflect fill."""
    return _translate_int(img, int(np.floor(fraction * img.shape[0] + 0.5)), 0)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def apply_transform(
    name: str, magnitude: float | None, img: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Apply one named pool transform at the given magnitude.

    Parameterless transforms ignore ``magnitude``; Posterize, Solarize and
    Shift draw their internal knob from ``rng``.
    """
    validate_image(img)
    if name not in TRANSFORM_RANGES:
        raise ValueError(f"unknown transform {name!r}")
    rng_range = TRANSFORM_RANGES[name]
    if rng_range is not None:
        if magnitude is None:
            raise ValueError(f"{name} requires a magnitude in {rng_range}")
        lo, hi = rng_range
        if not lo <= magnitude <= hi:
            raise ValueError(
                f"{name} magnitude {magnitude} outside range [{lo}, {hi}]"
            )
    if name == "AutoContrast":
        return autocontrast(img)
    if name == "Brightness":
        return brightness(img, magnitude)
    if name == "Color":
        return color(img, magnitude)
    if name == "Hue":
        return hue(img, magnitude)
    if name == "Equalize":
        return equalize(img)
    if name == "Identity":
        return img.copy()
    if name == "Posterize":
        bits = int(rng.integers(POSTERIZE_BITS[0], POSTERIZE_BITS[1] + 1))
        return posterize(img, bits)
    if name == "Shift":
        return shift(img, magnitude, rng)
    if name == "Rotate":
        return rotate(img, magnitude)
    if name == "Sharpness":
        return sharpness(img, magnitude)
    if name == "ShearX":
        return shear_x(img, magnitude)
    if name == "ShearY":
        return shear_y(img, magnitude)
    if name == "Solarize":
        threshold = int(rng.integers(SOLARIZE_THRESHOLD[0], SOLARIZE_THRESHOLD[1] + 1))
        return solarize(img, threshold)
    if name == "TranslateX":
        return translate_x(img, magnitude)
    return translate_y(img, magnitude)


@dataclass(frozen=True)
class StrongPolicy:
    """Compose ``num_ops`` pool transforms, each at a uniform random magnitude."""

    num_ops: int = 2
    pool: tuple[str, ...] = STRONG_POOL

    def __post_init__(self):
        if self.num_ops < 1:
            raise ValueError("num_ops must be >= 1")
        for name in self.pool:
            if name == "Contrast":
                raise ValueError("Contrast is not part of the strong pool")
            if name not in TRANSFORM_RANGES:
                raise ValueError(f"unknown transform {name!r} in pool")

    def serialize(self) -> dict:
        return {
            "num_ops": self.num_ops,
            "pool": [
                {"name": name, "range": TRANSFORM_RANGES[name]}
                for name in self.pool
            ],
        }


@dataclass(frozen=True)
class WeakPolicy:
    """Horizontal flip plus random crop after reflective padding.

    ``max_shift_fraction`` bounds the crop jitter: the crop window is offset
    by an integer number of pixels drawn uniformly from
    [-round(f * dim), +round(f * dim)] per axis.  ``crop=False`` disables
    the spatial jitter entirely.
    """

    flip_probability: float = 0.5
    max_shift_fraction: float = 0.125
    crop: bool = True

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        if self.max_shift_fraction < 0.0:
            raise ValueError("max_shift_fraction must be >= 0")


def strong_augment(img: np.ndarray, policy: StrongPolicy, rng: np.random.Generator) -> np.ndarray:
    """Sample ``num_ops`` transforms uniformly with replacement and compose them."""
    validate_image(img)
    out = img
    for _ in range(policy.num_ops):
        name = policy.pool[int(rng.integers(0, len(policy.pool)))]
        rng_range = TRANSFORM_RANGES[name]
        magnitude = None
        if rng_range is not None:
            magnitude = float(rng.uniform(rng_range[0], rng_range[1]))
        out = apply_transform(name, magnitude, out, rng)
    return out if out is not img else img.copy()


def weak_augment(img: np.ndarray, policy: WeakPolicy, rng: np.random.Generator) -> np.ndarray:
    """Flip-and-shift perturbation: the light view of every training image."""
    validate_image(img)
    out = img
    if policy.flip_probability > 0 and rng.random() < policy.flip_probability:
        out = out[:, ::-1]
    if policy.crop and policy.max_shift_fraction > 0:
        h, w = img.shape[:2]
        sy = int(np.floor(policy.max_shift_fraction * h + 0.5))
        sx = int(np.floor(policy.max_shift_fraction * w + 0.5))
        dy = int(rng.integers(-sy, sy + 1)) if sy else 0
        dx = int(rng.integers(-sx, sx + 1)) if sx else 0
        out = _translate_int(np.ascontiguousarray(out), dy, dx)
        return out
    return np.ascontiguousarray(out) if out is not img else img.copy()


def stream_for(seed: int, kind: int, step: int, index: int) -> np.random.Generator:
    """Derive the per-image augmentation stream from (run seed, role, step, index).

    Deriving streams functionally keeps parallel batch assembly bit-identical
    to sequential execution.
    """
    return np.random.default_rng((seed, kind, step, index))
