"""Image augmentation for training batches.

Images are uint8 numpy arrays of shape (H, W, 3). Geometric ops resample
bilinearly through an inverse map and fill with black; photometric ops work
in float and round back to 8 bits. Every random op takes an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

_SNAP = 1e-6


@dataclass(frozen=True)
class AugmentConfig:
    rotation: float = 10.0          # degrees, symmetric
    translate: float = 0.1          # fraction of width/height, symmetric
    scale_min: float = 0.9
    scale_max: float = 1.1
    shear: float = 5.0              # degrees, symmetric
    perspective_distortion: float = 0.1
    perspective_p: float = 0.3
    equalize_p: float = 0.1
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.02               # fraction of the hue circle

    def __post_init__(self):
        for name in ("perspective_p", "equalize_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("need 0 < scale_min <= scale_max")
        if self.hue > 0.5:
            raise ValueError("hue range cannot exceed half the hue circle")
        if self.brightness >= 1.0 or self.contrast >= 1.0 or self.saturation >= 1.0:
            raise ValueError("brightness/contrast/saturation ranges must be < 1")
        if self.perspective_distortion >= 0.5:
            raise ValueError("perspective_distortion must be < 0.5")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(rotation=0.0, translate=0.0, scale_min=1.0, scale_max=1.0, shear=0.0,
                   perspective_distortion=0.0, perspective_p=0.0, equalize_p=0.0,
                   brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)


# ------------------------------------------------------------------- I/O

def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary PPM (P6) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    pos += 1
    raw = np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8)
    if raw.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return raw.reshape(h, w, 3).copy()


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Decode PPM, or PNG when Pillow is installed."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    return read_ppm(path)


# ------------------------------------------------------------- resampling

def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.rint(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


def warp(img: np.ndarray, inverse) -> np.ndarray:
    """Resample ``img`` where output pixel (x, y) reads input ``inverse(x, y)``.

    ``inverse`` maps arrays of output column/row coordinates to input
    coordinates. Bilinear interpolation; samples outside the image are black.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = inverse(xs, ys)
    sx, sy = _snap(sx), _snap(sy)
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    out[~inside] = 0.0
    return _to_uint8(out)


def affine_matrix(angle: float, translate: tuple[float, float], scale: float, shear: float,
                  size: tuple[int, int]) -> np.ndarray:
    """Forward 3x3 pixel-coordinate map: rotate/shear/scale about the image
    centre, then translate by ``translate`` pixels. Angles in degrees."""
    h, w = size
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a, s = math.radians(angle), math.radians(shear)
    rot = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    shr = np.array([[1, math.tan(s), 0], [0, 1, 0], [0, 0, 1]])
    scl = np.diag([scale, scale, 1.0])
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
    back = np.array([[1, 0, cx + translate[0]], [0, 1, cy + translate[1]], [0, 0, 1]])
    return back @ rot @ shr @ scl @ to_origin


def apply_matrix(img: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """Warp by a forward 3x3 (affine or projective) matrix."""
    inv = np.linalg.inv(forward)

    def inverse(xs, ys):
        d = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
        return ((inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / d,
                (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / d)

    return warp(img, inverse)


def random_affine(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    angle = rng.uniform(-cfg.rotation, cfg.rotation)
    tx = rng.uniform(-cfg.translate, cfg.translate) * w
    ty = rng.uniform(-cfg.translate, cfg.translate) * h
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    shear = rng.uniform(-cfg.shear, cfg.shear)
    if angle == 0 and tx == 0 and ty == 0 and scale == 1 and shear == 0:
        return img.copy()
    return apply_matrix(img, affine_matrix(angle, (tx, ty), scale, shear, (h, w)))


# ------------------------------------------------------------ perspective

def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 H (H[2,2] = 1) with H @ [x, y, 1] ~ [u, v, 1] for 4 point pairs."""
    A, b = [], []
    for (x, y), (u, v) in zip(np.asarray(src, float), np.asarray(dst, float)):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.array(A), np.array(b))
    return np.append(h, 1.0).reshape(3, 3)


def _is_degenerate(quad: np.ndarray, tol: float = 1e-6) -> bool:
    # any three corners (nearly) collinear, or the quad not convex
    signs = []
    for i in range(4):
        p, q, r = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0])
        if abs(cross) < tol:
            return True
        signs.append(cross > 0)
    return len(set(signs)) != 1


def perspective_corners(size: tuple[int, int], distortion: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Image corners and inward-displaced copies (each offset <= distortion * min(H, W))."""
    h, w = size
    src = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    reach = distortion * min(h, w)
    dst = src + inward * rng.uniform(0, reach, size=(4, 2))
    return src, dst


def random_perspective(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                       max_tries: int = 10) -> np.ndarray:
    if cfg.perspective_distortion == 0:
        return img.copy()
    size = img.shape[:2]
    for _ in range(max_tries):
        src, dst = perspective_corners(size, cfg.perspective_distortion, rng)
        if _is_degenerate(dst):
            continue
        try:
            H = homography_from_points(src, dst)
        except np.linalg.LinAlgError:
            continue
        return apply_matrix(img, H)
    return img.copy()


# ------------------------------------------------------------- photometric

def equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization by CDF remapping.

    lut[v] = round(255 * (cdf[v] - cdf_min) / (N - cdf_min)); a channel with a
    single level is left as is.
    """
    img = np.asarray(img, dtype=np.uint8)
    out = img.copy()
    n = img.shape[0] * img.shape[1]
    for c in range(3):
        chan = img[..., c]
        cdf = np.cumsum(np.bincount(chan.ravel(), minlength=256))
        cdf_min = cdf[cdf > 0][0]
        if cdf_min == n:
            continue
        lut = np.floor((cdf - cdf_min) * 255.0 / (n - cdf_min) + 0.5)
        out[..., c] = np.clip(lut, 0, 255).astype(np.uint8)[chan]
    return out


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Float RGB in [0, 1] -> HSV with hue in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h % 1.0, s, mx], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros_like(hsv)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def adjust_brightness(x: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(x * factor, 0, 255)


def adjust_contrast(x: np.ndarray, factor: float) -> np.ndarray:
    mean = x.reshape(-1, 3).mean(axis=0)
    return np.clip(factor * x + (1 - factor) * mean, 0, 255)


def adjust_saturation(x: np.ndarray, factor: float) -> np.ndarray:
    luma = (0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2])[..., None]
    return np.clip(factor * x + (1 - factor) * luma, 0, 255)


def adjust_hue(x: np.ndarray, offset: float) -> np.ndarray:
    hsv = rgb_to_hsv(x / 255.0)
    hsv[..., 0] = (hsv[..., 0] + offset) % 1.0
    return np.clip(hsv_to_rgb(hsv) * 255.0, 0, 255)


def jitter(img: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
           saturation: float = 1.0, hue: float = 0.0) -> np.ndarray:
    """Apply fixed jitter factors in the order brightness, contrast,
    saturation, hue. Identity factors leave the image untouched."""
    x = np.asarray(img, dtype=np.float64)
    if brightness != 1.0:
        x = adjust_brightness(x, brightness)
    if contrast != 1.0:
        x = adjust_contrast(x, contrast)
    if saturation != 1.0:
        x = adjust_saturation(x, saturation)
    if hue != 0.0:
        x = adjust_hue(x, hue)
    return _to_uint8(x)


def sample_jitter(cfg: AugmentConfig, rng: np.random.Generator) -> tuple[float, float, float, float]:
    return (rng.uniform(1 - cfg.brightness, 1 + cfg.brightness),
            rng.uniform(1 - cfg.contrast, 1 + cfg.contrast),
            rng.uniform(1 - cfg.saturation, 1 + cfg.saturation),
            rng.uniform(-cfg.hue, cfg.hue))


def color_jitter(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return jitter(img, *sample_jitter(cfg, rng))


# --------------------------------------------------------------- pipeline

def item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def augment_pipeline(img: np.ndarray, cfg: AugmentConfig, seed: int, index: int) -> np.ndarray:
    """affine -> perspective (with prob.) -> equalize (with prob.) -> jitter.

    Fully determined by ``(seed, index)``. Only training batches go through
    here; evaluation images are used as they are.
    """
    rng = item_rng(seed, index)
    out = random_affine(img, cfg, rng)
    if rng.random() < cfg.perspective_p:
        out = random_perspective(out, cfg, rng)
    if rng.random() < cfg.equalize_p:
        out = equalize(out)
    return color_jitter(out, cfg, rng)
