"""Stochastic view-pair augmentation with rotation families for round images.

All operations act on float32 images of shape (H, W, 3) with values in
[0, 1] and draw randomness from an explicit ``numpy.random.Generator``, so
callers own determinism and may parallelize with per-image streams.

The transform order inside :func:`apply_stack` is fixed: crop, flips,
rotations, color jitter, grayscale.

Rotation conventions: ``rot90k(img, 1)`` equals ``numpy.rot90`` on the
spatial axes (counter-clockwise when the image is displayed with row 0 on
top), and ``rotate_any(img, 90, fill)`` matches it up to bilinear rounding.
Corners exposed by a non-right-angle rotation take a fill color, by default
the dataset-wide mean border color.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cv2
import numpy as np

from .data import ImageDataset

# Aspect ratio range of the random resized crop, as in standard contrastive
# training recipes.
_CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class CropConfig:
    enabled: bool = True
    scale_range: tuple[float, float] = (0.2, 1.0)
    output_size: int = 28


@dataclass
class FlipConfig:
    enabled: bool = True
    probability: float = 0.5


@dataclass
class JitterConfig:
    enabled: bool = True
    probability: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1


@dataclass
class GrayscaleConfig:
    enabled: bool = True
    probability: float = 0.2


@dataclass
class Rot90Config:
    enabled: bool = False


@dataclass
class RotAnyConfig:
    enabled: bool = False


@dataclass
class AugmentationConfig:
    """Declarative transform stack configuration.

    ``fill_color`` is an RGB triple on the 0..255 scale or ``"auto"``, in
    which case :func:`resolve_fill_color` computes the dataset border mean
    once and caches it here.
    """

    crop: CropConfig = field(default_factory=CropConfig)
    hflip: FlipConfig = field(default_factory=FlipConfig)
    vflip: FlipConfig = field(default_factory=lambda: FlipConfig(enabled=False))
    jitter: JitterConfig = field(default_factory=JitterConfig)
    grayscale: GrayscaleConfig = field(default_factory=GrayscaleConfig)
    rot90: Rot90Config = field(default_factory=Rot90Config)
    rot_any: RotAnyConfig = field(default_factory=RotAnyConfig)
    fill_color: tuple[float, float, float] | str = "auto"
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("hflip", "vflip", "jitter", "grayscale"):
            p = getattr(self, name).probability
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability must be in [0,1], got {p}")
        lo, hi = self.crop.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop.scale_range}")
        if self.crop.output_size < 1:
            raise ValueError(f"crop output_size must be >= 1, got {self.crop.output_size}")
        if self.rot90.enabled and self.rot_any.enabled:
            warnings.warn(
                "rot90 and rot_any are both enabled; arbitrary rotations subsume "
                "90-degree ones, both will be applied in sequence",
                stacklevel=2,
            )
        if self.fill_color != "auto":
            fill = np.asarray(self.fill_color, dtype=np.float64)
            if fill.shape != (3,):
                raise ValueError(f"fill_color must be an RGB triple or 'auto', got {self.fill_color!r}")


@dataclass
class ViewPair:
    """Two independently augmented views of one source image."""

    view_a: np.ndarray
    view_b: np.ndarray
    source_index: int = -1


def to_unit(images: np.ndarray) -> np.ndarray:
    """uint8 images to float32 in [0, 1]."""
    return images.astype(np.float32) / 255.0


def to_uint8(images: np.ndarray) -> np.ndarray:
    return (np.clip(images, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def compute_border_fill(ds: ImageDataset) -> np.ndarray:
    """Per-channel mean of the 1-pixel border of every image, 0..255 scale.

    The same triple is reused for every image of the dataset.
    """
    if ds.n_images == 0:
        raise ValueError("cannot compute border fill of an empty dataset")
    imgs = ds.images.astype(np.float64)
    top = imgs[:, 0, :, :]
    bottom = imgs[:, -1, :, :]
    left = imgs[:, 1:-1, 0, :]
    right = imgs[:, 1:-1, -1, :]
    border = np.concatenate(
        [top.reshape(-1, 3), bottom.reshape(-1, 3),
         left.reshape(-1, 3), right.reshape(-1, 3)], axis=0)
    return border.mean(axis=0)


def resolve_fill_color(cfg: AugmentationConfig, ds: ImageDataset) -> AugmentationConfig:
    """Replace ``fill_color="auto"`` with the dataset border mean (cached in cfg)."""
    if cfg.fill_color == "auto":
        cfg.fill_color = tuple(float(v) for v in compute_border_fill(ds))
    return cfg


def rot90k(img: np.ndarray, k: int) -> np.ndarray:
    """Rotate a square image by k * 90 degrees counter-clockwise (exact pixel permutation)."""
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"rot90k requires a square image, got {img.shape[:2]}")
    if not 0 <= int(k) <= 3:
        raise ValueError(f"k must be in 0..3, got {k}")
    return np.ascontiguousarray(np.rot90(img, int(k), axes=(0, 1)))


def rotate_any(img: np.ndarray, angle: float, fill: np.ndarray | tuple) -> np.ndarray:
    """Rotate a square image about its center by ``angle`` degrees counter-clockwise.

    Bilinear interpolation; sample points falling outside the source take the
    fill color (same intensity scale as ``img``). Output shape equals input
    shape. ``rotate_any(img, 90, fill)`` agrees with ``rot90k(img, 1)`` up to
    interpolation rounding.
    """
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"rotate_any requires a square image, got {img.shape[:2]}")
    h = img.shape[0]
    theta = np.deg2rad(angle % 360.0)
    if theta == 0.0:
        return img.copy()
    m = (h - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:h].astype(np.float64)
    rho = rows - m
    gam = cols - m
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # Inverse map chosen so that angle=90 reproduces numpy.rot90 exactly.
    src_r = m + rho * cos_t + gam * sin_t
    src_c = m - rho * sin_t + gam * cos_t
    # Subpixel tolerance so right-angle rotations are not clipped by float error.
    eps = 1e-7
    outside = ((src_r < -eps) | (src_r > h - 1 + eps)
               | (src_c < -eps) | (src_c > h - 1 + eps))

    r0 = np.clip(np.floor(src_r), 0, h - 1).astype(np.intp)
    c0 = np.clip(np.floor(src_c), 0, h - 1).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, h - 1)
    fr = (src_r - r0)[..., None]
    fc = (src_c - c0)[..., None]

    img_f = img.astype(np.float64, copy=False)
    out = (img_f[r0, c0] * (1 - fr) * (1 - fc)
           + img_f[r0, c1] * (1 - fr) * fc
           + img_f[r1, c0] * fr * (1 - fc)
           + img_f[r1, c1] * fr * fc)
    fill_arr = np.asarray(fill, dtype=np.float64).reshape(3)
    out[outside] = fill_arr
    return out.astype(img.dtype, copy=False) if np.issubdtype(img.dtype, np.floating) \
        else np.clip(np.round(out), 0, 255).astype(img.dtype)


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def _random_resized_crop(img: np.ndarray, cfg: CropConfig, rng: np.random.Generator,
                         trace: dict | None) -> np.ndarray:
    h, w = img.shape[:2]
    area = h * w
    lo, hi = cfg.scale_range
    box = None
    for _ in range(10):
        target_area = area * rng.uniform(lo, hi)
        ratio = np.exp(rng.uniform(np.log(_CROP_RATIO[0]), np.log(_CROP_RATIO[1])))
        ch = int(round(np.sqrt(target_area / ratio)))
        cw = int(round(np.sqrt(target_area * ratio)))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            box = (top, left, ch, cw)
            break
    if box is None:
        # Fallback: central square crop of the feasible side length.
        side = min(h, w)
        top = (h - side) // 2
        left = (w - side) // 2
        box = (top, left, side, side)
    if trace is not None:
        trace["crop_box"] = box
    top, left, ch, cw = box
    return _resize(img[top:top + ch, left:left + cw], cfg.output_size)


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    safe = np.maximum(delta, 1e-12)
    hr = ((g - b) / safe) % 6.0
    hg = (b - r) / safe + 2.0
    hb = (r - g) / safe + 4.0
    hue = np.where(maxc == r, hr, np.where(maxc == g, hg, hb)) / 6.0
    hue = np.where(delta == 0, 0.0, hue)
    return np.stack([hue, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hue, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(hue * 6.0)
    f = hue * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices_r = np.stack([v, q, p, p, t, v], axis=-1)
    choices_g = np.stack([t, v, v, q, p, p], axis=-1)
    choices_b = np.stack([p, p, t, v, v, q], axis=-1)
    idx = i[..., None]
    r = np.take_along_axis(choices_r, idx, axis=-1)[..., 0]
    g = np.take_along_axis(choices_g, idx, axis=-1)[..., 0]
    b = np.take_along_axis(choices_b, idx, axis=-1)[..., 0]
    return np.stack([r, g, b], axis=-1)


def _grayscale(img: np.ndarray) -> np.ndarray:
    y = img @ _GRAY_WEIGHTS
    return np.repeat(y[..., None], 3, axis=-1)


def _color_jitter(img: np.ndarray, cfg: JitterConfig, rng: np.random.Generator,
                  trace: dict | None) -> np.ndarray:
    order = rng.permutation(4)
    factors = {
        "brightness": float(rng.uniform(max(0.0, 1 - cfg.brightness), 1 + cfg.brightness)),
        "contrast": float(rng.uniform(max(0.0, 1 - cfg.contrast), 1 + cfg.contrast)),
        "saturation": float(rng.uniform(max(0.0, 1 - cfg.saturation), 1 + cfg.saturation)),
        "hue": float(rng.uniform(-cfg.hue, cfg.hue)),
    }
    if trace is not None:
        trace["jitter"] = dict(factors)
        trace["jitter_order"] = order.tolist()
    out = img
    for op in order:
        if op == 0:
            out = np.clip(out * factors["brightness"], 0.0, 1.0)
        elif op == 1:
            mean = _grayscale(out)[..., 0].mean()
            out = np.clip(out * factors["contrast"] + (1 - factors["contrast"]) * mean, 0.0, 1.0)
        elif op == 2:
            gray = _grayscale(out)
            out = np.clip(out * factors["saturation"] + (1 - factors["saturation"]) * gray, 0.0, 1.0)
        else:
            if factors["hue"] != 0.0:
                hsv = _rgb_to_hsv(out)
                hsv[..., 0] = (hsv[..., 0] + factors["hue"]) % 1.0
                out = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return out.astype(np.float32, copy=False)


def apply_stack(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator,
                trace: dict | None = None) -> np.ndarray:
    """Apply the configured transform stack to one unit-interval float image.

    Every stochastic choice is drawn from ``rng``; pass ``trace`` to record
    the drawn parameters. Output shape is always (output_size, output_size, 3).
    """
    out = img
    if cfg.crop.enabled:
        out = _random_resized_crop(out, cfg.crop, rng, trace)
    if cfg.hflip.enabled:
        flip = bool(rng.random() < cfg.hflip.probability)
        if trace is not None:
            trace["hflip"] = flip
        if flip:
            out = out[:, ::-1]
    if cfg.vflip.enabled:
        flip = bool(rng.random() < cfg.vflip.probability)
        if trace is not None:
            trace["vflip"] = flip
        if flip:
            out = out[::-1, :]
    if cfg.rot90.enabled:
        k = int(rng.integers(0, 4))
        if trace is not None:
            trace["rot90_k"] = k
        if k:
            out = rot90k(out, k)
    if cfg.rot_any.enabled:
        angle = float(rng.uniform(0.0, 360.0))
        if trace is not None:
            trace["angle"] = angle
        fill = _unit_fill(cfg)
        out = rotate_any(np.ascontiguousarray(out, dtype=np.float32), angle, fill)
    if cfg.jitter.enabled:
        jitter_applied = bool(rng.random() < cfg.jitter.probability)
        if trace is not None:
            trace["jitter_applied"] = jitter_applied
        if jitter_applied:
            out = _color_jitter(np.ascontiguousarray(out, dtype=np.float32), cfg.jitter, rng, trace)
    if cfg.grayscale.enabled:
        gray = bool(rng.random() < cfg.grayscale.probability)
        if trace is not None:
            trace["grayscale"] = gray
        if gray:
            out = _grayscale(out)
    size = cfg.crop.output_size
    if out.shape[0] != size or out.shape[1] != size:
        out = _resize(np.ascontiguousarray(out, dtype=np.float32), size)
    return np.ascontiguousarray(out, dtype=np.float32)


def _unit_fill(cfg: AugmentationConfig) -> np.ndarray:
    if cfg.fill_color == "auto":
        raise ValueError(
            "fill_color is 'auto' but was never resolved; call resolve_fill_color "
            "with the dataset before augmenting"
        )
    return np.asarray(cfg.fill_color, dtype=np.float32) / 255.0


def make_view_pair(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator,
                   source_index: int = -1) -> ViewPair:
    """Two independent draws of the transform stack on the same source image."""
    return ViewPair(view_a=apply_stack(img, cfg, rng),
                    view_b=apply_stack(img, cfg, rng),
                    source_index=source_index)


def image_rng(seed: int, stage: int, epoch: int, index: int) -> np.random.Generator:
    """Stateless per-image RNG stream derived from (seed, stage, epoch, index)."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stage, epoch, index])


def default_config(output_size: int = 28, seed: int = 0) -> AugmentationConfig:
    """The default augmentation set: crop, hflip, color jitter, grayscale."""
    return AugmentationConfig(crop=CropConfig(output_size=output_size), seed=seed)


def with_rot90(cfg: AugmentationConfig) -> AugmentationConfig:
    """Add vertical flips and 90-degree rotations to a config (in place semantics on a copy)."""
    import copy

    out = copy.deepcopy(cfg)
    out.vflip = FlipConfig(enabled=True, probability=0.5)
    out.rot90 = Rot90Config(enabled=True)
    return out


def with_rot_any(cfg: AugmentationConfig) -> AugmentationConfig:
    """Add arbitrary-angle rotations (with border fill) to a config."""
    import copy

    out = copy.deepcopy(cfg)
    out.rot_any = RotAnyConfig(enabled=True)
    return out
