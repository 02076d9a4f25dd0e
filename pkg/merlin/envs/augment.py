from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform

MAX_ROTATION = 0.2
MAX_SHIFT = 2.0
MAX_SCALE = 1.15


@dataclass(frozen=True)
class Affine:
    rotation: float = 0.0
    shift_row: float = 0.0
    shift_col: float = 0.0
    scale: float = 1.0


def random_affine(rng: np.random.Generator) -> Affine:
    """Rotation in [-0.2, 0.2] rad, shift up to 2 px per axis, magnification in [1, 1.15]."""
    return Affine(
        rotation=float(rng.uniform(-MAX_ROTATION, MAX_ROTATION)),
        shift_row=float(rng.uniform(-MAX_SHIFT, MAX_SHIFT)),
        shift_col=float(rng.uniform(-MAX_SHIFT, MAX_SHIFT)),
        scale=float(rng.uniform(1.0, MAX_SCALE)),
    )


def apply_affine(image: np.ndarray, transform: Affine) -> np.ndarray:
    """
    Rotate and magnify about the image centre, then translate, with bilinear
    resampling; pixels mapped from outside the source are blank.
    """
    c, s = np.cos(transform.rotation), np.sin(transform.rotation)
    forward = transform.scale * np.array([[c, -s], [s, c]])
    inverse = np.linalg.inv(forward)
    centre = (np.array(image.shape[:2], dtype=np.float64) - 1.0) / 2.0
    shift = np.array([transform.shift_row, transform.shift_col])
    offset = centre - inverse @ (centre + shift)
    out = affine_transform(image.astype(np.float64), inverse, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fresh random affine view of a 2-D glyph."""
    return apply_affine(image, random_affine(rng))
