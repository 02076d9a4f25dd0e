"""
Card glyphs: procedurally drawn binary stroke images, or an external set
loaded from a directory of raw 8-bit images.

External format: `<name>.raw` holds size*size bytes of row-major grayscale
(0 = blank, 255 = ink); `<name>.txt` holds the glyph id on its first line.
"""
import logging
import os
from typing import List, Sequence

import numpy as np
from scipy.ndimage import binary_dilation
from tenacity import retry, retry_if_exception_type, stop_after_attempt

from merlin.core.errors import ConfigError, IndistinguishableGlyphError

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 100


def hamming(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of pixels on which two binary glyphs differ."""
    return float(np.mean((a > 0.5) != (b > 0.5)))


def draw_glyph(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Two to four random polyline strokes, thickened by one dilation step."""
    canvas = np.zeros((size, size), dtype=bool)
    margin = max(1, size // 8)
    for _ in range(rng.integers(2, 5)):
        points = rng.integers(margin, size - margin, size=(rng.integers(2, 5), 2))
        for start, end in zip(points[:-1], points[1:]):
            steps = int(np.abs(end - start).max()) * 2 + 1
            rows = np.rint(np.linspace(start[0], end[0], steps)).astype(int)
            cols = np.rint(np.linspace(start[1], end[1], steps)).astype(int)
            canvas[rows, cols] = True
    canvas = binary_dilation(canvas, iterations=1)
    return canvas.astype(np.float32)


@retry(retry=retry_if_exception_type(IndistinguishableGlyphError), stop=stop_after_attempt(MAX_ATTEMPTS), reraise=True)
def distinct_glyph(rng: np.random.Generator, existing: Sequence[np.ndarray], size: int,
                   min_distance: float) -> np.ndarray:
    glyph = draw_glyph(rng, size)
    for index, other in enumerate(existing):
        if hamming(glyph, other) < min_distance:
            raise IndistinguishableGlyphError(f"candidate within {min_distance} of glyph {index}")
    return glyph


def glyph_set(seed: int, count: int, size: int = 32, min_distance: float = 0.05) -> np.ndarray:
    """`count` binary glyphs, pairwise at least `min_distance` apart; the same seed yields the same set."""
    rng = np.random.default_rng(seed)
    glyphs: List[np.ndarray] = []
    for _ in range(count):
        glyphs.append(distinct_glyph(rng, glyphs, size, min_distance))
    logger.debug(f"Generated {count} glyphs of size {size} from seed {seed}")
    return np.stack(glyphs)


def load_glyph_dir(path: str, size: int = 32) -> np.ndarray:
    """Load every `.raw`/`.txt` pair in `path`, ordered by glyph id, scaled to [0, 1]."""
    entries = []
    for filename in sorted(os.listdir(path)):
        if not filename.endswith(".raw"):
            continue
        stem = filename[:-4]
        raw = np.fromfile(os.path.join(path, filename), dtype=np.uint8)
        if raw.size != size * size:
            raise ConfigError(f"{filename}: expected {size * size} bytes, got {raw.size}")
        with open(os.path.join(path, stem + ".txt"), "r") as f:
            glyph_id = f.readline().strip()
        entries.append((glyph_id, raw.reshape(size, size).astype(np.float32) / 255.0))
    if not entries:
        raise ConfigError(f"No glyph files found in {path}")
    entries.sort(key=lambda item: item[0])
    logger.info(f"Loaded {len(entries)} glyphs from {path}")
    return np.stack([image for _, image in entries])


def save_glyph_dir(path: str, glyphs: np.ndarray) -> None:
    """Write glyphs in the external directory format."""
    os.makedirs(path, exist_ok=True)
    for index, glyph in enumerate(glyphs):
        stem = os.path.join(path, f"glyph_{index:04d}")
        np.rint(np.clip(glyph, 0.0, 1.0) * 255).astype(np.uint8).tofile(stem + ".raw")
        with open(stem + ".txt", "w") as f:
            f.write(f"{index:04d}\n")
