import io
import logging
from typing import Tuple

import numpy as np
from PIL import Image

from eitkit.utils.validators import ValidationError

logger = logging.getLogger(__name__)


class ImageExporter:
    """Service for writing diagnostic grids as grayscale images"""

    @staticmethod
    def rescale(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
        """Map finite values linearly onto 0..255; NaN becomes 0"""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"Diagnostic grid must be two-dimensional, got shape {values.shape}")

        finite = values[np.isfinite(values)]
        if finite.size == 0:
            return np.zeros(values.shape, dtype=np.uint8), 0.0, 0.0

        lo, hi = float(finite.min()), float(finite.max())
        span = hi - lo if hi > lo else 1.0
        scaled = np.where(np.isfinite(values), (values - lo) / span * 255.0, 0.0)
        return np.clip(np.rint(scaled), 0, 255).astype(np.uint8), lo, hi

    @staticmethod
    def encode_pgm(values: np.ndarray, name: str = 'min_eig') -> bytes:
        """
        Binary PGM of a grid indexed [iy, ix], drawn with y increasing upwards.

        The header carries a comment line recording the rescale so the pixel
        values can be mapped back.
        """
        pixels, lo, hi = ImageExporter.rescale(values)
        image = Image.fromarray(np.flipud(pixels), mode='L')

        buffer = io.BytesIO()
        image.save(buffer, format='PPM')
        data = buffer.getvalue()

        magic, rest = data.split(b"\n", 1)
        comment = (f"# {name}: linear rescale, 0 = {lo:.9g}, 255 = {hi:.9g}, NaN = 0, "
                   f"first row is the top of the grid").encode('ascii')
        encoded = magic + b"\n" + comment + b"\n" + rest

        logger.info(f"Encoded {values.shape[1]}x{values.shape[0]} {name} image ({len(encoded)} bytes)")
        return encoded
