"""
EdgeTracer Imaging Module

PGM codec, synthetic test images, bilinear sampling and grid difference quotients.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from errors import ContractViolation, ImageFormatError, ParameterError
from models import GridImage, GridPoint

logger = logging.getLogger(__name__)

MAX_PIXELS = 1 << 26
_WHITESPACE = b" \t\n\r\v\f"


class PGMCodec:
    """Netpbm graymap reader (P2/P5, maxval up to 65535) and P5 writer at maxval 255."""

    @staticmethod
    def _header_tokens(data: bytes, count: int) -> Tuple[list, int]:
        """Read `count` header tokens, skipping comments; returns them and the end offset."""
        tokens = []
        pos = 0
        while len(tokens) < count:
            while pos < len(data) and data[pos] in _WHITESPACE:
                pos += 1
            if pos >= len(data):
                raise ImageFormatError("Truncated PGM header")
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
                continue
            start = pos
            while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
        return tokens, pos

    @staticmethod
    def _to_int(token: bytes, what: str) -> int:
        if not re.fullmatch(rb"\d+", token):
            raise ImageFormatError(f"Invalid PGM {what}: {token!r}")
        return int(token)

    @staticmethod
    def decode(data: bytes, h: float = 1.0) -> GridImage:
        tokens, pos = PGMCodec._header_tokens(data, 4)
        magic = tokens[0]
        if magic not in (b"P2", b"P5"):
            raise ImageFormatError(f"Unsupported PGM magic number: {magic!r}")
        width = PGMCodec._to_int(tokens[1], "width")
        height = PGMCodec._to_int(tokens[2], "height")
        maxval = PGMCodec._to_int(tokens[3], "maxval")
        if width < 1 or height < 1:
            raise ImageFormatError(f"Invalid PGM dimensions {width}x{height}")
        if width * height > MAX_PIXELS:
            raise ImageFormatError(f"PGM dimensions {width}x{height} exceed {MAX_PIXELS} pixels")
        if not 0 < maxval <= 65535:
            raise ImageFormatError(f"PGM maxval must lie in 1..65535, got {maxval}")

        n = width * height
        if magic == b"P2":
            samples = data[pos:].split()
            if len(samples) < n:
                raise ImageFormatError(f"Truncated PGM data: {len(samples)} of {n} samples")
            try:
                flat = np.array([int(s) for s in samples[:n]], dtype=np.int64)
            except ValueError as e:
                raise ImageFormatError(f"Invalid PGM sample: {e}") from e
        else:
            # exactly one whitespace byte separates maxval from the raster
            if pos >= len(data) or data[pos] not in _WHITESPACE:
                raise ImageFormatError("Missing whitespace before PGM raster")
            raster = data[pos + 1:]
            dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
            if len(raster) < n * dtype.itemsize:
                raise ImageFormatError(
                    f"Truncated PGM raster: {len(raster)} of {n * dtype.itemsize} bytes"
                )
            flat = np.frombuffer(raster[:n * dtype.itemsize], dtype=dtype).astype(np.int64)

        if flat.min() < 0 or flat.max() > maxval:
            raise ImageFormatError(f"PGM sample exceeds maxval {maxval}")
        # file rows are j, columns are i
        values = flat.reshape(height, width).T / float(maxval)
        return GridImage(values, h)

    @staticmethod
    def encode(image: GridImage) -> bytes:
        levels = np.floor(np.clip(image.values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        width, height = image.values.shape
        header = f"P5\n{width} {height}\n255\n".encode("ascii")
        return header + levels.T.tobytes()

    @staticmethod
    def load(path: Union[str, Path], h: float = 1.0) -> GridImage:
        image = PGMCodec.decode(Path(path).read_bytes(), h)
        logger.debug(f"Loaded {path}: {image.n_x + 1}x{image.n_y + 1} samples")
        return image

    @staticmethod
    def save(image: GridImage, path: Union[str, Path]) -> None:
        Path(path).write_bytes(PGMCodec.encode(image))


def load_pgm(path: Union[str, Path], h: float = 1.0) -> GridImage:
    return PGMCodec.load(path, h)


def save_pgm(image: GridImage, path: Union[str, Path]) -> None:
    PGMCodec.save(image, path)


@dataclass
class RegionSpec:
    """
    Two-intensity image layout.

    shape:
        disk        inside a circle of `radius` about `center` (default image center)
        half-plane  x < `boundary` (default n_x*h/2)
        slit        below the line y = `line_y` for x <= `stop`, with the jump fading
                    linearly to zero over `fade` beyond `stop`
    """
    shape: str
    inside: float
    outside: float
    radius: float = 0.0
    center: Optional[Tuple[float, float]] = None
    boundary: Optional[float] = None
    line_y: Optional[float] = None
    stop: Optional[float] = None
    fade: float = 0.0

    SHAPES = ("disk", "half-plane", "slit")

    def validate(self) -> None:
        if self.shape not in self.SHAPES:
            raise ParameterError(
                f"Unknown region shape {self.shape!r}, expected one of {self.SHAPES}"
            )
        for name in ("inside", "outside"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"Intensity {name}={value} outside [0, 1]")
        if self.radius < 0 or self.fade < 0:
            raise ParameterError("Radius and fade length must be non-negative")


class ImageGenerator:
    """Synthetic images for the experiments."""

    @staticmethod
    def coordinates(n_x: int, n_y: int, h: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
        x = np.arange(n_x + 1) * h
        y = np.arange(n_y + 1) * h
        return np.meshgrid(x, y, indexing="ij")

    @staticmethod
    def crack_tip_profile(n_x: int, n_y: int, h: float = 1.0) -> np.ndarray:
        """sqrt(r) * sin(theta / 2) about the image center, theta in (-pi, pi]."""
        x, y = ImageGenerator.coordinates(n_x, n_y, h)
        dx = x - 0.5 * n_x * h
        dy = y - 0.5 * n_y * h
        r = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        # the left ray dy == 0, dx < 0 belongs to theta = +pi
        theta = np.where((dy == 0.0) & (dx < 0.0), np.pi, theta)
        return np.sqrt(r) * np.sin(0.5 * theta)

    @staticmethod
    def crack_tip_constants(n_x: int, n_y: int, h: float = 1.0) -> Tuple[float, float]:
        """Amplitude a and offset b that map the profile onto [0, 1]."""
        profile = ImageGenerator.crack_tip_profile(n_x, n_y, h)
        low, high = float(profile.min()), float(profile.max())
        a = 1.0 / (high - low)
        return a, -a * low

    @staticmethod
    def crack_tip(n_x: int, n_y: int, h: float = 1.0) -> GridImage:
        """
        u0 = a * sqrt(r) * sin(theta / 2) + b with the discontinuity along the left ray.

        Returns:
            GridImage spanning exactly [0, 1]
        """
        if n_x < 3 or n_y < 3:
            raise ParameterError(f"Crack-tip image needs n_x, n_y >= 3, got {n_x}x{n_y}")
        a, b = ImageGenerator.crack_tip_constants(n_x, n_y, h)
        values = a * ImageGenerator.crack_tip_profile(n_x, n_y, h) + b
        return GridImage(np.clip(values, 0.0, 1.0), h)

    @staticmethod
    def two_region(n_x: int, n_y: int, spec: RegionSpec, h: float = 1.0) -> GridImage:
        spec.validate()
        x, y = ImageGenerator.coordinates(n_x, n_y, h)
        width, height = n_x * h, n_y * h

        if spec.shape == "disk":
            cx, cy = spec.center if spec.center is not None else (0.5 * width, 0.5 * height)
            weight = (np.hypot(x - cx, y - cy) < spec.radius).astype(float)
        elif spec.shape == "half-plane":
            boundary = 0.5 * width if spec.boundary is None else spec.boundary
            weight = (x < boundary).astype(float)
        else:
            line_y = 0.5 * height if spec.line_y is None else spec.line_y
            stop = 0.5 * width if spec.stop is None else spec.stop
            if spec.fade > 0:
                along = np.clip(1.0 - (x - stop) / spec.fade, 0.0, 1.0)
            else:
                along = (x <= stop).astype(float)
            weight = np.where(y < line_y, along, 0.0)

        values = spec.outside + (spec.inside - spec.outside) * weight
        return GridImage(values, h)

    @staticmethod
    def add_noise(image: GridImage, amplitude: float, rng_seed: int = 0) -> GridImage:
        """Uniform noise in [-amplitude, amplitude], clamped to [0, 1]."""
        if amplitude < 0:
            raise ParameterError(f"Noise amplitude must be non-negative, got {amplitude}")
        if amplitude == 0:
            return image.with_values(image.values)
        rng = np.random.default_rng(rng_seed)
        noise = rng.uniform(-amplitude, amplitude, size=image.values.shape)
        return image.with_values(np.clip(image.values + noise, 0.0, 1.0))


def generate_crack_tip(n_x: int, n_y: int, h: float = 1.0) -> GridImage:
    return ImageGenerator.crack_tip(n_x, n_y, h)


def add_noise(image: GridImage, amplitude: float, rng_seed: int = 0) -> GridImage:
    return ImageGenerator.add_noise(image, amplitude, rng_seed)


class GridSampler:
    """Point evaluation and difference quotients on a GridImage."""

    @staticmethod
    def sample_many(image: GridImage, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at each row of `points`; points are clamped to the domain."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        width, height = image.extent
        x = np.clip(points[:, 0], 0.0, width) / image.h
        y = np.clip(points[:, 1], 0.0, height) / image.h

        i0 = np.clip(np.floor(x).astype(int), 0, max(image.n_x - 1, 0))
        j0 = np.clip(np.floor(y).astype(int), 0, max(image.n_y - 1, 0))
        i1 = np.minimum(i0 + 1, image.n_x)
        j1 = np.minimum(j0 + 1, image.n_y)
        s = x - i0
        t = y - j0

        v = image.values
        return (
            (1 - s) * (1 - t) * v[i0, j0]
            + s * (1 - t) * v[i1, j0]
            + (1 - s) * t * v[i0, j1]
            + s * t * v[i1, j1]
        )

    @staticmethod
    def sample_bilinear(image: GridImage, p) -> float:
        return float(GridSampler.sample_many(image, np.asarray(p, dtype=float)[None, :])[0])

    @staticmethod
    def forward_diff(image: GridImage, z: GridPoint, axis: int) -> float:
        """(u(z + h e_axis) - u(z)) / h for axis 1 (x) or 2 (y)."""
        if axis not in (1, 2):
            raise ContractViolation(f"axis must be 1 or 2, got {axis}")
        di, dj = (1, 0) if axis == 1 else (0, 1)
        i, j = z.i, z.j
        if not (0 <= i and i + di <= image.n_x and 0 <= j and j + dj <= image.n_y):
            raise IndexError(f"Difference quotient at ({i}, {j}) along axis {axis} leaves the grid")
        return float((image.values[i + di, j + dj] - image.values[i, j]) / image.h)

    @staticmethod
    def difference_fields(image: GridImage) -> Tuple[np.ndarray, np.ndarray]:
        """All forward differences: x-links of shape (n_x, n_y+1), y-links of shape (n_x+1, n_y)."""
        v = image.values
        return np.diff(v, axis=0) / image.h, np.diff(v, axis=1) / image.h


def sample_bilinear(image: GridImage, p) -> float:
    return GridSampler.sample_bilinear(image, p)


def forward_diff(image: GridImage, z: GridPoint, axis: int) -> float:
    return GridSampler.forward_diff(image, z, axis)
