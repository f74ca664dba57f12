"""Shared domain types, annotation/image file I/O, and geometric primitives.

Coordinate convention used throughout: landmark coordinates are continuous
pixel positions where integer values fall on pixel centers (pixel (i, j)
spans [i-0.5, i+0.5) x [j-0.5, j+0.5)).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ValidmarkError(Exception):
    """Base class for all toolkit errors."""


class ParseError(ValidmarkError):
    """Malformed annotation or image file (message names the offending line)."""


class DataError(ValidmarkError):
    """Inconsistent or out-of-contract data."""


class SchemaError(ValidmarkError):
    """Run-config file violates the documented schema."""


class DegenerateGeometryError(ValidmarkError):
    """Geometry has collapsed (coincident eye centers, collinear points, ...)."""


class NumericError(ValidmarkError):
    """Non-finite values where finite ones are required."""


def _stable_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(*parts) -> np.random.Generator:
    """Deterministic generator derived from a tuple of ints/strings.

    Used to give every (seed, epoch, batch, sample) its own independent
    stream so parallel augmentation stays schedule-independent.
    """
    return np.random.default_rng(np.random.SeedSequence([_stable_int(p) for p in parts]))


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, row-major, intensities in [0, 255].

    Intensities are stored as float64 so augmentation steps (blur, contrast)
    can keep sub-integer precision; files quantize to 8 bit on save.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"image data must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("image contains non-finite intensities")
        if arr.size and (arr.min() < 0.0 or arr.max() > 255.0):
            raise DataError("image intensities must lie in [0, 255]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2-D ground-truth points, shape (count, 2)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError(f"landmarks must have shape (L, 2), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise NumericError("landmarks contain non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TripletVector:
    """Network output: per landmark (x, y, v) where v predicts the error."""

    triplets: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.triplets, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise DataError(f"triplets must have shape (L, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("triplets contain non-finite components")
        object.__setattr__(self, "triplets", arr)

    @property
    def count(self) -> int:
        return self.triplets.shape[0]


def clamp_face_box(box, width: int, height: int) -> tuple[float, float, float, float]:
    """Clamp an (x, y, w, h) box to image bounds, preserving positive area."""
    x, y, w, h = (float(v) for v in box)
    x0 = min(max(x, 0.0), max(width - 1.0, 0.0))
    y0 = min(max(y, 0.0), max(height - 1.0, 0.0))
    x1 = min(max(x + w, x0 + 1.0), float(width))
    y1 = min(max(y + h, y0 + 1.0), float(height))
    return (x0, y0, x1 - x0, y1 - y0)


@dataclass
class Sample:
    """One training/eval item. last_loss is rewritten by the trainer between epochs."""

    image: GrayImage
    annotation: LandmarkSet
    face_box: tuple[float, float, float, float]
    id: str
    last_loss: float = 0.0
    subset: str = "common"

    def __post_init__(self):
        if self.last_loss < 0.0 or not np.isfinite(self.last_loss):
            raise DataError(f"sample {self.id}: last_loss must be finite and >= 0")
        self.face_box = clamp_face_box(self.face_box, self.image.width, self.image.height)


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("dataset contains duplicate sample ids")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def subset(self, tag: str) -> list[Sample]:
        return [s for s in self.samples if s.subset == tag]

    @property
    def landmark_count(self) -> int:
        if not self.samples:
            raise DataError("empty dataset has no landmark count")
        counts = {s.annotation.count for s in self.samples}
        if len(counts) != 1:
            raise DataError(f"inconsistent landmark counts in dataset: {sorted(counts)}")
        return counts.pop()


# --- annotation files (300W-style .pts text format) -------------------------

def load_pts(path) -> LandmarkSet:
    """Parse a .pts annotation file.

    Accepted layout (whitespace-tolerant, braces optional):
        version: 1
        n_points: N
        {
        <x> <y>        (N lines)
        }
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()

    n_points = None
    coords: list[tuple[float, float]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line == "{":
            continue
        if line == "}":
            break
        low = line.lower()
        if low.startswith("version:"):
            continue
        if low.startswith("n_points:"):
            if n_points is not None:
                raise ParseError(f"{path}: line {lineno}: duplicate n_points header")
            try:
                n_points = int(line.split(":", 1)[1])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: malformed n_points header") from None
            continue
        if n_points is None:
            raise ParseError(f"{path}: line {lineno}: coordinates before n_points header")
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(f"{path}: line {lineno}: expected 'x y', got {len(tokens)} tokens")
        try:
            coords.append((float(tokens[0]), float(tokens[1])))
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric coordinate") from None

    if n_points is None:
        raise ParseError(f"{path}: missing n_points header")
    if len(coords) != n_points:
        raise ParseError(
            f"{path}: n_points says {n_points} but found {len(coords)} coordinate lines"
        )
    return LandmarkSet(np.array(coords, dtype=np.float64).reshape(n_points, 2))


def save_pts(landmarks: LandmarkSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("version: 1\n")
        fh.write(f"n_points: {landmarks.count}\n")
        fh.write("{\n")
        for x, y in landmarks.points:
            fh.write(f"{x:.6f} {y:.6f}\n")
        fh.write("}\n")


# --- image files (binary PGM, "P5", maxval <= 255) --------------------------

def _read_pgm_tokens(blob: bytes, path):
    # header tokens may be separated by arbitrary whitespace and '#' comments
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        ch = blob[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
            continue
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            if nl < 0:
                raise ParseError(f"{path}: unterminated comment in header")
            pos = nl + 1
            continue
        end = pos
        while end < len(blob) and blob[end:end + 1] not in b" \t\r\n":
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    if len(tokens) < 4:
        raise ParseError(f"{path}: truncated PGM header")
    return tokens, pos + 1  # single whitespace byte after maxval


def load_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, payload_start = _read_pgm_tokens(blob, path)
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ParseError(f"{path}: non-numeric PGM header field") from None
    if maxval > 255 or maxval <= 0:
        raise ParseError(f"{path}: unsupported maxval {maxval} (only 8-bit supported)")
    payload = blob[payload_start:payload_start + width * height]
    if len(payload) < width * height:
        raise ParseError(f"{path}: truncated pixel payload "
                         f"({len(payload)} of {width * height} bytes)")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(data.astype(np.float64))


def save_pgm(image: GrayImage, path) -> None:
    quantized = np.rint(np.clip(image.data, 0.0, 255.0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


# --- inter-ocular distance ---------------------------------------------------

@dataclass(frozen=True)
class EyeScheme:
    """0-based landmark indices whose means define the two eye centers."""

    left: tuple[int, ...]
    right: tuple[int, ...]

    @staticmethod
    def for_count(count: int) -> "EyeScheme":
        if count == 68:
            # standard Multi-PIE 68-point scheme (1-based 37-42 / 43-48)
            return EyeScheme(tuple(range(36, 42)), tuple(range(42, 48)))
        if count >= 2:
            return EyeScheme((0,), (1,))
        raise DataError(f"no eye scheme for landmark count {count}")


def interocular_distance(landmarks: LandmarkSet, scheme: EyeScheme) -> float:
    indices = scheme.left + scheme.right
    if not scheme.left or not scheme.right:
        raise DataError("eye scheme must name at least one index per eye")
    if max(indices) >= landmarks.count or min(indices) < 0:
        raise DataError(
            f"eye scheme indices out of range for {landmarks.count} landmarks"
        )
    left = landmarks.points[list(scheme.left)].mean(axis=0)
    right = landmarks.points[list(scheme.right)].mean(axis=0)
    dist = float(np.hypot(*(left - right)))
    if dist < 1e-12:
        raise DegenerateGeometryError("eye centers coincide; normalizer undefined")
    return dist
