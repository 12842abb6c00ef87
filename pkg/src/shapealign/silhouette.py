"""Binary silhouette rasterization and mask comparison.

Triangles are projected with the shared camera model and filled by
half-plane edge functions: a pixel is set when its center (integer
coordinates, y down) lies inside at least one projected triangle. Ties on
edges follow the top-left fill rule so shared edges never double-report or
leave gaps, making coverage bit-exact and independent of triangle order.
There is no z-buffer; silhouettes need coverage only.

Masks are read and written as binary PGM (P5, maxval 255, nonzero = set).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCamera, DimensionMismatch, EmptyMesh, ParseError
from .geometry import ProjectionMatrix, TriangleMesh, projection_depths

# Depths closer than this count as "at the camera plane".
_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean raster of width x height pixels."""

    width: int
    height: int
    bits: np.ndarray                       # (height, width) bool

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be positive")
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(
                f"bits shape {bits.shape} != (height={self.height}, "
                f"width={self.width})")
        object.__setattr__(self, "bits", bits)

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


def _edge_accepts(ax: float, ay: float, bx: float, by: float) -> bool:
    """Top-left rule: whether pixels exactly on edge (a, b) count as inside.

    With y pointing down and counterclockwise winding given by a positive
    cross product, an edge is "top" when horizontal and pointing right, and
    "left" when pointing up (dy < 0).
    """
    dx, dy = bx - ax, by - ay
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


def _fill_triangle(bits: np.ndarray, tri: np.ndarray) -> None:
    """Set pixels of one projected triangle into the (h, w) bit array."""
    h, w = bits.shape
    # Consistent winding: make the signed area positive (counterclockwise
    # in the y-down pixel frame).
    area = ((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]))
    if area == 0.0:
        return
    if area < 0.0:
        tri = tri[::-1]

    x_lo = max(int(np.ceil(tri[:, 0].min())), 0)
    x_hi = min(int(np.floor(tri[:, 0].max())), w - 1)
    y_lo = max(int(np.ceil(tri[:, 1].min())), 0)
    y_hi = min(int(np.floor(tri[:, 1].max())), h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return

    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)

    inside = np.ones(px.shape, dtype=bool)
    for i in range(3):
        ax, ay = tri[i]
        bx, by = tri[(i + 1) % 3]
        val = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if _edge_accepts(ax, ay, bx, by):
            inside &= val >= 0.0
        else:
            inside &= val > 0.0
    bits[y_lo:y_hi + 1, x_lo:x_hi + 1] |= inside


def render_silhouette(mesh: TriangleMesh, P: ProjectionMatrix,
                      width: int, height: int) -> BinaryMask:
    """Rasterize the mesh's silhouette under a projection.

    A pixel is set iff its center is covered by at least one projected
    triangle (top-left tie rule).

    Raises:
        EmptyMesh: mesh has no faces.
        BehindCamera: any vertex projects with non-positive depth.
    """
    if len(mesh.faces) == 0:
        raise EmptyMesh("cannot render a mesh with no faces")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    depths = projection_depths(P, mesh.vertices)
    if depths.min() < _MIN_DEPTH:
        raise BehindCamera(
            f"vertex at depth {depths.min():.3g} is behind the camera")
    uvh = mesh.vertices @ P.matrix[:, :3].T + P.matrix[:, 3]
    uv = uvh[:, :2] / uvh[:, 2:3]

    bits = np.zeros((height, width), dtype=bool)
    for face in mesh.faces:
        _fill_triangle(bits, uv[face])
    return BinaryMask(width=width, height=height, bits=bits)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of set pixels; both-empty is 0.0.

    Raises:
        DimensionMismatch: differing mask sizes.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"{a.width}x{a.height} vs {b.width}x{b.height}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def write_pgm(path: str | Path, mask: BinaryMask) -> None:
    """Write a mask as binary PGM (P5, maxval 255; set pixels are 255)."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write((mask.bits.astype(np.uint8) * 255).tobytes())


def read_pgm(path: str | Path) -> BinaryMask:
    """Read a binary PGM as a mask; any nonzero sample counts as set.

    Raises:
        ParseError: not a P5 file or truncated payload.
    """
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    # Header tokens: magic, width, height, maxval; comments start with '#'.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if len(tokens) < 3:
        raise ParseError(f"{path}: truncated PGM header")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(f"{path}: non-numeric PGM header") from None
    if maxval > 255:
        raise ParseError(f"{path}: 16-bit PGM not supported")
    pos += 1                               # single whitespace after maxval
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise ParseError(
            f"{path}: expected {width * height} pixels, got {len(payload)}")
    bits = np.frombuffer(payload, dtype=np.uint8).reshape(height, width) > 0
    return BinaryMask(width=width, height=height, bits=bits)
