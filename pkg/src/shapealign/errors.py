"""Exception hierarchy shared by all shapealign modules."""


class ShapeAlignError(Exception):
    """Base class for every error raised by this package."""


# --- geometry / projection ---

class DegenerateProjection(ShapeAlignError):
    """Homogeneous scale of a projected point is (numerically) zero."""


class LengthMismatch(ShapeAlignError):
    """Paired sequences have different lengths."""


# --- pose solving ---

class TooFewPoints(ShapeAlignError):
    """Fewer visible 2D-3D correspondences than the solver needs."""


class DegenerateConfiguration(ShapeAlignError):
    """3D keypoints are collinear (or otherwise rank-deficient)."""


class NoSolution(ShapeAlignError):
    """Every candidate in a solve (focal sweep, restarts, subsets) failed."""


class NoConsensus(ShapeAlignError):
    """RANSAC could not find a model supported by at least 4 inliers."""


# --- voxels / meshes / point clouds ---

class EmptySurface(ShapeAlignError):
    """All voxel values lie on one side of the iso level."""


class EmptyGrid(ShapeAlignError):
    """No voxel value above the occupancy threshold."""


class ResolutionMismatch(ShapeAlignError):
    """Voxel grids have different resolutions."""


class DegenerateMesh(ShapeAlignError):
    """Mesh has zero total surface area."""


class ZeroExtent(ShapeAlignError):
    """All points of a cloud coincide; it cannot be normalized."""


class EmptyCloud(ShapeAlignError):
    """Point cloud has no points."""


class SizeMismatch(ShapeAlignError):
    """Point clouds must be the same size for a bijective matching."""


# --- rasterization / masks ---

class BehindCamera(ShapeAlignError):
    """A mesh vertex projects with non-positive depth."""


class EmptyMesh(ShapeAlignError):
    """Mesh has no faces."""


class DimensionMismatch(ShapeAlignError):
    """Binary masks have different width/height."""


# --- benchmark statistics ---

class EmptyInput(ShapeAlignError):
    """An aggregate operation received no items."""


class MissingPair(ShapeAlignError):
    """Prediction/ground-truth directories do not pair up by item id."""


class OutOfRangeAngle(ShapeAlignError):
    """Azimuth outside [0, 360) or elevation outside [-90, 90]."""


class ZeroVariance(ShapeAlignError):
    """Correlation of a constant sequence is undefined."""


# --- file I/O ---

class ParseError(ShapeAlignError):
    """A file could not be parsed; message carries line/record context."""


class SchemaError(ShapeAlignError):
    """A structurally valid document is missing or mistypes a field."""


class IndexOutOfRange(ShapeAlignError):
    """A face references a vertex index outside the vertex list."""
