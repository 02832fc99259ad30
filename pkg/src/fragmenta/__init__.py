"""fragmenta: tear images into ground-truth fragment datasets, learn
contour/texture matching features, and search + match the pieces."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    Circle,
    OrderedContour,
    Point2,
    RigidTransform2D,
    circumcircle,
    hausdorff_distance,
    polygon_area,
    rigid_fit,
    segment_contour_intersections,
    smaller_arc_length,
)
