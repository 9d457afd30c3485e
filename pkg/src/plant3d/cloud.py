"""Point-cloud data model, neighbour search, resolution and PCA normals."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyCloudError,
    InvalidKError,
    InvalidRadiusError,
    TooFewPointsError,
)
from .io import read_points

# Relative slack used when widening a kd-tree ball query; exact distances are
# recomputed afterwards so the slack never changes a result.
_BALL_SLACK = 1e-9
# Rank test for PCA neighbourhoods: lambda_mid / lambda_max below this is rank < 2.
DEGENERATE_EIG_RATIO = 1e-9


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, immutable set of 3D points.

    Attributes:
        points: (N, 3) float64 array, read-only.
        source_id: opaque identifier, usually the file path.
    """

    points: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise EmptyCloudError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @cached_property
    def tree(self):
        return cKDTree(self.points)

    @cached_property
    def bbox_diagonal(self):
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def transformed(self, rotation=None, translation=None, scale=1.0):
        """Return ``scale * R p + t`` applied to every point."""
        pts = self.points * scale
        if rotation is not None:
            pts = pts @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            pts = pts + np.asarray(translation, dtype=np.float64)
        return PointCloud(pts, self.source_id)


@dataclass(frozen=True)
class CloudResolution:
    """Mean nearest-neighbour spacing; the unit for every radius parameter."""

    value: float

    def __post_init__(self):
        if not (self.value > 0 and np.isfinite(self.value)):
            raise ValueError(f"resolution must be positive and finite, got {self.value}")

    def __float__(self):
        return float(self.value)

    def __mul__(self, other):
        return self.value * other

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class NormalField:
    """Per-point unit normals and surface variation.

    Undefined entries (degenerate neighbourhoods) hold NaN and are False in
    ``defined``.
    """

    normals: np.ndarray
    curvature: np.ndarray
    defined: np.ndarray = field(default=None)

    def __post_init__(self):
        normals = np.array(self.normals, dtype=np.float64)
        curvature = np.array(self.curvature, dtype=np.float64)
        defined = (np.all(np.isfinite(normals), axis=1) if self.defined is None
                   else np.array(self.defined, dtype=bool))
        for arr in (normals, curvature, defined):
            arr.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "curvature", curvature)
        object.__setattr__(self, "defined", defined)

    def __len__(self):
        return len(self.normals)


def load_cloud(path, format="auto"):
    """Load a PLY or XYZ file into a :class:`PointCloud` (positions only)."""
    return PointCloud(read_points(path, format), source_id=str(path))


def cloud_resolution(cloud):
    """Mean distance from each point to its nearest distinct neighbour.

    Coincident duplicates are skipped, so the nearest neighbour is the closest
    point at non-zero distance.

    Raises:
        TooFewPointsError: fewer than two (distinct) points.
    """
    n = len(cloud)
    if n < 2:
        raise TooFewPointsError(f"resolution needs >= 2 points, got {n}")
    k = 2
    while True:
        k_eff = min(k, n)
        dist, _ = cloud.tree.query(cloud.points, k=k_eff)
        dist = dist.reshape(n, k_eff)
        positive = np.where(dist > 0, dist, np.inf)
        nearest = positive.min(axis=1)
        if np.all(np.isfinite(nearest)) or k_eff == n:
            break
        k *= 2
    if not np.all(np.isfinite(nearest)):
        raise TooFewPointsError("every point coincides with all others; resolution undefined")
    return CloudResolution(float(nearest.mean()))


def _sorted_hits(cloud, query, idx):
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) == 0:
        return idx, np.empty(0)
    d = np.linalg.norm(cloud.points[idx] - query, axis=1)
    order = np.lexsort((idx, d))
    return idx[order], d[order]


def knn(cloud, query, k):
    """Exact k nearest neighbours of ``query``.

    Returns:
        list of ``(index, distance)`` sorted by distance, ties by lower index.

    Raises:
        InvalidKError: k < 1 or k > len(cloud).
    """
    n = len(cloud)
    if not (1 <= k <= n):
        raise InvalidKError(f"k must be in [1, {n}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    dk, _ = cloud.tree.query(query, k=[k])
    reach = float(dk[0]) * (1 + _BALL_SLACK) + _BALL_SLACK
    candidates = cloud.tree.query_ball_point(query, reach)
    idx, d = _sorted_hits(cloud, query, candidates)
    return [(int(i), float(x)) for i, x in zip(idx[:k], d[:k])]


def radius_search(cloud, query, r):
    """All points with distance <= r from ``query``, nearest first.

    Raises:
        InvalidRadiusError: r <= 0.
    """
    if not r > 0:
        raise InvalidRadiusError(f"radius must be positive, got {r}")
    query = np.asarray(query, dtype=np.float64)
    candidates = cloud.tree.query_ball_point(query, r * (1 + _BALL_SLACK))
    idx, d = _sorted_hits(cloud, query, candidates)
    keep = d <= r
    return [(int(i), float(x)) for i, x in zip(idx[keep], d[keep])]


def default_viewpoint(cloud):
    """Centroid lifted by ten bounding-box diagonals along +z."""
    centroid = cloud.points.mean(axis=0)
    return centroid + np.array([0.0, 0.0, 10.0 * max(cloud.bbox_diagonal, 1.0)])


def estimate_normals(cloud, k=10, viewpoint=None):
    """PCA normals from the k nearest neighbours of every point.

    The normal is the eigenvector of the neighbourhood covariance with the
    smallest eigenvalue, flipped to face ``viewpoint``. Curvature is the
    surface variation ``l_min / (l_0 + l_1 + l_2)``.
    """
    n = len(cloud)
    if k < 3 or k > n:
        raise InvalidKError(f"normal estimation needs 3 <= k <= {n}, got {k}")
    if viewpoint is None:
        viewpoint = default_viewpoint(cloud)
    viewpoint = np.asarray(viewpoint, dtype=np.float64)

    pts = cloud.points
    _, nbr = cloud.tree.query(pts, k=k)
    nbr = nbr.reshape(n, k)
    local = pts[nbr]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)

    normals = evecs[:, :, 0].copy()
    flip = np.einsum("ni,ni->n", normals, viewpoint - pts) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    total = evals.sum(axis=1)
    defined = (evals[:, 2] > 0) & (evals[:, 1] >= DEGENERATE_EIG_RATIO * evals[:, 2])
    curvature = np.where(total > 0, evals[:, 0] / np.where(total > 0, total, 1.0), 0.0)
    normals[~defined] = np.nan
    curvature = np.where(defined, curvature, np.nan)
    return NormalField(normals, curvature, defined)


def neighborhoods(cloud, radius):
    """Ball neighbourhoods (inclusive) of every point, as index arrays."""
    if not radius > 0:
        raise InvalidRadiusError(f"radius must be positive, got {radius}")
    return [np.asarray(lst, dtype=np.intp)
            for lst in cloud.tree.query_ball_point(cloud.points, radius, return_sorted=True)]


def random_rotation(rng):
    """Uniformly distributed rotation matrix (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q
