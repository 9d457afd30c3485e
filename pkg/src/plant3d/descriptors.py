"""Rotation-normalised 3D SIFT (128-D) and SHOT (352-D) local descriptors.

Angles are in degrees throughout. Histogram bins are half-open ``[lo, hi)``
with the closing boundary (elevation 90, delta 180, cosine 1) folded into the
last bin.
"""

import csv
import io
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateNeighborhoodError,
    ParseError,
    TooFewNeighborsError,
    UndefinedNormalError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

SIFT_DIM = 128
SHOT_DIM = 352
MIN_NEIGHBORS = 5
DEFAULT_RADIUS_MULT = 8.0

_ORI_BIN = 10.0  # orientation histogram bin width
_DESC_BIN = 45.0  # descriptor bin width
_SHOT_AZIMUTH = 8
_SHOT_COS_BINS = 11
_LRF_GAP = 1e-9
# von Mises-Fisher concentration for orientation refinement (~10 degree bandwidth)
REFINE_KAPPA = 33.0
_REFINE_ITERS = 100


@dataclass(frozen=True)
class Orientation:
    alpha: float  # azimuth, [0, 360)
    beta: float  # elevation, [-90, 90]


@dataclass(frozen=True)
class SupportRegion:
    """Neighbours of a keypoint within radius ``r``, the keypoint itself excluded."""

    r: float
    r_max: float
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class LocalReferenceFrame:
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def matrix(self):
        """Rows are the axes: ``matrix @ v`` expresses ``v`` in the frame."""
        return np.vstack([self.x_axis, self.y_axis, self.z_axis])


def support_region(cloud, keypoint, r):
    """Points within ``r`` of the keypoint, minus the keypoint's own sample."""
    centre = np.asarray(keypoint.position)
    idx = np.asarray(cloud.tree.query_ball_point(centre, r, return_sorted=True), dtype=np.intp)
    d = np.linalg.norm(cloud.points[idx] - centre, axis=1) if len(idx) else np.empty(0)
    keep = (idx != keypoint.source_index) & (d > 0) & (d <= r)
    idx, d = idx[keep], d[keep]
    return SupportRegion(float(r), float(d.max()) if len(d) else 0.0, idx, d)


def spherical_angles(v):
    """Azimuth in [0, 360) and elevation in [-90, 90] of row vectors ``v``."""
    v = np.atleast_2d(v)
    theta = np.degrees(np.arctan2(v[:, 1], v[:, 0])) % 360.0
    phi = np.degrees(np.arctan2(v[:, 2], np.hypot(v[:, 0], v[:, 1])))
    return theta, phi


def _bin(values, lo, width, nbins):
    return np.clip(np.floor((values - lo) / width).astype(np.intp), 0, nbins - 1)


def _gaussian_weights(support):
    return np.exp(-2.0 * support.distances / support.r_max)


def dominant_orientation(keypoint, support, cloud, min_neighbors=MIN_NEIGHBORS):
    """Peak of the distance-weighted 36 x 18 (azimuth x elevation) histogram
    of keypoint-to-neighbour directions, as bin-centre angles.

    Ties go to the lower azimuth bin, then the lower elevation bin.
    """
    if len(support) < min_neighbors:
        raise TooFewNeighborsError(
            f"orientation needs >= {min_neighbors} neighbours, got {len(support)}")
    v = cloud.points[support.indices] - np.asarray(keypoint.position)
    theta, phi = spherical_angles(v)
    n_theta, n_phi = int(360 / _ORI_BIN), int(180 / _ORI_BIN)
    ti = _bin(theta, 0.0, _ORI_BIN, n_theta)
    pj = _bin(phi, -90.0, _ORI_BIN, n_phi)
    hist = np.zeros((n_theta, n_phi))
    np.add.at(hist, (ti, pj), _gaussian_weights(support))
    # argmax scans row-major, i.e. lowest azimuth bin first, then elevation
    t_best, p_best = np.unravel_index(np.argmax(hist), hist.shape)
    return Orientation((t_best + 0.5) * _ORI_BIN, -90.0 + (p_best + 0.5) * _ORI_BIN)


def rotation_to_frame(o):
    """The orientation matrix for azimuth ``alpha`` and elevation ``beta``.

    Its first column is the unit direction (alpha, beta); the second is the
    horizontal direction 90 degrees further in azimuth.
    """
    a, b = np.radians(o.alpha), np.radians(o.beta)
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    return np.array([
        [ca * cb, -sa, -ca * sb],
        [sa * cb, ca, -sa * sb],
        [sb, 0.0, cb],
    ])


def orientation_from_vector(d):
    theta, phi = spherical_angles(np.asarray(d, dtype=np.float64))
    return Orientation(float(theta[0]), float(phi[0]))


def refine_orientation(start, directions, weights, kappa=REFINE_KAPPA):
    """Mean-shift the histogram peak to the nearest mode of the weighted
    direction distribution (von Mises-Fisher kernel on the unit sphere).

    Binning in fixed azimuth/elevation cells is not rotation covariant; the
    mode it converges to is, as long as the start lies in the same basin.
    """
    u = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    d = rotation_to_frame(start)[:, 0]
    for _ in range(_REFINE_ITERS):
        k = weights * np.exp(kappa * (u @ d - 1.0))
        nd = k @ u
        norm = np.linalg.norm(nd)
        if norm == 0:
            break
        nd /= norm
        if nd @ d >= 1.0 - 1e-15:
            d = nd
            break
        d = nd
    return orientation_from_vector(d)


def descriptor_frame(orientation, normal):
    """Orthonormal frame whose first column is the dominant direction.

    Starts from :func:`rotation_to_frame` and rolls it about that direction
    until ``normal`` lies in the plane of the first and third columns with a
    positive third component, pinning the one rotation the two angles leave
    free. Vectors are mapped into the frame by ``frame.T @ v``.
    """
    R = rotation_to_frame(orientation)
    n = R.T @ np.asarray(normal, dtype=np.float64)
    psi = np.arctan2(-n[1], n[2])
    c, s = np.cos(psi), np.sin(psi)
    roll = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    return R @ roll


def delta_angle(v, n):
    """Angle in degrees between ``v`` and ``n``; works row-wise on (M, 3) ``v``."""
    v = np.asarray(v, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    nv = np.linalg.norm(v, axis=-1)
    nn = np.linalg.norm(n)
    if np.any(nv == 0) or nn == 0:
        raise ZeroVectorError("delta angle is undefined for a zero vector")
    # atan2 stays accurate near 0 and 180 degrees where arccos does not
    sin = np.linalg.norm(np.cross(v, n), axis=-1)
    return np.degrees(np.arctan2(sin, v @ n))


def _keypoint_normal(cloud, normals, keypoint, support):
    i = keypoint.source_index
    if i >= 0:
        if not normals.defined[i]:
            raise UndefinedNormalError(f"normal at point {i} is undefined")
        return normals.normals[i]
    # interpolated keypoint: PCA normal of the support, oriented like the
    # nearest defined sample normal
    pts = cloud.points[support.indices]
    evals, evecs = np.linalg.eigh(np.cov(pts.T, bias=True))
    if evals[1] <= 0:
        raise UndefinedNormalError("support of interpolated keypoint is degenerate")
    n = evecs[:, 0]
    ref = normals.normals[support.indices[0]]
    if np.all(np.isfinite(ref)) and n @ ref < 0:
        n = -n
    return n


def sift_histogram(rel, normal, weights):
    """Accumulate ``|v| * weight`` over 4 (delta) x 4 (elevation) x 8 (azimuth)
    bins of the already rotated neighbour vectors ``rel``; returns 128 values
    before normalisation."""
    m = np.linalg.norm(rel, axis=1)
    theta, phi = spherical_angles(rel)
    delta = delta_angle(rel, normal)
    ti = _bin(theta, 0.0, _DESC_BIN, 8)
    pj = _bin(phi, -90.0, _DESC_BIN, 4)
    dk = _bin(delta, 0.0, _DESC_BIN, 4)
    hist = np.zeros((4, 4, 8))
    np.add.at(hist, (dk, pj, ti), m * weights)
    return hist.ravel()


def _unit(h):
    norm = np.linalg.norm(h)
    if norm == 0:
        raise DegenerateNeighborhoodError("descriptor histogram is empty")
    return h / norm


def describe_sift3d(cloud, normals, keypoint, r, min_neighbors=MIN_NEIGHBORS):
    """128-D rotation-normalised 3D SIFT descriptor of one keypoint.

    The peak of the orientation histogram is refined by mean-shift, the
    support is turned into :func:`descriptor_frame` (dominant direction on the
    x axis, normal in the xz half-plane), and every keypoint-to-neighbour
    vector is binned by azimuth, elevation and angle to the keypoint normal,
    weighted by its length times ``exp(-2 d / r_max)``.
    """
    support = support_region(cloud, keypoint, r)
    if len(support) < min_neighbors:
        raise TooFewNeighborsError(
            f"SIFT descriptor needs >= {min_neighbors} neighbours, got {len(support)}")
    normal = _keypoint_normal(cloud, normals, keypoint, support)
    rel = cloud.points[support.indices] - np.asarray(keypoint.position)
    weights = _gaussian_weights(support)
    peak = dominant_orientation(keypoint, support, cloud, min_neighbors)
    frame = descriptor_frame(refine_orientation(peak, rel, weights), normal)
    hist = sift_histogram(rel @ frame, frame.T @ normal, weights)
    return _unit(hist)


def weighted_covariance(centre, neighbours, r):
    """Distance-weighted scatter about ``centre``: weights ``r - d_i`` over
    neighbours with ``d_i <= r``, normalised by the weight sum."""
    centre = np.asarray(centre, dtype=np.float64)
    rel = np.asarray(neighbours, dtype=np.float64).reshape(-1, 3) - centre
    d = np.linalg.norm(rel, axis=1)
    inside = d <= r
    rel, w = rel[inside], r - d[inside]
    if w.sum() <= 0:
        raise DegenerateNeighborhoodError("no neighbour strictly inside the support radius")
    return (rel.T * w) @ rel / w.sum()


def _orient_toward_majority(axis, rel):
    return -axis if np.sum(rel @ axis) < 0 else axis


def compute_shot_lrf(cloud, keypoint, r):
    """SHOT local reference frame from the weighted covariance of the support.

    z is the least-variance eigenvector, x the largest; each is flipped to
    point toward the majority of the support and y = z x x.

    Raises:
        DegenerateNeighborhoodError: rank below two, or the two smallest
            eigenvalues too close to fix z. A tie between the two largest
            leaves x to the eigensolver; z is still well defined there.
    """
    centre = np.asarray(keypoint.position)
    idx = np.asarray(cloud.tree.query_ball_point(centre, r), dtype=np.intp)
    nbrs = cloud.points[idx]
    C = weighted_covariance(centre, nbrs, r)
    evals, evecs = np.linalg.eigh(C)
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= _LRF_GAP * scale or (evals[1] - evals[0]) <= _LRF_GAP * scale:
        raise DegenerateNeighborhoodError(
            f"LRF is ambiguous (eigenvalues {evals}) at {tuple(keypoint.position)}")
    if (evals[2] - evals[1]) <= _LRF_GAP * scale:
        logger.debug("LRF x axis is not unique at %s", tuple(keypoint.position))
    rel = nbrs - centre
    x = _orient_toward_majority(evecs[:, 2], rel)
    z = _orient_toward_majority(evecs[:, 0], rel)
    y = np.cross(z, x)
    return LocalReferenceFrame(x, y, z)


def shot_sector(local, r):
    """Sector index in [0, 32) of LRF-local offsets: azimuth octant, then
    upper/lower half, then inner/outer shell (boundary r / 2)."""
    local = np.atleast_2d(local)
    theta, _ = spherical_angles(local)
    az = _bin(theta, 0.0, 360.0 / _SHOT_AZIMUTH, _SHOT_AZIMUTH)
    upper = (local[:, 2] >= 0).astype(np.intp)
    outer = (np.linalg.norm(local, axis=1) >= r / 2).astype(np.intp)
    return (outer * 2 + upper) * _SHOT_AZIMUTH + az


def describe_shot(cloud, normals, keypoint, r, min_neighbors=MIN_NEIGHBORS, lrf=None):
    """352-D SHOT: 32 spatial sectors x 11-bin histograms of ``n_i . z``."""
    centre = np.asarray(keypoint.position)
    idx = np.asarray(cloud.tree.query_ball_point(centre, r), dtype=np.intp)
    idx = idx[normals.defined[idx]]
    if len(idx) < min_neighbors:
        raise TooFewNeighborsError(
            f"SHOT needs >= {min_neighbors} neighbours with normals, got {len(idx)}")
    if lrf is None:
        lrf = compute_shot_lrf(cloud, keypoint, r)
    local = (cloud.points[idx] - centre) @ lrf.matrix.T
    sector = shot_sector(local, r)
    cos = np.clip(normals.normals[idx] @ lrf.z_axis, -1.0, 1.0)
    cbin = _bin(cos, -1.0, 2.0 / _SHOT_COS_BINS, _SHOT_COS_BINS)
    hist = np.zeros((32, _SHOT_COS_BINS))
    np.add.at(hist, (sector, cbin), 1.0)
    return _unit(hist.ravel())


def describe_all(cloud, normals, keypoints, kind, r, min_neighbors=MIN_NEIGHBORS):
    """Describe every keypoint that admits a descriptor.

    Returns (descriptors (M, D), indices of the keypoints that were kept).
    Keypoints with too few neighbours, undefined normals or an ambiguous
    frame are skipped.
    """
    fn = {"sift": describe_sift3d, "shot": describe_shot}[kind]
    dim = SIFT_DIM if kind == "sift" else SHOT_DIM
    rows, kept = [], []
    skipped = 0
    for i, kp in enumerate(keypoints):
        try:
            rows.append(fn(cloud, normals, kp, r, min_neighbors))
        except (TooFewNeighborsError, UndefinedNormalError, DegenerateNeighborhoodError):
            skipped += 1
            continue
        kept.append(i)
    if skipped:
        logger.debug("%s: skipped %d of %d keypoints", kind, skipped, len(keypoints))
    return np.asarray(rows, dtype=np.float64).reshape(-1, dim), kept


_MAGIC = b"P3DF"


def write_p3df(fh, descriptors):
    """Binary container: magic, u32 count, u32 dim, then float32 LE row-major."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("descriptors must be a 2-D array")
    fh.write(_MAGIC)
    fh.write(struct.pack("<II", d.shape[0], d.shape[1]))
    fh.write(d.astype("<f4").tobytes())


def read_p3df(fh):
    head = fh.read(12)
    if len(head) != 12 or head[:4] != _MAGIC:
        raise ParseError("not a P3DF descriptor file")
    count, dim = struct.unpack("<II", head[4:])
    body = fh.read(4 * count * dim)
    if len(body) != 4 * count * dim:
        raise ParseError(f"P3DF body truncated: expected {count}x{dim} floats")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)


def descriptors_to_csv(descriptors):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(descriptors, dtype=np.float64):
        writer.writerow([f"{v:.9g}" for v in row])
    return buf.getvalue()
