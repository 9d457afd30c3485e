"""Harris3D, ISS and SIFT3D keypoint detectors plus greedy non-max suppression.

All radii are given as multiples of the cloud resolution. Keypoints always
sit on input points (``source_index`` is the point index).
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .cloud import neighborhoods
from .errors import (
    BadScaleLadderError,
    EmptyCloudError,
    InvalidParameterError,
    InvalidRadiusError,
    NoNormalsError,
    TooFewPointsError,
)

logger = logging.getLogger(__name__)

# Responses/eigenvalues at or below these floors are numerical zeros.
HARRIS_MIN_RESPONSE = 1e-9
ISS_MIN_L3_RATIO = 1e-9
# Above this size the SIFT3D density is summed only inside a 5-sigma ball.
SIFT_BRUTE_FORCE_LIMIT = 50_000
_SIFT_TRUNCATION = 5.0


@dataclass(frozen=True)
class Keypoint:
    position: tuple
    scale: float
    saliency: float
    source_index: int = -1

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        if not np.isfinite(self.saliency):
            raise ValueError("keypoint saliency must be finite")
        if not self.scale > 0:
            raise ValueError("keypoint scale must be positive")

    def to_dict(self):
        x, y, z = self.position
        return {"x": x, "y": y, "z": z, "scale": self.scale,
                "saliency": self.saliency, "index": self.source_index}

    @classmethod
    def from_dict(cls, d):
        return cls((d["x"], d["y"], d["z"]), float(d["scale"]), float(d["saliency"]),
                   int(d.get("index", -1)))


@dataclass(frozen=True)
class HarrisParams:
    radius_mult: float = 3.0
    k: float = 0.04
    threshold_rel: float = 0.01
    nms_radius_mult: float = 2.0

    def __post_init__(self):
        if not self.radius_mult > 0:
            raise InvalidParameterError("radius_mult must be > 0")
        if not 0 < self.threshold_rel <= 1:
            raise InvalidParameterError("threshold_rel must be in (0, 1]")


@dataclass(frozen=True)
class IssParams:
    salient_radius_mult: float = 6.0
    nms_radius_mult: float = 4.0
    gamma_21: float = 0.975
    gamma_32: float = 0.975
    min_neighbors: int = 5

    def __post_init__(self):
        if not (0 < self.gamma_21 < 1 and 0 < self.gamma_32 < 1):
            raise InvalidParameterError("gamma ratios must lie in (0, 1)")
        if self.min_neighbors < 3:
            raise InvalidParameterError("min_neighbors must be >= 3")


@dataclass(frozen=True)
class SiftDetectorParams:
    min_scale_mult: float = 2.0
    n_octaves: int = 4
    scales_per_octave: int = 4
    min_contrast: float = 1e-4
    curvature_reject_ratio: float = 10.0

    def __post_init__(self):
        if self.n_octaves < 1:
            raise InvalidParameterError("n_octaves must be >= 1")
        if self.scales_per_octave < 2:
            raise InvalidParameterError("scales_per_octave must be >= 2")


def keypoints_to_json(keypoints):
    return json.dumps([kp.to_dict() for kp in keypoints], indent=1)


def keypoints_from_json(text):
    return [Keypoint.from_dict(d) for d in json.loads(text)]


def non_max_suppression(candidates, radius):
    """Greedy suppression: strongest first, drop anything within ``radius``
    of an already kept keypoint. Ties in saliency go to the lower index."""
    if not radius > 0:
        raise InvalidRadiusError(f"NMS radius must be positive, got {radius}")
    order = sorted(candidates, key=lambda kp: (-kp.saliency, kp.source_index))
    kept = []
    kept_pos = np.empty((0, 3))
    r2 = radius * radius
    for kp in order:
        p = np.asarray(kp.position)
        if len(kept_pos) and np.min(np.sum((kept_pos - p) ** 2, axis=1)) <= r2:
            continue
        kept.append(kp)
        kept_pos = np.vstack([kept_pos, p])
    return kept


def _pairs(nbrs):
    """Flatten neighbour lists into parallel (centre, neighbour) index arrays."""
    counts = np.fromiter((len(a) for a in nbrs), dtype=np.intp, count=len(nbrs))
    rows = np.repeat(np.arange(len(nbrs)), counts)
    cols = np.concatenate(nbrs) if len(nbrs) else np.empty(0, dtype=np.intp)
    return rows, cols.astype(np.intp), counts


def _sym_sums(rows, weights, vecs, n):
    """Per-row weighted sums of outer products vecs vecs^T -> (n, 3, 3)."""
    out = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(rows, weights=weights * vecs[:, a] * vecs[:, b], minlength=n)
            out[:, a, b] = s
            out[:, b, a] = s
    return out


def harris_responses(cloud, normals, radius):
    """Harris response of every point from the covariance of nearby normals.

    ``C`` is the Gaussian-weighted (sigma = radius / 2) mean of ``n n^T`` over
    neighbours with a defined normal. Unit normals make ``trace(C) == 1``, so
    ``det - k trace^2`` alone would be negative everywhere; like PCL we add
    ``k`` back, which makes flat patches score 0 and a balanced corner 1/27.
    Points without usable neighbours get ``-inf``.
    """
    pts = cloud.points
    n = len(pts)
    rows, cols, _ = _pairs(neighborhoods(cloud, radius))
    ok = normals.defined[cols]
    rows, cols = rows[ok], cols[ok]
    sigma = radius / 2.0
    d2 = np.sum((pts[rows] - pts[cols]) ** 2, axis=1)
    w = np.exp(-d2 / (2 * sigma**2))
    wsum = np.bincount(rows, weights=w, minlength=n)
    C = _sym_sums(rows, w, normals.normals[cols], n)
    has = wsum > 0
    C[has] /= wsum[has, None, None]
    return C, has


def _harris_score(C, k):
    tr = np.trace(C, axis1=1, axis2=2)
    return np.linalg.det(C) - k * tr**2 + k


def detect_harris3d(cloud, normals, params=HarrisParams(), res=None):
    """Harris3D corners: points whose normal covariance has a large determinant."""
    if cloud is None or len(cloud) == 0:
        raise EmptyCloudError("cannot detect keypoints on an empty cloud")
    if normals is None or len(normals) != len(cloud) or not np.any(normals.defined):
        raise NoNormalsError("Harris3D needs a defined normal field for the cloud")
    radius = float(res) * params.radius_mult
    C, has = harris_responses(cloud, normals, radius)
    response = np.full(len(cloud), -np.inf)
    response[has] = _harris_score(C[has], params.k)
    peak = response.max()
    if not peak > HARRIS_MIN_RESPONSE:
        return []
    keep = np.flatnonzero((response >= params.threshold_rel * peak)
                          & (response > HARRIS_MIN_RESPONSE))
    cands = [Keypoint(cloud.points[i], radius, float(response[i]), int(i)) for i in keep]
    return non_max_suppression(cands, float(res) * params.nms_radius_mult)


def iss_eigenvalues(cloud, radius):
    """Descending eigenvalues of each point's neighbourhood scatter matrix.

    Returns (evals (N, 3), neighbour counts (N,)). The scatter matrix is the
    covariance of the ball neighbourhood about its own centroid.
    """
    pts = cloud.points
    n = len(pts)
    rows, cols, counts = _pairs(neighborhoods(cloud, radius))
    rel = pts[cols] - pts[rows]
    ones = np.ones(len(rows))
    S2 = _sym_sums(rows, ones, rel, n)
    S1 = np.stack([np.bincount(rows, weights=rel[:, a], minlength=n) for a in range(3)], axis=1)
    c = np.maximum(counts, 1).astype(float)
    mean = S1 / c[:, None]
    cov = S2 / c[:, None, None] - np.einsum("ni,nj->nij", mean, mean)
    evals = np.linalg.eigvalsh(cov)[:, ::-1]
    return np.clip(evals, 0.0, None), counts


def iss_candidate_mask(evals, counts, params):
    l1, l2, l3 = evals[:, 0], evals[:, 1], evals[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        r21 = np.where(l1 > 0, l2 / l1, np.inf)
        r32 = np.where(l2 > 0, l3 / l2, np.inf)
    return ((counts >= params.min_neighbors) & (r21 < params.gamma_21)
            & (r32 < params.gamma_32) & (l3 > ISS_MIN_L3_RATIO * l1))


def detect_iss(cloud, params=IssParams(), res=None):
    """Intrinsic Shape Signatures: salient where all three scatter
    eigenvalues are well separated; saliency is the smallest eigenvalue."""
    if cloud is None or len(cloud) == 0:
        raise EmptyCloudError("cannot detect keypoints on an empty cloud")
    if len(cloud) < params.min_neighbors:
        return []
    radius = float(res) * params.salient_radius_mult
    evals, counts = iss_eigenvalues(cloud, radius)
    mask = iss_candidate_mask(evals, counts, params)
    cands = [Keypoint(cloud.points[i], radius, float(evals[i, 2]), int(i))
             for i in np.flatnonzero(mask)]
    return non_max_suppression(cands, float(res) * params.nms_radius_mult)


def sift_scale_ladder(params, res):
    """Gaussian scales ``sigma_j = base * 2**(j / S)``.

    ``n_octaves * S + 3`` scales give ``n_octaves * S`` DoG levels that have a
    neighbour level on both sides.
    """
    S = params.scales_per_octave
    base = params.min_scale_mult * float(res)
    j = np.arange(params.n_octaves * S + 3)
    sigmas = base * 2.0 ** (j / S)
    if not (np.all(np.isfinite(sigmas)) and sigmas[0] > 0 and np.all(np.diff(sigmas) > 0)):
        raise BadScaleLadderError(f"scale ladder is not strictly increasing: {sigmas}")
    return sigmas


def gaussian_density(cloud, sigmas, res, chunk=512):
    """Scale-normalised Gaussian density at every cloud point for each sigma.

    ``D_sigma(p) = (res / sigma)^3 / N * sum_i exp(-|p - p_i|^2 / 2 sigma^2)``.
    The ``(res / sigma)^3`` factor makes adjacent-scale differences behave like
    the scale-normalised Laplacian, so blob centres are scale-space extrema.
    """
    pts = cloud.points
    n = len(pts)
    sigmas = np.asarray(sigmas, dtype=float)
    out = np.zeros((len(sigmas), n))
    inv2s2 = 1.0 / (2 * sigmas**2)
    if n <= SIFT_BRUTE_FORCE_LIMIT:
        sq = np.sum(pts**2, axis=1)
        for start in range(0, n, chunk):
            blk = pts[start:start + chunk]
            d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * blk @ pts.T
            np.maximum(d2, 0.0, out=d2)
            for j, c in enumerate(inv2s2):
                out[j, start:start + chunk] = np.exp(-d2 * c).sum(axis=1)
    else:
        for j, s in enumerate(sigmas):
            rows, cols, _ = _pairs(neighborhoods(cloud, _SIFT_TRUNCATION * s))
            d2 = np.sum((pts[rows] - pts[cols]) ** 2, axis=1)
            out[j] = np.bincount(rows, weights=np.exp(-d2 * inv2s2[j]), minlength=n)
    return out * ((float(res) / sigmas) ** 3 / n)[:, None]


def dog_hessian(cloud, index, sigma_lo, sigma_hi, res):
    """Analytic 3x3 spatial Hessian of ``D_hi - D_lo`` at point ``index``."""
    pts = cloud.points
    n = len(pts)
    p = pts[index]
    idx = np.asarray(cloud.tree.query_ball_point(p, _SIFT_TRUNCATION * sigma_hi), dtype=np.intp)
    rel = p - pts[idx]
    d2 = np.sum(rel**2, axis=1)
    H = np.zeros((3, 3))
    for sign, s in ((1.0, sigma_hi), (-1.0, sigma_lo)):
        w = np.exp(-d2 / (2 * s**2))
        scale = (float(res) / s) ** 3 / n
        H += sign * scale * ((rel.T * w) @ rel / s**4 - np.eye(3) * w.sum() / s**2)
    return H


def passes_curvature_test(H, max_ratio):
    ev = np.abs(np.linalg.eigvalsh(H))
    return ev.min() > 0 and ev.max() / ev.min() <= max_ratio


def detect_sift3d(cloud, params=SiftDetectorParams(), res=None):
    """Scale-space extrema of the difference of Gaussian densities.

    A point is a keypoint at level ``j`` when its DoG value is strictly above
    (or below) every DoG value at levels ``j-1, j, j+1`` of every other point
    within ``2 sigma_j`` and of itself at ``j +- 1``, its magnitude is at
    least ``min_contrast`` times the largest magnitude in the cloud, and the
    DoG Hessian is not edge-like (eigenvalue ratio <= curvature_reject_ratio).
    """
    if cloud is None or len(cloud) == 0:
        raise EmptyCloudError("cannot detect keypoints on an empty cloud")
    if len(cloud) < 10:
        raise TooFewPointsError(f"SIFT3D needs >= 10 points, got {len(cloud)}")
    sigmas = sift_scale_ladder(params, res)
    dens = gaussian_density(cloud, sigmas, res)
    dog = np.diff(dens, axis=0)
    peak = np.abs(dog).max()
    if peak == 0:
        return []
    floor = params.min_contrast * peak

    keypoints = []
    for j in range(1, len(dog) - 1):
        here, lo, hi = dog[j], dog[j - 1], dog[j + 1]
        is_max = (here > lo) & (here > hi)
        is_min = (here < lo) & (here < hi)
        cand = np.flatnonzero((is_max | is_min) & (np.abs(here) >= floor))
        if len(cand) == 0:
            continue
        upper = np.maximum(np.maximum(lo, hi), here)
        lower = np.minimum(np.minimum(lo, hi), here)
        balls = cloud.tree.query_ball_point(cloud.points[cand], 2 * sigmas[j])
        for p, ball in zip(cand, balls):
            ball = np.asarray(ball, dtype=np.intp)
            ball = ball[ball != p]
            if is_max[p]:
                ok = len(ball) == 0 or here[p] > upper[ball].max()
            else:
                ok = len(ball) == 0 or here[p] < lower[ball].min()
            if not ok:
                continue
            H = dog_hessian(cloud, p, sigmas[j], sigmas[j + 1], res)
            if not passes_curvature_test(H, params.curvature_reject_ratio):
                continue
            keypoints.append(Keypoint(cloud.points[p], float(sigmas[j]),
                                      float(abs(here[p])), int(p)))
    logger.debug("SIFT3D: %d keypoints over %d levels", len(keypoints), len(dog) - 2)
    return keypoints
