"""Seeded synthetic point clouds used as test fixtures and as the CI dataset."""

from dataclasses import dataclass, field

import numpy as np

from ..cloud import PointCloud
from ..errors import InvalidSpecError

KINDS = ("sphere", "plane", "box", "blob", "plantlike")

_DEFAULTS = {
    "sphere": {"radius": 1.0, "axes": (1.0, 1.0, 1.0)},
    "plane": {"radius": 1.0, "grid": False},
    "box": {"size": (1.0, 1.0, 1.0), "grid": False},
    "blob": {"stdev": 1.0, "center": (0.0, 0.0, 0.0)},
    "plantlike": {
        "n_leaves": 4,
        "leaf_angles": None,  # azimuths in degrees; None -> evenly spaced
        "leaf_tilt": 30.0,  # degrees above horizontal
        "leaf_length": 0.5,
        "leaf_width": 0.15,
        "leaf_thickness": 0.01,
        "stem_height": 1.0,
        "stem_radius": 0.02,
        "stem_fraction": 0.15,
    },
}


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    n_points: int = 3000
    params: dict = field(default_factory=dict)
    noise: float = 0.0
    seed: int = 0

    def resolved_params(self):
        out = dict(_DEFAULTS.get(self.kind, {}))
        unknown = set(self.params) - set(out)
        if unknown:
            raise InvalidSpecError(f"unknown {self.kind} parameter(s): {sorted(unknown)}")
        out.update(self.params)
        return out


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n, radius, axes):
    return _unit_vectors(rng, n) * radius * np.asarray(axes, dtype=float)


def _plane(rng, n, radius, grid):
    if grid:
        # square lattice clipped to the disc, spacing chosen to give ~n points
        step = np.sqrt(np.pi * radius**2 / n)
        ticks = np.arange(-radius, radius + step / 2, step)
        xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
        xy = np.stack([xx.ravel(), yy.ravel()], axis=1)
        xy = xy[np.linalg.norm(xy, axis=1) <= radius]
        return np.column_stack([xy, np.zeros(len(xy))])
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(n)])


def _box_grid(n, size):
    half = np.asarray(size, dtype=float) / 2
    step = np.sqrt(2 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]) / n)
    ticks = [np.linspace(-h, h, max(2, int(round(2 * h / step)) + 1)) for h in half]
    faces = []
    for axis in range(3):
        a, b = [ax for ax in range(3) if ax != axis]
        uu, vv = np.meshgrid(ticks[a], ticks[b], indexing="ij")
        for sign in (-1.0, 1.0):
            f = np.empty((uu.size, 3))
            f[:, axis] = sign * half[axis]
            f[:, a] = uu.ravel()
            f[:, b] = vv.ravel()
            faces.append(f)
    # edge and corner samples are shared between faces
    return np.unique(np.round(np.concatenate(faces), 12), axis=0)


def _box(rng, n, size, grid):
    if grid:
        return _box_grid(n, size)
    sx, sy, sz = (float(s) for s in size)
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(size=(n, 2))
    pts = np.empty((n, 3))
    half = np.array([sx, sy, sz]) / 2
    for f in range(6):
        m = face == f
        axis, sign = divmod(f, 2)
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = half[axis] * (1 if sign else -1)
        for j, a in enumerate(others):
            pts[m, a] = (uv[m, j] - 0.5) * 2 * half[a]
    return pts


def _blob(rng, n, stdev, center):
    return rng.normal(scale=stdev, size=(n, 3)) + np.asarray(center, dtype=float)


def _rot_z(deg):
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _rot_y(deg):
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _plantlike(rng, n, n_leaves, leaf_angles, leaf_tilt, leaf_length, leaf_width,
               leaf_thickness, stem_height, stem_radius, stem_fraction):
    n_leaves = int(n_leaves)
    if n_leaves < 0:
        raise InvalidSpecError("n_leaves must be >= 0")
    if leaf_angles is None:
        leaf_angles = [360.0 * i / max(n_leaves, 1) for i in range(n_leaves)]
    if len(leaf_angles) != n_leaves:
        raise InvalidSpecError("leaf_angles must list one azimuth per leaf")
    n_stem = n if n_leaves == 0 else max(1, int(round(stem_fraction * n)))
    t = rng.uniform(0, 2 * np.pi, size=n_stem)
    stem = np.column_stack([stem_radius * np.cos(t), stem_radius * np.sin(t),
                            rng.uniform(0, stem_height, size=n_stem)])
    parts = [stem]
    if n_leaves:
        counts = np.full(n_leaves, (n - n_stem) // n_leaves)
        counts[: (n - n_stem) % n_leaves] += 1
        semi = np.array([leaf_length / 2, leaf_width / 2, leaf_thickness / 2])
        for i, (az, cnt) in enumerate(zip(leaf_angles, counts)):
            local = _unit_vectors(rng, int(cnt)) * semi
            local[:, 0] += semi[0]  # leaf base touches the stem axis
            # tilt up by leaf_tilt, then spin to the leaf's azimuth
            world = local @ _rot_y(-leaf_tilt).T @ _rot_z(az).T
            height = stem_height * (0.3 + 0.6 * (i + 0.5) / n_leaves)
            parts.append(world + np.array([0.0, 0.0, height]))
    return np.concatenate(parts, axis=0)


def synth_cloud(spec):
    """Sample the cloud described by ``spec``.

    Raises:
        InvalidSpecError: unknown kind, fewer than 10 points or negative noise.
    """
    if spec.kind not in KINDS:
        raise InvalidSpecError(f"unknown synthetic kind {spec.kind!r}; expected one of {KINDS}")
    if spec.n_points < 10:
        raise InvalidSpecError(f"n_points must be >= 10, got {spec.n_points}")
    if spec.noise < 0:
        raise InvalidSpecError(f"noise must be >= 0, got {spec.noise}")
    params = spec.resolved_params()
    rng = np.random.default_rng(spec.seed)
    builder = {"sphere": _sphere, "plane": _plane, "box": _box,
               "blob": _blob, "plantlike": _plantlike}[spec.kind]
    pts = builder(rng, spec.n_points, **params)
    if spec.noise > 0:
        pts = pts + rng.normal(scale=spec.noise, size=pts.shape)
    return PointCloud(pts, source_id=f"synth:{spec.kind}:{spec.seed}")
