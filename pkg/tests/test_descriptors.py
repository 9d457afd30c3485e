import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plant3d.cloud import NormalField, PointCloud, estimate_normals, random_rotation
from plant3d.descriptors import (
    SHOT_DIM,
    SIFT_DIM,
    LocalReferenceFrame,
    Orientation,
    compute_shot_lrf,
    delta_angle,
    describe_all,
    describe_shot,
    describe_sift3d,
    descriptor_frame,
    descriptors_to_csv,
    dominant_orientation,
    read_p3df,
    rotation_to_frame,
    shot_sector,
    support_region,
    weighted_covariance,
    write_p3df,
)
from plant3d.detectors import Keypoint
from plant3d.errors import (
    DegenerateNeighborhoodError,
    ParseError,
    TooFewNeighborsError,
    UndefinedNormalError,
    ZeroVectorError,
)

unit_floats = st.floats(-1, 1, allow_nan=False)
vectors = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def ray_cloud(direction, n=8):
    """Keypoint at the origin (index 0) plus ``n`` points along one ray."""
    d = np.asarray(direction, dtype=float)
    pts = np.vstack([np.zeros(3), np.outer(np.arange(1, n + 1) * 0.1, d)])
    return PointCloud(pts), Keypoint((0, 0, 0), 1.0, 1.0, 0)


def const_normals(cloud, n):
    return NormalField(np.tile(n, (len(cloud), 1)), np.zeros(len(cloud)))


# --- orientation and Eq. 1 frame -------------------------------------------------

def test_dominant_orientation_plus_x():
    cloud, kp = ray_cloud([1, 0, 0])
    o = dominant_orientation(kp, support_region(cloud, kp, 2.0), cloud)
    assert (o.alpha, o.beta) == (5.0, 5.0)


def test_dominant_orientation_plus_z():
    cloud, kp = ray_cloud([0, 0, 1])
    assert dominant_orientation(kp, support_region(cloud, kp, 2.0), cloud).beta == 85.0


def test_dominant_orientation_needs_neighbours():
    cloud, kp = ray_cloud([1, 0, 0], n=2)
    with pytest.raises(TooFewNeighborsError):
        dominant_orientation(kp, support_region(cloud, kp, 2.0), cloud)


def test_dominant_orientation_tie_goes_to_lower_bins():
    pts = np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1], [0, -1, 0], [-1, 0, 0]], float)
    cloud = PointCloud(pts)
    kp = Keypoint((0, 0, 0), 1.0, 1.0, 0)
    o = dominant_orientation(kp, support_region(cloud, kp, 2.0), cloud)
    assert (o.alpha, o.beta) == (5.0, 5.0)


def test_support_excludes_keypoint():
    cloud, kp = ray_cloud([1, 0, 0], n=4)
    s = support_region(cloud, kp, 0.35)
    assert list(s.indices) == [1, 2, 3]
    assert s.r_max == pytest.approx(0.3)


def test_rotation_to_frame_examples():
    np.testing.assert_array_equal(rotation_to_frame(Orientation(0, 0)), np.eye(3))
    np.testing.assert_allclose(rotation_to_frame(Orientation(90, 0)),
                               [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


@settings(max_examples=200)
@given(st.floats(0, 360, exclude_max=True), st.floats(-90, 90))
def test_rotation_to_frame_in_so3(alpha, beta):
    R = rotation_to_frame(Orientation(alpha, beta))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    # first column points along (alpha, beta)
    a, b = np.radians(alpha), np.radians(beta)
    np.testing.assert_allclose(R[:, 0], [np.cos(a) * np.cos(b), np.sin(a) * np.cos(b), np.sin(b)],
                               atol=1e-12)


@settings(max_examples=100)
@given(vectors, vectors)
def test_descriptor_frame_pins_normal(d, n):
    d = d / np.linalg.norm(d)
    n_perp = n - (n @ d) * d
    if np.linalg.norm(n_perp) < 1e-3 * np.linalg.norm(n):
        return
    alpha = np.degrees(np.arctan2(d[1], d[0])) % 360
    beta = np.degrees(np.arcsin(np.clip(d[2], -1, 1)))
    F = descriptor_frame(Orientation(alpha, beta), n)
    np.testing.assert_allclose(F.T @ F, np.eye(3), atol=1e-12)
    local = F.T @ n
    assert abs(local[1]) < 1e-9 * np.linalg.norm(n)
    assert local[2] > 0


# --- Eq. 2 ------------------------------------------------------------------------

def test_delta_angle_examples():
    n = np.array([0, 0, 1.0])
    assert delta_angle([0, 0, 2.0], n) == pytest.approx(0.0, abs=1e-9)
    assert delta_angle([3.0, 0, 0], n) == pytest.approx(90.0, abs=1e-9)
    assert delta_angle([0, 0, -1.0], n) == pytest.approx(180.0, abs=1e-9)
    with pytest.raises(ZeroVectorError):
        delta_angle([0, 0, 0], n)


@settings(max_examples=200)
@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_delta_angle_range_and_scale(v, n, c):
    d = delta_angle(v, n)
    assert 0.0 <= d <= 180.0
    assert delta_angle(c * v, n) == pytest.approx(d, abs=1e-6)


# --- 3D SIFT ----------------------------------------------------------------------

def test_sift_single_ray_is_one_hot():
    cloud, kp = ray_cloud([1, 0, 0])
    desc = describe_sift3d(cloud, const_normals(cloud, [0, 0, 1.0]), kp, 2.0)
    assert desc.shape == (SIFT_DIM,)
    assert np.count_nonzero(desc) == 1
    # delta = 90 -> bin 2, phi = 0 -> bin 2, theta = 0 -> bin 0; layout [delta][phi][theta]
    assert desc[2 * 32 + 2 * 8 + 0] == pytest.approx(1.0)


def test_sift_shape_norm_sign(plant):
    cloud, res, _, normals, kps = plant
    D, kept = describe_all(cloud, normals, kps[:50], "sift", 8 * res)
    assert D.shape[1] == SIFT_DIM and len(kept) > 40
    np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0, atol=1e-6)
    assert D.min() >= 0


def test_sift_errors():
    cloud, kp = ray_cloud([1, 0, 0], n=3)
    with pytest.raises(TooFewNeighborsError):
        describe_sift3d(cloud, const_normals(cloud, [0, 0, 1.0]), kp, 2.0)
    cloud, kp = ray_cloud([1, 0, 0])
    nan = NormalField(np.full((len(cloud), 3), np.nan), np.full(len(cloud), np.nan))
    with pytest.raises(UndefinedNormalError):
        describe_sift3d(cloud, nan, kp, 2.0)


def _moved_kps(kps, fn):
    return [Keypoint(fn(np.array(k.position)), k.scale, k.saliency, k.source_index) for k in kps]


@pytest.mark.parametrize("kind", ["sift", "shot"])
def test_translation_invariance(plant, kind):
    cloud, res, vp, normals, kps = plant
    t = np.array([3.0, -7.0, 11.0])
    moved = cloud.transformed(translation=t)
    kps = kps[:40]
    a, ka = describe_all(cloud, normals, kps, kind, 8 * res)
    b, kb = describe_all(moved, estimate_normals(moved, 10, vp + t), _moved_kps(kps, lambda p: p + t),
                         kind, 8 * res)
    assert ka == kb
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_sift_scale_invariance(plant):
    cloud, res, vp, normals, kps = plant
    s = 3.5
    scaled = cloud.transformed(scale=s)
    kps = kps[:40]
    a, ka = describe_all(cloud, normals, kps, "sift", 8 * res)
    b, kb = describe_all(scaled, estimate_normals(scaled, 10, vp * s),
                         _moved_kps(kps, lambda p: p * s), "sift", 8 * res * s)
    assert ka == kb
    np.testing.assert_allclose(a, b, atol=1e-6)


@pytest.mark.parametrize("kind", ["sift", "shot"])
def test_rotation_invariance_smoke(plant, kind):
    cloud, res, vp, normals, kps = plant
    kps = kps[:60]
    a, ka = describe_all(cloud, normals, kps, kind, 8 * res)
    rng = np.random.default_rng(8)
    for _ in range(3):
        R = random_rotation(rng)
        moved = cloud.transformed(R)
        b, kb = describe_all(moved, estimate_normals(moved, 10, R @ vp),
                             _moved_kps(kps, lambda p: R @ p), kind, 8 * res)
        common = sorted(set(ka) & set(kb))
        cos = [a[ka.index(i)] @ b[kb.index(i)] for i in common]
        assert np.median(cos) >= 0.95


# --- SHOT -------------------------------------------------------------------------

def test_weighted_covariance_two_neighbours():
    C = weighted_covariance([0, 0, 0], [[1, 0, 0], [0, 1, 0]], 2.0)
    np.testing.assert_allclose(C, np.diag([0.5, 0.5, 0.0]), atol=1e-12)


def test_weighted_covariance_hand_weights():
    # d = 1 and 2 with r = 4: weights 3 and 2
    C = weighted_covariance([1, 1, 1], [[2, 1, 1], [1, 1, 3]], 4.0)
    want = (3 * np.diag([1, 0, 0]) + 2 * np.diag([0, 0, 4])) / 5
    np.testing.assert_allclose(C, want, atol=1e-12)


@settings(max_examples=50)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1, 1)))
def test_weighted_covariance_is_psd(nbrs):
    if np.all(np.linalg.norm(nbrs, axis=1) > 2):
        return
    C = weighted_covariance([0, 0, 0], nbrs, 2.0)
    np.testing.assert_allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-9


def test_lrf_two_neighbours():
    cloud = PointCloud([[1, 0, 0], [0, 1, 0]])
    lrf = compute_shot_lrf(cloud, Keypoint((0, 0, 0), 1.0, 1.0), 2.0)
    np.testing.assert_allclose(np.abs(lrf.z_axis), [0, 0, 1], atol=1e-12)


def test_lrf_plane(rng):
    xy = rng.uniform(-1, 1, size=(300, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(300)]))
    lrf = compute_shot_lrf(cloud, Keypoint((0, 0, 0), 1.0, 1.0), 0.8)
    np.testing.assert_allclose(np.abs(lrf.z_axis), [0, 0, 1], atol=1e-6)
    M = lrf.matrix
    np.testing.assert_allclose(M @ M.T, np.eye(3), atol=1e-6)
    np.testing.assert_allclose(np.cross(lrf.x_axis, lrf.y_axis), lrf.z_axis, atol=1e-6)


def test_lrf_collinear_is_degenerate():
    cloud = PointCloud([[1, 0, 0], [2, 0, 0], [3, 0, 0]])
    with pytest.raises(DegenerateNeighborhoodError):
        compute_shot_lrf(cloud, Keypoint((0, 0, 0), 1.0, 1.0), 5.0)


def test_shot_single_sector_top_bin():
    pts = np.array([[0, 0, 0], [0.2, 0.05, 0.01], [0.3, 0.1, 0.02], [0.25, 0.02, 0.0],
                    [0.1, 0.01, 0.03], [0.35, 0.2, 0.05]])
    cloud = PointCloud(pts)
    lrf = LocalReferenceFrame(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]))
    desc = describe_shot(cloud, const_normals(cloud, [0, 0, 1.0]), Keypoint((0, 0, 0), 1, 1, 0),
                         1.0, lrf=lrf)
    assert desc.shape == (SHOT_DIM,)
    sector = 8  # inner, upper, first azimuth octant
    assert np.flatnonzero(desc).tolist() == [sector * 11 + 10]
    assert desc[sector * 11 + 10] == pytest.approx(1.0)


@settings(max_examples=200)
@given(arrays(np.float64, (20, 3), elements=st.floats(-1, 1)))
def test_shot_sectors_partition(local):
    s = shot_sector(local, 1.0)
    assert s.shape == (20,)
    assert np.all((s >= 0) & (s < 32))


def test_shot_shape_and_norm(plant):
    cloud, res, _, normals, kps = plant
    D, kept = describe_all(cloud, normals, kps[:50], "shot", 8 * res)
    assert D.shape == (len(kept), SHOT_DIM)
    np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0, atol=1e-6)
    assert D.min() >= 0


def test_shot_too_few_neighbours():
    cloud = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(TooFewNeighborsError):
        describe_shot(cloud, const_normals(cloud, [0, 0, 1.0]), Keypoint((0, 0, 0), 1, 1, 0), 2.0)


# --- serialisation ------------------------------------------------------------------

def test_p3df_round_trip(rng):
    D = rng.random((7, SHOT_DIM)).astype(np.float32).astype(np.float64)
    buf = io.BytesIO()
    write_p3df(buf, D)
    raw = buf.getvalue()
    assert raw[:4] == b"P3DF" and len(raw) == 12 + 4 * D.size
    np.testing.assert_array_equal(read_p3df(io.BytesIO(raw)), D)
    with pytest.raises(ParseError):
        read_p3df(io.BytesIO(raw[:-4]))
    with pytest.raises(ParseError):
        read_p3df(io.BytesIO(b"NOPE" + raw[4:]))


def test_csv_export(rng):
    D = rng.random((3, 4))
    rows = descriptors_to_csv(D).strip().splitlines()
    assert len(rows) == 3 and len(rows[0].split(",")) == 4
