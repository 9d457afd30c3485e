import struct

import numpy as np
import pytest

from plant3d.cloud import load_cloud
from plant3d.errors import EmptyCloudError, NotFoundError, ParseError
from plant3d.io import read_points, write_ply, write_xyz

TRIANGLE = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)


def test_ascii_ply_keeps_file_order(tmp_path):
    p = tmp_path / "t.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\n"
                 "property float x\nproperty float y\nproperty float z\nend_header\n"
                 "0 0 0\n1 0 0\n0 1 0\n")
    np.testing.assert_array_equal(load_cloud(p).points, TRIANGLE)


def test_xyz_two_points_and_comments(tmp_path):
    p = tmp_path / "t.xyz"
    p.write_text("# header\n0 0 0\n1 0 0\n")
    assert len(load_cloud(p)) == 2


def test_missing_file():
    with pytest.raises(NotFoundError):
        load_cloud("/definitely/not/here.ply")


def test_ply_skips_extra_properties_and_faces(tmp_path):
    p = tmp_path / "mesh.ply"
    p.write_text("ply\nformat ascii 1.0\ncomment made by hand\n"
                 "element vertex 3\nproperty double x\nproperty uchar red\n"
                 "property double y\nproperty double z\nproperty float nx\n"
                 "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
                 "0 255 0 0 1\n1 0 0 0 1\n0 9 1 0 1\n3 0 1 2\n")
    np.testing.assert_array_equal(read_points(p), TRIANGLE)


def test_binary_ply_float32_with_extra_property(tmp_path):
    p = tmp_path / "b.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar flag\nelement face 1\nproperty list uchar int vertex_indices\n"
              "end_header\n").encode()
    body = b"".join(struct.pack("<fffB", *row, 7) for row in TRIANGLE)
    body += struct.pack("<B3i", 3, 0, 1, 2)
    p.write_bytes(header + body)
    np.testing.assert_array_equal(read_points(p), TRIANGLE)


@pytest.mark.parametrize("binary", [False, True])
def test_ply_round_trip(tmp_path, rng, binary):
    pts = rng.normal(size=(50, 3))
    p = tmp_path / "r.ply"
    write_ply(p, pts, binary=binary)
    np.testing.assert_array_equal(read_points(p), pts)


def test_xyz_round_trip(tmp_path, rng):
    pts = rng.normal(size=(20, 3))
    p = tmp_path / "r.xyz"
    write_xyz(p, pts)
    np.testing.assert_array_equal(read_points(p), pts)


def test_loading_is_deterministic(tmp_path, rng):
    p = tmp_path / "d.ply"
    write_ply(p, rng.normal(size=(30, 3)), binary=True)
    np.testing.assert_array_equal(load_cloud(p).points, load_cloud(p).points)


def test_bad_row_reports_line(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\n"
                 "property float x\nproperty float y\nproperty float z\nend_header\n"
                 "0 0 0\n1 oops 0\n")
    with pytest.raises(ParseError) as err:
        load_cloud(p)
    assert err.value.line == 9


def test_xyz_wrong_arity(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 2\n")
    with pytest.raises(ParseError, match="line 2"):
        load_cloud(p)


def test_bad_magic_and_integer_coordinates(tmp_path):
    p = tmp_path / "x.ply"
    p.write_text("plyx\n")
    with pytest.raises(ParseError):
        load_cloud(p)
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                 "property int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n")
    with pytest.raises(ParseError, match="float32/float64"):
        load_cloud(p)


def test_truncated_binary(tmp_path):
    p = tmp_path / "t.ply"
    p.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
                  b"property double x\nproperty double y\nproperty double z\nend_header\n"
                  + struct.pack("<3d", 1, 2, 3))
    with pytest.raises(ParseError, match="truncated"):
        load_cloud(p)


def test_empty_cloud(tmp_path):
    p = tmp_path / "e.xyz"
    p.write_text("# nothing\n")
    with pytest.raises(EmptyCloudError):
        load_cloud(p)
