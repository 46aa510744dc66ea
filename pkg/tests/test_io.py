import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spdf.core import PointCloud
from spdf.io import CloudParseError, load_cloud, save_cloud


def test_three_line_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,z\n1,0,0\n0,1,0\n0,0,1\n")
    c = load_cloud(p)
    assert np.array_equal(c.points, np.eye(3))


def test_headerless_csv_with_normals(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2,3,0,0,1\n4,5,6,1,0,0\n")
    c = load_cloud(p)
    assert np.array_equal(c.normals, [[0, 0, 1], [1, 0, 0]])


def test_csv_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y,z\n1,2,3\n1,2\n")
    with pytest.raises(CloudParseError, match=":3:"):
        load_cloud(p)
    p.write_text("x,y,z\n1,2,3\n1,2,abc\n")
    with pytest.raises(CloudParseError, match=":3:"):
        load_cloud(p)


def test_ply_extra_property_ignored(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\n"
        "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
        "1 2 3 0.5\n4 5 6 0.7\n"
    )
    c = load_cloud(p)
    assert np.array_equal(c.points, [[1, 2, 3], [4, 5, 6]])
    assert c.channels == {}


@pytest.mark.parametrize(
    "text,line",
    [
        ("plx\n", 1),
        ("ply\nformat binary_little_endian 1.0\nend_header\n", 2),
        ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n", 8),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n", 8),
    ],
)
def test_ply_errors(tmp_path, text, line):
    p = tmp_path / "bad.ply"
    p.write_text(text)
    with pytest.raises(CloudParseError, match=f":{line}:"):
        load_cloud(p)


def test_pure_xyz_file(tmp_path):
    p = tmp_path / "a.csv"
    save_cloud(PointCloud(np.ones((2, 3))), p)
    assert p.read_text().splitlines()[0] == "x,y,z"


def test_labels_written_as_integers(tmp_path):
    p = tmp_path / "a.csv"
    c = PointCloud(np.zeros((3, 3)), {"label": np.array([0, 1, 2], np.int8), "confidence": np.array([0.1, 0.2, 0.3])})
    save_cloud(c, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,z,label,confidence"
    assert [ln.split(",")[3] for ln in lines[1:]] == ["0", "1", "2"]


coords = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
clouds = hnp.arrays(np.float64, st.tuples(st.integers(0, 30), st.just(3)), elements=coords)


@given(clouds, st.sampled_from(["csv_xyz", "ply_ascii"]), st.booleans())
def test_round_trip_bit_exact(tmp_path_factory, pts, fmt, with_channels):
    d = tmp_path_factory.mktemp("rt")
    channels = {}
    if with_channels and len(pts):
        r = np.random.default_rng(len(pts))
        n = r.normal(size=(len(pts), 3))
        channels = {
            "normal": n / np.linalg.norm(n, axis=1, keepdims=True),
            "saliency": r.random((len(pts), 3)),
            "label": r.integers(0, 3, len(pts)).astype(np.int8),
            "confidence": r.random(len(pts)),
        }
    c = PointCloud(pts, channels)
    a, b = d / "a.txt", d / "b.txt"
    save_cloud(c, a, fmt)
    back = load_cloud(a, fmt)
    assert np.array_equal(back.points, c.points)
    for name, values in channels.items():
        assert np.array_equal(back.channels[name], values)
    save_cloud(back, b, fmt)
    assert a.read_bytes() == b.read_bytes()
