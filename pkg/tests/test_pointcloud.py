"""PLY round-trips, parse failures, exact k-NN contracts, chunked traversal."""

import numpy as np
import pytest

from conftest import brute_knn, brute_nearest
from lidarsplat.pointcloud import (
    PlyParseError,
    PointCloud,
    build_neighbor_index,
    chunk_iterate,
    knn,
    knn_rows,
    load_pointcloud,
    nearest_point,
    save_pointcloud,
)


# ---------------------------------------------------------------------------
# PointCloud invariants
# ---------------------------------------------------------------------------


def test_pointcloud_rejects_nonfinite_positions():
    with pytest.raises(ValueError, match="non-finite"):
        PointCloud(np.array([[0.0, 0.0, np.nan]]))


def test_pointcloud_rejects_length_mismatch():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), colors=np.zeros((2, 3)))


def test_pointcloud_rejects_non_unit_normals():
    with pytest.raises(ValueError, match="unit"):
        PointCloud(np.zeros((1, 3)), normals=np.array([[2.0, 0.0, 0.0]]))


def test_select_preserves_attributes():
    cloud = PointCloud(
        np.arange(9.0).reshape(3, 3),
        colors=np.full((3, 3), 0.5),
        normals=np.tile([0.0, 0.0, 1.0], (3, 1)),
    )
    sub = cloud.select([2, 0])
    assert sub.count == 2
    np.testing.assert_array_equal(sub.positions[0], cloud.positions[2])
    assert sub.colors is not None and sub.normals is not None


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

ASCII_XYZ = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1 0 0
0 1 0
"""


def test_load_minimal_ascii_ply(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(ASCII_XYZ)
    cloud = load_pointcloud(path)
    assert cloud.count == 3
    assert cloud.colors is None
    assert cloud.normals is None


def test_load_color_normalization(tmp_path):
    path = tmp_path / "c.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n0 0 0 255 0 0\n"
    )
    cloud = load_pointcloud(path)
    np.testing.assert_array_equal(cloud.colors[0], [1.0, 0.0, 0.0])


def test_load_renormalizes_normals(tmp_path):
    path = tmp_path / "n.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "end_header\n0 0 0 2 0 0\n"
    )
    cloud = load_pointcloud(path)
    np.testing.assert_array_equal(cloud.normals[0], [1.0, 0.0, 0.0])


def test_load_missing_file():
    with pytest.raises(PlyParseError, match="does not exist"):
        load_pointcloud("/nonexistent/cloud.ply")


def test_load_rejects_big_endian(tmp_path):
    path = tmp_path / "be.ply"
    path.write_text(
        "ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with pytest.raises(PlyParseError, match="endian"):
        load_pointcloud(path)


def test_load_rejects_malformed_header(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex nope\nend_header\n")
    with pytest.raises(PlyParseError):
        load_pointcloud(path)


def test_load_names_nonfinite_vertex(tmp_path):
    path = tmp_path / "nan.ply"
    path.write_text(ASCII_XYZ.replace("0 1 0", "0 nan 0"))
    with pytest.raises(PlyParseError, match="vertex 2"):
        load_pointcloud(path)


@pytest.mark.parametrize("binary", [True, False])
def test_roundtrip_positions_and_colors(tmp_path, binary):
    rng = np.random.default_rng(0)
    pos = rng.standard_normal((64, 3))
    colors = rng.integers(0, 256, size=(64, 3)) / 255.0
    cloud = PointCloud(pos, colors=colors)
    path = tmp_path / "rt.ply"
    save_pointcloud(cloud, path, binary=binary)
    back = load_pointcloud(path)
    # positions survive to float32 precision, colors exactly
    np.testing.assert_array_equal(back.positions, pos.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.colors, colors)


def test_roundtrip_extra_score_properties(tmp_path):
    cloud = PointCloud(np.arange(12.0).reshape(4, 3))
    path = tmp_path / "scores.ply"
    save_pointcloud(cloud, path, extra={"curvature": np.linspace(0, 0.3, 4)})
    back = load_pointcloud(path)  # unknown scalar props are skipped, not fatal
    assert back.count == 4


# ---------------------------------------------------------------------------
# Exact k-NN
# ---------------------------------------------------------------------------


def test_index_requires_two_points():
    with pytest.raises(ValueError, match="at least 2"):
        build_neighbor_index(PointCloud(np.zeros((1, 3))))


def test_two_point_mutual_neighbors():
    cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    index = build_neighbor_index(cloud)
    assert knn(index, 0, 1).tolist() == [1]
    assert knn(index, 1, 1).tolist() == [0]


def test_collinear_neighbors():
    cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]))
    index = build_neighbor_index(cloud)
    assert knn(index, 0, 1).tolist() == [1]


def test_k_clamped_to_n_minus_one():
    cloud = PointCloud(np.random.default_rng(1).standard_normal((5, 3)))
    index = build_neighbor_index(cloud)
    result = knn(index, 2, 100)
    assert sorted(result.tolist()) == [0, 1, 3, 4]


def test_equidistant_tie_prefers_lower_index():
    cloud = PointCloud(np.array([[0.0, 0, 0], [0.0, 2, 0], [1.0, 0, 0], [-1.0, 0, 0]]))
    index = build_neighbor_index(cloud)
    assert knn(index, 0, 1).tolist() == [2]
    assert knn(index, 0, 2).tolist() == [2, 3]


def test_point_id_out_of_range():
    cloud = PointCloud(np.zeros((2, 3)) + np.arange(2)[:, None])
    index = build_neighbor_index(cloud)
    with pytest.raises(IndexError):
        knn(index, 5, 1)


def test_knn_matches_brute_force_random_cloud():
    rng = np.random.default_rng(42)
    pos = rng.standard_normal((1000, 3))
    index = build_neighbor_index(PointCloud(pos))
    for k in (1, 7, 64, 999):
        mine = knn_rows(index, np.arange(1000), k)
        ref = np.stack([brute_knn(pos.copy(), i, k) for i in range(1000)])
        np.testing.assert_array_equal(mine, ref)


def test_knn_matches_brute_force_on_tie_heavy_grid():
    axes = np.arange(6.0)
    pos = np.stack(np.meshgrid(axes, axes, axes), axis=-1).reshape(-1, 3)
    index = build_neighbor_index(PointCloud(pos))
    for k in (1, 6, 13, 27):
        mine = knn_rows(index, np.arange(len(pos)), k)
        ref = np.stack([brute_knn(pos.copy(), i, k) for i in range(len(pos))])
        np.testing.assert_array_equal(mine, ref)


def test_knn_500_points_k64_matches_brute_force():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-1, 1, size=(500, 3))
    index = build_neighbor_index(PointCloud(pos))
    mine = knn_rows(index, np.arange(500), 64)
    ref = np.stack([brute_knn(pos.copy(), i, 64) for i in range(500)])
    np.testing.assert_array_equal(mine, ref)


def test_nearest_point_matches_brute_force():
    rng = np.random.default_rng(8)
    pos = rng.standard_normal((300, 3))
    index = build_neighbor_index(PointCloud(pos))
    queries = rng.standard_normal((100, 3))
    mine = nearest_point(index, queries)
    ref = np.array([brute_nearest(pos, q) for q in queries])
    np.testing.assert_array_equal(mine, ref)


def test_nearest_point_tie_prefers_lower_index():
    pos = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0.0, 5, 0]])
    index = build_neighbor_index(PointCloud(pos))
    assert nearest_point(index, np.array([[0.0, 0, 0]]))[0] == 0


# ---------------------------------------------------------------------------
# Chunked traversal
# ---------------------------------------------------------------------------


def test_chunk_partition():
    assert list(chunk_iterate(10, 4)) == [(0, 4), (4, 8), (8, 10)]
    assert list(chunk_iterate(10, 100)) == [(0, 10)]
    assert list(chunk_iterate(0, 4)) == []


def test_chunk_requires_positive_size():
    with pytest.raises(ValueError):
        list(chunk_iterate(10, 0))


def test_chunk_accepts_cloud():
    cloud = PointCloud(np.zeros((7, 3)) + np.arange(7)[:, None])
    spans = list(chunk_iterate(cloud, 3))
    assert spans == [(0, 3), (3, 6), (6, 7)]
