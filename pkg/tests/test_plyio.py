import numpy as np
import pytest

from overlapreg import plyio


def test_round_trip_exact(tmp_path, rng):
    cloud = rng.normal(size=(37, 3))
    path = tmp_path / "cloud.ply"
    plyio.save_ply(path, cloud)
    back = plyio.load_ply(path)
    assert np.array_equal(back, cloud)


def test_reader_skips_comments_and_extra_properties(tmp_path):
    text = (
        "ply\nformat ascii 1.0\ncomment made by hand\n"
        "element vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\n"
        "end_header\n"
        "1 2 3 9\n4 5 6 9\n"
    )
    path = tmp_path / "extra.ply"
    path.write_text(text)
    assert np.array_equal(plyio.load_ply(path), [[1, 2, 3], [4, 5, 6]])


def test_reader_rejects_binary_and_garbage(tmp_path):
    p = tmp_path / "bin.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ValueError, match="ASCII"):
        plyio.load_ply(p)
    q = tmp_path / "not.ply"
    q.write_text("hello\n")
    with pytest.raises(ValueError, match="magic"):
        plyio.load_ply(q)


def test_reader_rejects_missing_axis(tmp_path):
    p = tmp_path / "no_z.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n")
    with pytest.raises(ValueError, match="'z'"):
        plyio.load_ply(p)


def test_writer_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError, match="n, 3"):
        plyio.save_ply(tmp_path / "x.ply", np.zeros((4, 2)))
