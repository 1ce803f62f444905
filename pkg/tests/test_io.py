import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointmap4d import io
from pointmap4d.errors import MissingInput, ParseError
from pointmap4d.synth import demo_scene, random_scene

dims = st.tuples(st.integers(1, 9), st.integers(1, 9))


def payload(seed, shape, nan_frac=0.2):
    rng = np.random.default_rng(seed)
    a = (rng.normal(scale=100, size=shape)).astype("<f4")
    a[rng.random(shape) < nan_frac] = np.nan
    return a


def same_bits(a, b):
    return np.array_equal(np.asarray(a, "<f4").view("<u4"), np.asarray(b, "<f4").view("<u4"))


@given(dims, st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_flo_roundtrip(tmp_path_factory, hw, seed):
    d = tmp_path_factory.mktemp("flo")
    a = payload(seed, hw + (2,))
    io.write_flo(d / "a.flo", a)
    b = io.read_flo(d / "a.flo")
    assert same_bits(a, b)
    io.write_flo(d / "b.flo", b)
    assert (d / "a.flo").read_bytes() == (d / "b.flo").read_bytes()


def test_flo_layout(tmp_path):
    a = np.arange(12, dtype="<f4").reshape(2, 3, 2)
    io.write_flo(tmp_path / "x.flo", a)
    raw = (tmp_path / "x.flo").read_bytes()
    assert raw[:4] == b"PIEH"
    assert np.frombuffer(raw[4:12], "<i4").tolist() == [3, 2]
    assert np.frombuffer(raw[12:], "<f4").tolist() == list(range(12))


@pytest.mark.parametrize("channels", [1, 3])
@given(hw=dims, seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_pfm_roundtrip(tmp_path_factory, channels, hw, seed):
    d = tmp_path_factory.mktemp("pfm")
    shape = hw if channels == 1 else hw + (3,)
    a = payload(seed, shape)
    io.write_pfm(d / "a.pfm", a)
    b = io.read_pfm(d / "a.pfm")
    assert b.shape == shape and same_bits(a, b)
    io.write_pfm(d / "b.pfm", b)
    assert (d / "a.pfm").read_bytes() == (d / "b.pfm").read_bytes()


def test_pfm_rows_are_bottom_up(tmp_path):
    a = np.array([[1, 2], [3, 4], [5, 6]], dtype="<f4")
    io.write_pfm(tmp_path / "x.pfm", a)
    raw = (tmp_path / "x.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 3\n-1.0\n")
    assert np.frombuffer(raw[len(b"Pf\n2 3\n-1.0\n"):], "<f4").tolist() == [5, 6, 3, 4, 1, 2]


def test_pfm_big_endian(tmp_path):
    a = np.array([[1.5, -2.0], [np.nan, 7.25]], dtype=">f4")
    (tmp_path / "be.pfm").write_bytes(b"Pf\n2 2\n1.0\n" + a[::-1].tobytes())
    assert same_bits(io.read_pfm(tmp_path / "be.pfm"), a.astype("<f4"))


@given(dims, st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_pgm_roundtrip(tmp_path_factory, hw, seed):
    d = tmp_path_factory.mktemp("pgm")
    m = np.random.default_rng(seed).random(hw) > 0.5
    io.write_pgm(d / "a.pgm", m)
    assert np.array_equal(io.read_pgm(d / "a.pgm"), m)
    io.write_pgm(d / "b.pgm", io.read_pgm(d / "a.pgm"))
    assert (d / "a.pgm").read_bytes() == (d / "b.pgm").read_bytes()


def test_pgm_bytes_and_comments(tmp_path):
    io.write_pgm(tmp_path / "m.pgm", np.array([[True, False]]))
    assert (tmp_path / "m.pgm").read_bytes() == b"P5\n2 1\n255\n\xff\x00"
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\x07")
    assert io.read_pgm(tmp_path / "c.pgm").tolist() == [[False, True]]


@pytest.mark.parametrize(
    "name,data,field",
    [
        ("a.flo", b"PIEH\x02\x00\x00\x00", "header"),
        ("b.flo", b"XXXX" + np.array([1, 1], "<i4").tobytes() + bytes(8), "magic"),
        ("c.flo", b"PIEH" + np.array([2, 2], "<i4").tobytes() + bytes(8), "payload"),
        ("d.pfm", b"P6\n2 2\n-1.0\n", "header"),
        ("e.pfm", b"Pf\n2 2\n0.0\n" + bytes(16), "scale"),
        ("f.pfm", b"Pf\n2 2\n-1.0\n" + bytes(15), "payload"),
        ("g.pgm", b"P2\n1 1\n255\n\x00", "header"),
        ("h.pgm", b"P5\n1 1\n65535\n\x00\x00", "maxval"),
        ("i.pgm", b"P5\n2 2\n255\n\x00", "payload"),
    ],
)
def test_malformed_files_raise_parse_error(tmp_path, name, data, field):
    p = tmp_path / name
    p.write_bytes(data)
    reader = {"flo": io.read_flo, "pfm": io.read_pfm, "pgm": io.read_pgm}[name.split(".")[1]]
    with pytest.raises(ParseError) as info:
        reader(p)
    assert name in str(info.value) and field in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(MissingInput):
        io.read_pfm(tmp_path / "nope.pfm")


def test_depth_and_pointmap_helpers(tmp_path):
    pm = io.Pointmap(np.random.default_rng(0).normal(size=(3, 4, 3)) + [0, 0, 5])
    pm.points[1, 1] = np.nan
    io.save_pointmap(tmp_path / "p.pfm", pm)
    back = io.load_pointmap(tmp_path / "p.pfm", "cam1@t1")
    assert back.frame_tag == "cam1@t1" and not back.valid[1, 1] and back.valid.sum() == 11
    with pytest.raises(ParseError):
        io.load_depth(tmp_path / "p.pfm")


def test_scene_json_roundtrip(tmp_path):
    for scene in (demo_scene(), random_scene(4)):
        io.write_scene(tmp_path / "s.json", scene)
        again = io.read_scene(tmp_path / "s.json")
        io.write_scene(tmp_path / "t.json", again)
        assert (tmp_path / "s.json").read_bytes() == (tmp_path / "t.json").read_bytes()
        assert len(again.primitives) == len(scene.primitives)
        assert np.array_equal(again.P2.R, scene.P2.R)


def test_cameras_roundtrip(tmp_path):
    s = random_scene(1)
    io.write_cameras(tmp_path / "c.json", s.K, s.P1, s.P2, s.width, s.height)
    d = json.loads((tmp_path / "c.json").read_text())
    assert len(d["K"]) == 9 and len(d["P1"]) == 16
    K, P1, P2, w, h = io.read_cameras(tmp_path / "c.json")
    assert K == s.K and np.array_equal(P2.T, s.P2.T) and (w, h) == (s.width, s.height)


def test_scene_validation_names_field(tmp_path):
    d = io.scene_to_dict(demo_scene())
    d["primitives"] = []
    (tmp_path / "z.json").write_text(json.dumps(d))
    with pytest.raises(ParseError, match="primitives"):
        io.read_scene(tmp_path / "z.json")
    d = io.scene_to_dict(demo_scene())
    d["primitives"][2]["radius"] = -1.0
    (tmp_path / "r.json").write_text(json.dumps(d))
    with pytest.raises(ParseError, match=r"primitives\[2\]"):
        io.read_scene(tmp_path / "r.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError, match="bad.json"):
        io.read_scene(tmp_path / "bad.json")
