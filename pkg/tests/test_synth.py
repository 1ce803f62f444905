import numpy as np
import pytest

from conftest import demo_pair, rendered
from pointmap4d import geom
from pointmap4d.errors import EmptyScene
from pointmap4d.losses import PairPrediction, total_loss
from pointmap4d.synth import (
    Motion,
    Plane,
    SceneConfig,
    ScenePrimitive,
    Sphere,
    default_intrinsics,
    make_pair,
    random_scene,
)


def static_copy(config):
    prims = [ScenePrimitive(p.shape, p.object_id) for p in config.primitives]
    return SceneConfig(config.K, config.P1, config.P2, config.width, config.height, prims, config.seed)


@pytest.mark.parametrize("seed", [0, 3])
def test_static_scene_flow_is_camera_induced(seed):
    rp = make_pair(static_copy(random_scene(seed, 32, 24)))
    c = rp.config
    rel = geom.relative_pose(c.P1, c.P2)
    fcam = geom.camera_induced_flow(rp.D1, c.K, rel.R, rel.T)
    ok = rp.f.valid & fcam.valid
    assert ok.sum() > 0.9 * rp.D1.valid.sum()
    assert np.max(np.abs(rp.f.vectors[ok] - fcam.vectors[ok])) < 1e-9
    assert not rp.gtMdyn1.any() and not rp.gtMdyn2.any()


def test_rendering_is_deterministic():
    a = make_pair(random_scene(5, 32, 24))
    b = make_pair(random_scene(5, 32, 24))
    for name in ("gtX11", "gtX21", "gtX22", "gtX12", "target21", "target12"):
        assert np.array_equal(getattr(a.bundle, name), getattr(b.bundle, name), equal_nan=True)
    assert np.array_equal(a.f.vectors, b.f.vectors, equal_nan=True)


def test_empty_view_raises():
    K = default_intrinsics(16, 12)
    behind = ScenePrimitive(Sphere((0.0, 0.0, -5.0), 1.0), 0)
    cfg = SceneConfig(K, geom.Pose.identity(), geom.Pose.identity(), 16, 12, [behind])
    with pytest.raises(EmptyScene):
        make_pair(cfg)
    with pytest.raises(ValueError):
        SceneConfig(K, geom.Pose.identity(), geom.Pose.identity(), 16, 12, [])


def test_sphere_intersection_matches_brute_march():
    s = Sphere((0.2, -0.1, 4.0), 0.9)
    rng = np.random.default_rng(0)
    dirs = np.column_stack([rng.uniform(-0.3, 0.3, 40), rng.uniform(-0.3, 0.3, 40), np.ones(40)])
    o = np.zeros((40, 3))
    t = s.intersect(o, dirs)
    ts = np.linspace(0, 8, 80001)
    for d, ti in zip(dirs, t):
        inside = np.linalg.norm(ts[:, None] * d - s.center, axis=1) <= s.radius
        if inside.any():
            assert abs(ts[inside][0] - ti) < 1e-4
        else:
            assert np.isinf(ti)


def test_plane_intersection_is_bounded():
    p = Plane((0.0, 0.0, 3.0), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (1.0, 0.5))
    o = np.zeros((3, 3))
    d = np.array([[0.3, 0.1, 1.0], [0.5, 0.0, 1.0], [0.0, 0.2, 1.0]])
    t = p.intersect(o, d)
    assert t[0] == pytest.approx(3.0) and np.isinf(t[1]) and np.isinf(t[2])


def test_exact_targets_match_4d_ground_truth_where_visible():
    rp = rendered(0)
    sup = rp.bundle
    keep = sup.valid2 & sup.Mdyn2 & ~sup.Mocc2 & np.isfinite(sup.target21).all(-1)
    assert keep.sum() > 20
    err = np.linalg.norm(sup.target21[keep] - sup.gtX21[keep], axis=-1)
    assert err.max() < 1e-8


def test_motion_about_center_keeps_center_fixed_without_translation():
    c = np.array([1.0, 2.0, 3.0])
    m = Motion.about_center(c, rotvec=(0.1, 0.2, 0.3))
    assert np.allclose(m.apply(c), c, atol=1e-14)
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.allclose(m.invert(m.apply(x)), x, atol=1e-14)


@pytest.mark.parametrize("shapes", ["spheres", "planes", "cards"])
def test_shapes_option(shapes):
    cfg = random_scene(2, 32, 24, shapes=shapes)
    moving = [p for p in cfg.primitives if p.is_dynamic]
    want = Sphere if shapes == "spheres" else Plane
    assert moving and all(isinstance(p.shape, want) for p in moving)
    if shapes == "cards":
        assert all(np.array_equal(p.motion.R, np.eye(3)) for p in moving)


def test_unknown_shapes_option():
    with pytest.raises(ValueError):
        random_scene(0, shapes="cubes")


def test_demo_has_zero_loss_and_moving_object():
    rp = demo_pair()
    assert rp.gtMdyn1.sum() > 50
    bd = total_loss(PairPrediction.from_bundle(rp.bundle), rp.bundle)
    assert abs(bd.total) < 1e-9
