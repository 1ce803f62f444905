"""Analytic two-frame dynamic scenes with exact ground truth.

Scenes are made of bounded planes and spheres.  Each primitive carries a rigid
world-frame motion ``x2 = R_o x1 + T_o`` applied between time 1 and time 2.
Everything is ray cast in closed form, so depths, flows, masks and aligned
pointmaps are exact up to floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyScene
from .geom import (
    EPS_Z,
    DepthMap,
    FlowField,
    Intrinsics,
    Pointmap,
    Pose,
    homogenize,
    pixel_grid,
    pointmap_in_frame,
    project_points,
)
from .losses import SupervisionBundle

OCC_REL_TOL = 1e-6
_HIT_EPS = 1e-9


@dataclass(frozen=True)
class Motion:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        # reuse Pose's rigidity validation
        p = Pose(self.R, self.T)
        object.__setattr__(self, "R", p.R)
        object.__setattr__(self, "T", p.T)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.R, np.eye(3)) and not np.any(self.T))

    def apply(self, x):
        return np.asarray(x) @ self.R.T + self.T

    def invert(self, x):
        return (np.asarray(x) - self.T) @ self.R

    @classmethod
    def about_center(cls, center, rotvec=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)) -> "Motion":
        """Rotate about ``center`` by ``rotvec`` then translate."""
        R = Rotation.from_rotvec(rotvec).as_matrix() if np.any(rotvec) else np.eye(3)
        c = np.asarray(center, dtype=np.float64)
        return cls(R, c - R @ c + np.asarray(translation, dtype=np.float64))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    def intersect(self, origins, dirs):
        oc = origins - self.center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = np.einsum("ij,ij->i", dirs, oc)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        # numerically stable pair of roots
        qq = -(b + np.copysign(sq, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = qq / a
            r2 = np.where(qq != 0, c / qq, r1)
        near = np.minimum(r1, r2)
        far = np.maximum(r1, r2)
        s = np.where(near > _HIT_EPS, near, np.where(far > _HIT_EPS, far, np.inf))
        return np.where(hit, s, np.inf)


@dataclass(frozen=True)
class Plane:
    """Rectangle centered at ``center`` spanned by ``u_axis`` and ``normal x u_axis``."""

    center: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    half_extents: tuple

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        u = np.asarray(self.u_axis, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must have unit length")
        # leave already-orthonormal axes untouched so saved scenes reload bit-exactly
        if abs(u @ n) > 1e-12 or abs(np.linalg.norm(u) - 1.0) > 1e-12:
            u = u - n * (u @ n)
            if np.linalg.norm(u) < 1e-9:
                raise ValueError("plane u_axis must not be parallel to the normal")
            u = u / np.linalg.norm(u)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "u_axis", u)
        hu, hv = (float(h) for h in self.half_extents)
        if not (hu > 0 and hv > 0):
            raise ValueError("plane half extents must be positive")
        object.__setattr__(self, "half_extents", (hu, hv))

    @property
    def v_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.u_axis)

    def intersect(self, origins, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((self.center - origins) @ self.normal) / denom
        ok = np.isfinite(s) & (np.abs(denom) > 1e-15) & (s > _HIT_EPS)
        local = origins + np.where(ok, s, 0.0)[:, None] * dirs - self.center
        hu, hv = self.half_extents
        ok &= (np.abs(local @ self.u_axis) <= hu) & (np.abs(local @ self.v_axis) <= hv)
        return np.where(ok, s, np.inf)


@dataclass(frozen=True)
class ScenePrimitive:
    shape: Union[Sphere, Plane]
    object_id: int
    motion: Motion = field(default_factory=Motion)

    @property
    def is_dynamic(self) -> bool:
        return not self.motion.is_identity


@dataclass
class SceneConfig:
    K: Intrinsics
    P1: Pose
    P2: Pose
    width: int
    height: int
    primitives: List[ScenePrimitive]
    seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("primitives: scene needs at least one primitive")
        if self.width < 8 or self.height < 8:
            raise ValueError(f"width/height: image must be at least 8x8, got {self.width}x{self.height}")

    def pose(self, time: int) -> Pose:
        return {1: self.P1, 2: self.P2}[time]


@dataclass
class RenderedPair:
    config: SceneConfig
    D1: DepthMap
    D2: DepthMap
    id1: np.ndarray
    id2: np.ndarray
    f: FlowField
    b: FlowField
    gtMocc1: np.ndarray
    gtMocc2: np.ndarray
    gtMdyn1: np.ndarray
    gtMdyn2: np.ndarray
    rigidX21: Pointmap
    rigidX12: Pointmap
    bundle: SupervisionBundle

    @property
    def scene_scale(self) -> float:
        return float(np.mean(self.D1.values[self.D1.valid]))


def _cast(scene: SceneConfig, pose: Pose, time: int, uv: np.ndarray):
    """Cast rays through continuous pixels ``uv`` (N, 2).

    Returns camera depth (inf on miss), primitive index (-1 on miss) and
    world hit points (NaN on miss).
    """
    rays_cam = homogenize(uv) @ scene.K.K_inv.T
    dirs = rays_cam @ pose.R  # R^T applied to row vectors
    origin = pose.center()
    origins = np.broadcast_to(origin, dirs.shape)
    best = np.full(len(uv), np.inf)
    prim = np.full(len(uv), -1, dtype=np.int64)
    for k, p in enumerate(scene.primitives):
        if time == 2 and p.is_dynamic:
            o = p.motion.invert(origins)
            d = dirs @ p.motion.R
        else:
            o, d = origins, dirs
        s = p.shape.intersect(o, d)
        closer = s < best
        best = np.where(closer, s, best)
        prim = np.where(closer, k, prim)
    hit = np.isfinite(best)
    points = origin + np.where(hit, best, np.nan)[:, None] * dirs
    return best, prim, points


def _grid_uv(scene: SceneConfig) -> np.ndarray:
    return pixel_grid(scene.height, scene.width).reshape(-1, 2)


def _ids(scene: SceneConfig, prim: np.ndarray) -> np.ndarray:
    lut = np.array([p.object_id for p in scene.primitives] + [-1])
    return lut[prim]


def raycast(scene: SceneConfig, pose: Pose, time: int):
    """Depth map and object-id map (-1 on miss) with objects posed at ``time``."""
    depth, prim, _ = _cast(scene, pose, time, _grid_uv(scene))
    shape = (scene.height, scene.width)
    depth = np.where(np.isfinite(depth), depth, np.nan).reshape(shape)
    return DepthMap(depth), _ids(scene, prim).reshape(shape)


def _advect(scene: SceneConfig, points: np.ndarray, prim: np.ndarray, forward: bool) -> np.ndarray:
    """Move world points along their primitive's motion (time 1 -> 2 if ``forward``)."""
    out = points.copy()
    for k, p in enumerate(scene.primitives):
        if not p.is_dynamic:
            continue
        sel = prim == k
        out[sel] = p.motion.apply(points[sel]) if forward else p.motion.invert(points[sel])
    return out


def _scene_scale(scene: SceneConfig) -> float:
    depth, _ = raycast(scene, scene.P1, 1)
    if not depth.valid.any():
        return 1.0
    return float(np.mean(depth.values[depth.valid]))


def _flow_one_way(scene: SceneConfig, src: int, eps_occ: float):
    """Exact flow from view ``src`` to the other view plus its occlusion ground truth."""
    dst = 3 - src
    P_src, P_dst = scene.pose(src), scene.pose(dst)
    uv = _grid_uv(scene)
    _, prim, X = _cast(scene, P_src, src, uv)
    hit = prim >= 0
    moved = _advect(scene, X, prim, forward=(src == 1))
    cam = P_dst.apply(moved)
    xy, ok = project_points(cam)
    q = scene.K.to_pixels(xy)
    valid = hit & ok & (cam[:, 2] > EPS_Z)
    flow = np.where(valid[:, None], q - uv, np.nan)

    W, H = scene.width, scene.height
    inside = valid & (q[:, 0] >= 0) & (q[:, 0] <= W - 1) & (q[:, 1] >= 0) & (q[:, 1] <= H - 1)
    occluded = ~inside
    if inside.any():
        s_hit, _, _ = _cast(scene, P_dst, dst, q[inside])
        occluded[inside] = s_hit < cam[inside, 2] - eps_occ
    shape = (H, W)
    return FlowField(flow.reshape(shape + (2,)), valid.reshape(shape)), occluded.reshape(shape)


def exact_flow(scene: SceneConfig, eps_occ: Optional[float] = None):
    """Exact forward/backward flow and ground-truth occlusion masks.

    Returns ``(f, b, occ1, occ2)``.  A pixel is occluded when its advected
    surface point leaves the other frame or fails the other view's depth test.
    """
    if eps_occ is None:
        eps_occ = OCC_REL_TOL * _scene_scale(scene)
    f, occ1 = _flow_one_way(scene, 1, eps_occ)
    b, occ2 = _flow_one_way(scene, 2, eps_occ)
    return f, b, occ1, occ2


def gt_4d_pointmap(scene: SceneConfig, view: int = 2) -> Pointmap:
    """Aligned pointmap of ``view`` expressed in the other camera at the other time.

    ``view=2`` gives view-2 surface points moved back to time 1 and expressed in
    camera 1; ``view=1`` is the symmetric target for the swapped pass.
    """
    other = 3 - view
    _, prim, X = _cast(scene, scene.pose(view), view, _grid_uv(scene))
    moved = _advect(scene, X, prim, forward=(view == 1))
    pts = scene.pose(other).apply(moved)
    shape = (scene.height, scene.width)
    return Pointmap(pts.reshape(shape + (3,)), (prim >= 0).reshape(shape), frame_tag=f"cam{other}@t{other}")


def dynamic_gt(scene: SceneConfig, view: int) -> np.ndarray:
    _, prim, _ = _cast(scene, scene.pose(view), view, _grid_uv(scene))
    moving = np.array([p.is_dynamic for p in scene.primitives] + [False])
    return moving[prim].reshape(scene.height, scene.width)


def sample_gt_exact(scene: SceneConfig, view: int, flow: FlowField) -> Pointmap:
    """Evaluate view ``view``'s own-frame GT pointmap at the continuous pixels ``p + flow(p)``.

    This is the exact counterpart of bilinearly sampling the gridded GT at
    flow endpoints; locations outside the image or missing every surface stay
    invalid.
    """
    W, H = scene.width, scene.height
    q = (pixel_grid(H, W) + np.nan_to_num(flow.vectors)).reshape(-1, 2)
    ok = flow.valid.reshape(-1) & (q[:, 0] >= 0) & (q[:, 0] <= W - 1) & (q[:, 1] >= 0) & (q[:, 1] <= H - 1)
    out = np.full((H * W, 3), np.nan)
    if ok.any():
        _, prim, X = _cast(scene, scene.pose(view), view, q[ok])
        pts = scene.pose(view).apply(X)
        out[ok] = pts
        ok[ok] = prim >= 0
    return Pointmap(out.reshape(H, W, 3), ok.reshape(H, W), frame_tag=f"cam{view}@t{view}")


def make_pair(config: SceneConfig) -> RenderedPair:
    """Render both views and assemble the full supervision bundle."""
    K, P1, P2 = config.K, config.P1, config.P2
    D1, id1 = raycast(config, P1, 1)
    D2, id2 = raycast(config, P2, 2)
    if not D1.valid.any() or not D2.valid.any():
        raise EmptyScene("no primitive is visible in " + ("view 1" if not D1.valid.any() else "view 2"))
    eps_occ = OCC_REL_TOL * float(np.mean(D1.values[D1.valid]))
    f, b, occ1, occ2 = exact_flow(config, eps_occ)
    dyn1 = dynamic_gt(config, 1)
    dyn2 = dynamic_gt(config, 2)

    gtX11 = pointmap_in_frame(D1, K, P1, P1, frame_tag="cam1@t1")
    gtX22 = pointmap_in_frame(D2, K, P2, P2, frame_tag="cam2@t2")
    gtX21 = gt_4d_pointmap(config, 2)
    gtX12 = gt_4d_pointmap(config, 1)
    rigidX21 = pointmap_in_frame(D2, K, P2, P1, frame_tag="cam1@t2")
    rigidX12 = pointmap_in_frame(D1, K, P1, P2, frame_tag="cam2@t1")
    target21 = sample_gt_exact(config, 1, b)
    target12 = sample_gt_exact(config, 2, f)

    bundle = SupervisionBundle(
        gtX11=gtX11.points,
        gtX21=gtX21.points,
        gtX22=gtX22.points,
        gtX12=gtX12.points,
        f=f,
        b=b,
        Mocc1=occ1,
        Mocc2=occ2,
        Mdyn1=dyn1,
        Mdyn2=dyn2,
        valid1=D1.valid.copy(),
        valid2=D2.valid.copy(),
        target21=target21.points,
        target12=target12.points,
    )
    return RenderedPair(
        config=config,
        D1=D1,
        D2=D2,
        id1=id1,
        id2=id2,
        f=f,
        b=b,
        gtMocc1=occ1,
        gtMocc2=occ2,
        gtMdyn1=dyn1,
        gtMdyn2=dyn2,
        rigidX21=rigidX21,
        rigidX12=rigidX12,
        bundle=bundle,
    )


def default_intrinsics(width: int, height: int) -> Intrinsics:
    f = 60.0 * width / 64.0
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


def _room(width_half=8.0, floor_y=1.0, wall_z=10.0):
    ground = ScenePrimitive(Plane((0.0, floor_y, wall_z / 2), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (width_half, wall_z / 2)), 0)
    wall = ScenePrimitive(Plane((0.0, floor_y - 6.0, wall_z), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (width_half, 6.0)), 1)
    return [ground, wall]


def demo_scene(width: int = 64, height: int = 48) -> SceneConfig:
    """Ground plane and back wall with one sphere translating sideways."""
    sphere_center = np.array([-0.3, 0.2, 5.0])
    sphere = ScenePrimitive(
        Sphere(sphere_center, 0.7),
        2,
        Motion.about_center(sphere_center, rotvec=(0.0, 0.05, 0.0), translation=(0.35, -0.05, 0.0)),
    )
    P2 = Pose(Rotation.from_euler("y", 1.0, degrees=True).as_matrix(), np.array([-0.08, 0.0, 0.05]))
    return SceneConfig(
        K=default_intrinsics(width, height),
        P1=Pose.identity(),
        P2=P2,
        width=width,
        height=height,
        primitives=_room() + [sphere],
        seed=0,
    )


def random_scene(
    seed: int, width: int = 64, height: int = 48, n_moving: Optional[int] = None, shapes: str = "mixed"
) -> SceneConfig:
    """Seeded room scene with one or two moving objects and a small camera motion.

    Object motions are large enough (several pixels) that they stand out from
    camera-induced flow; camera motions are small so that static-on-static
    occlusions stay sub-pixel.  ``shapes`` picks the moving objects: "mixed"
    (spheres and tilted planar cards), "spheres", "planes", or "cards"
    (camera-facing planes sliding within their own plane, no rotation).
    """
    if shapes not in ("mixed", "spheres", "planes", "cards"):
        raise ValueError(f"unknown shapes option {shapes!r}")
    rng = np.random.default_rng(seed)
    prims = _room()
    if n_moving is None:
        n_moving = int(rng.integers(1, 3))
    slots = rng.permutation([-1.0, 0.0, 1.0])[:n_moving]
    for k, slot in enumerate(slots):
        depth = rng.uniform(4.0, 6.0)
        center = np.array([slot * 0.45 * depth + rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.2), depth])
        step = rng.uniform(0.3, 0.45) * depth / 5.0
        angle = rng.uniform(0, 2 * np.pi)
        translation = step * np.array([np.cos(angle), 0.5 * np.sin(angle), 0.0])
        rotvec = rng.normal(scale=0.04, size=3)
        if shapes == "cards":
            rotvec = np.zeros(3)
        motion = Motion.about_center(center, rotvec, translation)
        is_sphere = rng.random() < 0.6
        if shapes != "mixed":
            is_sphere = shapes == "spheres"
        if is_sphere:
            shape = Sphere(center, rng.uniform(0.5, 0.8))
        else:
            n = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), -1.0])
            n /= np.linalg.norm(n)
            if shapes == "cards":
                n = np.array([0.0, 0.0, -1.0])
            shape = Plane(center, n, (1.0, 0.0, 0.0), (rng.uniform(0.5, 0.8), rng.uniform(0.4, 0.7)))
        prims.append(ScenePrimitive(shape, 2 + k, motion))
    R2 = Rotation.from_rotvec(rng.normal(scale=np.deg2rad(1.0), size=3)).as_matrix()
    T2 = rng.uniform(-0.08, 0.08, size=3)
    return SceneConfig(
        K=default_intrinsics(width, height),
        P1=Pose.identity(),
        P2=Pose(R2, T2),
        width=width,
        height=height,
        primitives=prims,
        seed=seed,
    )
