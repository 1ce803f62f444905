"""Pinhole cameras, rigid poses and per-pixel pointmaps.

Conventions used throughout the package:

* images are ``(H, W)`` arrays; pixel ``(u, v)`` is column ``u``, row ``v`` and
  its center sits at integer coordinates;
* a :class:`Pose` maps world points into the camera, ``x_cam = R x_world + T``;
* invalid pixels are flagged by a boolean ``valid`` array and their payload
  is NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NearZeroDepth

EPS_Z = 1e-9
RIGID_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_matrix(cls, K) -> "Intrinsics":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        if abs(K[0, 1]) > 0 or K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
            raise ValueError("K must be upper-triangular with zero skew and K[2,2] = 1")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]))

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        """Map normalized image coordinates ``(..., 2)`` to pixels."""
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1)


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform ``x -> R x + T``."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=RIGID_TOL):
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > RIGID_TOL:
            raise ValueError("R must have determinant +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=np.float64).reshape(4, 4)
        if not np.allclose(M[3], [0.0, 0.0, 0.0, 1.0], rtol=0, atol=0):
            raise ValueError("last row of a rigid 4x4 transform must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.T
        return M

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.T)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.R @ other.R, self.R @ other.T + self.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.T

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.T


def relative_pose(P_src: Pose, P_dst: Pose) -> Pose:
    """Transform taking source-camera coordinates to destination-camera ones."""
    return P_dst.compose(P_src.inverse())


@dataclass
class DepthMap:
    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch(f"depth map must be 2-D, got shape {self.values.shape}")
        finite = np.isfinite(self.values) & (self.values > 0)
        if self.valid is None:
            self.valid = finite
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise DimensionMismatch("depth validity shape differs from depth shape")
            self.valid = self.valid & finite
        self.values = np.where(self.valid, self.values, np.nan)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Pointmap:
    points: np.ndarray
    valid: np.ndarray = None
    frame_tag: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise DimensionMismatch(f"pointmap must be (H, W, 3), got {self.points.shape}")
        finite = np.all(np.isfinite(self.points), axis=-1)
        if self.valid is None:
            self.valid = finite
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.points.shape[:2]:
                raise DimensionMismatch("pointmap validity shape differs from pointmap shape")
            self.valid = self.valid & finite
        self.points = np.where(self.valid[..., None], self.points, np.nan)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self):
        return self.points.shape[:2]

    def depth(self) -> DepthMap:
        return DepthMap(self.points[..., 2], self.valid)


@dataclass
class FlowField:
    """Per-pixel 2-D displacement ``(du, dv)`` in pixels."""

    vectors: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise DimensionMismatch(f"flow must be (H, W, 2), got {self.vectors.shape}")
        finite = np.all(np.isfinite(self.vectors), axis=-1)
        if self.valid is None:
            self.valid = finite
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.vectors.shape[:2]:
                raise DimensionMismatch("flow validity shape differs from flow shape")
            self.valid = self.valid & finite
        self.vectors = np.where(self.valid[..., None], self.vectors, np.nan)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def shape(self):
        return self.vectors.shape[:2]


def pixel_grid(height: int, width: int) -> np.ndarray:
    """``(H, W, 2)`` array of pixel-center coordinates ``(u, v)``."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([u, v], axis=-1)


def homogenize(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


def project(v) -> np.ndarray:
    """Perspective division ``(x, y, z) -> (x/z, y/z)``."""
    v = np.asarray(v, dtype=np.float64)
    if abs(v[2]) <= EPS_Z:
        raise NearZeroDepth(f"cannot project point with z={v[2]!r}")
    return v[:2] / v[2]


def project_points(points: np.ndarray):
    """Vectorized :func:`project`; returns ``(xy, ok)`` with NaN where ``|z| <= EPS_Z``."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    ok = np.abs(z) > EPS_Z
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = points[..., :2] / np.where(ok, z, np.nan)[..., None]
    return xy, ok


def unproject_depth(D: DepthMap, K: Intrinsics) -> Pointmap:
    rays = homogenize(pixel_grid(D.height, D.width)) @ K.K_inv.T
    points = rays * D.values[..., None]
    return Pointmap(points, D.valid.copy(), frame_tag="src")


def pointmap_in_frame(
    D: DepthMap, K: Intrinsics, P_src: Pose, P_dst: Pose, frame_tag: str = "dst"
) -> Pointmap:
    """Ground-truth pointmap of the source view expressed in the destination camera."""
    local = unproject_depth(D, K)
    if P_src is P_dst or (np.array_equal(P_src.R, P_dst.R) and np.array_equal(P_src.T, P_dst.T)):
        return Pointmap(local.points, local.valid, frame_tag=frame_tag)
    rel = relative_pose(P_src, P_dst)
    return Pointmap(rel.apply(local.points), local.valid, frame_tag=frame_tag)


def camera_induced_flow(D: DepthMap, K: Intrinsics, R, T) -> FlowField:
    """Flow a static scene would undergo under the relative camera motion ``(R, T)``.

    ``(R, T)`` maps source-camera coordinates into the target camera.  Pixels
    whose moved point lands on the camera plane come back invalid.
    """
    R = np.asarray(R, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    grid = pixel_grid(D.height, D.width)
    src = unproject_depth(D, K).points
    moved = src @ (K.K @ R).T + K.K @ T
    uv, ok = project_points(moved)
    valid = D.valid & ok
    return FlowField(uv - grid, valid)
