"""Homographies and pinhole cameras linking court space and image space."""
from dataclasses import dataclass, field

import numpy as np

from imit2d.errors import (
    BehindCamera,
    DegenerateConfiguration,
    PointAtInfinity,
    SingularMatrix,
    TooFewPoints,
)

W_EPS = 1e-12
DEPTH_EPS = 1e-9


def _canonical(m):
    m = np.asarray(m, dtype=float)
    if abs(m[2, 2]) > 1e-6:
        return m / m[2, 2]
    return m / np.linalg.norm(m)


@dataclass(frozen=True)
class Homography:
    """Projective map court plane -> image plane, stored with h33 = 1."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography has non-finite entries")
        m = _canonical(m)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    def to_list(self):
        return [float(v) for v in self.m.ravel()]

    @classmethod
    def from_list(cls, values):
        return cls(np.asarray(values, dtype=float).reshape(3, 3))

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())


def apply_homography(h, p):
    """Map court point(s) ``p`` (..., 2) to image point(s) (..., 2)."""
    p = np.asarray(p, dtype=float)
    pts = p.reshape(-1, 2)
    hom = pts @ h.m[:, :2].T + h.m[:, 2]
    w = hom[:, 2]
    if np.any(np.abs(w) < W_EPS):
        raise PointAtInfinity("point maps to the line at infinity")
    out = hom[:, :2] / w[:, None]
    return out.reshape(p.shape)


def invert_homography(h):
    det = np.linalg.det(h.m)
    if not np.isfinite(det) or abs(det) < 1e-14 * max(1.0, np.abs(h.m).max() ** 3):
        raise SingularMatrix(f"homography is singular (det={det:g})")
    return Homography(np.linalg.inv(h.m))


def hartley_normalize(pts):
    """Similarity transform moving the centroid to 0 and mean radius to sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def estimate_homography(court_pts, image_pts):
    """Least-squares DLT homography from ``n >= 4`` correspondences.

    Points are Hartley-normalized, and the nullspace of the 2n x 9 design
    matrix is taken as the eigenvector of A^T A with the smallest eigenvalue.
    """
    src = np.asarray(court_pts, dtype=float).reshape(-1, 2)
    dst = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("correspondence arrays differ in length")
    n = len(src)
    if n < 4:
        raise TooFewPoints(f"need at least 4 correspondences, got {n}")
    xs, Ts = hartley_normalize(src)
    xd, Td = hartley_normalize(dst)
    A = np.zeros((2 * n, 9))
    ones = np.ones(n)
    X = np.column_stack([xs, ones])
    A[0::2, 0:3] = X
    A[0::2, 6:9] = -xd[:, :1] * X
    A[1::2, 3:6] = X
    A[1::2, 6:9] = -xd[:, 1:2] * X
    evals, evecs = np.linalg.eigh(A.T @ A)
    # rank(A) <= 7 means the solution is not unique
    if evals[1] <= 1e-10 * evals[-1]:
        raise DegenerateConfiguration("DLT design matrix is rank deficient")
    Hn = evecs[:, 0].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return Homography(H)


def reprojection_errors(h, court_pts, image_pts):
    pred = apply_homography(h, np.asarray(court_pts, dtype=float))
    return np.sqrt(((pred - np.asarray(image_pts, dtype=float)) ** 2).sum(axis=-1))


def homography_distance(a, b):
    """Relative Frobenius distance between two canonical homographies."""
    return float(np.linalg.norm(a.m - b.m) / np.linalg.norm(b.m))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map world to camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, fx, fy, cx, cy, up=(0.0, 0.0, 1.0)):
        """Camera at ``eye`` with optical axis through ``target``; image v points down."""
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            raise ValueError("viewing direction parallel to up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.vstack([x, y, z])
        return cls(fx, fy, cx, cy, R, -R @ eye)

    def to_camera(self, p3):
        return np.asarray(p3, dtype=float) @ self.rotation.T + self.translation

    def ground_homography(self):
        """Homography induced on the z = 0 plane: K [r1 r2 t]."""
        return Homography(self.K @ np.column_stack([self.rotation[:, 0], self.rotation[:, 1], self.translation]))

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], np.reshape(d["rotation"], (3, 3)), d["translation"])

    def to_array(self):
        return np.concatenate([[self.fx, self.fy, self.cx, self.cy], self.rotation.ravel(), self.translation])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1], a[2], a[3], a[4:13].reshape(3, 3), a[13:16])


def project_point(cam, p3):
    """Pinhole projection of world point(s) ``p3`` (..., 3) to pixels (..., 2)."""
    p3 = np.asarray(p3, dtype=float)
    pc = np.atleast_2d(cam.to_camera(p3))
    z = pc[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCamera("point has non-positive depth")
    u = cam.fx * pc[:, 0] / z + cam.cx
    v = cam.fy * pc[:, 1] / z + cam.cy
    return np.column_stack([u, v]).reshape(p3.shape[:-1] + (2,))


def in_front(cam, p3):
    """Boolean mask of points with positive camera depth."""
    return np.atleast_2d(cam.to_camera(p3))[:, 2] > DEPTH_EPS


class GroundHomographyCache:
    """Ground-plane homography that is recomputed only when the camera pose moves.

    Camera motion detection is an explicit trigger: callers pass the current
    camera and the cache compares pose parameters exactly.
    """

    def __init__(self):
        self._key = None
        self._h = None
        self.recomputations = 0

    def get(self, cam):
        key = cam.to_array().tobytes()
        if key != self._key:
            self._h = cam.ground_homography()
            self._key = key
            self.recomputations += 1
        return self._h
