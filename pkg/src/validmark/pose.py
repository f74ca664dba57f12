"""Rigid alignment and 6D head-pose recovery.

kabsch() solves weighted least-squares rigid alignment between corresponded
3D point sets (SVD of the cross-covariance with determinant-sign correction
so reflections never leak through). fit_head_pose() fits 2D landmarks to a
rigid 3D template under a weak-perspective camera: a scaled-orthographic
(POS-style) initialization followed by damped Gauss-Newton on the
reprojection error with the rotation updated on its manifold.

Projection model: u = (f / t_z) * ((R X)_xy + t_xy), x right, y down,
z toward the camera. Without a real focal length, f = 1 recovers the pose
up to the weak-perspective scale convention t_z = 1/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataError, DegenerateGeometryError, LandmarkSet

GIMBAL_LOCK_MARGIN = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray       # (3, 3), orthonormal, det +1
    translation: np.ndarray    # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise DataError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise DataError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise DataError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


def kabsch(p: np.ndarray, q: np.ndarray, weights=None) -> RigidTransform:
    """Weighted least-squares (R, t) minimizing sum w_i |R p_i + t - q_i|^2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise DataError(f"point sets must both be (N, 3), got {p.shape} and {q.shape}")
    n = p.shape[0]
    if n < 3:
        raise DegenerateGeometryError("need at least 3 correspondences")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any():
            raise DataError("weights must be (N,) and non-negative")
        if w.sum() <= 0:
            raise DataError("at least one weight must be positive")
    wsum = w.sum()

    p_bar = (w[:, None] * p).sum(axis=0) / wsum
    q_bar = (w[:, None] * q).sum(axis=0) / wsum
    pc = p - p_bar
    qc = q - q_bar

    cov = (w[:, None] * pc).T @ qc
    u, s, vt = np.linalg.svd(cov)
    # rank < 2 means the weighted points are collinear or coincident
    if s[1] <= max(1e-12 * s[0], 1e-300):
        raise DegenerateGeometryError(
            "degenerate correspondence set (collinear or coincident points)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # snap to the nearest exact rotation to keep the invariant tight
    ru, _, rvt = np.linalg.svd(r)
    r = ru @ rvt
    if np.linalg.det(r) < 0:
        r = ru @ np.diag([1.0, 1.0, -1.0]) @ rvt
    t = q_bar - r @ p_bar
    return RigidTransform(r, t)


def alignment_residual(p, q, transform: RigidTransform, weights=None) -> float:
    """Weighted RMS of |R p + t - q|."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    w = np.ones(p.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    diff = transform.apply(p) - q
    return float(np.sqrt((w * (diff ** 2).sum(axis=1)).sum() / w.sum()))


# --- rotation utilities -------------------------------------------------------

def rotation_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between rotations, degrees: arccos((tr(R1^T R2)-1)/2)."""
    trace = float(np.trace(np.asarray(r1).T @ np.asarray(r2)))
    return math.degrees(math.acos(min(1.0, max(-1.0, (trace - 1.0) / 2.0))))


def rotation_angle_rad(r1: np.ndarray, r2: np.ndarray) -> float:
    """Same geodesic angle in radians via the relative quaternion; accurate
    near zero where the arccos form saturates at sqrt(machine eps)."""
    q = quat_from_rotation(np.asarray(r1).T @ np.asarray(r2))
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


def translation_distance(t1, t2) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=np.float64)
                                - np.asarray(t2, dtype=np.float64)))


def quat_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    return q / np.linalg.norm(q)


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic yaw (about y), pitch (about x), roll (about z):
    R = Ry(yaw) @ Rx(pitch) @ Rz(roll). Angles in radians."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def euler_from_rotation(r: np.ndarray) -> tuple[float, float, float, bool]:
    """(yaw, pitch, roll, gimbal_locked) in radians from the convention above."""
    r = np.asarray(r, dtype=np.float64)
    sp = -r[1, 2]
    locked = abs(sp) >= 1.0 - GIMBAL_LOCK_MARGIN
    pitch = math.asin(min(1.0, max(-1.0, sp)))
    if locked:
        # yaw and roll are coupled at the pole; conventionally roll = 0
        yaw = math.atan2(-r[2, 0], r[0, 0])
        roll = 0.0
    else:
        yaw = math.atan2(r[0, 2], r[2, 2])
        roll = math.atan2(r[1, 0], r[1, 1])
    return yaw, pitch, roll, locked


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map of a rotation vector."""
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        k = _hat(omega)
        return np.eye(3) + k + 0.5 * k @ k
    axis = omega / theta
    k = _hat(axis)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


# --- 3D face template ---------------------------------------------------------

@dataclass(frozen=True)
class Template3D:
    """Rigid landmark template, (L, 3) in template units."""

    points: np.ndarray
    units_per_mm: float = 1.0
    contours: tuple[tuple[tuple[int, ...], bool], ...] = ()   # (indices, closed)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"template points must be (L, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise DataError("template contains non-finite coordinates")
        centered = pts - pts.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if pts.shape[0] < 3 or s[1] <= 1e-9 * max(s[0], 1.0):
            raise DegenerateGeometryError("template points are collinear; pose unsolvable")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


_FIVE_POINT_FACE = np.array([
    [-18.0, -12.0, 30.0],   # left eye center
    [18.0, -12.0, 30.0],    # right eye center
    [0.0, 8.0, 42.0],       # nose tip
    [-14.0, 26.0, 30.0],    # left mouth corner
    [14.0, 26.0, 30.0],     # right mouth corner
])

_FIVE_POINT_CONTOURS = (
    ((0, 2, 1), False),     # eyes to nose
    ((3, 2, 4), False),     # mouth corners to nose
    ((3, 4), False),
)


def _ellipsoid_point(lon: float, lat: float, ax=50.0, ay=65.0, az=40.0) -> np.ndarray:
    """Point on the front half (z >= 0) of the head ellipsoid; lon/lat in
    radians, lon 0 at the nose, lat 0 at eye height."""
    return np.array([ax * math.sin(lon) * math.cos(lat),
                     ay * math.sin(lat),
                     az * math.cos(lon) * math.cos(lat)])


def _build_68_point_face() -> tuple[np.ndarray, tuple]:
    pts = np.zeros((68, 3))
    # jaw line, indices 0-16: arc from left ear to right ear over the chin
    for i in range(17):
        f = i / 16.0
        lon = math.radians(-78.0 + 156.0 * f)
        lat = math.radians(18.0 + 30.0 * math.sin(math.pi * f))
        pts[i] = _ellipsoid_point(lon, lat)
    # eyebrows, 17-21 (left); 22-26 mirror them for the right side
    for i in range(5):
        f = i / 4.0
        lon = math.radians(-42.0 + 28.0 * f)
        lat = math.radians(-22.0 - 5.0 * math.sin(math.pi * f))
        pts[17 + i] = _ellipsoid_point(lon, lat)
    for i in range(5):
        mirrored = pts[21 - i].copy()
        mirrored[0] = -mirrored[0]
        pts[22 + i] = mirrored
    # nose bridge 27-30 and base 31-35
    for i in range(4):
        pts[27 + i] = np.array([0.0, -12.0 + 8.0 * i, 38.0 + 1.5 * i])
    for i in range(5):
        pts[31 + i] = np.array([-8.0 + 4.0 * i, 14.0, 34.0 - 2.0 * abs(i - 2)])
    # eyes 36-41 (left) and 42-47 (right): 6-point rings
    for base, cx in ((36, -18.0), (42, 18.0)):
        ring = [(-7, 0), (-3, -3), (3, -3), (7, 0), (3, 3), (-3, 3)]
        for i, (dx, dy) in enumerate(ring):
            pts[base + i] = np.array([cx + dx, -12.0 + dy, 30.0])
    # outer lip 48-59 and inner lip 60-67
    for i in range(12):
        ang = 2.0 * math.pi * i / 12.0
        pts[48 + i] = np.array([-14.0 * math.cos(ang), 26.0 + 6.0 * math.sin(ang), 30.0])
    for i in range(8):
        ang = 2.0 * math.pi * i / 8.0
        pts[60 + i] = np.array([-8.0 * math.cos(ang), 26.0 + 3.0 * math.sin(ang), 31.0])
    contours = (
        (tuple(range(0, 17)), False),
        (tuple(range(17, 22)), False),
        (tuple(range(22, 27)), False),
        (tuple(range(27, 31)), False),
        (tuple(range(31, 36)), False),
        (tuple(range(36, 42)), True),
        (tuple(range(42, 48)), True),
        (tuple(range(48, 60)), True),
        (tuple(range(60, 68)), True),
    )
    return pts, contours


def make_face_template(count: int = 5) -> Template3D:
    """Bundled synthetic rigid face template.

    count == 5 gives eyes/nose/mouth anchors; count == 68 a full standard
    layout (eye rings at 36-41 / 42-47); other counts >= 5 add
    Fibonacci-spiral points on the front half-ellipsoid after the anchors.
    """
    if count == 68:
        pts, contours = _build_68_point_face()
        return Template3D(pts, contours=contours)
    if count == 5:
        return Template3D(_FIVE_POINT_FACE.copy(), contours=_FIVE_POINT_CONTOURS)
    if count < 5:
        raise DataError("face template needs at least 5 landmarks")
    extra = count - 5
    golden = math.pi * (3.0 - math.sqrt(5.0))
    spiral = []
    for i in range(extra):
        lat = math.radians(-35.0 + 70.0 * (i + 0.5) / extra)
        lon = ((i * golden) % (2.0 * math.radians(70.0))) - math.radians(70.0)
        spiral.append(_ellipsoid_point(lon, lat))
    pts = np.vstack([_FIVE_POINT_FACE, np.array(spiral)])
    return Template3D(pts, contours=_FIVE_POINT_CONTOURS)


def load_template_csv(path) -> Template3D:
    """Template from 'idx,x,y,z' CSV (header required, rows sorted by idx)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().lower().split(",")
        if header != ["idx", "x", "y", "z"]:
            raise DataError(f"{path}: expected header idx,x,y,z, got {header}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields")
            try:
                rows.append((int(parts[0]), float(parts[1]), float(parts[2]),
                             float(parts[3])))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise DataError(f"{path}: empty template")
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise DataError(f"{path}: indices must be 0..L-1 without gaps")
    return Template3D(np.array([[r[1], r[2], r[3]] for r in rows]))


def save_template_csv(template: Template3D, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("idx,x,y,z\n")
        for i, (x, y, z) in enumerate(template.points):
            fh.write(f"{i},{x:.9g},{y:.9g},{z:.9g}\n")


# --- head pose from 2D landmarks ----------------------------------------------

@dataclass(frozen=True)
class PoseFit:
    transform: RigidTransform
    residual_rms: float        # px in the landmark frame
    converged: bool
    iterations: int


def _project(points3d: np.ndarray, r: np.ndarray, t: np.ndarray, focal: float) -> np.ndarray:
    cam = points3d @ r.T + t
    return focal * cam[:, :2] / t[2]


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _pos_init(lm: np.ndarray, x3d: np.ndarray, w: np.ndarray, focal: float):
    """Scaled-orthographic least squares for the two scaled rotation rows."""
    wsum = w.sum()
    u_bar = (w[:, None] * lm).sum(axis=0) / wsum
    x_bar = (w[:, None] * x3d).sum(axis=0) / wsum
    uc = lm - u_bar
    xc = x3d - x_bar
    a_mat = np.sqrt(w)[:, None] * xc
    rhs = np.sqrt(w)[:, None] * uc
    sol, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    a, b = sol[:, 0], sol[:, 1]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateGeometryError("orthographic initialization collapsed")
    scale = 0.5 * (na + nb)
    r = _nearest_rotation(np.vstack([a / na, b / nb, np.cross(a / na, b / nb)]))
    tz = focal / scale
    t_xy = u_bar * tz / focal - (r @ x_bar)[:2]
    return r, np.array([t_xy[0], t_xy[1], tz])


def fit_head_pose(landmarks: LandmarkSet, template: Template3D,
                  focal: float | None = None, weights=None,
                  max_iterations: int = 100, tol: float = 1e-12) -> PoseFit:
    """Recover (R, t) mapping template points onto the 2D landmarks.

    With focal=None an orthographic fit with f = 1 is used, which fixes the
    scale convention t_z = 1/s. Zero-weight landmarks are excluded, which is
    how low-validity predictions are discarded from pose estimation.
    """
    lm = landmarks.points
    x3d = template.points
    if lm.shape[0] != x3d.shape[0]:
        raise DataError(f"{lm.shape[0]} landmarks vs {x3d.shape[0]} template points")
    n = lm.shape[0]
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any():
            raise DataError("weights must be (N,) and non-negative")
        if (w > 0).sum() < 4:
            raise DegenerateGeometryError("need at least 4 positively weighted landmarks")
    f = 1.0 if focal is None else float(focal)

    r, t = _pos_init(lm, x3d, w, f)

    def residuals(rm, tv):
        return (lm - _project(x3d, rm, tv, f)) * np.sqrt(w)[:, None]

    def cost(rm, tv):
        return float((residuals(rm, tv) ** 2).sum())

    best_cost = cost(r, t)
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        cam = x3d @ r.T + t
        res = residuals(r, t).reshape(-1)
        jac = np.zeros((2 * n, 6))
        sw = np.sqrt(w)
        inv_tz = 1.0 / t[2]
        for i in range(n):
            # d(projection)/d(cam point) for u = f * cam_xy / t_z
            dproj = np.array([[f * inv_tz, 0.0, 0.0],
                              [0.0, f * inv_tz, 0.0]])
            # t_z enters both through cam and the divisor
            dproj_dtz = -f * cam[i, :2] * inv_tz * inv_tz
            # rotation perturbation R <- exp(hat(dw)) R moves cam by -hat(cam_rot) dw
            dcam_dw = -_hat(x3d[i] @ r.T)
            block = dproj @ dcam_dw
            jac[2 * i:2 * i + 2, 0:3] = -sw[i] * block
            jac[2 * i:2 * i + 2, 3] = -sw[i] * np.array([f * inv_tz, 0.0])
            jac[2 * i:2 * i + 2, 4] = -sw[i] * np.array([0.0, f * inv_tz])
            jac[2 * i:2 * i + 2, 5] = -sw[i] * dproj_dtz
        try:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(step).all():
            break
        # damped update: halve until the cost does not increase
        applied = False
        for _ in range(20):
            r_new = exp_so3(step[:3]) @ r
            t_new = t + step[3:]
            if t_new[2] <= 1e-9:
                step = step * 0.5
                continue
            c_new = cost(r_new, t_new)
            if c_new <= best_cost:
                r, t = r_new, t_new
                applied = True
                improvement = best_cost - c_new
                best_cost = c_new
                break
            step = step * 0.5
        if not applied:
            converged = True
            break
        if float(np.linalg.norm(step)) < tol or improvement < tol * (1.0 + best_cost):
            converged = True
            break

    rms = math.sqrt(best_cost / max(w.sum(), 1e-300))
    return PoseFit(RigidTransform(_nearest_rotation(r), t), rms, converged, iterations)
