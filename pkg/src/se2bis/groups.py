"""SE(2)/SO(3) arithmetic and the geometry linking the plane to the sphere.

The central objects are planar rigid motions, the family of maps that send a
rigid motion ``(b, R(theta))`` to the 3D rotation ``exp(b / lam) @ embed(theta)``,
and the induced point maps between the open disc of radius ``lam * pi`` and the
sphere minus the south pole.  Everything here is a pure function of its inputs;
rotations are plain 3x3 ``float64`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORTH_POLE = np.array([0.0, 0.0, 1.0])

_TWO_PI = 2.0 * math.pi


def rotation2(theta):
    """2x2 counterclockwise rotation matrix."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def embed_rotation(theta):
    """Embed a planar rotation as the 3D rotation fixing the z-axis."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidMotion:
    """A planar rigid motion ``x -> R(theta) x + b``.

    ``b`` is the translation in plane units and ``theta`` the rotation angle in
    radians, normalized to ``[0, 2*pi)``.
    """

    b: np.ndarray
    theta: float

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(2)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "theta", float(self.theta) % _TWO_PI)

    @classmethod
    def identity(cls):
        return cls(np.zeros(2), 0.0)

    def rotation(self):
        return rotation2(self.theta)

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        # (b1, R1)(b2, R2) = (b1 + R1 b2, R1 R2)
        return RigidMotion(self.b + self.rotation() @ other.b, self.theta + other.theta)

    def inverse(self) -> "RigidMotion":
        return RigidMotion(-self.rotation().T @ self.b, -self.theta)

    def apply(self, x):
        """Act on points: ``(b, R) . x = R x + b``.  ``x`` has shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        return x @ self.rotation().T + self.b


def so3_exp(x):
    """Exponential of the skew matrix ``[[0, x], [-x^T, 0]]``, in closed form.

    Rodrigues form: with ``r = |x|`` and ``K = X / r``,
    ``exp(X) = I + sin(r) K + (1 - cos(r)) K^2``.
    """
    x = np.asarray(x, dtype=float).reshape(2)
    r = math.hypot(x[0], x[1])
    skew = np.array(
        [
            [0.0, 0.0, x[0]],
            [0.0, 0.0, x[1]],
            [-x[0], -x[1], 0.0],
        ]
    )
    if r < 1e-154:
        # second-order series; exact to double precision for tiny r
        return np.eye(3) + skew + 0.5 * (skew @ skew)
    k = skew / r
    return np.eye(3) + math.sin(r) * k + (1.0 - math.cos(r)) * (k @ k)


def contract(g: RigidMotion, lam: float):
    """Map a rigid motion to ``exp(b / lam) @ embed(theta)``.

    The family (one map per ``lam > 0``) deforms the composition law of planar
    rigid motions into that of 3D rotations as ``lam`` grows.
    """
    if lam <= 0:
        raise ValueError(f"scaling parameter must be positive, got {lam}")
    return so3_exp(g.b / lam) @ embed_rotation(g.theta)


def plane_to_sphere(x, lam: float):
    """Send plane points to the sphere: ``(x/|x| sin(|x|/lam), cos(|x|/lam))``.

    The origin maps to the north pole.  Accepts shape (..., 2), returns
    (..., 3).
    """
    if lam <= 0:
        raise ValueError(f"scaling parameter must be positive, got {lam}")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    safe_r = np.where(r > 0, r, 1.0)
    direction = x / safe_r[..., None]
    direction = np.where((r > 0)[..., None], direction, 0.0)
    ang = r / lam
    out = np.empty(x.shape[:-1] + (3,))
    out[..., :2] = direction * np.sin(ang)[..., None]
    out[..., 2] = np.cos(ang)
    return out


def sphere_to_plane(s, lam: float, pole_tol: float = 1e-12):
    """Inverse of :func:`plane_to_sphere` on the open disc of radius ``lam*pi``.

    Raises for the south pole, which has no preimage in the open disc.
    """
    if lam <= 0:
        raise ValueError(f"scaling parameter must be positive, got {lam}")
    s = np.asarray(s, dtype=float)
    z = np.clip(s[..., 2], -1.0, 1.0)
    if np.any(z <= -1.0 + pole_tol):
        raise ValueError("south-pole input: no preimage in the open disc")
    theta = np.arccos(z)
    phi = np.arctan2(s[..., 1], s[..., 0])
    out = np.empty(s.shape[:-1] + (2,))
    out[..., 0] = lam * theta * np.cos(phi)
    out[..., 1] = lam * theta * np.sin(phi)
    return out


def spherical_coords(s):
    """Unit vector(s) -> (colatitude, azimuth) with azimuth in [0, 2*pi)."""
    s = np.asarray(s, dtype=float)
    theta = np.arccos(np.clip(s[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(s[..., 1], s[..., 0]), _TWO_PI)
    return theta, phi


def sphere_point(theta, phi):
    """(colatitude, azimuth) -> unit vector(s), shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def homomorphism_defect_bound(r1: float, r2: float, lam: float) -> float:
    """Bound on the composition defect of :func:`contract`, ``C(r1, r2) / lam**2``.

    ``C(r1, r2) = 2 e^{r1+r2} - e^{r1} - e^{r2} - r1 - r2`` where ``r1``, ``r2``
    are the translation norms of the two motions being composed.
    """
    if r1 < 0 or r2 < 0:
        raise ValueError("translation norms must be nonnegative")
    if lam < 1:
        raise ValueError(f"bound requires lam >= 1, got {lam}")
    c = 2.0 * math.exp(r1 + r2) - math.exp(r1) - math.exp(r2) - r1 - r2
    return c / lam**2


def group_action_bound(lipschitz: float, b_norm: float, lam: float, lam_tilde: float) -> float:
    """L2 bound on the mismatch between acting before or after projection.

    For a function supported in the disc of radius ``lam * pi`` projected with
    scaling ``lam_tilde >= lam >= 1``, the action of ``(b, R)`` on the plane and
    the corresponding 3D rotation on the sphere differ in L2 norm by at most

        ``4 L pi e^{|b| + lam pi} / lam_tilde^2 * sqrt(1 - cos(lam pi / lam_tilde))``

    where ``L`` is the Lipschitz constant of the projected function with
    respect to great-circle distance.
    """
    if lipschitz < 0 or b_norm < 0:
        raise ValueError("lipschitz constant and translation norm must be nonnegative")
    if not (lam_tilde >= lam >= 1):
        raise ValueError(f"need lam_tilde >= lam >= 1, got lam={lam}, lam_tilde={lam_tilde}")
    amp = 4.0 * lipschitz * math.pi * math.exp(b_norm + lam * math.pi) / lam_tilde**2
    return amp * math.sqrt(max(0.0, 1.0 - math.cos(lam * math.pi / lam_tilde)))


def great_circle_distance(x, y):
    """Great-circle distance between unit vectors, shape-broadcasting."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.arccos(np.clip(np.sum(x * y, axis=-1), -1.0, 1.0))


def rotation_angle(r):
    """Geodesic angle of a 3D rotation (or between two, pass ``r1.T @ r2``)."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
