"""Coordinate frames, dimension reduction and ego-motion compensation.

Frames:

* VC -- ego-vehicle frame, origin at the ego rear axle, x forward.
* SC -- sensor frame, origin at the sensor, x along the boresight.
* OC -- object frame, origin at the target rear-axle center, x along the
  target heading.

The rear axle sits at 77 % of the vehicle length measured from the front
bumper, so a vehicle of length ``b`` spans ``[-REAR_OVERHANG * b,
FRONT_OVERHANG * b]`` along its OC x-axis and ``[-a/2, a/2]`` laterally.

Doppler is positive for a receding scatterer (range rate).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

FRONT_OVERHANG = 0.77
REAR_OVERHANG = 1.0 - FRONT_OVERHANG
# offset of the geometric box center ahead of the rear axle, in units of length
CENTER_OFFSET = 0.5 - REAR_OVERHANG


class DegenerateGeometryError(ValueError):
    """Raised when a point coincides with the sensor origin."""


def wrap_angle(angle):
    """Wrap angles to (-pi, pi]; -pi maps to +pi."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class KinematicState:
    x: float
    y: float
    phi: float
    v: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap_angle(self.phi))


@dataclass(frozen=True)
class Extent:
    a: float  # width
    b: float  # length

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"extent must be positive, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class VehicleState:
    kinematic: KinematicState
    extent: Extent

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        x, y, phi, v, omega, a, b = (float(u) for u in arr)
        return cls(KinematicState(x, y, phi, v, omega), Extent(a, b))

    def as_array(self) -> np.ndarray:
        k, e = self.kinematic, self.extent
        return np.array([k.x, k.y, k.phi, k.v, k.omega, e.a, e.b])

    def center(self) -> np.ndarray:
        """Geometric center of the vehicle box."""
        k = self.kinematic
        off = CENTER_OFFSET * self.extent.b
        return np.array([k.x + off * np.cos(k.phi), k.y + off * np.sin(k.phi)])


@dataclass(frozen=True)
class Detection:
    d: float
    alpha: float
    vd: float

    def xy(self) -> np.ndarray:
        return np.array([self.d * np.cos(self.alpha), self.d * np.sin(self.alpha)])


@dataclass(frozen=True)
class SensorMount:
    x: float
    y: float
    yaw: float
    opening_angle: float = np.deg2rad(170.0)
    max_range: float = 43.0
    rate: float = 20.0

    def __post_init__(self):
        if not (0.0 < self.opening_angle <= 2.0 * np.pi):
            raise ValueError("opening_angle must lie in (0, 2*pi]")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    @property
    def fov_area(self) -> float:
        """Area of the circular-sector field of view in m^2."""
        return 0.5 * self.opening_angle * self.max_range**2

    def in_fov(self, x_sc, y_sc):
        r = np.hypot(x_sc, y_sc)
        az = np.arctan2(y_sc, x_sc)
        return (r <= self.max_range) & (np.abs(az) <= 0.5 * self.opening_angle)


def in_union_fov(x_vc, y_vc, mounts) -> np.ndarray:
    """True where a VC point lies inside at least one sensor's field of view."""
    x_vc = np.asarray(x_vc, dtype=float)
    y_vc = np.asarray(y_vc, dtype=float)
    seen = np.zeros(np.broadcast(x_vc, y_vc).shape, dtype=bool)
    for m in mounts:
        c, s = np.cos(m.yaw), np.sin(m.yaw)
        dx, dy = x_vc - m.x, y_vc - m.y
        seen |= m.in_fov(c * dx + s * dy, -s * dx + c * dy)
    return seen


@dataclass(frozen=True)
class ReducedMeasurement:
    zx: float
    zy: float
    zd: float


@dataclass(frozen=True)
class EgoMotion:
    """Ego speed/yaw rate plus the pose of the current ego frame in the previous one."""

    v: float = 0.0
    omega: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    dyaw: float = 0.0

    @classmethod
    def from_poses(cls, prev_pose, cur_pose, v: float = 0.0, omega: float = 0.0) -> "EgoMotion":
        """Build the delta from two world poses ``(x, y, yaw)``."""
        px, py, pyaw = prev_pose
        cx, cy, cyaw = cur_pose
        d = rot(-pyaw) @ np.array([cx - px, cy - py])
        return cls(v=v, omega=omega, dx=float(d[0]), dy=float(d[1]), dyaw=wrap_angle(cyaw - pyaw))

    def inverse(self) -> "EgoMotion":
        back = -(rot(-self.dyaw) @ np.array([self.dx, self.dy]))
        return EgoMotion(self.v, self.omega, float(back[0]), float(back[1]), wrap_angle(-self.dyaw))


# ---------------------------------------------------------------------------
# vectorized kernels; xi columns are [x, y, phi, v, omega]
# ---------------------------------------------------------------------------


def transform_poses(xi: np.ndarray, ox: float, oy: float, oyaw: float) -> np.ndarray:
    """Express poses in a frame whose origin sits at (ox, oy, oyaw)."""
    xi = np.array(xi, dtype=float, copy=True)
    c, s = np.cos(oyaw), np.sin(oyaw)
    dx = xi[..., 0] - ox
    dy = xi[..., 1] - oy
    xi[..., 0] = c * dx + s * dy
    xi[..., 1] = -s * dx + c * dy
    xi[..., 2] = wrap_angle(xi[..., 2] - oyaw)
    return xi


def doppler_profile(xi_sc: np.ndarray, alpha):
    """Expected Doppler of a rigid body at bearing ``alpha`` (broadcasting)."""
    x, y, phi, v, omega = (xi_sc[..., i] for i in range(5))
    s1 = v * np.cos(phi) + omega * y
    s2 = v * np.sin(phi) - omega * x
    return np.cos(alpha) * s1 + np.sin(alpha) * s2


def object_coords(xi_sc: np.ndarray, px, py):
    """Cartesian SC points expressed in the (unnormalized) object frame."""
    x, y, phi = xi_sc[..., 0], xi_sc[..., 1], xi_sc[..., 2]
    c, s = np.cos(phi), np.sin(phi)
    dx, dy = px - x, py - y
    return c * dx + s * dy, -s * dx + c * dy


def aspect_angles(xi_sc: np.ndarray):
    return wrap_angle(xi_sc[..., 2] - np.arctan2(xi_sc[..., 1], xi_sc[..., 0]))


def reduce_arrays(d, alpha, vd, xi_sc, a, b):
    """Vectorized reduction; returns (zx, zy, zd)."""
    px, py = d * np.cos(alpha), d * np.sin(alpha)
    ox, oy = object_coords(xi_sc, px, py)
    return ox / b, oy / a, vd - doppler_profile(xi_sc, alpha)


# ---------------------------------------------------------------------------
# dataclass-level operations
# ---------------------------------------------------------------------------


def _kin_array(state: VehicleState) -> np.ndarray:
    k = state.kinematic
    return np.array([k.x, k.y, k.phi, k.v, k.omega])


def _with_kin(state: VehicleState, arr: np.ndarray) -> VehicleState:
    k = state.kinematic
    return replace(state, kinematic=KinematicState(float(arr[0]), float(arr[1]), float(arr[2]), k.v, k.omega))


def to_sensor_frame(state: VehicleState, mount: SensorMount) -> VehicleState:
    """Rigid change of frame VC -> SC; speed, yaw rate and extent unchanged."""
    return _with_kin(state, transform_poses(_kin_array(state), mount.x, mount.y, mount.yaw))


def from_sensor_frame(state: VehicleState, mount: SensorMount) -> VehicleState:
    xi = _kin_array(state)
    c, s = np.cos(mount.yaw), np.sin(mount.yaw)
    out = xi.copy()
    out[0] = mount.x + c * xi[0] - s * xi[1]
    out[1] = mount.y + s * xi[0] + c * xi[1]
    out[2] = wrap_angle(xi[2] + mount.yaw)
    return _with_kin(state, out)


def expected_doppler(state_sc: VehicleState, alpha: float) -> float:
    return float(doppler_profile(_kin_array(state_sc), alpha))


def _check_finite(*vals):
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite input")


def reduce_measurement(z: Detection, state_sc: VehicleState) -> ReducedMeasurement:
    """Map a detection into normalized object coordinates plus Doppler error."""
    _check_finite(z.d, z.alpha, z.vd, *state_sc.as_array())
    zx, zy, zd = reduce_arrays(z.d, z.alpha, z.vd, _kin_array(state_sc), state_sc.extent.a, state_sc.extent.b)
    return ReducedMeasurement(float(zx), float(zy), float(zd))


def aspect_angle(state_sc: VehicleState) -> float:
    k = state_sc.kinematic
    if k.x == 0.0 and k.y == 0.0:
        raise DegenerateGeometryError("rear axle coincides with the sensor origin")
    return float(aspect_angles(_kin_array(state_sc)))


def inverse_reduce(zp: ReducedMeasurement, state_sc: VehicleState) -> Detection:
    k, e = state_sc.kinematic, state_sc.extent
    ox, oy = zp.zx * e.b, zp.zy * e.a
    c, s = np.cos(k.phi), np.sin(k.phi)
    px = k.x + c * ox - s * oy
    py = k.y + s * ox + c * oy
    d = float(np.hypot(px, py))
    if d == 0.0:
        raise DegenerateGeometryError("inverse transform undefined at the sensor origin")
    alpha = float(np.arctan2(py, px))
    return Detection(d, alpha, zp.zd + expected_doppler(state_sc, alpha))


def inverse_reduce_jacobian(zp: ReducedMeasurement, state_sc: VehicleState) -> float:
    """|det d(d, alpha, v_D) / d(zx, zy, zd)| = a*b/d."""
    z = inverse_reduce(zp, state_sc)
    return state_sc.extent.a * state_sc.extent.b / z.d


def sensor_velocity(mount: SensorMount, ego: EgoMotion) -> np.ndarray:
    """Velocity of the sensor origin over ground, expressed in SC."""
    v_vc = np.array([ego.v - ego.omega * mount.y, ego.omega * mount.x])
    return rot(-mount.yaw) @ v_vc


def compensate_doppler_arrays(alpha, vd, mount: SensorMount, ego: EgoMotion):
    vs = sensor_velocity(mount, ego)
    return vd + np.cos(alpha) * vs[0] + np.sin(alpha) * vs[1]


def compensate_ego_doppler(z: Detection, mount: SensorMount, ego: EgoMotion) -> Detection:
    """Remove the sensor's own motion from a Doppler reading."""
    return Detection(z.d, z.alpha, float(compensate_doppler_arrays(z.alpha, z.vd, mount, ego)))


def retarget_arrays(xi: np.ndarray, ego: EgoMotion) -> np.ndarray:
    return transform_poses(xi, ego.dx, ego.dy, ego.dyaw)


def retarget_frame(state: VehicleState, ego: EgoMotion) -> VehicleState:
    """Move a state from the previous ego frame into the current one."""
    return _with_kin(state, retarget_arrays(_kin_array(state), ego))


def rectangle_corners(x, y, phi, a, b) -> np.ndarray:
    """Corners (4, 2) of the vehicle box anchored at the rear axle."""
    c, s = np.cos(phi), np.sin(phi)
    lon = np.array([FRONT_OVERHANG * b, FRONT_OVERHANG * b, -REAR_OVERHANG * b, -REAR_OVERHANG * b])
    lat = np.array([0.5 * a, -0.5 * a, -0.5 * a, 0.5 * a])
    return np.stack([x + c * lon - s * lat, y + s * lon + c * lat], axis=-1)
