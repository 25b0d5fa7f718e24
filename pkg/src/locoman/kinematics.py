"""Mobile-manipulator kinematics: planar holonomic base + serial revolute arm.

The generalized coordinate vector is q = [x_b, y_b, phi_b, q_a1..q_a{n_a}].
Forward kinematics returns the world-frame end-effector position; the
whole-body Jacobian maps q-dot to the EE translational velocity (3 x n).

The chain traversal is written in scalar arithmetic: it sits inside the 1 kHz
control loop and small-matrix numpy overhead dominates otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DataError, DimensionMismatch

N_BASE = 3


def _rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ])


def _rpy_matrix(rpy) -> np.ndarray:
    r, p, y = rpy
    return _rotation((0.0, 0.0, 1.0), y) @ _rotation((0.0, 1.0, 0.0), p) @ _rotation((1.0, 0.0, 0.0), r)


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: fixed parent transform, then rotation about axis."""

    axis: tuple[float, float, float]
    origin_xyz: tuple[float, float, float]
    origin_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class Limits:
    """Box limits over the whole-body coordinate vector (n = 3 + n_a)."""

    q_a_min: np.ndarray
    q_a_max: np.ndarray
    qdot_max: np.ndarray
    qddot_max: np.ndarray

    def __post_init__(self):
        self.q_a_min = np.asarray(self.q_a_min, dtype=float)
        self.q_a_max = np.asarray(self.q_a_max, dtype=float)
        self.qdot_max = np.asarray(self.qdot_max, dtype=float)
        self.qddot_max = np.asarray(self.qddot_max, dtype=float)
        if np.any(self.q_a_min >= self.q_a_max):
            raise DataError("q_a_min must be strictly below q_a_max")

    @property
    def qdot_min(self) -> np.ndarray:
        return -self.qdot_max

    @property
    def qddot_min(self) -> np.ndarray:
        return -self.qddot_max

    @property
    def q_a_mid(self) -> np.ndarray:
        return 0.5 * (self.q_a_min + self.q_a_max)


_CANONICAL_AXES = {
    (1.0, 0.0, 0.0): (0, 1.0), (-1.0, 0.0, 0.0): (0, -1.0),
    (0.0, 1.0, 0.0): (1, 1.0), (0.0, -1.0, 0.0): (1, -1.0),
    (0.0, 0.0, 1.0): (2, 1.0), (0.0, 0.0, -1.0): (2, -1.0),
}


class RobotModel:
    """Immutable kinematic description of the mobile manipulator."""

    def __init__(self, joints: list[JointSpec], mount_offset, ee_offset,
                 limits: Limits, q_a_home=None, name: str = "robot"):
        self.joints = list(joints)
        self.mount_offset = np.asarray(mount_offset, dtype=float)
        self.ee_offset = np.asarray(ee_offset, dtype=float)
        self.limits = limits
        self.name = name
        self.n_a = len(joints)
        self.n = N_BASE + self.n_a
        if q_a_home is None:
            q_a_home = np.zeros(self.n_a)
        self.q_a_home = np.asarray(q_a_home, dtype=float)
        for vec, what in ((limits.qdot_max, "qdot_max"), (limits.qddot_max, "qddot_max")):
            if vec.shape != (self.n,):
                raise DimensionMismatch(f"{what} must have length n={self.n}")
        for vec, what in ((limits.q_a_min, "q_a_min"), (limits.q_a_max, "q_a_max")):
            if vec.shape != (self.n_a,):
                raise DimensionMismatch(f"{what} must have length n_a={self.n_a}")
        self._joint_data = []
        for j in joints:
            axis = tuple(float(a) for a in j.axis)
            if abs(math.sqrt(sum(a * a for a in axis)) - 1.0) > 1e-9:
                raise DataError(f"joint axis {axis} must be a unit vector")
            fixed = None
            if tuple(j.origin_rpy) != (0.0, 0.0, 0.0):
                fixed = tuple(_rpy_matrix(j.origin_rpy).flatten())
            canonical = _CANONICAL_AXES.get(axis)
            self._joint_data.append((
                float(j.origin_xyz[0]), float(j.origin_xyz[1]), float(j.origin_xyz[2]),
                fixed, canonical, axis,
            ))
        self._mount_f = tuple(float(v) for v in self.mount_offset)
        self._ee_f = tuple(float(v) for v in self.ee_offset)

    @classmethod
    def from_dict(cls, payload: dict) -> "RobotModel":
        joints = [
            JointSpec(tuple(j["axis"]), tuple(j["origin_xyz"]), tuple(j.get("origin_rpy", (0, 0, 0))))
            for j in payload["joints"]
        ]
        lim = payload["limits"]
        limits = Limits(lim["q_a_min"], lim["q_a_max"], lim["qdot_max"], lim["qddot_max"])
        return cls(joints, payload["mount_offset"], payload.get("ee_offset", (0, 0, 0)),
                   limits, payload.get("q_a_home"), payload.get("name", "robot"))

    @classmethod
    def from_json(cls, path) -> "RobotModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "RobotModel":
        text = resources.files("locoman.data").joinpath("default_robot.json").read_text()
        return cls.from_dict(json.loads(text))

    # -- kinematics ---------------------------------------------------------

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise DimensionMismatch(f"q must have length n={self.n}, got {q.shape}")
        return q

    def _chain(self, qf: list):
        """Walk the chain; returns per-joint world positions/axes and the EE.

        The running rotation is kept as nine scalars (column-major reading:
        col0 = (r00, r10, r20) etc.); joint rotations about canonical axes are
        applied as two-column updates.
        """
        x, y, phi = qf[0], qf[1], qf[2]
        c, s = math.cos(phi), math.sin(phi)
        r00, r10, r20 = c, s, 0.0
        r01, r11, r21 = -s, c, 0.0
        r02, r12, r22 = 0.0, 0.0, 1.0
        mx, my, mz = self._mount_f
        px = x + r00 * mx + r01 * my + r02 * mz
        py = y + r10 * mx + r11 * my + r12 * mz
        pz = r20 * mx + r21 * my + r22 * mz
        joints = []
        for i, (ox, oy, oz, fixed, canonical, axis) in enumerate(self._joint_data):
            px += r00 * ox + r01 * oy + r02 * oz
            py += r10 * ox + r11 * oy + r12 * oz
            pz += r20 * ox + r21 * oy + r22 * oz
            if fixed is not None:
                f00, f01, f02, f10, f11, f12, f20, f21, f22 = fixed
                n00 = r00 * f00 + r01 * f10 + r02 * f20
                n01 = r00 * f01 + r01 * f11 + r02 * f21
                n02 = r00 * f02 + r01 * f12 + r02 * f22
                n10 = r10 * f00 + r11 * f10 + r12 * f20
                n11 = r10 * f01 + r11 * f11 + r12 * f21
                n12 = r10 * f02 + r11 * f12 + r12 * f22
                n20 = r20 * f00 + r21 * f10 + r22 * f20
                n21 = r20 * f01 + r21 * f11 + r22 * f21
                n22 = r20 * f02 + r21 * f12 + r22 * f22
                r00, r01, r02, r10, r11, r12, r20, r21, r22 = n00, n01, n02, n10, n11, n12, n20, n21, n22
            ax, ay, az = axis
            wx = r00 * ax + r01 * ay + r02 * az
            wy = r10 * ax + r11 * ay + r12 * az
            wz = r20 * ax + r21 * ay + r22 * az
            joints.append((px, py, pz, wx, wy, wz))
            th = qf[N_BASE + i]
            if canonical is not None:
                idx, sign = canonical
                ct, st = math.cos(th), sign * math.sin(th)
                if idx == 2:
                    a, b = r00, r01
                    r00, r01 = ct * a + st * b, ct * b - st * a
                    a, b = r10, r11
                    r10, r11 = ct * a + st * b, ct * b - st * a
                    a, b = r20, r21
                    r20, r21 = ct * a + st * b, ct * b - st * a
                elif idx == 1:
                    a, b = r00, r02
                    r00, r02 = ct * a - st * b, st * a + ct * b
                    a, b = r10, r12
                    r10, r12 = ct * a - st * b, st * a + ct * b
                    a, b = r20, r22
                    r20, r22 = ct * a - st * b, st * a + ct * b
                else:
                    a, b = r01, r02
                    r01, r02 = ct * a + st * b, ct * b - st * a
                    a, b = r11, r12
                    r11, r12 = ct * a + st * b, ct * b - st * a
                    a, b = r21, r22
                    r21, r22 = ct * a + st * b, ct * b - st * a
            else:
                b = _rotation(axis, th)
                b00, b01, b02 = b[0]
                b10, b11, b12 = b[1]
                b20, b21, b22 = b[2]
                n00 = r00 * b00 + r01 * b10 + r02 * b20
                n01 = r00 * b01 + r01 * b11 + r02 * b21
                n02 = r00 * b02 + r01 * b12 + r02 * b22
                n10 = r10 * b00 + r11 * b10 + r12 * b20
                n11 = r10 * b01 + r11 * b11 + r12 * b21
                n12 = r10 * b02 + r11 * b12 + r12 * b22
                n20 = r20 * b00 + r21 * b10 + r22 * b20
                n21 = r20 * b01 + r21 * b11 + r22 * b21
                n22 = r20 * b02 + r21 * b12 + r22 * b22
                r00, r01, r02, r10, r11, r12, r20, r21, r22 = n00, n01, n02, n10, n11, n12, n20, n21, n22
        ex, ey, ez = self._ee_f
        eex = px + r00 * ex + r01 * ey + r02 * ez
        eey = py + r10 * ex + r11 * ey + r12 * ez
        eez = pz + r20 * ex + r21 * ey + r22 * ez
        return joints, (eex, eey, eez)

    def forward_kinematics(self, q) -> np.ndarray:
        """World-frame EE position for the whole-body configuration q."""
        q = self._check_q(q)
        return np.array(self._chain(q.tolist())[1])

    def whole_body_jacobian(self, q) -> np.ndarray:
        """3 x n translational Jacobian: base columns then revolute columns."""
        return self.fk_and_jacobian(q)[1]

    def fk_and_jacobian(self, q):
        """FK and Jacobian from one chain traversal (hot path for the sim)."""
        q = self._check_q(q)
        qf = q.tolist()
        joints, (eex, eey, eez) = self._chain(qf)
        jac = np.empty((3, self.n))
        jac[0, 0], jac[1, 0], jac[2, 0] = 1.0, 0.0, 0.0
        jac[0, 1], jac[1, 1], jac[2, 1] = 0.0, 1.0, 0.0
        # base yaw column: z x (p_ee - p_base)
        jac[0, 2], jac[1, 2], jac[2, 2] = -(eey - qf[1]), eex - qf[0], 0.0
        for i, (px, py, pz, wx, wy, wz) in enumerate(joints):
            rx, ry, rz = eex - px, eey - py, eez - pz
            jac[0, N_BASE + i] = wy * rz - wz * ry
            jac[1, N_BASE + i] = wz * rx - wx * rz
            jac[2, N_BASE + i] = wx * ry - wy * rx
        return np.array((eex, eey, eez)), jac


def forward_kinematics(model: RobotModel, q) -> np.ndarray:
    return model.forward_kinematics(q)


def whole_body_jacobian(model: RobotModel, q) -> np.ndarray:
    return model.whole_body_jacobian(q)


def solve_arm_ik(model: RobotModel, base_pose, target, q_a_seed=None,
                 max_iter: int = 300, tol: float = 1e-16) -> np.ndarray:
    """Damped least-squares position IK over the arm joints, base frozen.

    Used to pose the arm at a scenario's initial EE position.  Raises if the
    target is unreachable to within sqrt(tol).
    """
    base_pose = np.asarray(base_pose, dtype=float)
    target = np.asarray(target, dtype=float)
    q_a = np.array(model.q_a_home if q_a_seed is None else q_a_seed, dtype=float)
    for _ in range(max_iter):
        q = np.concatenate([base_pose, q_a])
        ee, jac = model.fk_and_jacobian(q)
        err = target - ee
        err2 = float(err @ err)
        if err2 < tol:
            return np.clip(q_a, model.limits.q_a_min, model.limits.q_a_max)
        damping = 1e-6 + 0.1 * err2
        j_a = jac[:, N_BASE:]
        step = j_a.T @ np.linalg.solve(j_a @ j_a.T + damping * np.eye(3), err)
        q_a = np.clip(q_a + step, model.limits.q_a_min, model.limits.q_a_max)
    raise DataError(
        f"arm IK did not converge to {target} from base {base_pose} (residual {math.sqrt(err2):.2e})"
    )


@dataclass
class WholeBodyState:
    """Measured base pose + arm angles and their velocities."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise DimensionMismatch("q and qdot must have the same length")

    @property
    def base_pose(self) -> np.ndarray:
        return self.q[:N_BASE]

    @property
    def arm_angles(self) -> np.ndarray:
        return self.q[N_BASE:]
