"""Two-level strict-priority whole-body controller.

Level 1 (closed-loop inverse kinematics): minimize ||J qd - v1||^2 where
v1 = Kv (xd_d - xd_a) + Kp (x_d - x_a), subject to arm position, velocity and
acceleration boxes on qd.  Level 2: track the learned base pose and keep the
arm near mid-range, subject to the same boxes plus the frozen level-1 task
value J qd = J qd1*, which is what makes the hierarchy strict.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EmptyLog, Level1Infeasible, NumericalBreakdown
from .kinematics import N_BASE, RobotModel, WholeBodyState
from .qp import ActiveSetSolver, QpProblem, QpStatus

TASK_RIDGE = 1e-6

RMSE_CHANNELS = ("ee_pos", "ee_vel", "base_learned", "base_actual")


def _as_diag3(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(3, float(arr))
    if arr.ndim == 1:
        if arr.shape != (3,):
            raise DataError("gain vector must have length 3")
        return np.diag(arr)
    if arr.shape != (3, 3) or np.abs(arr - np.diag(np.diag(arr))).max() > 0.0:
        raise DataError("gain matrix must be 3x3 diagonal")
    return arr


@dataclass
class ControllerGains:
    """CLIK gains, control period, and the level-2 selection matrices."""

    Kp: np.ndarray = 4.0
    Kv: np.ndarray = 1.0
    dt: float = 0.001
    n: int = 10
    H_b: np.ndarray | None = None
    H_a: np.ndarray | None = None

    def __post_init__(self):
        self.Kp = _as_diag3(self.Kp)
        self.Kv = _as_diag3(self.Kv)
        if np.any(np.diag(self.Kp) <= 0.0) or np.any(np.diag(self.Kv) <= 0.0):
            raise DataError("Kp and Kv diagonal entries must be positive")
        if self.dt <= 0.0:
            raise DataError("control period must be positive")
        if self.H_b is None:
            hb = np.zeros(self.n)
            hb[:N_BASE] = 1.0
        else:
            hb = np.diag(np.asarray(self.H_b)) if np.asarray(self.H_b).ndim == 2 else np.asarray(self.H_b, dtype=float)
        if self.H_a is None:
            ha = 1.0 - hb
        else:
            ha = np.diag(np.asarray(self.H_a)) if np.asarray(self.H_a).ndim == 2 else np.asarray(self.H_a, dtype=float)
        if hb.shape != (self.n,) or ha.shape != (self.n,):
            raise DataError(f"selection matrices must be {self.n}x{self.n} diagonal")
        if np.abs(hb + ha - 1.0).max() > 1e-12 or np.abs(hb * ha).max() > 1e-12:
            raise DataError("selection matrices must be complementary (H_b + H_a = I, H_b H_a = 0)")
        self.hb_diag = hb
        self.ha_diag = ha

    @property
    def H_b_matrix(self) -> np.ndarray:
        return np.diag(self.hb_diag)

    @property
    def H_a_matrix(self) -> np.ndarray:
        return np.diag(self.ha_diag)


@dataclass
class ControlStepInput:
    x_d: np.ndarray
    xdot_d: np.ndarray
    q_b_d: np.ndarray
    state: WholeBodyState
    q_star_prev: np.ndarray
    qdot_star_prev: np.ndarray


@dataclass
class StepDiagnostics:
    level1_iterations: int = 0
    level2_iterations: int = 0
    level1_active: int = 0
    level2_active: int = 0
    solve_time: float = 0.0


@dataclass
class ControlStepOutput:
    qdot_star: np.ndarray
    q_star: np.ndarray
    level1_residual: float
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)


def clik_target(gains: ControllerGains, x_d, xdot_d, x_a, xdot_a) -> np.ndarray:
    """v1 = Kv (xdot_d - xdot_a) + Kp (x_d - x_a)."""
    x_d = np.asarray(x_d, dtype=float)
    xdot_d = np.asarray(xdot_d, dtype=float)
    x_a = np.asarray(x_a, dtype=float)
    xdot_a = np.asarray(xdot_a, dtype=float)
    return gains.Kv @ (xdot_d - xdot_a) + gains.Kp @ (x_d - x_a)


class HqpController:
    """One instance per simulated robot; caches QP warm starts between steps."""

    def __init__(self, model: RobotModel, gains: ControllerGains):
        if gains.n != model.n:
            raise DataError(f"gains sized for n={gains.n}, model has n={model.n}")
        self.model = model
        self.gains = gains
        self._solver = ActiveSetSolver()
        self._warm1: tuple = ()
        self._warm2: tuple = ()
        self._identity = np.eye(model.n)

    def velocity_bounds(self, q_star_prev, qdot_star_prev):
        """Intersection of the position, velocity, and acceleration boxes."""
        model, dt = self.model, self.gains.dt
        lim = model.limits
        lower = np.maximum(lim.qdot_min, lim.qddot_min * dt + qdot_star_prev)
        upper = np.minimum(lim.qdot_max, lim.qddot_max * dt + qdot_star_prev)
        q_a = q_star_prev[N_BASE:]
        lower[N_BASE:] = np.maximum(lower[N_BASE:], (lim.q_a_min - q_a) / dt)
        upper[N_BASE:] = np.minimum(upper[N_BASE:], (lim.q_a_max - q_a) / dt)
        return lower, upper

    def step(self, inp: ControlStepInput) -> ControlStepOutput:
        model, gains = self.model, self.gains
        dt = gains.dt
        t0 = time.perf_counter()
        x_a, jac = model.fk_and_jacobian(inp.state.q)
        xdot_a = jac @ inp.state.qdot
        v1 = clik_target(gains, inp.x_d, inp.xdot_d, x_a, xdot_a)

        lower, upper = self.velocity_bounds(inp.q_star_prev, inp.qdot_star_prev)
        if np.any(lower > upper + 1e-12):
            bad = int(np.argmax(lower - upper))
            raise Level1Infeasible(
                f"velocity box empty on coordinate {bad}: [{lower[bad]:.6f}, {upper[bad]:.6f}]"
            )

        h1 = jac.T @ jac
        h1[np.diag_indices_from(h1)] += TASK_RIDGE
        p1 = QpProblem(h1, -(jac.T @ v1), A_in=self._identity, lower=lower, upper=upper)
        # start on the bounds that were active last step so the warm set sticks
        x0 = np.clip(inp.qdot_star_prev, lower, upper)
        for row, side in self._warm1:
            x0[row] = upper[row] if side > 0 else lower[row]
        sol1 = self._solver.solve(p1, self._warm1, x0=x0)
        if sol1.status is QpStatus.INFEASIBLE:
            raise Level1Infeasible("level-1 QP reported infeasible constraints")
        if sol1.status is not QpStatus.OPTIMAL:
            raise NumericalBreakdown(f"level-1 QP did not converge: {sol1.status}")
        self._warm1 = sol1.active_set
        task_value = jac @ sol1.x

        e_target = np.empty(model.n)
        e_target[:N_BASE] = gains.hb_diag[:N_BASE] * (np.asarray(inp.q_b_d) - inp.q_star_prev[:N_BASE])
        e_target[N_BASE:] = gains.ha_diag[N_BASE:] * (model.limits.q_a_mid - inp.q_star_prev[N_BASE:])
        sel = gains.hb_diag * gains.hb_diag + gains.ha_diag * gains.ha_diag
        h2 = np.diag(sel + TASK_RIDGE)
        g2 = -e_target / dt
        p2 = QpProblem(h2, g2, A_eq=jac, b_eq=task_value,
                       A_in=self._identity, lower=lower, upper=upper)
        sol2 = self._solver.solve(p2, self._warm2, x0=sol1.x)
        if sol2.status is not QpStatus.OPTIMAL:
            raise NumericalBreakdown(f"level-2 QP did not converge: {sol2.status}")
        self._warm2 = sol2.active_set
        qdot_star = sol2.x
        iters2 = sol2.iterations
        active2 = sol2.active_set

        q_star = inp.q_star_prev + dt * qdot_star
        residual = float(np.linalg.norm(jac @ qdot_star - v1))
        diag = StepDiagnostics(sol1.iterations, iters2,
                               len(sol1.active_set), len(active2),
                               time.perf_counter() - t0)
        return ControlStepOutput(qdot_star, q_star, residual, diag)


def rmse(log, channel: str) -> np.ndarray:
    """Per-axis root-mean-square error over a simulation log.

    Channels: ee_pos (desired vs actual EE position), ee_vel (desired vs
    actual EE velocity), base_learned (learned base pose vs HQP optimum),
    base_actual (HQP optimum vs plant base pose).
    """
    pairs = {
        "ee_pos": ("x_d", "x_a"),
        "ee_vel": ("xdot_d", "xdot_a"),
        "base_learned": ("q_b_d", "q_b_star"),
        "base_actual": ("q_b_star", "q_b_act"),
    }
    if channel not in pairs:
        raise DataError(f"unknown RMSE channel {channel!r}; expected one of {RMSE_CHANNELS}")
    a_name, b_name = pairs[channel]
    a = np.asarray(getattr(log, a_name), dtype=float)
    b = np.asarray(getattr(log, b_name), dtype=float)
    if a.size == 0:
        raise EmptyLog("cannot evaluate RMSE on an empty log")
    return np.sqrt(np.mean((a - b) ** 2, axis=0))
