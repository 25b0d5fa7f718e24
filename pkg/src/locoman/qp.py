"""Dense convex QP solver for small problems.

    minimize    0.5 x'Hx + g'x
    subject to  A_eq x = b_eq
                lower <= A_in x <= upper

Primal active-set method: from a feasible point, repeatedly solve the
equality-constrained KKT system on the working set, step along the resulting
direction until a blocking constraint is hit (then add it), and drop the most
wrong-signed multiplier when no progress is possible.  Feasibility of every
iterate plus monotone objective decrease is what makes the method safe for a
1 kHz loop; warm starts (previous solution and working set) make it cheap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import DataError, DimensionMismatch, NumericalBreakdown

# (H ridge, dual regularization) escalation ladder for the KKT solves
_RIDGE_LADDER = ((1e-10, 0.0), (1e-8, 1e-12), (1e-6, 1e-10))


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H must be ({n}, {n})")
        if np.abs(self.H - self.H.T).max() > 1e-10:
            raise DataError("H must be symmetric to 1e-10")
        if (self.A_eq is None) != (self.b_eq is None):
            raise DimensionMismatch("A_eq and b_eq must be given together")
        if self.A_eq is not None:
            self.A_eq = np.asarray(self.A_eq, dtype=float)
            self.b_eq = np.asarray(self.b_eq, dtype=float)
            if self.A_eq.shape != (self.b_eq.shape[0], n):
                raise DimensionMismatch("A_eq/b_eq dimensions inconsistent")
            if self.A_eq.shape[0] > n:
                raise DimensionMismatch("more equality rows than variables")
        if self.A_in is not None:
            self.A_in = np.asarray(self.A_in, dtype=float)
            self.lower = np.asarray(self.lower, dtype=float)
            self.upper = np.asarray(self.upper, dtype=float)
            m = self.A_in.shape[0]
            if self.A_in.shape != (m, n) or self.lower.shape != (m,) or self.upper.shape != (m,):
                raise DimensionMismatch("A_in/lower/upper dimensions inconsistent")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return 0 if self.A_in is None else self.A_in.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    active_set: tuple[tuple[int, int], ...]     # (row, +1 upper / -1 lower)
    kkt_residual: float
    iterations: int
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))
    in_multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def x_star(self) -> np.ndarray:
        return self.x


class ActiveSetSolver:
    """Holds tolerances only; per-solve state lives on the stack, so distinct
    instances (one per controller) can run concurrently."""

    def __init__(self, max_iter: int = 200, feas_tol: float = 1e-9, dual_tol: float = 1e-9):
        self.max_iter = max_iter
        self.feas_tol = feas_tol
        self.dual_tol = dual_tol

    # -- internals ----------------------------------------------------------

    @staticmethod
    def _constraint_stack(p: QpProblem, active: list[tuple[int, int]]) -> np.ndarray | None:
        if p.n_eq and active:
            return np.vstack([p.A_eq, p.A_in[[r for r, _ in active]]])
        if p.n_eq:
            return p.A_eq
        if active:
            return p.A_in[[r for r, _ in active]]
        return None

    def _eqp(self, p: QpProblem, active: list[tuple[int, int]], grad: np.ndarray,
             h_inv: np.ndarray | None = None):
        """Newton direction on the working set, plus its multipliers.

        Fast path (well-conditioned working sets): Schur complement on the
        pre-inverted Hessian, accepted only if the active rows stay exactly
        invariant.  Otherwise one pivoted QR of the stacked constraint rows
        yields the rank, an orthonormal null-space basis (so feasibility
        survives rank deficiency), and least-squares multipliers.
        """
        n = p.n
        stack = self._constraint_stack(p, active)
        if h_inv is not None:
            if stack is None:
                d = -(h_inv @ grad)
                if np.all(np.isfinite(d)):
                    return d, np.zeros(0), np.zeros(0)
            else:
                hia = h_inv @ stack.T
                schur = stack @ hia
                base = h_inv @ grad
                try:
                    lam = np.linalg.solve(schur, -(stack @ base))
                    d = -base - hia @ lam
                    # both halves of the EQP system must hold, and the step
                    # must be a descent step; ill-conditioned Schur solves
                    # produce quasi-null drift directions that fail these
                    h_d = p.H @ d
                    stat_err = np.abs(grad + h_d + stack.T @ lam).max()
                    descent = grad @ d + 0.5 * (d @ h_d)
                    if np.all(np.isfinite(d)) and np.all(np.isfinite(lam)) \
                            and stat_err <= 1e-8 * max(1.0, np.abs(grad).max()) \
                            and descent <= 0.0 \
                            and np.abs(stack @ d).max(initial=0.0) <= 1e-10 * (1.0 + np.abs(d).max(initial=0.0)):
                        return d, lam[:p.n_eq], lam[p.n_eq:]
                except np.linalg.LinAlgError:
                    pass
        if stack is None:
            for ridge, _ in _RIDGE_LADDER:
                try:
                    d = np.linalg.solve(p.H + ridge * np.eye(n), -grad)
                except np.linalg.LinAlgError:
                    continue
                if np.all(np.isfinite(d)):
                    return d, np.zeros(0), np.zeros(0)
            raise NumericalBreakdown("Hessian remained singular after ridge escalation")
        m = stack.shape[0]
        # unpivoted QR is cheap and fine while the stack has full row rank;
        # fall back to rank-revealing pivoted QR when the diagonal sags
        piv = None
        q_full, r_full = np.linalg.qr(stack.T, mode="complete")
        rdiag = np.abs(np.diag(r_full[:min(n, m), :min(n, m)]))
        if rdiag.size == 0 or rdiag.max() <= 0.0:
            rank = 0
        elif m <= n and rdiag.min() > 1e-11 * rdiag.max():
            rank = m
        else:
            q_full, r_full, piv = qr(stack.T, mode="full", pivoting=True)
            rdiag = np.abs(np.diag(r_full[:min(n, m), :min(n, m)]))
            rank = 0
            if rdiag.size and rdiag[0] > 0.0:
                rank = int(np.sum(rdiag > max(n, m) * np.finfo(float).eps * rdiag[0]))
        # direction: Newton step in the null space of the working set
        if rank >= n:
            d = np.zeros(n)
        else:
            basis = q_full[:, rank:]
            for ridge, _ in _RIDGE_LADDER:
                reduced = basis.T @ p.H @ basis
                reduced[np.diag_indices_from(reduced)] += ridge
                try:
                    y = np.linalg.solve(reduced, -(basis.T @ grad))
                except np.linalg.LinAlgError:
                    continue
                if np.all(np.isfinite(y)):
                    d = basis @ y
                    break
            else:
                raise NumericalBreakdown("reduced Hessian remained singular after ridge escalation")
        # least-squares multipliers for stack' lam = -grad (basic solution)
        lam = np.zeros(m)
        if rank:
            c = q_full[:, :rank].T @ (-grad)
            sol = solve_triangular(r_full[:rank, :rank], c)
            if piv is None:
                lam[:rank] = sol
            else:
                lam[piv[:rank]] = sol
        return d, lam[:p.n_eq], lam[p.n_eq:]

    def _kkt_residual(self, p: QpProblem, x, nu, mu_full) -> float:
        grad = p.H @ x + p.g
        if p.n_eq:
            grad += p.A_eq.T @ nu
        res = 0.0
        if p.n_in:
            grad += p.A_in.T @ mu_full
            ax = p.A_in @ x
            res = max(res, float(np.maximum(p.lower - ax, 0.0).max(initial=0.0)))
            res = max(res, float(np.maximum(ax - p.upper, 0.0).max(initial=0.0)))
            slack = np.minimum(np.abs(ax - p.lower), np.abs(p.upper - ax))
            res = max(res, float((np.abs(mu_full) * slack).max(initial=0.0)))
        if p.n_eq:
            res = max(res, float(np.abs(p.A_eq @ x - p.b_eq).max(initial=0.0)))
        return max(res, float(np.abs(grad).max(initial=0.0)))

    def _violation(self, p: QpProblem, x: np.ndarray) -> float:
        v = 0.0
        if p.n_eq:
            v = max(v, float(np.abs(p.A_eq @ x - p.b_eq).max(initial=0.0)))
        if p.n_in:
            ax = p.A_in @ x
            v = max(v, float(np.maximum(p.lower - ax, 0.0).max(initial=0.0)))
            v = max(v, float(np.maximum(ax - p.upper, 0.0).max(initial=0.0)))
        return v

    def _phase1(self, p: QpProblem, x0: np.ndarray | None) -> np.ndarray | None:
        """Find a feasible point, or None if the constraints are inconsistent."""
        x = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).copy()
        if self._violation(p, x) <= self.feas_tol:
            return x
        if p.n_eq:
            correction, *_ = np.linalg.lstsq(p.A_eq, p.b_eq - p.A_eq @ x, rcond=None)
            x = x + correction
            if np.abs(p.A_eq @ x - p.b_eq).max() > 1e-8 * max(1.0, np.abs(p.b_eq).max()):
                return None                     # equality system inconsistent
        if p.n_in is None or p.n_in == 0:
            return x
        if self._violation(p, x) <= self.feas_tol:
            return x
        # minimize squared inequality violation over the equality manifold
        from scipy.linalg import qr, solve_triangular
        from scipy.optimize import minimize

        basis = null_space(p.A_eq) if p.n_eq else np.eye(p.n)
        if basis.size == 0:
            return x if self._violation(p, x) <= 10 * self.feas_tol else None

        def cost_grad(y):
            z = x + basis @ y
            az = p.A_in @ z
            lo = np.maximum(p.lower - az, 0.0)
            up = np.maximum(az - p.upper, 0.0)
            c = 0.5 * float(lo @ lo + up @ up)
            grad = basis.T @ (p.A_in.T @ (up - lo))
            return c, grad

        out = minimize(cost_grad, np.zeros(basis.shape[1]), jac=True, method="L-BFGS-B",
                       options={"maxiter": 1000, "ftol": 1e-18, "gtol": 1e-14})
        x = x + basis @ out.x
        if p.n_in:
            ax = p.A_in @ x
            if np.any(p.lower - ax > 10 * self.feas_tol) or np.any(ax - p.upper > 10 * self.feas_tol):
                return None
        return x

    def _warm_shortcut(self, p: QpProblem, warm: tuple[tuple[int, int], ...],
                       h_inv: np.ndarray) -> QpSolution | None:
        """Solve the EQP on the cached working set and accept it outright if
        every KKT condition verifies; the dominant case in a control loop
        whose active set persists between consecutive steps."""
        rows = [row for row, _ in warm]
        if p.n_eq and rows:
            stack = np.vstack([p.A_eq, p.A_in[rows]])
        elif p.n_eq:
            stack = p.A_eq
        elif rows:
            stack = p.A_in[rows]
        else:
            stack = None
        if stack is None:
            x = -(h_inv @ p.g)
            lam = np.empty(0)
        else:
            b = np.empty(stack.shape[0])
            b[:p.n_eq] = p.b_eq if p.n_eq else ()
            for k, (row, side) in enumerate(warm):
                bound = p.upper[row] if side > 0 else p.lower[row]
                if not np.isfinite(bound):
                    return None
                b[p.n_eq + k] = bound
            hia = h_inv @ stack.T
            try:
                lam = np.linalg.solve(stack @ hia, -(b + stack @ (h_inv @ p.g)))
            except np.linalg.LinAlgError:
                return None
            # sign feasibility of the bound multipliers
            for k, (row, side) in enumerate(warm):
                lam_k = lam[p.n_eq + k]
                if (side > 0 and lam_k < -self.dual_tol) or (side < 0 and lam_k > self.dual_tol):
                    return None
            x = -(h_inv @ (p.g + stack.T @ lam))
            if not np.all(np.isfinite(x)) or np.abs(stack @ x - b).max() > 1e-9 * max(1.0, np.abs(b).max()):
                return None
        if not np.all(np.isfinite(x)):
            return None
        if p.n_in:
            ax = p.A_in @ x
            if np.any(p.lower - ax > self.feas_tol) or np.any(ax - p.upper > self.feas_tol):
                return None
        nu = lam[:p.n_eq] if stack is not None else np.zeros(p.n_eq)
        mu_full = np.zeros(p.n_in)
        for k, (row, _) in enumerate(warm):
            mu_full[row] = lam[p.n_eq + k]
        residual = self._kkt_residual(p, x, nu, mu_full)
        if residual > 1e-8 * max(1.0, np.abs(p.g).max()):
            return None
        return QpSolution(x, QpStatus.OPTIMAL, tuple(sorted(warm)), residual, 1, nu, mu_full)

    # -- public -------------------------------------------------------------

    def solve(self, p: QpProblem, warm_start: tuple[tuple[int, int], ...] = (),
              x0: np.ndarray | None = None) -> QpSolution:
        m_in = p.n_in
        if m_in and np.any(p.lower > p.upper + self.feas_tol):
            return QpSolution(np.zeros(p.n), QpStatus.INFEASIBLE, (), np.inf, 0)

        h_shortcut = None
        if warm_start is not None:
            h_eff0 = p.H.copy()
            h_eff0[np.diag_indices(p.n)] += _RIDGE_LADDER[0][0]
            try:
                h_shortcut = np.linalg.inv(h_eff0)
            except np.linalg.LinAlgError:
                h_shortcut = None
            if h_shortcut is not None:
                shortcut = self._warm_shortcut(p, tuple(warm_start), h_shortcut)
                if shortcut is not None:
                    return shortcut

        x = self._phase1(p, x0)
        if x is None:
            return QpSolution(np.zeros(p.n), QpStatus.INFEASIBLE, (), np.inf, 0)

        active: list[tuple[int, int]] = []
        if m_in:
            ax = p.A_in @ x
            seen = set()
            for row, side in warm_start:
                if not (0 <= row < m_in) or side not in (-1, 1) or row in seen:
                    continue
                bound = p.upper[row] if side > 0 else p.lower[row]
                if np.isfinite(bound) and abs(ax[row] - bound) <= 1e-9:
                    active.append((int(row), int(side)))
                    seen.add(row)
            # pick up every other row that is tight at the start point
            tight_up = np.isfinite(p.upper) & (np.abs(ax - p.upper) <= 1e-11)
            tight_lo = np.isfinite(p.lower) & (np.abs(ax - p.lower) <= 1e-11)
            for row in np.flatnonzero(tight_up | tight_lo):
                if int(row) not in seen:
                    active.append((int(row), 1 if tight_up[row] else -1))

        if h_shortcut is not None:
            h_inv = h_shortcut
        else:
            h_eff = p.H.copy()
            h_eff[np.diag_indices(p.n)] += _RIDGE_LADDER[0][0]
            try:
                h_inv = np.linalg.inv(h_eff)
            except np.linalg.LinAlgError:
                h_inv = None

        nu = np.zeros(p.n_eq)
        mu = np.zeros(0)
        # constraints whose wrong-signed multiplier proved to be an artifact
        # of working-set degeneracy (drop immediately re-blocked at alpha=0)
        pinned: set[tuple[int, int]] = set()
        last_drop: tuple[int, int] | None = None
        # after an unblocked full step the iterate sits on the working-set
        # optimum; the rank-revealing path then gives the authoritative
        # stationarity verdict (the fast path can drift along quasi-null
        # directions of ill-conditioned working sets)
        verify = False
        for iteration in range(1, self.max_iter + 1):
            grad = p.H @ x + p.g
            used_qr = verify or h_inv is None
            d, nu, mu = self._eqp(p, active, grad, None if used_qr else h_inv)
            verify = False
            stationary = np.abs(d).max(initial=0.0) <= 1e-10 * (1.0 + np.abs(x).max())
            if stationary and not used_qr and active:
                # drop decisions need trustworthy multipliers: rank-revealing path
                d, nu, mu = self._eqp(p, active, grad, None)
                stationary = np.abs(d).max(initial=0.0) <= 1e-10 * (1.0 + np.abs(x).max())
            if stationary:
                # stationary on the working set: check multiplier signs
                drop_k, drop_wrong = -1, self.dual_tol
                for k, (row, side) in enumerate(active):
                    if (row, side) in pinned:
                        continue
                    wrong = -mu[k] if side > 0 else mu[k]
                    if wrong > drop_wrong:
                        drop_k, drop_wrong = k, wrong
                if drop_k >= 0:
                    last_drop = active.pop(drop_k)
                    continue
                mu_full = np.zeros(m_in)
                for k, (row, _) in enumerate(active):
                    mu_full[row] = mu[k]
                residual = self._kkt_residual(p, x, nu, mu_full)
                return QpSolution(x, QpStatus.OPTIMAL, tuple(sorted(active)), residual,
                                  iteration, nu, mu_full)

            # step to the nearest blocking constraint
            alpha = 1.0
            blocker: tuple[int, int] | None = None
            if m_in:
                ad = p.A_in @ d
                ax = p.A_in @ x
                free = np.ones(m_in, dtype=bool)
                for row, _ in active:
                    free[row] = False
                limits = np.full(m_in, np.inf)
                going_up = free & (ad > 1e-13) & np.isfinite(p.upper)
                going_dn = free & (ad < -1e-13) & np.isfinite(p.lower)
                limits[going_up] = (p.upper[going_up] - ax[going_up]) / ad[going_up]
                limits[going_dn] = (p.lower[going_dn] - ax[going_dn]) / ad[going_dn]
                row = int(np.argmin(limits))
                if limits[row] < alpha:
                    alpha = float(limits[row])
                    blocker = (row, 1 if going_up[row] else -1)
            alpha = max(alpha, 0.0)
            x = x + alpha * d
            if blocker is not None:
                if blocker == last_drop and alpha <= 1e-12:
                    pinned.add(blocker)
                active.append(blocker)
            else:
                verify = True
            last_drop = None

        _, nu, mu = self._eqp(p, active, p.H @ x + p.g)
        mu_full = np.zeros(m_in)
        for k, (row, _) in enumerate(active):
            if k < mu.shape[0]:
                mu_full[row] = mu[k]
        return QpSolution(x, QpStatus.MAX_ITER, tuple(sorted(active)),
                          self._kkt_residual(p, x, nu, mu_full), self.max_iter, nu, mu_full)


def solve(p: QpProblem, warm_start: tuple[tuple[int, int], ...] = (),
          x0: np.ndarray | None = None) -> QpSolution:
    """One-shot convenience wrapper around :class:`ActiveSetSolver`."""
    return ActiveSetSolver().solve(p, warm_start, x0)
