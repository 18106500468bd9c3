"""Predictive and optimal controllers: discrete LQR, linear MPC, nonlinear MPC.

The linear MPC condenses the stacked-control quadratic program and solves
it exactly with the dense active-set solver.  The nonlinear MPC is direct
single shooting with a Gauss-Newton sequential quadratic scheme: linearise
the rollout (exact RK4 sensitivities from the analytic dynamics
Jacobians), solve the resulting constrained QP for a step, and accept it
through a backtracking line search on an L1 merit of cost plus constraint
violation.  Warm starts shift the previous solution by one step.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .qp import solve_qp


class RiccatiError(RuntimeError):
    """Riccati fixed-point iteration failed to converge."""


class MpcInfeasibleError(RuntimeError):
    """The receding-horizon problem has no feasible solution."""


def discretize_zoh(a_mat, b_mat, dt):
    """Zero-order-hold discretisation via the augmented matrix exponential."""
    n = a_mat.shape[0]
    m = b_mat.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_mat * dt
    aug[:n, n:] = b_mat * dt
    exp_aug = scipy.linalg.expm(aug)
    return exp_aug[:n, :n], exp_aug[:n, n:]


def dare_fixed_point(a_d, b_d, q, r, tol=1e-10, max_iter=100_000):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates the Riccati recursion until the update norm drops below
    ``tol``; raises :class:`RiccatiError` on non-convergence.
    """
    a_d = np.asarray(a_d, dtype=float)
    b_d = np.asarray(b_d, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    p = q.copy()
    for _ in range(max_iter):
        btp = b_d.T @ p
        gain = np.linalg.solve(r + btp @ b_d, btp @ a_d)
        p_next = q + a_d.T @ p @ a_d - a_d.T @ p @ b_d @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) <= tol:
            btp = b_d.T @ p_next
            gain = np.linalg.solve(r + btp @ b_d, btp @ a_d)
            return gain, p_next
        p = p_next
    raise RiccatiError(f"no convergence within {max_iter} iterations")


def lqr_gain(lin, q, r, dt):
    """Infinite-horizon discrete gain for a linearised model; u = -K x."""
    a_d, b_d = discretize_zoh(lin.a_mat, lin.b_mat, dt)
    gain, _ = dare_fixed_point(a_d, b_d, q, r)
    return gain


@dataclass
class LinearMpcProblem:
    a_d: np.ndarray
    b_d: np.ndarray
    q: np.ndarray
    r: np.ndarray
    horizon: int
    con_rows: list          # (state_index, sign, bound) rows applied to x_1..x_T
    x0: np.ndarray


@dataclass
class NonlinearMpcProblem:
    system: object
    dt: float
    q: np.ndarray
    r: np.ndarray
    horizon: int
    constraints: object     # ConstraintSet
    x0: np.ndarray


@dataclass
class MpcSolution:
    controls: np.ndarray            # (T, m)
    predicted_states: np.ndarray    # (T+1, n)
    status: str                     # optimal | max_iter | infeasible
    objective: float
    lam: np.ndarray = None
    kkt: tuple = None               # (hess, f, g_mat, h_vec) of the final QP
    iterations: int = 0
    merit_history: list = field(default_factory=list)


def _condense(a_d, b_d, horizon):
    """Prediction matrices: X = phi x0 + gamma U (states x_1..x_T stacked)."""
    n, m = b_d.shape
    phi = np.zeros((horizon * n, n))
    gamma = np.zeros((horizon * n, horizon * m))
    a_pow = np.eye(n)
    pows = [a_pow]
    for _ in range(horizon):
        a_pow = a_d @ a_pow
        pows.append(a_pow)
    for i in range(1, horizon + 1):
        phi[(i - 1) * n:i * n] = pows[i]
        for k in range(i):
            gamma[(i - 1) * n:i * n, k * m:(k + 1) * m] = pows[i - 1 - k] @ b_d
    return phi, gamma


def solve_linear_mpc(problem):
    """Exact solution of the condensed linear MPC quadratic program."""
    a_d = np.asarray(problem.a_d, dtype=float)
    b_d = np.asarray(problem.b_d, dtype=float)
    n, m = b_d.shape
    horizon = int(problem.horizon)
    x0 = np.asarray(problem.x0, dtype=float)

    phi, gamma = _condense(a_d, b_d, horizon)
    q_bar = np.kron(np.eye(horizon), problem.q)
    r_bar = np.kron(np.eye(horizon), problem.r)
    hess = gamma.T @ q_bar @ gamma + r_bar
    hess = 0.5 * (hess + hess.T)
    f = gamma.T @ q_bar @ (phi @ x0)

    g_rows = []
    h_vals = []
    for i in range(1, horizon + 1):
        xi_free = phi[(i - 1) * n:i * n] @ x0
        block = gamma[(i - 1) * n:i * n]
        for idx, sign, bound in problem.con_rows:
            g_rows.append(sign * block[idx])
            h_vals.append(bound - sign * xi_free[idx])
    g_mat = np.array(g_rows) if g_rows else None
    h_vec = np.array(h_vals) if h_vals else None

    res = solve_qp(hess, f, g_mat, h_vec)
    controls = res.x.reshape(horizon, m)
    states = np.empty((horizon + 1, n))
    states[0] = x0
    for k in range(horizon):
        states[k + 1] = a_d @ states[k] + b_d @ controls[k]
    objective = 0.0
    for i in range(1, horizon + 1):
        objective += 0.5 * states[i] @ problem.q @ states[i]
        objective += 0.5 * controls[i - 1] @ problem.r @ controls[i - 1]
    return MpcSolution(
        controls=controls,
        predicted_states=states,
        status=res.status,
        objective=float(objective),
        lam=res.lam,
        kkt=(hess, f, g_mat, h_vec),
        iterations=res.iterations,
    )


def _rk4_sensitivities(system, x, u, dt):
    """One RK4 step plus exact d(next)/dx and d(next)/du."""
    n = system.n
    eye = np.eye(n)
    k1 = system.derivative(x, u)
    j1 = system.jacobian(x, u)
    g1 = system.influence(x)
    x2 = x + 0.5 * dt * k1
    k2 = system.derivative(x2, u)
    j2x = system.jacobian(x2, u)
    j2 = j2x @ (eye + 0.5 * dt * j1)
    g2 = j2x @ (0.5 * dt * g1) + system.influence(x2)
    x3 = x + 0.5 * dt * k2
    k3 = system.derivative(x3, u)
    j3x = system.jacobian(x3, u)
    j3 = j3x @ (eye + 0.5 * dt * j2)
    g3 = j3x @ (0.5 * dt * g2) + system.influence(x3)
    x4 = x + dt * k3
    k4 = system.derivative(x4, u)
    j4x = system.jacobian(x4, u)
    j4 = j4x @ (eye + dt * j3)
    g4 = j4x @ (dt * g3) + system.influence(x4)
    x_next = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    a_k = eye + (dt / 6.0) * (j1 + 2 * j2 + 2 * j3 + j4)
    b_k = (dt / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
    return x_next, a_k, b_k


def _nl_rollout(system, x0, controls, dt):
    states = np.empty((controls.shape[0] + 1, system.n))
    states[0] = x0
    for k, u in enumerate(controls):
        states[k + 1] = system.step(states[k], u, dt)
    return states


def _nl_objective(states, controls, q, r):
    obj = 0.0
    for i in range(1, states.shape[0]):
        obj += 0.5 * states[i] @ q @ states[i]
        obj += 0.5 * controls[i - 1] @ r @ controls[i - 1]
    return obj


def _nl_violation(constraints, states):
    margins = constraints.margins_batch(states[1:])
    return float(np.sum(np.maximum(0.0, margins)))


MERIT_PENALTY = 1e3
FEAS_TOL = 1e-4
STEP_TOL = 1e-6


def solve_nonlinear_mpc(problem, warm_start=None, max_iter=50):
    """Single-shooting SQP solve of the nonlinear receding-horizon problem."""
    system = problem.system
    horizon = int(problem.horizon)
    n, m = system.n, system.m
    dt = float(problem.dt)
    q, r = problem.q, problem.r
    x0 = np.asarray(problem.x0, dtype=float)

    controls = (np.array(warm_start, dtype=float).reshape(horizon, m)
                if warm_start is not None else np.zeros((horizon, m)))
    r_bar = np.kron(np.eye(horizon), r)

    def merit(ctrl):
        states = _nl_rollout(system, x0, ctrl, dt)
        return (_nl_objective(states, ctrl, q, r)
                + MERIT_PENALTY * _nl_violation(problem.constraints, states),
                states)

    phi, states = merit(controls)
    merit_history = [phi]
    best = None
    converged = False
    iterations = 0

    for _ in range(max_iter):
        iterations += 1
        # linearise the rollout: sensitivities of every predicted state
        sens = np.zeros((horizon, n, horizon * m))
        x = x0
        for k in range(horizon):
            _, a_k, b_k = _rk4_sensitivities(system, x, controls[k], dt)
            if k == 0:
                sens[0, :, :m] = b_k
            else:
                sens[k] = a_k @ sens[k - 1]
                sens[k][:, k * m:(k + 1) * m] = b_k
            x = states[k + 1]  # keep the nominal trajectory exact

        hess = r_bar.copy()
        grad = r_bar @ controls.reshape(-1)
        g_rows = []
        h_vals = []
        for i in range(1, horizon + 1):
            s_i = sens[i - 1]
            hess += s_i.T @ q @ s_i
            grad += s_i.T @ (q @ states[i])
            for idx, sign, bound in problem.constraints.rows:
                g_rows.append(sign * s_i[idx])
                h_vals.append(bound - sign * states[i][idx])
        hess = 0.5 * (hess + hess.T) + 1e-10 * np.eye(horizon * m)
        g_mat = np.array(g_rows)
        h_vec = np.array(h_vals)

        res = solve_qp(hess, grad, g_mat, h_vec)
        if res.status != "optimal":
            # soften: slack per constraint with a linear penalty
            n_u = horizon * m
            n_c = g_mat.shape[0]
            hess_aug = np.zeros((n_u + n_c, n_u + n_c))
            hess_aug[:n_u, :n_u] = hess
            hess_aug[n_u:, n_u:] = 1e-6 * np.eye(n_c)
            grad_aug = np.concatenate([grad, MERIT_PENALTY * np.ones(n_c)])
            g_aug = np.zeros((2 * n_c, n_u + n_c))
            g_aug[:n_c, :n_u] = g_mat
            g_aug[:n_c, n_u:] = -np.eye(n_c)
            g_aug[n_c:, n_u:] = -np.eye(n_c)
            h_aug = np.concatenate([h_vec, np.zeros(n_c)])
            res = solve_qp(hess_aug, grad_aug, g_aug, h_aug)
            delta = res.x[:n_u].reshape(horizon, m)
        else:
            delta = res.x.reshape(horizon, m)

        step = 1.0
        accepted = False
        delta_norm = float(np.max(np.abs(delta))) if delta.size else 0.0
        for _ in range(25):
            trial = controls + step * delta
            phi_trial, states_trial = merit(trial)
            if phi_trial <= phi - 1e-8 * step * delta_norm ** 2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        controls = trial
        states = states_trial
        phi = phi_trial
        merit_history.append(phi)

        viol = _nl_violation(problem.constraints, states)
        if viol <= FEAS_TOL:
            obj = _nl_objective(states, controls, q, r)
            if best is None or obj < best[0]:
                best = (obj, controls.copy(), states.copy())
        if step * delta_norm <= STEP_TOL:
            converged = True
            break

    if best is None:
        return MpcSolution(
            controls=controls,
            predicted_states=states,
            status="infeasible",
            objective=float(_nl_objective(states, controls, q, r)),
            iterations=iterations,
            merit_history=merit_history,
        )
    obj, controls, states = best
    return MpcSolution(
        controls=controls,
        predicted_states=states,
        status="optimal" if converged else "max_iter",
        objective=float(obj),
        iterations=iterations,
        merit_history=merit_history,
    )


class LinearMpcPolicy:
    """Receding-horizon policy: first control of the linear MPC from x."""

    def __init__(self, a_d, b_d, q, r, horizon, con_rows):
        self.a_d = np.asarray(a_d, dtype=float)
        self.b_d = np.asarray(b_d, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.horizon = int(horizon)
        self.con_rows = list(con_rows)
        self.last_solve_time = 0.0

    def __call__(self, x):
        t0 = time.perf_counter()
        sol = solve_linear_mpc(LinearMpcProblem(
            self.a_d, self.b_d, self.q, self.r, self.horizon,
            self.con_rows, np.asarray(x, dtype=float)))
        self.last_solve_time = time.perf_counter() - t0
        if sol.status != "optimal":
            raise MpcInfeasibleError(f"linear MPC returned {sol.status}")
        return sol.controls[0].copy()


class NonlinearMpcPolicy:
    """Receding-horizon policy with a shifted warm start between calls."""

    def __init__(self, system, dt, q, r, horizon, constraints):
        self.system = system
        self.dt = float(dt)
        self.q = np.asarray(q, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.horizon = int(horizon)
        self.constraints = constraints
        self._warm = None
        self.last_solve_time = 0.0

    def reset(self):
        self._warm = None

    def __call__(self, x):
        t0 = time.perf_counter()
        sol = solve_nonlinear_mpc(
            NonlinearMpcProblem(self.system, self.dt, self.q, self.r,
                                self.horizon, self.constraints,
                                np.asarray(x, dtype=float)),
            warm_start=self._warm)
        self.last_solve_time = time.perf_counter() - t0
        if sol.status == "infeasible":
            self._warm = None
            raise MpcInfeasibleError("nonlinear MPC found no feasible iterate")
        shifted = np.roll(sol.controls, -1, axis=0)
        shifted[-1] = sol.controls[-1]
        self._warm = shifted
        return sol.controls[0].copy()
