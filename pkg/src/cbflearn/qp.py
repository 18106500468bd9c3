"""Dense strictly-convex QP solver (dual active set).

Solves min 1/2 x'Hx + f'x subject to Gx <= h for positive definite H.
The method starts from the unconstrained minimiser and adds violated
constraints one at a time, taking partial dual steps and dropping working
constraints whose multipliers would go negative.  It needs no feasible
starting point and detects infeasibility as an unbounded dual step.  After
every working-set change the equality-constrained subproblem is re-solved
directly, which keeps the iterates free of accumulated drift; all linear
algebra is direct dense solves, exact to machine precision at the small
sizes used here (condensed MPC over a 20-step horizon).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class QpResult:
    x: np.ndarray
    lam: np.ndarray            # multipliers, one per constraint row
    active: list               # indices of constraints tight at the solution
    status: str                # "optimal" or "infeasible"
    iterations: int


def _eq_solve(hess, f, g_mat, h_vec, work):
    """Solve the equality-constrained subproblem on the working set.

    Returns (x, lam_work) or None when the KKT system is singular.
    """
    n = f.shape[0]
    k = len(work)
    if k == 0:
        return np.linalg.solve(hess, -f), []
    g_w = g_mat[work]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = hess
    kkt[:n, n:] = g_w.T
    kkt[n:, :n] = g_w
    rhs = np.concatenate([-f, h_vec[work]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], list(sol[n:])


def solve_qp(hess, f, g_mat=None, h_vec=None, tol=1e-10, max_iter=None):
    """Solve the QP; returns a :class:`QpResult`.

    ``g_mat``/``h_vec`` may be None or empty for an unconstrained problem.
    """
    hess = np.asarray(hess, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    x = np.linalg.solve(hess, -f)
    if g_mat is None or len(g_mat) == 0:
        return QpResult(x, np.zeros(0), [], "optimal", 0)
    g_mat = np.asarray(g_mat, dtype=float).reshape(-1, n)
    h_vec = np.asarray(h_vec, dtype=float).reshape(-1)
    n_con = g_mat.shape[0]
    if max_iter is None:
        max_iter = 100 * (n_con + 1)

    work = []                  # working set (constraint indices)
    lam_work = []              # matching multipliers
    iters = 0
    while iters < max_iter:
        iters += 1
        viol = g_mat @ x - h_vec
        for j in work:         # working rows are tight by construction
            viol[j] = -np.inf
        p = int(np.argmax(viol))
        if viol[p] <= tol * (1.0 + abs(h_vec[p])):
            lam = np.zeros(n_con)
            for j, lj in zip(work, lam_work):
                lam[j] = max(0.0, lj)
            return QpResult(x, lam, sorted(work), "optimal", iters)

        g_p = g_mat[p]
        lam_p = 0.0
        added = False
        while not added:
            iters += 1
            if iters > max_iter:
                break
            k = len(work)
            if k:
                g_w = g_mat[work]
                kkt = np.zeros((n + k, n + k))
                kkt[:n, :n] = hess
                kkt[:n, n:] = g_w.T
                kkt[n:, :n] = g_w
                rhs = np.concatenate([g_p, np.zeros(k)])
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
                z = sol[:n]
                r = sol[n:]
            else:
                z = np.linalg.solve(hess, g_p)
                r = np.zeros(0)

            denom = float(g_p @ z)           # = z'Hz >= 0
            cur_viol = float(g_p @ x - h_vec[p])
            # a primal step needs real curvature along z; with a working
            # set of full rank (or a near-dependent normal) only the dual
            # step is available
            z_ok = (len(work) < n
                    and denom > 1e-11 * (1.0 + float(g_p @ g_p)))
            t2 = cur_viol / denom if z_ok else np.inf
            t1 = np.inf
            j_drop = -1
            for idx, lj in enumerate(lam_work):
                if r[idx] > 1e-12:
                    cand = lj / r[idx]
                    if cand < t1:
                        t1 = cand
                        j_drop = idx
            t = min(t1, t2)
            if not np.isfinite(t):
                return QpResult(x, np.zeros(n_con), sorted(work),
                                "infeasible", iters)
            if z_ok:
                x = x - t * z
            for idx in range(len(work)):
                lam_work[idx] -= t * r[idx]
            lam_p += t
            if t == t2:
                work.append(p)
                lam_work.append(lam_p)
                added = True
            else:
                work.pop(j_drop)
                lam_work.pop(j_drop)

        # clean re-solve on the new working set: removes the drift a long
        # primal step can introduce; drop any multiplier the exact solve
        # turns negative
        while True:
            res = _eq_solve(hess, f, g_mat, h_vec, work)
            if res is None:
                break
            x_new, lam_new = res
            if not lam_new:
                x = x_new
                lam_work = []
                break
            worst = int(np.argmin(lam_new))
            if lam_new[worst] >= -tol:
                x = x_new
                lam_work = lam_new
                break
            work.pop(worst)

    raise RuntimeError(f"active-set QP did not terminate in {max_iter} iterations")
