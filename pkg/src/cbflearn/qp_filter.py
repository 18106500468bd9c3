"""Barrier-constrained safety filter: minimally invasive control projection.

The filter solves min ||u_ref - u||^2 subject to a . u >= rhs, a single
linear half-space in control space, which admits a closed form: return the
reference when it already satisfies the constraint, otherwise project onto
the constraint boundary.  The generic active-set QP in :mod:`cbflearn.qp`
serves as the independent oracle for this closed form in the tests.
"""

from dataclasses import dataclass

import numpy as np

from .barrier import lie_derivatives

# below this squared norm the constraint is treated as control-independent
DEGENERATE_GAIN_SQ = 1e-24


class InfeasibleConstraintError(RuntimeError):
    """The filter constraint cannot be met: the control gain of the barrier
    vanished while the state-only condition fails.  Callers fall back to
    the predictive controller."""


@dataclass(frozen=True)
class CbfQp:
    """One filter problem: reference control, constraint a . u >= rhs."""

    u_ref: np.ndarray
    a: np.ndarray
    rhs: float


@dataclass(frozen=True)
class SafeControl:
    """Filtered control with constraint activity and slack a . u - rhs."""

    u: np.ndarray
    active: bool
    slack: float


def solve_cbf_qp(problem):
    """Closed-form projection of u_ref onto the constraint half-space."""
    u_ref = np.asarray(problem.u_ref, dtype=float)
    a = np.asarray(problem.a, dtype=float)
    rhs = float(problem.rhs)
    if not np.all(np.isfinite(a)):
        raise ValueError("constraint gain must be finite")
    au = float(a @ u_ref)
    if au >= rhs:
        return SafeControl(u_ref.copy(), False, au - rhs)
    norm_sq = float(a @ a)
    if norm_sq < DEGENERATE_GAIN_SQ:
        if rhs <= 0.0:
            return SafeControl(u_ref.copy(), False, au - rhs)
        raise InfeasibleConstraintError(
            "control-independent constraint violated (|a| ~ 0, rhs > 0)")
    u = u_ref + a * ((rhs - au) / norm_sq)
    return SafeControl(u, True, float(a @ u) - rhs)


def build_cbf_qp(bar, system, alpha, x, u_ref):
    """Assemble the filter problem at state x for barrier ``bar``."""
    x = np.asarray(x, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    lie = lie_derivatives(bar, system, x)
    h = bar.value(x)
    return CbfQp(u_ref=u_ref, a=lie.lg.copy(), rhs=-lie.lf - alpha(h))


def filtered_policy(bar, system, alpha, perf):
    """Compose a reference policy with the safety filter.

    Returns a callable state -> SafeControl.  Infeasibility propagates so
    callers can switch to the predictive fallback.
    """

    def policy(x):
        return solve_cbf_qp(build_cbf_qp(bar, system, alpha, x, perf(x)))

    return policy
