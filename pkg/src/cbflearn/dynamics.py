"""Control-affine benchmark systems: dynamics, RK4 stepping, linearization.

Two systems are provided.  The double integrator is linear with position
and velocity states and an acceleration input.  The ball-on-beam has state
[r, beta, rdot, betadot] (ball position along the beam, beam angle and
their rates) driven by a beam torque; the paper-style physical constants
(ball mass, gravity, beam inertia) are configurable and default to
plausible bench-scale values.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """State or control vector has the wrong length for the system."""


class IntegrationDivergedError(RuntimeError):
    """An integration step produced a non-finite state."""


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step simulation settings: step size and episode length."""

    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


@dataclass(frozen=True)
class Linearization:
    """First-order model d(delta x)/dt = A delta_x + B delta_u about a point."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    about_x: np.ndarray
    about_u: np.ndarray


class ControlAffineSystem:
    """Base class: xdot = F(x) + G(x) u with analytic Jacobians."""

    name = "base"
    n = 0
    m = 0
    state_labels = ()

    def _check(self, x, u=None):
        if len(x) != self.n:
            raise DimensionError(
                f"{self.name}: state has length {len(x)}, expected {self.n}")
        if u is not None and len(u) != self.m:
            raise DimensionError(
                f"{self.name}: control has length {len(u)}, expected {self.m}")

    def drift(self, x):
        """F(x)."""
        raise NotImplementedError

    def influence(self, x):
        """G(x), shape (n, m)."""
        raise NotImplementedError

    def derivative(self, x, u):
        """F(x) + G(x) u."""
        raise NotImplementedError

    def jacobian(self, x, u):
        """d(F + G u)/dx, shape (n, n), analytic."""
        raise NotImplementedError

    def step(self, x, u, dt):
        """One classical RK4 step with u held constant over the step."""
        raise NotImplementedError

    def linearize(self, x0, u0):
        """Analytic linearization: A = d(F + G u)/dx, B = G(x0)."""
        x0 = np.asarray(x0, dtype=float)
        u0 = np.asarray(u0, dtype=float)
        self._check(x0, u0)
        return Linearization(self.jacobian(x0, u0), self.influence(x0), x0, u0)

    def _finite_or_raise(self, x):
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(
                f"{self.name}: integration produced a non-finite state")
        return x


class DoubleIntegrator(ControlAffineSystem):
    """xdot = [v, u]: A = [[0, 1], [0, 0]], B = [0, 1]^T."""

    name = "integrator2d"
    n = 2
    m = 1
    state_labels = ("x", "xdot")

    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        return self.A @ x

    def influence(self, x):
        return self.B.copy()

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return kernels.deriv_integrator(x, float(u[0]))

    def jacobian(self, x, u):
        return self.A.copy()

    def step(self, x, u, dt):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return self._finite_or_raise(kernels.rk4_integrator(x, float(u[0]), dt))


class BallOnBeam(ControlAffineSystem):
    """Ball rolling on a torque-driven beam.

    Attributes:
        m_ball: ball mass [kg]
        g_grav: gravitational acceleration [m/s^2]
        i_beam: beam moment of inertia [kg m^2]

    The effective inertia i_beam + m_ball r^2 stays positive for all real r,
    so the dynamics are globally smooth.
    """

    name = "ball_on_beam"
    n = 4
    m = 1
    state_labels = ("r", "beta", "rdot", "betadot")

    def __init__(self, m_ball=0.5, g_grav=9.81, i_beam=0.5):
        if m_ball <= 0.0 or g_grav <= 0.0 or i_beam <= 0.0:
            raise ValueError("physical constants must be strictly positive")
        self.m_ball = float(m_ball)
        self.g_grav = float(g_grav)
        self.i_beam = float(i_beam)

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        return kernels.deriv_ballbeam(x, 0.0, self.m_ball, self.g_grav, self.i_beam)

    def influence(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        den = self.i_beam + self.m_ball * x[0] ** 2
        return np.array([[0.0], [0.0], [0.0], [1.0 / den]])

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return kernels.deriv_ballbeam(x, float(u[0]), self.m_ball, self.g_grav,
                                      self.i_beam)

    def jacobian(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        mb, grav, ib = self.m_ball, self.g_grav, self.i_beam
        r, beta, rdot, betadot = x
        den = ib + mb * r * r
        num = float(u[0]) - 2.0 * mb * r * rdot * betadot - mb * grav * r * np.cos(beta)
        jac = np.zeros((4, 4))
        jac[0, 2] = 1.0
        jac[1, 3] = 1.0
        jac[2, 0] = (5.0 / 7.0) * betadot ** 2
        jac[2, 1] = -(5.0 / 7.0) * grav * np.cos(beta)
        jac[2, 3] = (10.0 / 7.0) * r * betadot
        dnum_dr = -2.0 * mb * rdot * betadot - mb * grav * np.cos(beta)
        jac[3, 0] = (dnum_dr * den - num * 2.0 * mb * r) / den ** 2
        jac[3, 1] = mb * grav * r * np.sin(beta) / den
        jac[3, 2] = -2.0 * mb * r * betadot / den
        jac[3, 3] = -2.0 * mb * r * rdot / den
        return jac

    def step(self, x, u, dt):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        self._check(x, u)
        return self._finite_or_raise(
            kernels.rk4_ballbeam(x, float(u[0]), dt, self.m_ball, self.g_grav,
                                 self.i_beam))


_SYSTEMS = {
    "integrator2d": DoubleIntegrator,
    "ball_on_beam": BallOnBeam,
}

SYSTEM_NAMES = tuple(sorted(_SYSTEMS))


def make_system(name, **params):
    """Instantiate a benchmark system by its string id."""
    try:
        cls = _SYSTEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown system {name!r}; available: {', '.join(SYSTEM_NAMES)}"
        ) from None
    return cls(**params)
