"""Closed-loop simulation helpers for evaluation and baselines."""

from dataclasses import dataclass

import numpy as np

from .qp_filter import CbfQp, solve_cbf_qp


@dataclass
class Trajectory:
    """One closed-loop run: states x_0..x_N, controls applied at x_0..x_{N-1}."""

    times: np.ndarray          # (N+1,)
    states: np.ndarray         # (N+1, n)
    u_ref: np.ndarray          # (N, m)
    u_safe: np.ndarray         # (N, m)
    h_values: np.ndarray       # (N+1,) barrier value along the run
    tags: list                 # (N,) controller tag per applied control

    @property
    def steps(self):
        return self.u_safe.shape[0]


def simulate_filtered(system, bar, alpha, perf, x0, steps, dt):
    """Run the barrier-filtered reference policy (no predictive guard)."""
    x = np.asarray(x0, dtype=float)
    n = system.n
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, n))
    u_ref_log = np.empty((steps, system.m))
    u_safe_log = np.empty((steps, system.m))
    h_log = np.empty(steps + 1)
    tags = []
    states[0] = x
    for k in range(steps):
        u_ref = np.atleast_1d(np.asarray(perf(x), dtype=float))
        h, grad = bar.value_and_gradient(x)
        lf = float(grad @ system.drift(x))
        lg = grad @ system.influence(x)
        sc = solve_cbf_qp(CbfQp(u_ref, lg, -lf - alpha(h)))
        u_ref_log[k] = u_ref
        u_safe_log[k] = sc.u
        h_log[k] = h
        tags.append("cbfqp")
        x = system.step(x, sc.u, dt)
        states[k + 1] = x
    h_log[steps] = bar.value(x)
    return Trajectory(times, states, u_ref_log, u_safe_log, h_log, tags)


def simulate_policy(system, policy, x0, steps, dt, bar=None, tag="policy"):
    """Run a raw policy (for the pure-MPC and pure-LQR baselines)."""
    x = np.asarray(x0, dtype=float)
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, system.n))
    u_log = np.empty((steps, system.m))
    h_log = np.zeros(steps + 1)
    tags = []
    states[0] = x
    for k in range(steps):
        u = np.atleast_1d(np.asarray(policy(x), dtype=float))
        u_log[k] = u
        if bar is not None:
            h_log[k] = bar.value(x)
        tags.append(tag)
        x = system.step(x, u, dt)
        states[k + 1] = x
    if bar is not None:
        h_log[steps] = bar.value(x)
    return Trajectory(times, states, u_log.copy(), u_log, h_log, tags)
