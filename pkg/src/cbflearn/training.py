"""Dataset handling, loss terms, and the guarded training loop.

Each epoch runs one real episode under the barrier-filtered controller,
with the filtered policy periodically rolled out on the model; if the
prediction reaches an unsafe state the predicted states are harvested into
the unsafe dataset and the predictive controller supplies the real control
for that step.  Because the model is exact, a clean rollout certifies the
next ``r_cbfqp`` real steps, so checks run every ``r_cbfqp`` steps while
clean; after a dirty check the next step is checked again (the filtered
policy is never trusted on a stretch no rollout has cleared).  Near the
constraint boundary the raw reference policy can additionally be rolled
out to harvest unsafe data.  The real trajectory must stay safe
throughout: any real violation is a hard failure.  After the episode one
full pass of minibatch updates runs over the safe dataset.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .barrier import (ConstraintSet, DistanceFunctions, LearnedBarrier,
                      ballbeam_constraints, integrator_constraints,
                      make_hand_barrier)
from .dynamics import make_system
from .mpc import LinearMpcPolicy, NonlinearMpcPolicy, discretize_zoh, lqr_gain
from .network import AdamState, adam_step, init_network
from .qp_filter import CbfQp, InfeasibleConstraintError, solve_cbf_qp
from .simulate import Trajectory

ORIGIN_ROLLOUT = 1

# constraint margin used by the predictive fallback only (see
# make_training_setup); far below every acceptance tolerance
FALLBACK_MARGIN = 5e-4


class SafetyViolationError(RuntimeError):
    """The real trajectory left the constraint set during training."""


class EpisodeAbortedError(RuntimeError):
    """The predictive fallback itself failed; the episode cannot continue."""


@dataclass
class LossWeights:
    """Weights for the unsafe hinge (lambda1) and the correction size
    regulariser (lambda2)."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class TrainConfig:
    """Loop constants for one training run (all positive)."""

    epochs: int
    episode_steps: int
    dt: float
    batch_size: int = 64
    lr: float = 1e-3
    r_cbfqp: int = 10
    eps_c: float = 0.1
    rollout_horizon: int = 50
    gamma: float = 5.0
    lambda1: float = 0.0
    lambda2: float = 1.0
    seed: int = 0
    init_low: float = -15.0
    init_high: float = -5.0
    perf_rollouts: bool = True
    dataset_capacity: int = 100_000
    mpc_horizon: int = 20
    hidden: int = 128

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        for name in ("episode_steps", "batch_size", "r_cbfqp",
                     "rollout_horizon", "mpc_horizon", "dataset_capacity",
                     "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.dt <= 0 or self.lr <= 0 or self.eps_c <= 0 or self.gamma <= 0:
            raise ValueError("dt, lr, eps_c and gamma must be positive")
        if self.r_cbfqp > self.episode_steps:
            raise ValueError("r_cbfqp must not exceed episode_steps")
        if self.rollout_horizon < self.r_cbfqp:
            # a clean rollout must cover the gap until the next check
            raise ValueError("rollout_horizon must be at least r_cbfqp")
        LossWeights(self.lambda1, self.lambda2)


@dataclass
class EpochStats:
    epoch: int
    loss_total: float
    loss_safe: float
    loss_unsafe: float
    loss_gradcond: float
    loss_reg: float
    n_safe: int
    n_unsafe: int
    violations: int
    mpc_invocations: int
    mpc_time_s: float
    wall_time_s: float

    def as_dict(self):
        return {
            "epoch": self.epoch,
            "loss_total": self.loss_total,
            "loss_safe": self.loss_safe,
            "loss_unsafe": self.loss_unsafe,
            "loss_gradcond": self.loss_gradcond,
            "loss_reg": self.loss_reg,
            "n_safe": self.n_safe,
            "n_unsafe": self.n_unsafe,
            "violations": self.violations,
            "mpc_invocations": self.mpc_invocations,
            "mpc_time_s": self.mpc_time_s,
            "wall_time_s": self.wall_time_s,
        }


class SafeBuffer:
    """FIFO ring of safe samples with their static loss features."""

    def __init__(self, capacity, n, m):
        self.capacity = capacity
        self.xs = np.zeros((capacity, n))
        self.us = np.zeros((capacity, m))
        self.fgu = np.zeros((capacity, n))
        self.hand_h = np.zeros(capacity)
        self.hand_g = np.zeros((capacity, n))
        self.dplus = np.zeros(capacity)
        self.count = 0
        self._head = 0

    def append(self, x, u, fgu, hand_h, hand_g, dplus):
        i = self._head
        self.xs[i] = x
        self.us[i] = u
        self.fgu[i] = fgu
        self.hand_h[i] = hand_h
        self.hand_g[i] = hand_g
        self.dplus[i] = dplus
        self._head = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def views(self):
        k = self.count
        return (self.xs[:k], self.us[:k], self.fgu[:k],
                self.hand_h[:k], self.hand_g[:k], self.dplus[:k])


class UnsafeBuffer:
    """FIFO ring of unsafe samples harvested from model-based rollouts."""

    def __init__(self, capacity, n):
        self.capacity = capacity
        self.xs = np.zeros((capacity, n))
        self.hand_h = np.zeros(capacity)
        self.dminus = np.zeros(capacity)
        self.origin = np.zeros(capacity, dtype=np.uint8)
        self.count = 0
        self._head = 0

    def append_batch(self, xs, hand_h, dminus, origin=ORIGIN_ROLLOUT):
        for j in range(xs.shape[0]):
            i = self._head
            self.xs[i] = xs[j]
            self.hand_h[i] = hand_h[j]
            self.dminus[i] = dminus[j]
            self.origin[i] = origin
            self._head = (i + 1) % self.capacity
            self.count = min(self.count + 1, self.capacity)

    def views(self):
        k = self.count
        return self.xs[:k], self.hand_h[:k], self.dminus[:k], self.origin[:k]


@dataclass
class Dataset:
    safe: SafeBuffer
    unsafe: UnsafeBuffer

    @classmethod
    def create(cls, capacity, n, m):
        return cls(SafeBuffer(capacity, n, m), UnsafeBuffer(capacity, n))

    @property
    def n_safe(self):
        return self.safe.count

    @property
    def n_unsafe(self):
        return self.unsafe.count


# ---------------------------------------------------------------------------
# loss terms (reference implementations; training uses the fused kernel)
# ---------------------------------------------------------------------------

def loss_safe(bar, xs, dist):
    """Mean hinge pushing the barrier above the boundary distance."""
    xs = np.asarray(xs, dtype=float)
    h = bar.value_batch(xs)
    return float(np.mean(np.maximum(0.0, dist.d_plus_batch(xs) - h)))


def loss_unsafe(bar, xd, dist):
    """Mean hinge pushing the barrier below d_minus on unsafe samples."""
    xd = np.asarray(xd, dtype=float)
    if xd.shape[0] == 0:
        return 0.0
    h = bar.value_batch(xd)
    return float(np.mean(np.maximum(0.0, h - dist.d_minus_batch(xd))))


def loss_gradient(bar, system, alpha, xs, us):
    """Mean hinge on the filter-constraint slack at stored (x, u) pairs."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    total = 0.0
    for x, u in zip(xs, us):
        h, grad = bar.value_and_gradient(x)
        s = float(grad @ system.derivative(x, u)) + alpha(h)
        total += max(0.0, -s)
    return total / xs.shape[0]


def loss_regularizer(bar, xs):
    """Mean squared network correction over the batch."""
    xs = np.asarray(xs, dtype=float)
    delta = bar.value_batch(xs) - bar.hand.value_batch(xs)
    return float(np.mean(delta * delta))


def total_loss(bar, system, alpha, xs, us, xd, weights, dist):
    """Weighted sum of all four terms."""
    return (loss_safe(bar, xs, dist)
            + weights.lambda1 * loss_unsafe(bar, xd, dist)
            + loss_gradient(bar, system, alpha, xs, us)
            + weights.lambda2 * loss_regularizer(bar, xs))


# ---------------------------------------------------------------------------
# training setup: systems wired to their controllers and kernels
# ---------------------------------------------------------------------------

@dataclass
class TrainingSetup:
    system: object
    hand: object
    constraints: object
    dist: object
    q: np.ndarray
    r: np.ndarray
    k_gain: np.ndarray
    mpc_policy: object
    rollout_filtered: object     # (x0, steps, dt, gamma, net) -> states, n_valid, qp_fail
    rollout_perf: object         # (x0, steps, dt) -> states, n_valid
    sample_init: object          # (rng, lo, hi) -> x0


def _dummy_weights(n):
    return (np.zeros((1, n)), np.zeros(1), np.zeros((1, 1)), np.zeros(1),
            np.zeros(1), 0.0)


def build_setup(name, system_params=None, hand_params=None,
                constraint_params=None):
    """Wire a system name to its barrier, constraints and cost weights."""
    system_params = dict(system_params or {})
    hand_params = dict(hand_params or {})
    constraint_params = dict(constraint_params or {})
    system = make_system(name, **system_params)

    if name == "integrator2d":
        hand = make_hand_barrier("integrator_vel", **hand_params)
        constraints = integrator_constraints(**constraint_params)
        q = np.diag([10.0, 10.0])
        r = np.array([[1.0]])
    elif name == "ball_on_beam":
        hand = make_hand_barrier("ballbeam_angle", **hand_params)
        constraints = ballbeam_constraints(**constraint_params)
        q = np.diag([10.0, 1.0, 1.0, 1.0])
        r = np.array([[1.0]])
    else:
        raise ValueError(f"unknown system {name!r}")
    return system, hand, constraints, q, r


def make_training_setup(system_name, cfg, system_params=None,
                        hand_params=None, constraint_params=None):
    """Full setup for :func:`train`, including controllers and rollouts."""
    system, hand, constraints, q, r = build_setup(
        system_name, system_params, hand_params, constraint_params)
    dist = DistanceFunctions(constraints)
    origin = np.zeros(system.n)
    lin = system.linearize(origin, np.zeros(system.m))
    k_gain = lqr_gain(lin, q, r, cfg.dt)
    k_vec = np.ascontiguousarray(k_gain[0])

    # the fallback enforces the constraints with a tiny margin: its job is
    # to keep the real trajectory inside the exact bound, and a solver
    # riding the bound at its own precision would tip across it
    margined = [(i, s, b - FALLBACK_MARGIN) for i, s, b in constraints.rows]

    if system.name == "integrator2d":
        a_d, b_d = discretize_zoh(lin.a_mat, lin.b_mat, cfg.dt)
        mpc_policy = LinearMpcPolicy(a_d, b_d, q, r, cfg.mpc_horizon,
                                     margined)
        cap = hand.params["cap"]

        def rollout_filtered(x0, steps, dt, gamma, net):
            if net is None:
                return kernels.rollout_filter_integrator(
                    x0, steps, dt, k_vec, gamma, cap,
                    *_dummy_weights(system.n), False)
            return kernels.rollout_filter_integrator(
                x0, steps, dt, k_vec, gamma, cap, *net.kernel_weights(), True)

        def rollout_perf(x0, steps, dt):
            return kernels.rollout_lqr_integrator(x0, steps, dt, k_vec)

        def sample_init(rng, lo, hi):
            return np.array([rng.uniform(lo, hi), 0.0])

    else:
        mpc_policy = NonlinearMpcPolicy(
            system, cfg.dt, q, r, cfg.mpc_horizon,
            ConstraintSet(margined, labels=constraints.labels))
        gamma0 = hand.params["gamma0"]
        beta_bar = hand.params["beta_bar"]
        mb, grav, ib = system.m_ball, system.g_grav, system.i_beam

        def rollout_filtered(x0, steps, dt, gamma, net):
            if net is None:
                return kernels.rollout_filter_ballbeam(
                    x0, steps, dt, k_vec, gamma, gamma0, beta_bar,
                    mb, grav, ib, *_dummy_weights(system.n), False)
            return kernels.rollout_filter_ballbeam(
                x0, steps, dt, k_vec, gamma, gamma0, beta_bar,
                mb, grav, ib, *net.kernel_weights(), True)

        def rollout_perf(x0, steps, dt):
            return kernels.rollout_lqr_ballbeam(x0, steps, dt, k_vec,
                                                mb, grav, ib)

        def sample_init(rng, lo, hi):
            return np.array([rng.uniform(lo, hi), 0.0, 0.0, 0.0])

    return TrainingSetup(system, hand, constraints, dist, q, r, k_vec,
                         mpc_policy, rollout_filtered, rollout_perf,
                         sample_init)


# ---------------------------------------------------------------------------
# episode collection and the epoch update
# ---------------------------------------------------------------------------

def _harvest_unsafe(setup, dataset, states):
    """Store predicted unsafe states; returns how many were found."""
    if states.shape[0] == 0:
        return 0
    mask = ~setup.constraints.safe_mask(states)
    if not np.any(mask):
        return 0
    bad = states[mask]
    dataset.unsafe.append_batch(bad, setup.hand.value_batch(bad),
                                setup.dist.d_minus_batch(bad))
    return int(bad.shape[0])


def collect_episode(setup, cfg, net, dataset, rng, epoch=0):
    """Run one guarded episode, appending to the dataset.

    Returns ``(trajectory, mpc_invocations, mpc_time, n_unsafe_found)``.
    Raises :class:`SafetyViolationError` if the real trajectory ever leaves
    the constraint set and :class:`EpisodeAbortedError` when the predictive
    fallback is infeasible.
    """
    system = setup.system
    bar = LearnedBarrier(setup.hand, net)
    dt = cfg.dt
    steps = cfg.episode_steps
    x = setup.sample_init(rng, cfg.init_low, cfg.init_high)
    if not setup.constraints.is_safe(x):
        raise ValueError("sampled initial state is unsafe")

    n, m = system.n, system.m
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, n))
    u_ref_log = np.empty((steps, m))
    u_safe_log = np.empty((steps, m))
    h_log = np.empty(steps + 1)
    tags = []
    states[0] = x
    mpc_count = 0
    mpc_time = 0.0
    unsafe_found = 0
    # a clean rollout certifies the next r_cbfqp steps (the model is
    # exact); until one passes, every step must be checked, so the first
    # step always is and a dirty check forces a re-check at the next step
    next_check = 1

    for k in range(steps):
        step_no = k + 1
        u_ref = np.atleast_1d(-(setup.k_gain @ x))
        h, grad = bar.value_and_gradient(x)
        lf = float(grad @ system.drift(x))
        lg = grad @ system.influence(x)
        try:
            u = solve_cbf_qp(CbfQp(u_ref, lg, -lf - cfg.gamma * h)).u
        except InfeasibleConstraintError:
            u = None

        if step_no >= next_check:
            pred, n_valid, qp_fail = setup.rollout_filtered(
                x, cfg.rollout_horizon, dt, cfg.gamma, net)
            pred = pred[1:n_valid]
            found = _harvest_unsafe(setup, dataset, pred)
            unsafe_found += found
            blown_up = n_valid < cfg.rollout_horizon + 1
            if found or qp_fail or blown_up:
                u = None
                next_check = step_no + 1
            else:
                next_check = step_no + cfg.r_cbfqp

        if cfg.perf_rollouts and setup.constraints.near_boundary(x, cfg.eps_c):
            pred = setup.rollout_perf(x, cfg.rollout_horizon, dt)[0]
            unsafe_found += _harvest_unsafe(setup, dataset, pred[1:])

        tag = "cbfqp"
        if u is None:
            t0 = time.perf_counter()
            try:
                u = setup.mpc_policy(x)
            except Exception as exc:
                raise EpisodeAbortedError(
                    f"epoch {epoch} step {step_no}: predictive fallback "
                    f"failed ({exc})") from exc
            mpc_time += time.perf_counter() - t0
            mpc_count += 1
            tag = "mpc"

        dataset.safe.append(x, u, system.derivative(x, u),
                            setup.hand.value(x), setup.hand.gradient(x),
                            setup.dist.d_plus(x))
        u_ref_log[k] = u_ref
        u_safe_log[k] = u
        h_log[k] = h
        tags.append(tag)
        x = system.step(x, u, dt)
        states[k + 1] = x
        if not setup.constraints.is_safe(x):
            raise SafetyViolationError(
                f"epoch {epoch} step {step_no}: real state "
                f"{np.array2string(x, precision=6)} violates the constraints")
    h_log[steps] = bar.value(x)
    traj = Trajectory(times, states, u_ref_log, u_safe_log, h_log, tags)
    return traj, mpc_count, mpc_time, unsafe_found


def _epoch_update(cfg, net, adam, dataset, rng, warn_state):
    """One full pass of minibatch updates over the safe dataset."""
    xs, us, fgu, hand_h, hand_g, dplus = dataset.safe.views()
    n_safe = xs.shape[0]
    n = xs.shape[1]
    order = rng.permutation(n_safe)
    use_unsafe = cfg.lambda1 > 0.0 and dataset.n_unsafe > 0
    if (dataset.n_unsafe > 0 and 0.0 < cfg.lambda1 <= 1.0
            and not warn_state.get("lambda1", False)):
        warn_state["lambda1"] = True
        warnings.warn("lambda1 <= 1 while unsafe data exists; the unsafe "
                      "hinge is usually weighted above one", RuntimeWarning)
    xd_all, hand_hd_all, dminus_all, _ = dataset.unsafe.views()
    empty_x = np.zeros((0, n))
    empty_v = np.zeros(0)

    sums = np.zeros(4)
    batches = 0
    for start in range(0, n_safe, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        if use_unsafe:
            idx_d = rng.integers(0, dataset.n_unsafe,
                                 size=min(cfg.batch_size, dataset.n_unsafe))
            xd = np.ascontiguousarray(xd_all[idx_d])
            hand_hd = np.ascontiguousarray(hand_hd_all[idx_d])
            dminus = np.ascontiguousarray(dminus_all[idx_d])
        else:
            xd, hand_hd, dminus = empty_x, empty_v, empty_v
        out = kernels.mlp3_loss_grad(
            *net.kernel_weights(),
            np.ascontiguousarray(xs[idx]), np.ascontiguousarray(fgu[idx]),
            np.ascontiguousarray(hand_h[idx]),
            np.ascontiguousarray(hand_g[idx]),
            np.ascontiguousarray(dplus[idx]),
            xd, hand_hd, dminus,
            cfg.gamma, cfg.lambda1, cfg.lambda2)
        gw1, gb1, gw2, gb2, gw3, gb3 = out[:6]
        grads = [(gw1, gb1), (gw2, gb2),
                 (gw3.reshape(1, -1), np.array([gb3]))]
        adam_step(adam, net, grads)
        sums += np.array(out[6:])
        batches += 1
    means = sums / max(batches, 1)
    l_h, l_d, l_grad, l_reg = means
    total = l_h + cfg.lambda1 * l_d + l_grad + cfg.lambda2 * l_reg
    return total, l_h, l_d, l_grad, l_reg


def train(system_name, cfg, system_params=None, hand_params=None,
          constraint_params=None, setup=None, progress=None):
    """Run the full guarded learning loop.

    Returns ``(net, stats)`` with one :class:`EpochStats` per epoch.  The
    run is deterministic for a fixed seed.
    """
    if setup is None:
        setup = make_training_setup(system_name, cfg, system_params,
                                    hand_params, constraint_params)
    net = init_network(cfg.seed,
                       [setup.system.n, cfg.hidden, cfg.hidden, 1])
    adam = AdamState(net, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    dataset = Dataset.create(cfg.dataset_capacity, setup.system.n,
                             setup.system.m)
    stats = []
    warn_state = {}
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if hasattr(setup.mpc_policy, "reset"):
            setup.mpc_policy.reset()
        _, mpc_count, mpc_time, _ = collect_episode(
            setup, cfg, net, dataset, rng, epoch)
        losses = _epoch_update(cfg, net, adam, dataset, rng, warn_state)
        wall = time.perf_counter() - t0
        stats.append(EpochStats(
            epoch=epoch,
            loss_total=losses[0], loss_safe=losses[1], loss_unsafe=losses[2],
            loss_gradcond=losses[3], loss_reg=losses[4],
            n_safe=dataset.n_safe, n_unsafe=dataset.n_unsafe,
            violations=0,
            mpc_invocations=mpc_count, mpc_time_s=mpc_time,
            wall_time_s=wall))
        if progress is not None:
            progress(stats[-1])
    return net, stats
