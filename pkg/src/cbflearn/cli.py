"""Command-line interface.

Subcommands: train, eval, sweep-gamma, contour, bench, baseline.  Every
command writes its artifacts plus a run manifest (resolved config, seed,
artifact checksums) into the output directory.  The base output directory
defaults to ./runs and can be overridden with --out or the CBFLEARN_OUT
environment variable.
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import persistence
from .barrier import LearnedBarrier, LinearClassK, make_hand_barrier
from .config import (ConfigError, constraint_params, hand_params,
                     load_config_file, resolve_config, system_params,
                     to_train_config)
from .mpc import (MpcInfeasibleError, NonlinearMpcProblem,
                  solve_nonlinear_mpc, solve_linear_mpc, LinearMpcProblem)
from .network import init_network
from .qp_filter import CbfQp, solve_cbf_qp
from .simulate import simulate_filtered, simulate_policy
from .training import (EpisodeAbortedError, SafetyViolationError,
                       make_training_setup, train)


def _add_common(parser, needs_weights=False):
    parser.add_argument("--system", choices=["integrator2d", "ball_on_beam"],
                        help="benchmark system id")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--gamma", type=float,
                        help="class-K slope used by the safety filter")
    parser.add_argument("--gamma0", type=float,
                        help="handcrafted barrier slope (ball-on-beam)")
    parser.add_argument("--beta-bar", dest="beta_bar", type=float,
                        help="handcrafted beam-angle cap (ball-on-beam)")
    parser.add_argument("--eps-c", dest="eps_c", type=float,
                        help="near-boundary rollout threshold")
    if needs_weights:
        parser.add_argument("--weights", required=True,
                            help="weights file produced by train")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cbflearn",
        description="Learn a less-conservative control barrier function "
                    "from a handcrafted one, with predictive-controller "
                    "fallback keeping data collection safe.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the guarded learning loop")
    _add_common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--episode-steps", dest="episode_steps", type=int)
    p.add_argument("--r-cbfqp", dest="r_cbfqp", type=int)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="export trajectories for the handcrafted, "
                                    "freshly initialised and learned barriers")
    _add_common(p, needs_weights=True)
    p.add_argument("--x-init", dest="x_init", type=float)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("sweep-gamma", help="evaluate the learned barrier "
                                           "under several class-K slopes")
    _add_common(p, needs_weights=True)
    p.add_argument("--gammas", default="1,2,5",
                   help="comma-separated list of slopes")
    p.add_argument("--x-init", dest="x_init", type=float)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("contour", help="grid export and rendering of the "
                                       "barrier level sets")
    _add_common(p)
    p.add_argument("--weights", help="weights file (omit for the "
                                     "handcrafted barrier)")
    p.add_argument("--x-min", dest="x_min", type=float, default=-15.0)
    p.add_argument("--x-max", dest="x_max", type=float, default=0.0)
    p.add_argument("--y-min", dest="y_min", type=float, default=0.0)
    p.add_argument("--y-max", dest="y_max", type=float, default=4.0)
    p.add_argument("--nx", type=int, default=61)
    p.add_argument("--ny", type=int, default=81)

    p = sub.add_parser("bench", help="per-solve latency of the filter versus "
                                     "the predictive controllers")
    _add_common(p)
    p.add_argument("--weights", help="optional weights file")
    p.add_argument("--solves", type=int, default=1000)

    p = sub.add_parser("baseline", help="pure predictive-controller and pure "
                                        "handcrafted-filter runs")
    _add_common(p)
    p.add_argument("--x-init", dest="x_init", type=float)
    p.add_argument("--steps", type=int)
    return parser


def _resolve(args, parser):
    file_values = {}
    if args.config:
        if not Path(args.config).exists():
            parser.error(f"config file not found: {args.config}")
        try:
            file_values = load_config_file(args.config)
        except ConfigError as exc:
            parser.error(str(exc))
    overrides = {}
    for key in ("system", "seed", "gamma", "gamma0", "beta_bar", "eps_c",
                "epochs", "lr", "episode_steps", "r_cbfqp"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    try:
        return resolve_config(file_values=file_values, overrides=overrides)
    except ConfigError as exc:
        parser.error(str(exc))


def _out_dir(args, command, cfg):
    if args.out:
        out = Path(args.out)
    else:
        base = Path(os.environ.get("CBFLEARN_OUT", "runs"))
        out = base / f"{command}-{cfg.system}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(cfg):
    return make_training_setup(cfg.system, to_train_config(cfg),
                               system_params(cfg), hand_params(cfg),
                               constraint_params(cfg))


def _perf_policy(setup):
    return lambda x: np.atleast_1d(-(setup.k_gain @ x))


def _learned_barrier(cfg, weights_path, setup):
    net = persistence.load_weights(weights_path)
    if net.input_dim != setup.system.n:
        raise ConfigError(
            f"weights expect input dim {net.input_dim}, system "
            f"{setup.system.name} has n={setup.system.n}")
    return LearnedBarrier(setup.hand, net)


def _finish(out, command, cfg, artifacts, t0):
    persistence.write_manifest(
        out / "manifest.json", command, cfg.as_dict(), cfg.seed,
        {name: out / name for name in artifacts},
        time.perf_counter() - t0)


def cmd_train(args, parser):
    cfg = _resolve(args, parser)
    out = _out_dir(args, "train", cfg)
    t0 = time.perf_counter()
    progress = None
    if not args.quiet:
        def progress(s):
            print(f"epoch {s.epoch:4d}  loss {s.loss_total:9.5f}  "
                  f"safe {s.n_safe:6d}  unsafe {s.n_unsafe:6d}  "
                  f"mpc {s.mpc_invocations:3d}  {s.wall_time_s:6.2f}s")
    net, stats = train(cfg.system, to_train_config(cfg),
                       system_params(cfg), hand_params(cfg),
                       constraint_params(cfg), progress=progress)
    persistence.save_weights(net, out / "weights.txt")
    persistence.write_metrics(stats, out / "metrics.ndjson")
    _finish(out, "train", cfg, ["weights.txt", "metrics.ndjson"], t0)
    violations = sum(s.violations for s in stats)
    print(f"trained {len(stats)} epochs; real-trajectory violations: "
          f"{violations}; artifacts in {out}")
    return 0


def _eval_x0(cfg, setup, x_init):
    if cfg.system == "integrator2d":
        return np.array([x_init, 0.0])
    return np.array([x_init, 0.0, 0.0, 0.0])


def cmd_eval(args, parser):
    cfg = _resolve(args, parser)
    out = _out_dir(args, "eval", cfg)
    t0 = time.perf_counter()
    setup = _setup(cfg)
    steps = args.steps or cfg.eval_steps
    x0 = _eval_x0(cfg, setup, args.x_init if args.x_init is not None
                  else cfg.eval_init)
    alpha = LinearClassK(cfg.gamma)
    perf = _perf_policy(setup)

    variants = {
        "hand": LearnedBarrier(setup.hand, None),
        "nn_init": LearnedBarrier(
            setup.hand, init_network(cfg.seed, [setup.system.n, cfg.hidden,
                                                cfg.hidden, 1])),
        "learned": _learned_barrier(cfg, args.weights, setup),
    }
    if cfg.system == "integrator2d":
        variants["true"] = LearnedBarrier(
            make_hand_barrier("integrator_vel", cap=cfg.vel_max), None)

    artifacts = []
    for name, bar in variants.items():
        traj = simulate_filtered(setup.system, bar, alpha, perf, x0, steps,
                                 cfg.dt)
        fname = f"trajectory_{name}.csv"
        persistence.export_trajectory(traj, setup.system.state_labels,
                                      out / fname)
        artifacts.append(fname)
        peak = traj.states[:, 1].max() if cfg.system == "integrator2d" else \
            traj.states[:, 1].max()
        print(f"{name:8s} min h {traj.h_values.min():8.4f}  "
              f"peak state[1] {peak:8.4f}")
    _finish(out, "eval", cfg, artifacts, t0)
    print(f"artifacts in {out}")
    return 0


def cmd_sweep_gamma(args, parser):
    cfg = _resolve(args, parser)
    out = _out_dir(args, "sweep-gamma", cfg)
    t0 = time.perf_counter()
    setup = _setup(cfg)
    try:
        gammas = [float(v) for v in args.gammas.split(",") if v.strip()]
    except ValueError:
        parser.error(f"cannot parse --gammas {args.gammas!r}")
    if not gammas:
        parser.error("--gammas must list at least one value")
    steps = args.steps or cfg.eval_steps
    x0 = _eval_x0(cfg, setup, args.x_init if args.x_init is not None
                  else cfg.eval_init)
    bar = _learned_barrier(cfg, args.weights, setup)
    perf = _perf_policy(setup)

    artifacts = []
    summary = ["gamma,min_h,safe"]
    for g in gammas:
        traj = simulate_filtered(setup.system, bar, LinearClassK(g), perf,
                                 x0, steps, cfg.dt)
        fname = f"trajectory_gamma{g:g}.csv"
        persistence.export_trajectory(traj, setup.system.state_labels,
                                      out / fname)
        artifacts.append(fname)
        safe = bool(np.all(setup.constraints.safe_mask(traj.states)))
        min_h = float(traj.h_values.min())
        summary.append(f"{g:g},{min_h:.17g},{int(safe)}")
        print(f"gamma {g:g}: min h {min_h:9.5f}  safe {safe}")
    (out / "sweep_summary.csv").write_text("\n".join(summary) + "\n")
    artifacts.append("sweep_summary.csv")
    _finish(out, "sweep-gamma", cfg, artifacts, t0)
    print(f"artifacts in {out}")
    return 0


def cmd_contour(args, parser):
    cfg = _resolve(args, parser)
    if cfg.system != "integrator2d":
        parser.error("contour export is defined for the integrator system")
    out = _out_dir(args, "contour", cfg)
    t0 = time.perf_counter()
    setup = _setup(cfg)
    bar = (_learned_barrier(cfg, args.weights, setup) if args.weights
           else LearnedBarrier(setup.hand, None))
    xs, ys, values = persistence.export_contour(
        bar, (args.x_min, args.x_max), (args.y_min, args.y_max),
        (args.nx, args.ny), out / "contour.csv",
        labels=setup.system.state_labels)
    persistence.render_contour_svg(xs, ys, values, out / "contour.svg",
                                   true_level=cfg.vel_max,
                                   labels=setup.system.state_labels)
    _finish(out, "contour", cfg, ["contour.csv", "contour.svg"], t0)
    print(f"artifacts in {out}")
    return 0


def _bench_states(cfg, rng, count):
    if cfg.system == "integrator2d":
        states = np.column_stack([rng.uniform(-15.0, 0.0, count),
                                  rng.uniform(0.0, 2.9, count)])
    else:
        states = np.column_stack([rng.uniform(0.0, 1.2, count),
                                  rng.uniform(-0.2, 0.45, count),
                                  rng.uniform(-1.0, 1.0, count),
                                  rng.uniform(-1.0, 1.0, count)])
    return states


def run_bench(cfg, setup, bar, solves, rng):
    """Time the filter and the predictive controllers at matched states.

    Returns a dict of latency arrays keyed by solver name.
    """
    states = _bench_states(cfg, rng, solves)
    alpha = LinearClassK(cfg.gamma)
    system = setup.system
    perf = _perf_policy(setup)

    filter_times = np.empty(solves)
    for i, x in enumerate(states):
        t0 = time.perf_counter()
        u_ref = perf(x)
        h, grad = bar.value_and_gradient(x)
        lf = float(grad @ system.drift(x))
        lg = grad @ system.influence(x)
        solve_cbf_qp(CbfQp(u_ref, lg, -lf - alpha(h)))
        filter_times[i] = time.perf_counter() - t0

    out = {"cbf_qp": filter_times}
    if cfg.system == "integrator2d":
        from .mpc import discretize_zoh
        lin = system.linearize(np.zeros(system.n), np.zeros(system.m))
        a_d, b_d = discretize_zoh(lin.a_mat, lin.b_mat, cfg.dt)
        times = np.empty(solves)
        for i, x in enumerate(states):
            t0 = time.perf_counter()
            solve_linear_mpc(LinearMpcProblem(a_d, b_d, setup.q, setup.r,
                                              cfg.mpc_horizon,
                                              setup.constraints.rows, x))
            times[i] = time.perf_counter() - t0
        out["linear_mpc"] = times
    else:
        times = np.empty(solves)
        for i, x in enumerate(states):
            t0 = time.perf_counter()
            solve_nonlinear_mpc(NonlinearMpcProblem(
                system, cfg.dt, setup.q, setup.r, cfg.mpc_horizon,
                setup.constraints, x))
            times[i] = time.perf_counter() - t0
        out["nonlinear_mpc"] = times
    return out


def cmd_bench(args, parser):
    cfg = _resolve(args, parser)
    out = _out_dir(args, "bench", cfg)
    t0 = time.perf_counter()
    setup = _setup(cfg)
    bar = (_learned_barrier(cfg, args.weights, setup) if args.weights
           else LearnedBarrier(setup.hand, None))
    rng = np.random.default_rng(cfg.seed)
    results = run_bench(cfg, setup, bar, args.solves, rng)
    lines = ["solver,solves,median_s,p95_s"]
    for name, times in results.items():
        med = float(np.median(times))
        p95 = float(np.percentile(times, 95))
        lines.append(f"{name},{len(times)},{med:.9f},{p95:.9f}")
        print(f"{name:14s} median {med * 1e6:10.1f} us   "
              f"p95 {p95 * 1e6:10.1f} us   ({len(times)} solves)")
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    _finish(out, "bench", cfg, ["bench.csv"], t0)
    return 0


def cmd_baseline(args, parser):
    cfg = _resolve(args, parser)
    out = _out_dir(args, "baseline", cfg)
    t0 = time.perf_counter()
    setup = _setup(cfg)
    steps = args.steps or cfg.eval_steps
    x0 = _eval_x0(cfg, setup, args.x_init if args.x_init is not None
                  else cfg.eval_init)
    hand_bar = LearnedBarrier(setup.hand, None)
    alpha = LinearClassK(cfg.gamma)
    perf = _perf_policy(setup)

    traj = simulate_filtered(setup.system, hand_bar, alpha, perf, x0, steps,
                             cfg.dt)
    persistence.export_trajectory(traj, setup.system.state_labels,
                                  out / "trajectory_hand_filter.csv")
    if hasattr(setup.mpc_policy, "reset"):
        setup.mpc_policy.reset()
    traj_mpc = simulate_policy(setup.system, setup.mpc_policy, x0, steps,
                               cfg.dt, bar=hand_bar, tag="mpc")
    persistence.export_trajectory(traj_mpc, setup.system.state_labels,
                                  out / "trajectory_pure_mpc.csv")
    _finish(out, "baseline", cfg,
            ["trajectory_hand_filter.csv", "trajectory_pure_mpc.csv"], t0)
    print(f"artifacts in {out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-gamma": cmd_sweep_gamma,
    "contour": cmd_contour,
    "bench": cmd_bench,
    "baseline": cmd_baseline,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (SafetyViolationError, EpisodeAbortedError,
            MpcInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, persistence.WeightsFormatError,
            persistence.WeightsVersionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
