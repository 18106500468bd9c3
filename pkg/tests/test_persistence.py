from pathlib import Path

import numpy as np
import pytest

from cbflearn import (LearnedBarrier, Trajectory, WeightsFormatError,
                      WeightsVersionError, export_contour, export_trajectory,
                      forward, init_network, load_weights, make_hand_barrier,
                      save_weights, verify_manifest, write_manifest,
                      write_metrics)
from cbflearn.persistence import render_contour_svg, sha256_file, zero_crossings
from cbflearn.training import EpochStats

GOLDEN = Path(__file__).parent / "golden"


def golden_net():
    return init_network(42, [2, 3, 3, 1])


def golden_trajectory():
    times = np.array([0.0, 0.02, 0.04])
    states = np.array([[0.0, 1.0], [0.02, 1.0], [0.04, 1.0]])
    u = np.array([[0.5], [-0.25]])
    h = np.array([1.0, 1.0, 1.0])
    return Trajectory(times, states, u.copy(), u, h, ["cbfqp", "mpc"])


def test_weights_round_trip_exact(tmp_path):
    net = init_network(5, [2, 128, 128, 1])
    path = tmp_path / "w.txt"
    save_weights(net, path)
    loaded = load_weights(path)
    for a, b in zip(net.layers, loaded.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation == b.activation
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=2)
        assert forward(net, x)[0][0] == forward(loaded, x)[0][0]


def test_weights_save_is_idempotent(tmp_path):
    net = golden_net()
    p1 = tmp_path / "a.txt"
    p2 = tmp_path / "b.txt"
    save_weights(net, p1)
    save_weights(load_weights(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_weights_truncated_file_errors(tmp_path):
    net = golden_net()
    path = tmp_path / "w.txt"
    save_weights(net, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:5]) + "\n")
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_weights_version_mismatch(tmp_path):
    net = golden_net()
    path = tmp_path / "w.txt"
    save_weights(net, path)
    text = path.read_text().replace("cbflearn-weights v1",
                                    "cbflearn-weights v9", 1)
    path.write_text(text)
    with pytest.raises(WeightsVersionError) as err:
        load_weights(path)
    assert "v9" in str(err.value) and "v1" in str(err.value)


def test_weights_garbage_header(tmp_path):
    path = tmp_path / "w.txt"
    path.write_text("not a weights file\n")
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_weights_bad_float_reports_line(tmp_path):
    net = golden_net()
    path = tmp_path / "w.txt"
    save_weights(net, path)
    text = path.read_text().splitlines()
    text[3] = "w oops 1.0"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(WeightsFormatError) as err:
        load_weights(path)
    assert "line" in str(err.value)


def test_trajectory_export_and_empty(tmp_path):
    traj = golden_trajectory()
    path = tmp_path / "t.csv"
    export_trajectory(traj, ("x", "xdot"), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,x,xdot,u_ref,u_safe,h_value,controller"
    assert len(lines) == 3
    assert lines[1].endswith("cbfqp")
    empty = Trajectory(np.array([0.0]), np.zeros((1, 2)), np.zeros((0, 1)),
                       np.zeros((0, 1)), np.array([1.0]), [])
    export_trajectory(empty, ("x", "xdot"), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == [
        "time,x,xdot,u_ref,u_safe,h_value,controller"]


def test_contour_export_hand_only_exact(tmp_path):
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), None)
    xs, ys, values = export_contour(bar, (-1.0, 1.0), (0.0, 4.0), (3, 3),
                                    tmp_path / "c.csv")
    np.testing.assert_array_equal(ys, [0.0, 2.0, 4.0])
    for i in range(3):
        np.testing.assert_allclose(values[i], 2.0 - ys, atol=0.0)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,xdot,h_value"
    assert len(lines) == 10


def test_contour_degenerate_grid(tmp_path):
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), None)
    xs, ys, values = export_contour(bar, (0.0, 0.0), (1.0, 1.0), (1, 1),
                                    tmp_path / "c.csv")
    assert values.shape == (1, 1)
    render_contour_svg(xs, ys, values, tmp_path / "c.svg", true_level=3.0)
    assert (tmp_path / "c.svg").read_text().startswith("<svg")


def test_zero_crossings_linear_barrier():
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), None)
    ys = np.linspace(0.0, 4.0, 41)
    xs = np.array([-5.0, -1.0])
    values = np.array([2.0 - ys, 2.0 - ys])
    crossings = zero_crossings(xs, ys, values)
    np.testing.assert_allclose(crossings, [2.0, 2.0], atol=1e-12)


def test_svg_deterministic(tmp_path):
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), None)
    xs, ys, values = export_contour(bar, (-15.0, 0.0), (0.0, 4.0), (16, 21),
                                    tmp_path / "c.csv")
    render_contour_svg(xs, ys, values, tmp_path / "a.svg", true_level=3.0)
    render_contour_svg(xs, ys, values, tmp_path / "b.svg", true_level=3.0)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_manifest_detects_corruption(tmp_path):
    net = golden_net()
    wpath = tmp_path / "w.txt"
    save_weights(net, wpath)
    write_manifest(tmp_path / "manifest.json", "train", {"system": "x"}, 0,
                   {"w.txt": wpath}, 1.0)
    assert verify_manifest(tmp_path / "manifest.json") == {"w.txt": True}
    raw = bytearray(wpath.read_bytes())
    raw[100] ^= 0x01
    wpath.write_bytes(bytes(raw))
    assert verify_manifest(tmp_path / "manifest.json") == {"w.txt": False}


def test_metrics_stream(tmp_path):
    stats = [EpochStats(epoch=1, loss_total=1.0, loss_safe=0.5,
                        loss_unsafe=0.0, loss_gradcond=0.25, loss_reg=0.25,
                        n_safe=10, n_unsafe=0, violations=0,
                        mpc_invocations=2, mpc_time_s=0.1, wall_time_s=0.5)]
    path = tmp_path / "m.ndjson"
    write_metrics(stats, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert '"epoch": 1' in lines[0]


def test_golden_files(tmp_path):
    """Formats stay byte-stable against the committed golden files."""
    save_weights(golden_net(), tmp_path / "weights.txt")
    export_trajectory(golden_trajectory(), ("x", "xdot"),
                      tmp_path / "trajectory.csv")
    bar = LearnedBarrier(make_hand_barrier("integrator_vel"), None)
    export_contour(bar, (-2.0, 0.0), (0.0, 4.0), (3, 5),
                   tmp_path / "contour.csv")
    for name in ("weights.txt", "trajectory.csv", "contour.csv"):
        generated = (tmp_path / name).read_bytes()
        assert generated == (GOLDEN / name).read_bytes(), name


def test_sha256_file(tmp_path):
    p = tmp_path / "x"
    p.write_text("abc")
    assert sha256_file(p) == ("ba7816bf8f01cfea414140de5dae2223"
                              "b00361a396177a9cb410ff61f20015ad")
