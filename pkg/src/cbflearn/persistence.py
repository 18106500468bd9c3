"""Versioned text serialisation for weights, trajectories, and run manifests.

All formats are plain text and deterministic byte-for-byte given identical
inputs.  Floats are written with up to 17 significant digits, which
round-trips IEEE double exactly, so load(save(net)) reproduces the stored
values bit for bit.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .network import ACTIVATIONS, Layer, Network

WEIGHTS_MAGIC = "cbflearn-weights"
WEIGHTS_VERSION = "v1"


class WeightsFormatError(ValueError):
    """Malformed weights file (reported with line context)."""


class WeightsVersionError(ValueError):
    """Weights file written by an incompatible format version."""


def _fmt(value):
    return format(float(value), ".17g")


def save_weights(net, path):
    """Write a network to the versioned text format."""
    lines = [f"{WEIGHTS_MAGIC} {WEIGHTS_VERSION}", f"layers {len(net.layers)}"]
    for layer in net.layers:
        n_out, n_in = layer.weight.shape
        lines.append(f"layer {n_out} {n_in} {layer.activation}")
        for row in layer.weight:
            lines.append("w " + " ".join(_fmt(v) for v in row))
        lines.append("b " + " ".join(_fmt(v) for v in layer.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path):
    """Parse a weights file back into a :class:`Network`."""
    text = Path(path).read_text()
    lines = text.splitlines()

    def fail(lineno, message):
        raise WeightsFormatError(f"{path}: line {lineno}: {message}")

    if not lines:
        raise WeightsFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != WEIGHTS_MAGIC:
        fail(1, f"expected '{WEIGHTS_MAGIC} <version>' header, got {lines[0]!r}")
    if head[1] != WEIGHTS_VERSION:
        raise WeightsVersionError(
            f"{path}: file version {head[1]} is not supported "
            f"(this build reads {WEIGHTS_VERSION})")
    if len(lines) < 2 or not lines[1].startswith("layers "):
        fail(2, "expected 'layers <count>'")
    try:
        n_layers = int(lines[1].split()[1])
    except (IndexError, ValueError):
        fail(2, f"bad layer count in {lines[1]!r}")

    layers = []
    pos = 2
    for k in range(n_layers):
        if pos >= len(lines):
            fail(len(lines), f"file truncated: expected layer {k} header")
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "layer":
            fail(pos + 1, f"expected 'layer <n_out> <n_in> <activation>', "
                          f"got {lines[pos]!r}")
        try:
            n_out, n_in = int(parts[1]), int(parts[2])
        except ValueError:
            fail(pos + 1, f"bad layer dimensions in {lines[pos]!r}")
        activation = parts[3]
        if activation not in ACTIVATIONS:
            fail(pos + 1, f"unknown activation {activation!r}")
        pos += 1
        weight = np.empty((n_out, n_in))
        for i in range(n_out):
            if pos >= len(lines) or not lines[pos].startswith("w "):
                fail(min(pos + 1, len(lines)),
                     f"expected weight row {i} of layer {k}")
            vals = lines[pos].split()[1:]
            if len(vals) != n_in:
                fail(pos + 1, f"expected {n_in} values, got {len(vals)}")
            try:
                weight[i] = [float(v) for v in vals]
            except ValueError:
                fail(pos + 1, "unparsable float in weight row")
            pos += 1
        if pos >= len(lines) or not lines[pos].startswith("b "):
            fail(min(pos + 1, len(lines)), f"expected bias row of layer {k}")
        vals = lines[pos].split()[1:]
        if len(vals) != n_out:
            fail(pos + 1, f"expected {n_out} bias values, got {len(vals)}")
        try:
            bias = np.array([float(v) for v in vals])
        except ValueError:
            fail(pos + 1, "unparsable float in bias row")
        pos += 1
        layers.append(Layer(weight, bias, activation))
    return Network(layers)


# ---------------------------------------------------------------------------
# delimited exports
# ---------------------------------------------------------------------------

def export_trajectory(traj, state_labels, path):
    """Write a closed-loop run as delimited text, one row per applied step."""
    m = traj.u_safe.shape[1]
    u_ref_cols = ["u_ref"] if m == 1 else [f"u_ref{i}" for i in range(m)]
    u_cols = ["u_safe"] if m == 1 else [f"u_safe{i}" for i in range(m)]
    header = ["time", *state_labels, *u_ref_cols, *u_cols, "h_value",
              "controller"]
    lines = [",".join(header)]
    for k in range(traj.steps):
        row = [_fmt(traj.times[k])]
        row += [_fmt(v) for v in traj.states[k]]
        row += [_fmt(v) for v in traj.u_ref[k]]
        row += [_fmt(v) for v in traj.u_safe[k]]
        row.append(_fmt(traj.h_values[k]))
        row.append(traj.tags[k])
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def export_contour(bar, x_range, y_range, shape, path, labels=("x", "xdot")):
    """Evaluate the barrier on a rectangular grid and write it out.

    ``shape`` is (nx, ny); rows are emitted in row-major grid order.
    Returns (xs, ys, values) with values of shape (nx, ny).
    """
    nx, ny = shape
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    grid = np.empty((nx * ny, 2))
    grid[:, 0] = np.repeat(xs, ny)
    grid[:, 1] = np.tile(ys, nx)
    values = bar.value_batch(grid).reshape(nx, ny)
    lines = [",".join([labels[0], labels[1], "h_value"])]
    for i in range(nx):
        for j in range(ny):
            lines.append(",".join([_fmt(xs[i]), _fmt(ys[j]),
                                   _fmt(values[i, j])]))
    Path(path).write_text("\n".join(lines) + "\n")
    return xs, ys, values


def zero_crossings(xs, ys, values):
    """Per-column y where the gridded barrier crosses zero (linear
    interpolation between the bracketing grid points); NaN if no crossing."""
    out = np.full(len(xs), np.nan)
    for i in range(len(xs)):
        col = values[i]
        for j in range(len(ys) - 1):
            if col[j] >= 0.0 > col[j + 1]:
                frac = col[j] / (col[j] - col[j + 1])
                out[i] = ys[j] + frac * (ys[j + 1] - ys[j])
                break
    return out


def render_contour_svg(xs, ys, values, path, true_level=None,
                       labels=("x", "xdot")):
    """Minimal vector rendering: the zero level line of the barrier plus an
    optional dashed reference level.  Deterministic output bytes."""
    width, height = 640.0, 480.0
    margin = 50.0
    x_lo, x_hi = float(xs[0]), float(xs[-1])
    y_lo, y_hi = float(ys[0]), float(ys[-1])
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    crossings = zero_crossings(xs, ys, values)
    points = [f"{px(x):.2f},{py(c):.2f}"
              for x, c in zip(xs, crossings) if np.isfinite(c)]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{margin:.0f}" y="{margin:.0f}" '
        f'width="{width - 2 * margin:.0f}" height="{height - 2 * margin:.0f}" '
        'fill="none" stroke="black"/>',
    ]
    if true_level is not None and y_lo <= true_level <= y_hi:
        yy = py(true_level)
        parts.append(
            f'<line x1="{margin:.2f}" y1="{yy:.2f}" '
            f'x2="{width - margin:.2f}" y2="{yy:.2f}" stroke="black" '
            'stroke-dasharray="6,4"/>')
    if points:
        parts.append('<polyline points="' + " ".join(points)
                     + '" fill="none" stroke="blue" stroke-width="2"/>')
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 12:.0f}" '
        f'text-anchor="middle" font-size="14">{labels[0]}</text>')
    parts.append(
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" '
        f'font-size="14" transform="rotate(-90 14 {height / 2:.0f})">'
        f'{labels[1]}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# metrics stream and run manifest
# ---------------------------------------------------------------------------

def write_metrics(stats, path):
    """Newline-delimited records, one per epoch."""
    lines = [json.dumps(s.as_dict(), sort_keys=True) for s in stats]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def sha256_file(path):
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def write_manifest(path, command, config, seed, artifacts, wall_clock_s):
    """Record the resolved run for reproduction and artifact validation."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": {name: sha256_file(p) for name, p in
                      sorted(artifacts.items())},
        "wall_clock_s": wall_clock_s,
    }
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2)
                          + "\n")
    return manifest


def verify_manifest(manifest_path):
    """Re-hash the artifacts listed in a manifest.

    Returns a dict name -> bool (True when the checksum still matches).
    Artifact paths are resolved relative to the manifest directory.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    result = {}
    for name, checksum in manifest.get("artifacts", {}).items():
        target = base / name
        try:
            result[name] = sha256_file(target) == checksum
        except FileNotFoundError:
            result[name] = False
    return result
