"""Trajectory and sweep persistence: CSV, summary files, and a minimal SVG render."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .run import TrajectoryLog

TRAJECTORY_COLUMNS = (
    "step", "time_s", "robot", "x", "y", "xhat_x", "xhat_y", "y_recv_x", "y_recv_y",
    "res_norm", "s_dec", "s_dos", "mode", "alarm", "u_x", "u_y", "phi",
)
_FLOAT_COLUMNS = tuple(c for c in TRAJECTORY_COLUMNS if c not in ("step", "robot", "mode", "alarm"))

MODE_COLORS = {"baseline": "#4c72b0", "weighted": "#dd8452", "leader": "#55a868", "follower": "#c44e52"}


def fmt(v: float) -> str:
    return "%.9g" % v


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def trajectory_csv_text(log: TrajectoryLog) -> str:
    out = io.StringIO()
    out.write(",".join(TRAJECTORY_COLUMNS) + "\n")
    cols = [
        log.step, log.time_s, log.robot, log.x[:, 0], log.x[:, 1], log.xhat[:, 0], log.xhat[:, 1],
        log.y_recv[:, 0], log.y_recv[:, 1], log.res_norm, log.s_dec, log.s_dos, log.mode,
        log.alarm, log.u[:, 0], log.u[:, 1], log.phi,
    ] if log.rows else []
    for row in range(log.rows):
        parts = []
        for name, col in zip(TRAJECTORY_COLUMNS, cols):
            val = col[row]
            if name in ("step", "robot"):
                parts.append(str(int(val)))
            elif name in ("mode", "alarm"):
                parts.append(str(val))
            else:
                parts.append(fmt(float(val)))
        out.write(",".join(parts) + "\n")
    return out.getvalue()


def write_csv(log: TrajectoryLog, path) -> None:
    """Trajectory CSV with the fixed column order; floats at 9 significant digits."""
    _write_text(path, trajectory_csv_text(log))


def read_csv(path) -> dict[str, np.ndarray]:
    """Parse a trajectory CSV back into columns (numeric columns as arrays)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(header)
    data = {}
    for name, col in zip(header, cols):
        if name in ("step", "robot"):
            data[name] = np.array(col, dtype=np.int64)
        elif name in _FLOAT_COLUMNS:
            data[name] = np.array(col, dtype=float)
        else:
            data[name] = np.array(col, dtype=str)
    return data


def write_edges(log: TrajectoryLog, path) -> None:
    lines = ["step,i,j"]
    for k, edges in enumerate(log.edges):
        lines.extend(f"{k},{i},{j}" for i, j in edges)
    _write_text(path, "\n".join(lines) + "\n")


def write_run_summary(summary, path) -> None:
    _write_text(path, "\n".join(summary.summary_lines()) + "\n")


def write_summary(stats, path) -> None:
    """One CSV row per Monte Carlo cell."""
    rows = stats.rows()
    if not rows:
        _write_text(path, "")
        return
    header = list(rows[0])
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in r.values()))
    _write_text(path, "\n".join(lines) + "\n")


def render_svg(log: TrajectoryLog, path, size: int = 480, margin: int = 20) -> None:
    """Trajectories as line segments colored by the robot's mode at each step."""
    if log.rows == 0:
        _write_text(path, f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}"/>\n')
        return
    pos = log.positions_by_robot()
    modes = log.mode.reshape(pos.shape[0], pos.shape[1])
    lo = pos.reshape(-1, 2).min(axis=0)
    hi = pos.reshape(-1, 2).max(axis=0)
    scale = (size - 2 * margin) / max(float(np.max(hi - lo)), 1e-9)

    def px(p):
        return margin + (p[0] - lo[0]) * scale, size - margin - (p[1] - lo[1]) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    stride = max(1, pos.shape[0] // 400)
    for i in range(pos.shape[1]):
        for k in range(0, pos.shape[0] - stride, stride):
            (x0, y0), (x1, y1) = px(pos[k, i]), px(pos[k + stride, i])
            color = MODE_COLORS.get(str(modes[k, i]), "#000000")
            parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        sx, sy = px(pos[0, i])
        ex, ey = px(pos[-1, i])
        parts.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="3" fill="none" stroke="black"/>')
        parts.append(f'<circle cx="{ex:.2f}" cy="{ey:.2f}" r="3" fill="black"/>')
        parts.append(f'<text x="{sx + 4:.2f}" y="{sy - 4:.2f}" font-size="10">{i + 1}</text>')
    parts.append("</svg>")
    _write_text(path, "\n".join(parts) + "\n")
