"""Top-down trajectory figures written as SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from .sim import Scenario, TrajectoryLog  # noqa: E402
from .world import Disc  # noqa: E402

EVENT_STYLE = {
    "ObstacleDetected": dict(marker="x", color="tab:red", s=40),
    "AvoidStart": dict(marker="v", color="tab:orange", s=30),
    "AvoidEnd": dict(marker="^", color="tab:green", s=30),
    "Arrived": dict(marker="*", color="tab:blue", s=90),
    "Failed": dict(marker="X", color="black", s=70),
}

# fixed ids and no timestamps so identical logs give identical bytes
RC = {"svg.hashsalt": "losnav", "svg.fonttype": "none", "font.size": 9}


def _pose_at(log: TrajectoryLog, t: float):
    best = log.rows[0]
    for row in log.rows:
        if row.t > t + 1e-9:
            break
        best = row
    return best.pose


def figure(log: TrajectoryLog, scn: Scenario, title: Optional[str] = None):
    if not log.rows:
        raise ValueError("cannot plot an empty log")
    fig, ax = plt.subplots(figsize=(6, 6))
    w = scn.world
    b = w.bounds
    ax.add_patch(Rectangle((b.min.x, b.min.y), b.max.x - b.min.x, b.max.y - b.min.y,
                           fill=False, lw=1.2, ec="0.3"))
    for obs in w.obstacles:
        if isinstance(obs, Disc):
            ax.add_patch(Circle((obs.center.x, obs.center.y), obs.radius, fc="tab:red", alpha=0.6, ec="darkred"))
        else:
            ax.add_patch(Rectangle((obs.min.x, obs.min.y), obs.max.x - obs.min.x, obs.max.y - obs.min.y,
                                   fc="tab:red", alpha=0.6, ec="darkred"))
    for dev in w.devices:
        ax.plot(dev.position.x, dev.position.y, "o", color="tab:purple", ms=7)
        ax.annotate(dev.id, (dev.position.x, dev.position.y), textcoords="offset points", xytext=(4, 4))
    for i, tgt in enumerate(scn.targets):
        ax.plot(tgt.x, tgt.y, "s", mfc="none", mec="tab:blue", ms=9)
        ax.annotate(f"T{i + 1}", (tgt.x, tgt.y), textcoords="offset points", xytext=(5, -10))

    xs = [r.pose.x for r in log.rows]
    ys = [r.pose.y for r in log.rows]
    if len(log.rows) == 1:
        ax.plot(xs, ys, "o", color="tab:blue", ms=6, label="MRP")
    else:
        ax.plot(xs, ys, "-", color="tab:blue", lw=1.4, label="trajectory")
        ax.plot(xs[0], ys[0], ">", color="tab:blue", ms=8)
    ax.add_patch(Circle((xs[0], ys[0]), w.mrp_radius, fill=False, ls="--", ec="tab:blue", lw=0.8))

    for kind, style in EVENT_STYLE.items():
        pts = [_pose_at(log, e.t) for e in log.events if e.kind == kind]
        if pts:
            ax.scatter([p.x for p in pts], [p.y for p in pts], label=kind, zorder=5, **style)

    ax.set_xlim(b.min.x, b.max.x)
    ax.set_ylim(b.min.y, b.max.y)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.grid(True, lw=0.3, alpha=0.5)
    ax.legend(loc="upper left", fontsize=7, framealpha=0.8)
    ax.set_title(title if title is not None else (scn.label or "trajectory"))
    return fig


def render_plot(log: TrajectoryLog, scn: Scenario, path: Union[str, Path, None] = None,
                title: Optional[str] = None) -> bytes:
    """Render the log as an SVG document; also written to ``path`` if given."""
    import io

    with plt.rc_context(RC):
        fig = figure(log, scn, title)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data
