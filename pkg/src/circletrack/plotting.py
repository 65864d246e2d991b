"""Figures written next to the CLI's tabular outputs.

Uses the Agg backend and strips the PNG software tag so that identical
data give byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_em_trace(trace, path):
    """kappa_z, kappa_phi and log-likelihood against EM iteration."""
    rows = np.array(trace.rows(), dtype=float).reshape(-1, 4)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(3, 1, figsize=(5, 6), sharex=True)
        for ax, col, label in zip(axes, (1, 2, 3), (r"$\kappa^z$", r"$\kappa^\phi$", "log-likelihood")):
            ax.plot(rows[:, 0], rows[:, col], marker="o", ms=3)
            ax.set_ylabel(label)
        axes[-1].set_xlabel("iteration")
        _save(fig, path)


def plot_denominator(curves, path):
    """Normalised denominator profiles; ``curves`` maps (kappa, n_bins) -> (z, profile)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for (kappa, n_bins), (z, prof) in curves.items():
            ax.plot(z, prof / prof.mean(), label=rf"$\kappa$={kappa:g}, N={n_bins}")
        ax.set_xlabel("mean angle z (rad)")
        ax.set_ylabel("denominator / mean")
        ax.set_xlim(-np.pi, np.pi)
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_report(report, path, title=""):
    """Bar chart of frame error per speaker category."""
    rows = report.as_rows()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        names = [r[0] for r in rows]
        ax.bar(names, [100 * r[1] for r in rows], color=["0.3", "tab:blue", "tab:orange"][: len(rows)])
        ax.set_ylabel("frame error (%)")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_sweep(rows, path):
    """Average error against threshold, one line per (affinity, weights)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["affinity"], r["w_speaker"], r["w_location"]), []).append((r["threshold"], r["error"]))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (kind, ws, wl), pts in groups.items():
            pts = np.array(sorted(pts))
            label = kind if kind == "speaker" else f"{kind} w={wl:g}"
            ax.plot(pts[:, 0], 100 * pts[:, 1], label=label)
        ax.set_xlabel("stopping threshold")
        ax.set_ylabel("average frame error (%)")
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_diarization(segments, labels, path, trajectories=None):
    """Segments drawn at their mean SSL angle, coloured by cluster label."""
    from .meeting import FRAME_SEC
    from .ssl import BinLayout, ssl_resultant

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        cmap = plt.get_cmap("tab10")
        if trajectories:
            for traj in trajectories.values():
                t = FRAME_SEC * np.arange(len(traj))
                ax.plot(t, traj, color="0.8", lw=0.8)
        layout = None
        for seg in segments:
            ssl = seg.ssl_frames()
            if len(ssl):
                layout = layout or BinLayout(ssl.shape[1])
                _r, mu = ssl_resultant(ssl, layout)
                t = np.array([f.t_index for f in seg.frames if f.ssl is not None]) * FRAME_SEC
            else:
                pts = [(f.t_index, f.doa) for f in seg.frames if f.doa is not None]
                if not pts:
                    continue
                t, mu = (FRAME_SEC * np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
            ax.scatter(t, mu, s=3, color=cmap(labels[seg.id] % 10))
        ax.set_xlabel("time (s)")
        ax.set_ylabel("azimuth (rad)")
        ax.set_ylim(-np.pi, np.pi)
        _save(fig, path)
