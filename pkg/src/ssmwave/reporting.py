"""Figure rendering for the report paths (matplotlib, file output only).

Every delimited report the CLI writes gets a rendered companion figure next
to it; matplotlib is imported lazily so library users who never render pay
nothing.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["figure_path_for", "save_stability_figure", "save_loss_figure"]


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def figure_path_for(out_path) -> Path:
    return Path(out_path).with_suffix(".png")


def save_stability_figure(rows: list[dict], path):
    """Per-SSM spectral radii against the unit-circle boundary.

    One marker per state-space parameter group; groups that are Hurwitz by
    construction are drawn apart from the unconstrained ones.
    """
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 4))
    xs = range(len(rows))
    colors = ["tab:blue" if r["hurwitz_by_construction"] else "tab:red"
              for r in rows]
    ax.scatter(xs, [r["spectral_radius"] for r in rows], c=colors, s=18)
    ax.axhline(1.0, color="black", linewidth=1.0, linestyle="--",
               label="unit circle boundary")
    ax.set_xlabel("SSM parameter group")
    ax.set_ylabel("spectral radius of discrete state matrix")
    ax.set_title("Stability of learned state matrices")
    handles = [
        plt.Line2D([], [], marker="o", linestyle="", color="tab:blue",
                   label="Hurwitz by construction"),
        plt.Line2D([], [], marker="o", linestyle="", color="tab:red",
                   label="unconstrained"),
        plt.Line2D([], [], linestyle="--", color="black",
                   label="unit circle boundary"),
    ]
    ax.legend(handles=handles, loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(losses: list[float], path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(range(len(losses)), losses, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss (bits per sample)")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
