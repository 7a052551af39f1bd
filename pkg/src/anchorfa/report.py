"""Figure rendering for evaluation reports: constraint-family comparisons,
EM likelihood traces, and the learned latent graph."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_constraint_comparison(results, path):
    """Bar chart of per-seed held-out log-likelihood by constraint family.

    `results` maps constraint name -> list of per-seed scores."""
    names = list(results)
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(names), 1)
    for k, name in enumerate(names):
        vals = np.asarray(results[name], dtype=float)
        xs = np.arange(vals.size) + k * width
        ax.bar(xs, vals, width=width, label=name)
    ax.set_xlabel("seed")
    ax.set_ylabel("held-out log-likelihood / row")
    ax.set_title("constraint family comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_em_trace(trace, path):
    """Complete-data log-likelihood before and after each inner EM step."""
    steps = [t["step"] for t in trace]
    before = [t["loglik_before"] for t in trace]
    after = [t["loglik_after"] for t in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, before, "o--", label="before inner step")
    ax.plot(steps, after, "o-", label="after inner step")
    ax.set_xlabel("outer step")
    ax.set_ylabel("complete-data log-likelihood")
    ax.set_title("EM refinement trace")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_structure(signed_edges, m, path, latent_names=None):
    """Latent graph on a circle, edges colored by correlation sign."""
    names = latent_names or [f"y{i}" for i in range(m)]
    angles = 2 * np.pi * np.arange(m) / max(m, 1)
    xs, ys = np.cos(angles), np.sin(angles)
    fig, ax = plt.subplots(figsize=(5, 5))
    for p, c, sign in signed_edges:
        color = "tab:blue" if sign >= 0 else "tab:red"
        ax.annotate("", xy=(xs[c], ys[c]), xytext=(xs[p], ys[p]),
                    arrowprops=dict(arrowstyle="-|>", color=color, lw=1.5,
                                    shrinkA=16, shrinkB=16))
    ax.scatter(xs, ys, s=500, facecolor="white", edgecolor="black", zorder=3)
    for i in range(m):
        ax.text(xs[i], ys[i], names[i], ha="center", va="center", zorder=4,
                fontsize=8)
    ax.set_xlim(-1.3, 1.3)
    ax.set_ylim(-1.3, 1.3)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title("latent structure (blue +, red -)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
