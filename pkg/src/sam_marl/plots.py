"""Figure rendering to files.

Uses the Agg backend so everything works headless; each function draws one
figure, saves it, closes it, and returns the path it wrote.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import cdf
from .errors import ConfigError


def moving_average(values, window):
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise ConfigError("window must be at least 1")
    window = min(window, values.size)
    return np.convolve(values, np.ones(window) / window, mode="valid")


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_rewards(curves, path, window=25):
    """Reward traces by label, raw plus a moving average of each."""
    if not curves:
        raise ConfigError("no curves to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, values in curves.items():
        values = np.asarray(values, dtype=float)
        (line,) = ax.plot(values, alpha=0.25, linewidth=0.8)
        smooth = moving_average(values, window)
        offset = len(values) - len(smooth)
        ax.plot(np.arange(offset, len(values)), smooth, color=line.get_color(), label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean step reward")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_cdf(groups, path, xlabel="value"):
    """Empirical CDF per labeled sample set, drawn as step curves."""
    if not groups:
        raise ConfigError("no samples to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, samples in groups.items():
        xs, ps = cdf(samples)
        ax.step(xs, ps, where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_sharpness(eigs, path):
    """Largest-eigenvalue comparison: bars of means with per-run dots."""
    if not eigs:
        raise ConfigError("no eigenvalues to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = list(eigs)
    for i, label in enumerate(labels):
        vals = np.asarray(eigs[label], dtype=float)
        ax.bar(i, vals.mean(), width=0.6, alpha=0.6)
        ax.plot(np.full(vals.size, i), vals, "k.", markersize=8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("largest loss-Hessian eigenvalue")
    ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)


def plot_sweep(rows, path):
    """Score against rho, one line per mode, mean over seeds at each point."""
    if not rows:
        raise ConfigError("no sweep rows to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    modes = sorted({r["mode"] for r in rows})
    for mode in modes:
        pts = {}
        for r in rows:
            if r["mode"] == mode:
                pts.setdefault(r["rho"], []).append(r["score"])
        rhos = sorted(pts)
        means = [np.mean(pts[x]) for x in rhos]
        ax.plot(rhos, means, marker="o", label=mode)
    if all(r["rho"] > 0 for r in rows):
        ax.set_xscale("log")
    ax.set_xlabel("rho")
    ax.set_ylabel("best mean step reward")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_gate_rates(gates, path, window=25):
    """Per-actor share of iterations with the SAM gate open, smoothed."""
    gates = np.asarray(gates, dtype=float)
    if gates.size == 0:
        raise ConfigError("no gate trace to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(gates.shape[1]):
        smooth = moving_average(gates[:, i], window)
        offset = gates.shape[0] - len(smooth)
        ax.plot(np.arange(offset, gates.shape[0]), smooth, label=f"actor {i}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("gate-open rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)
