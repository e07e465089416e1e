"""Static MSE figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import MseTrace  # noqa: E402

LABELS = {"lms": "LMS", "bilms": "BiLMS", "ekf": "EKF", "none": "No estimation"}
STYLES = {"lms": "-", "bilms": "--", "ekf": "-.", "none": ":"}
GROUP_LABELS = {"aoa": "AoA MSE (rad$^2$)", "aod": "AoD MSE (rad$^2$)", "gain": "Path gain MSE"}

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (4.8, 3.4),
    "savefig.dpi": 150,
}


def plot_trace(trace: MseTrace, path, group: str = "aoa", title: str | None = None):
    """MSE against time index, one line per algorithm, log scale."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        steps = np.arange(1, trace.horizon + 1)
        for alg, groups in trace.mse.items():
            y = groups[group]
            # First step of a perfect init is exactly zero; log axes drop it.
            ax.semilogy(steps, np.where(y > 0, y, np.nan), STYLES.get(alg, "-"),
                        label=LABELS.get(alg, alg))
        ax.set_xlabel("Time index")
        ax.set_ylabel(GROUP_LABELS[group])
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(values, traces, parameter: str, path, group: str = "aoa"):
    """Steady-state MSE against the swept value with 1-sigma error bars."""
    xlabel = {"snr_db": "SNR (dB)", "array_size": "Antennas M = N"}.get(parameter, parameter)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        algs = list(traces[0].mse)
        for alg in algs:
            stats = np.array([t.steady_state(alg, group) for t in traces])
            ax.errorbar(values, stats[:, 0], yerr=stats[:, 1], fmt="o" + STYLES.get(alg, "-"),
                        capsize=3, label=LABELS.get(alg, alg))
        ax.set_yscale("log")
        if parameter == "array_size":
            ax.set_xscale("log", base=2)
            ax.set_xticks(values, [f"{v:g}" for v in values])
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Steady-state " + GROUP_LABELS[group])
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
