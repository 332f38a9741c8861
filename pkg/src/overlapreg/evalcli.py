"""Experiment drivers: overlap-ratio sweep, noise sweep, and iteration study.

Each driver returns its table as a list of dicts and, when given an output
directory, also writes a CSV plus a static PNG plot.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .datagen import asymmetric_composite, make_pair, make_pair_at_overlap
from .geometry import RigidTransform, isotropic_errors
from .icp import icp_register
from .model import ModelConfig, ModelParams, run_iterative
from .train import pair_seed, smoke_pair_configs


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _save_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overlap_sweep(
    params: ModelParams,
    config: ModelConfig,
    ratios,
    trials_per_ratio: int,
    seed: int,
    out_dir=None,
    *,
    n_points: int = 256,
    keep: int = 96,
    noise_sigma: float = 0.0,
    mask_threshold: float = 0.28,
    shape_variants: int = 4,
) -> list:
    """Mean isotropic errors of the model and of vanilla ICP at each target
    overlap ratio."""
    ratios = list(ratios)
    if not ratios:
        raise ValueError("overlap_sweep: empty ratio list")
    if any(not (0.0 < r <= 1.0) for r in ratios):
        raise ValueError(f"overlap_sweep: ratios must lie in (0, 1], got {ratios}")
    rows = []
    for ri, ratio in enumerate(ratios):
        errs = np.zeros(4)
        achieved = []
        for trial in range(trials_per_ratio):
            shape = asymmetric_composite(trial % shape_variants)
            pair = make_pair_at_overlap(
                shape, ratio, n=n_points, keep=keep, noise_sigma=noise_sigma,
                mask_threshold=mask_threshold, seed=pair_seed(seed, ri, trial),
            )
            trace = run_iterative(pair.source, pair.reference, params, config)
            m_rot, m_trans = isotropic_errors(trace.final_transform, pair.gt)
            icp_res = icp_register(pair.source, pair.reference)
            i_rot, i_trans = isotropic_errors(icp_res.transform, pair.gt)
            errs += (m_rot, m_trans, i_rot, i_trans)
            achieved.append(pair.alpha)
        errs /= trials_per_ratio
        rows.append(
            {
                "ratio": ratio,
                "achieved_alpha": float(np.mean(achieved)),
                "model_iso_rot": errs[0],
                "model_iso_trans": errs[1],
                "icp_iso_rot": errs[2],
                "icp_iso_trans": errs[3],
            }
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "overlap_sweep.csv", list(rows[0].keys()), rows)
        _save_plot(
            out_dir / "overlap_sweep.png",
            [r["ratio"] for r in rows],
            {"model": [r["model_iso_rot"] for r in rows], "icp": [r["icp_iso_rot"] for r in rows]},
            "target overlap ratio", "mean rotation error (deg)", "Error vs overlap ratio",
        )
    return rows


@dataclass
class IterationStudyResult:
    rows: list
    initial_iso_rot: float
    initial_iso_trans: float


def iteration_study(
    params: ModelParams,
    config: ModelConfig,
    max_n: int,
    n_pairs: int,
    seed: int,
    out_dir=None,
    *,
    pair_configs=None,
) -> IterationStudyResult:
    """Mean errors after each of 1..max_n iterations on a fixed eval set;
    the initial (no-update) errors are reported alongside."""
    if max_n < 1:
        raise ValueError("iteration_study: max_n must be >= 1")
    pair_configs = pair_configs or smoke_pair_configs()
    study_config = replace(
        config, iterations=max_n, mask_start_iteration=min(config.mask_start_iteration, max_n)
    )
    iso = np.zeros((max_n, 2))
    init = np.zeros(2)
    for k in range(n_pairs):
        pair = make_pair(pair_configs[k % len(pair_configs)], pair_seed(seed, 0, k))
        init += isotropic_errors(RigidTransform.identity(), pair.gt)
        trace = run_iterative(pair.source, pair.reference, params, study_config)
        for i, step in enumerate(trace.steps):
            iso[i] += isotropic_errors(step.accumulated, pair.gt)
    iso /= n_pairs
    init /= n_pairs
    rows = [
        {"iteration": i + 1, "iso_rot": float(iso[i, 0]), "iso_trans": float(iso[i, 1])}
        for i in range(max_n)
    ]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "iteration_study.csv", ["iteration", "iso_rot", "iso_trans"], rows)
        _save_plot(
            out_dir / "iteration_study.png",
            [r["iteration"] for r in rows],
            {"iso_rot": [r["iso_rot"] for r in rows]},
            "iteration", "mean rotation error (deg)", "Error vs iteration count",
        )
    return IterationStudyResult(rows, float(init[0]), float(init[1]))


def noise_sweep(
    params: ModelParams,
    config: ModelConfig,
    sigmas,
    trials_per_sigma: int,
    seed: int,
    out_dir=None,
    *,
    pair_configs=None,
) -> list:
    """Mean errors at each noise level. Pair seeds do not depend on sigma, so
    the sigma = 0 row equals a clean evaluation of the same pairs."""
    sigmas = list(sigmas)
    if not sigmas:
        raise ValueError("noise_sweep: empty sigma list")
    if any(s < 0 for s in sigmas):
        raise ValueError(f"noise_sweep: sigmas must be >= 0, got {sigmas}")
    pair_configs = pair_configs or smoke_pair_configs()
    rows = []
    for sigma in sigmas:
        errs = np.zeros(2)
        for k in range(trials_per_sigma):
            pc = replace(pair_configs[k % len(pair_configs)], noise_sigma=sigma)
            pair = make_pair(pc, pair_seed(seed, 0, k))
            trace = run_iterative(pair.source, pair.reference, params, config)
            errs += isotropic_errors(trace.final_transform, pair.gt)
        errs /= trials_per_sigma
        rows.append({"sigma": sigma, "iso_rot": float(errs[0]), "iso_trans": float(errs[1])})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "noise_sweep.csv", ["sigma", "iso_rot", "iso_trans"], rows)
        _save_plot(
            out_dir / "noise_sweep.png",
            [r["sigma"] for r in rows],
            {"iso_rot": [r["iso_rot"] for r in rows]},
            "noise sigma", "mean rotation error (deg)", "Error vs noise level",
        )
    return rows
