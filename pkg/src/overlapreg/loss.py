"""Training losses: frequency-weighted mask cross-entropy and the combined
l1-quaternion / l2-translation regression loss, summed over iterations."""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .datagen import RegistrationPair, compute_gt_masks
from .geometry import apply, compose, inverse
from .model import IterationTrace

PROB_CLAMP = 1e-7
ALPHA_CAP = 1.0 - 1e-3
DEFAULT_LAMBDA = 4.0


def mask_loss(pred: dc.Tensor, label: np.ndarray, alpha: float) -> dc.Tensor:
    """Mean over points of -alpha*label*log(p) - (1-alpha)*(1-label)*log(1-p),
    with probabilities clamped to [PROB_CLAMP, 1-PROB_CLAMP]. `alpha` is the
    pair's overlap ratio and weights the positive class."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie strictly in (0, 1), got {alpha}")
    lab = dc.constant(np.asarray(label, dtype=np.float64).reshape(-1, 1))
    if lab.shape != pred.shape:
        raise ValueError(f"mask_loss: label shape {lab.shape} vs prediction {pred.shape}")
    p = dc.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = dc.mul(lab, dc.log(p))
    neg = dc.mul(1.0 - lab, dc.log(1.0 - p))
    return dc.mean_all(-(alpha * pos + (1.0 - alpha) * neg))


def reg_loss(q: dc.Tensor, t: dc.Tensor, q_g: np.ndarray, t_g: np.ndarray, lam: float = DEFAULT_LAMBDA) -> dc.Tensor:
    """l1 distance between unit quaternions plus lam times the l2 translation
    distance. The target quaternion is flipped to the hemisphere nearer the
    prediction first, so q and -q targets score identically."""
    q_g = np.asarray(q_g, dtype=np.float64).reshape(1, 4)
    t_g = np.asarray(t_g, dtype=np.float64).reshape(1, 3)
    if float(q.data.reshape(-1) @ q_g.reshape(-1)) < 0.0:
        q_g = -q_g
    l1 = dc.sum_all(dc.absval(q - dc.constant(q_g)))
    diff = t - dc.constant(t_g)
    l2 = dc.sqrt(dc.sum_all(dc.mul(diff, diff)))
    return l1 + lam * l2


@dataclass
class LossBreakdown:
    """Per-iteration components plus their sum; `total_node` backs the graph."""

    mask_losses: list
    reg_losses: list
    total: float
    total_node: dc.Tensor


def total_loss(trace: IterationTrace, pair: RegistrationPair, lam: float = DEFAULT_LAMBDA, mask_threshold: float | None = None) -> LossBreakdown:
    """Sum of mask and regression losses over all iterations.

    Mask labels are recomputed per iteration against the transform that fed
    the iteration (traces built with `gt_for_labels` already carry them); the
    regression target at each iteration is the remaining ground-truth
    transform gt o input^-1, so a perfect step drives the residual to identity.
    """
    threshold = mask_threshold if mask_threshold is not None else pair.mask_threshold
    alpha = min(pair.alpha, ALPHA_CAP)
    mask_losses = []
    reg_losses = []
    total_node = None
    for step in trace.steps:
        residual = compose(pair.gt, inverse(step.input_transform))
        if step.label_x is not None:
            label_x, label_y = step.label_x, step.label_y
        else:
            label_x, label_y = compute_gt_masks(
                apply(step.input_transform, pair.source), pair.reference, residual, threshold
            )
        ml = 0.5 * (
            mask_loss(step.mask_x_node, label_x, alpha) + mask_loss(step.mask_y_node, label_y, alpha)
        )
        q_g = residual.rotation.normalized().as_array()
        rl = reg_loss(step.quat_node, step.trans_node, q_g, residual.translation, lam)
        it_node = ml + rl
        total_node = it_node if total_node is None else total_node + it_node
        mask_losses.append(float(ml.data))
        reg_losses.append(float(rl.data))
    return LossBreakdown(mask_losses, reg_losses, float(total_node.data), total_node)
