"""Iterative global-feature registration network with learned overlap masks.

Each iteration transforms the source by the accumulated estimate (gradients
stop there), extracts mask-weighted global features for both clouds, fuses
per-point and global features to predict fresh overlap masks, and regresses a
quaternion/translation increment from the pooled fused features. Increments
accumulate across iterations.
"""

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .datagen import DEFAULT_MASK_THRESHOLD, compute_gt_masks
from .geometry import RigidTransform, apply, compose, inverse

MASK_FLOOR = 1e-6
_QUAT_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and iteration knobs. Widths chain input->output per head;
    the mask head must end in 2 classes and the regression head in 7 values
    (3 translation + 4 quaternion)."""

    iterations: int = 4
    feature_widths: tuple = (64, 128, 256)
    fusion_widths: tuple = (256, 128)
    mask_widths: tuple = (64, 2)
    regress_widths: tuple = (256, 128, 7)
    mask_start_iteration: int = 2
    topk: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature_widths", tuple(self.feature_widths))
        object.__setattr__(self, "fusion_widths", tuple(self.fusion_widths))
        object.__setattr__(self, "mask_widths", tuple(self.mask_widths))
        object.__setattr__(self, "regress_widths", tuple(self.regress_widths))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (1 <= self.mask_start_iteration <= self.iterations):
            raise ValueError(
                f"mask_start_iteration must be in [1, iterations], got {self.mask_start_iteration} with N={self.iterations}"
            )
        if len(self.mask_widths) < 2 or self.mask_widths[-1] != 2:
            raise ValueError("mask_widths must have >= 2 layers and end in 2 classes")
        if self.regress_widths[-1] != 7:
            raise ValueError("regress_widths must end in 7 (translation + quaternion)")

    @property
    def feature_dim(self) -> int:
        return self.feature_widths[-1]

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "feature_widths": list(self.feature_widths),
            "fusion_widths": list(self.fusion_widths),
            "mask_widths": list(self.mask_widths),
            "regress_widths": list(self.regress_widths),
            "mask_start_iteration": self.mask_start_iteration,
            "topk": self.topk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ModelParams:
    """Parameter container: shared-weight MLPs for feature extraction (feat),
    hybrid-feature fusion (fuse), mask prediction (mask_head) and transform
    regression (regress)."""

    def __init__(self, config: ModelConfig, feat, fuse, mask_head, regress):
        self.config = config
        self.feat = feat
        self.fuse = fuse
        self.mask_head = mask_head
        self.regress = regress

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        feat = dc.MlpParams.create("feat", 3, list(config.feature_widths), rng, final_relu=True)
        fuse = dc.MlpParams.create("fuse", 3 * config.feature_dim, list(config.fusion_widths), rng, final_relu=True)
        mask_head = dc.MlpParams.create("mask_head", config.fusion_widths[-1], list(config.mask_widths), rng, final_relu=False)
        reg_in = 2 * (config.fusion_widths[-1] + config.mask_widths[-2])
        regress = dc.MlpParams.create("regress", reg_in, list(config.regress_widths), rng, final_relu=False)
        return cls(config, feat, fuse, mask_head, regress)

    def named_tensors(self) -> dict:
        out = {}
        for mlp in (self.feat, self.fuse, self.mask_head, self.regress):
            out.update(mlp.named_tensors())
        return out

    def named_arrays(self) -> dict:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_arrays(self, arrays: dict) -> None:
        """Install parameter values; raises naming expected vs found shapes."""
        tensors = self.named_tensors()
        missing = sorted(set(tensors) - set(arrays))
        extra = sorted(set(arrays) - set(tensors))
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, t in tensors.items():
            if arrays[name].shape != t.data.shape:
                raise ValueError(
                    f"parameter '{name}': expected shape {t.data.shape}, found {arrays[name].shape}"
                )
            t.data = np.array(arrays[name], dtype=np.float64)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict) -> "ModelParams":
        params = cls.init(config, seed=0)
        params.load_arrays(arrays)
        return params


def extract_global_feature(cloud: dc.Tensor, prev_mask: dc.Tensor, params: ModelParams):
    """Per-point features from the shared MLP plus the channel-wise max of the
    mask-scaled features. The mask is floored at MASK_FLOOR so an all-zero mask
    cannot collapse the global feature to the zero vector."""
    n = cloud.shape[0]
    if prev_mask.shape != (n, 1):
        raise ValueError(f"prev_mask shape {prev_mask.shape} does not match cloud rows {n}")
    f = params.feat.forward(cloud)
    pooled = dc.masked_maxpool(f, dc.clip(prev_mask, lo=MASK_FLOOR))
    return f, pooled


def fuse_and_predict_masks(f_x, f_y, global_x, global_y, prev_mask_x, prev_mask_y, params: ModelParams):
    """Fuse each cloud's point features with both global features (own first,
    other's second) and predict per-point overlap probabilities, gated
    multiplicatively by the previous masks.

    Returns (g_x, g_y, h_x, h_y, mask_x, mask_y): fused features, the mask
    head's intermediate features, and the gated overlap probabilities.
    """
    last = len(params.mask_head.layers) - 1

    def one(f, own, other, prev_mask):
        hybrid = dc.concat_cols(f, dc.repeat_rows(own, f.shape[0]), dc.repeat_rows(other, f.shape[0]))
        g = params.fuse.forward(hybrid)
        h = params.mask_head.forward(g, upto=last)
        probs = dc.softmax_rows(params.mask_head.forward(h, start=last))
        mask = dc.mul(dc.slice_cols(probs, 1, 2), prev_mask)
        return g, h, mask

    g_x, h_x, mask_x = one(f_x, global_x, global_y, prev_mask_x)
    g_y, h_y, mask_y = one(f_y, global_y, global_x, prev_mask_y)
    return g_x, g_y, h_x, h_y, mask_x, mask_y


def _topk_select(mask: dc.Tensor, topk: int | None) -> dc.Tensor | None:
    """0/1 row selector for the k highest-probability points (ties to lowest
    index), or None when every point participates."""
    n = mask.shape[0]
    if topk is None or topk >= n:
        return None
    order = np.argsort(-mask.data[:, 0], kind="stable")[:topk]
    sel = np.zeros((n, 1))
    sel[order] = 1.0
    return dc.constant(sel)


def regress_transform(g_x, h_x, mask_x, g_y, h_y, mask_y, params: ModelParams, topk: int | None = None):
    """Pool each cloud's fused features concatenated with its mask-scaled
    mask-head features, then regress 7 values: translation plus a quaternion
    normalized to unit length.

    With `topk` set, whole feature rows of all but the k highest-probability
    points are zeroed before pooling, so only those points contribute.
    Returns (quat (1,4) Tensor, trans (1,3) Tensor, degenerate flag). A raw
    quaternion with (near-)zero norm is replaced by the identity and flagged.
    """

    def pooled(g, h, mask):
        stack = dc.concat_cols(g, dc.pointwise_scale(h, mask))
        sel = _topk_select(mask, topk)
        if sel is not None:
            stack = dc.pointwise_scale(stack, sel)
        return dc.max_rows(stack)

    out = params.regress.forward(dc.concat_cols(pooled(g_x, h_x, mask_x), pooled(g_y, h_y, mask_y)))
    trans = dc.slice_cols(out, 0, 3)
    q_raw = dc.slice_cols(out, 3, 7)
    q_norm = dc.sqrt(dc.sum_all(dc.mul(q_raw, q_raw)))
    if float(q_norm.data) < _QUAT_EPS:
        return dc.constant(np.array([[1.0, 0.0, 0.0, 0.0]])), trans, True
    return dc.div(q_raw, q_norm), trans, False


@dataclass
class TraceStep:
    """One iteration's outputs: the estimated increment, the transforms before
    and after it, predicted masks, pooled global features, and (when ground
    truth is supplied) the per-iteration overlap labels."""

    quat: np.ndarray
    trans: np.ndarray
    quat_node: dc.Tensor
    trans_node: dc.Tensor
    transform: RigidTransform
    input_transform: RigidTransform
    accumulated: RigidTransform
    mask_x: np.ndarray
    mask_y: np.ndarray
    mask_x_node: dc.Tensor
    mask_y_node: dc.Tensor
    global_x: np.ndarray
    global_y: np.ndarray
    label_x: np.ndarray | None = None
    label_y: np.ndarray | None = None
    quat_degenerate: bool = False


@dataclass
class IterationTrace:
    steps: list = field(default_factory=list)

    @property
    def final_transform(self) -> RigidTransform:
        return self.steps[-1].accumulated


def run_iterative(
    x: np.ndarray,
    y: np.ndarray,
    params: ModelParams,
    config: ModelConfig | None = None,
    gt_for_labels: RigidTransform | None = None,
    *,
    fixed_transforms: list | None = None,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> IterationTrace:
    """Run the full iterative pipeline on a source/reference pair.

    The transform feeding each iteration is applied numerically, so no
    gradients flow through the accumulation between iterations; losses flow
    within each iteration (masks keep their graph links across iterations).
    Masks predicted before `mask_start_iteration` are not applied: the
    effective mask stays all-ones until then.

    `gt_for_labels` additionally stores per-iteration binary overlap labels,
    recomputed at each iteration from the residual ground-truth transform.
    `fixed_transforms` overrides the per-iteration input transforms (used to
    freeze the forward for finite-difference checks).
    """
    config = config or params.config
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y_t = dc.constant(y)
    ones_x = dc.constant(np.ones((len(x), 1)))
    ones_y = dc.constant(np.ones((len(y), 1)))
    eff_mask_x, eff_mask_y = ones_x, ones_y
    acc = RigidTransform.identity()
    trace = IterationTrace()
    for i in range(1, config.iterations + 1):
        input_transform = fixed_transforms[i - 1] if fixed_transforms is not None else acc
        x_moved = apply(input_transform, x)
        x_t = dc.constant(x_moved)
        f_x, global_x = extract_global_feature(x_t, eff_mask_x, params)
        f_y, global_y = extract_global_feature(y_t, eff_mask_y, params)
        g_x, g_y, h_x, h_y, m_x, m_y = fuse_and_predict_masks(
            f_x, f_y, global_x, global_y, eff_mask_x, eff_mask_y, params
        )
        q_node, t_node, degenerate = regress_transform(
            g_x, h_x, eff_mask_x, g_y, h_y, eff_mask_y, params, config.topk
        )
        step_tf = RigidTransform.from_quat_trans(q_node.data[0], t_node.data[0])
        acc = compose(step_tf, input_transform)
        label_x = label_y = None
        if gt_for_labels is not None:
            residual = compose(gt_for_labels, inverse(input_transform))
            label_x, label_y = compute_gt_masks(x_moved, y, residual, mask_threshold)
        trace.steps.append(
            TraceStep(
                quat=q_node.data[0].copy(),
                trans=t_node.data[0].copy(),
                quat_node=q_node,
                trans_node=t_node,
                transform=step_tf,
                input_transform=input_transform,
                accumulated=acc,
                mask_x=m_x.data[:, 0].copy(),
                mask_y=m_y.data[:, 0].copy(),
                mask_x_node=m_x,
                mask_y_node=m_y,
                global_x=global_x.data[0].copy(),
                global_y=global_y.data[0].copy(),
                label_x=label_x,
                label_y=label_y,
                quat_degenerate=degenerate,
            )
        )
        if i >= config.mask_start_iteration:
            eff_mask_x, eff_mask_y = m_x, m_y
    return trace
