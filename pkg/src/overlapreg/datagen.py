"""Synthetic registration benchmark generation.

Produces source/reference pairs by sampling a parametric surface twice with
independent seeds (so no exact point correspondences exist), applying a random
rigid transform, optionally cropping each cloud to a partial view, adding
clipped Gaussian noise, and labelling per-point overlap masks by thresholded
closest-point distance.

Every generator is a pure function of its inputs and an integer seed.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plyio
from .geometry import RigidTransform, apply, euler_zyx_to_rotmat, inverse, rotmat_to_quat

DEFAULT_MASK_THRESHOLD = 0.1

_SYMMETRIC_KINDS = {"sphere": True, "cylinder": True, "torus": True, "box": False, "composite": False, "ply_file": False}


@dataclass(frozen=True)
class ShapeSpec:
    """Parametric surface description.

    kind/params:
      - sphere: (radius,)
      - box: (extent_x, extent_y, extent_z) full edge lengths
      - cylinder: (radius, height), capped
      - torus: (major_radius, minor_radius), major > minor
      - composite: `children` = tuple of (ShapeSpec, (dx, dy, dz)) offsets
      - ply_file: `path` to an ASCII PLY whose vertices stand in for the surface

    `symmetric` marks kinds with a continuous rotational symmetry axis, for
    which a unique ground-truth rotation is ill-posed; defaults per kind.
    """

    kind: str
    params: tuple = ()
    children: tuple = ()
    path: str | None = None
    symmetric: bool | None = None

    def __post_init__(self):
        if self.kind not in _SYMMETRIC_KINDS:
            raise ValueError(f"unknown shape kind '{self.kind}'")
        if any(p <= 0 for p in self.params):
            raise ValueError(f"{self.kind}: params must be strictly positive, got {self.params}")
        expected = {"sphere": 1, "box": 3, "cylinder": 2, "torus": 2, "composite": 0, "ply_file": 0}[self.kind]
        if len(self.params) != expected:
            raise ValueError(f"{self.kind}: expected {expected} params, got {len(self.params)}")
        if self.kind == "torus" and self.params[0] <= self.params[1]:
            raise ValueError(f"torus: major radius must exceed minor radius, got {self.params}")
        if self.kind == "composite" and len(self.children) < 1:
            raise ValueError("composite: needs at least one child")
        if self.kind == "ply_file" and not self.path:
            raise ValueError("ply_file: needs a path")
        if self.symmetric is None:
            object.__setattr__(self, "symmetric", _SYMMETRIC_KINDS[self.kind])

    @classmethod
    def sphere(cls, radius: float = 1.0) -> "ShapeSpec":
        return cls("sphere", (radius,))

    @classmethod
    def box(cls, ex: float = 1.0, ey: float = 0.7, ez: float = 0.5) -> "ShapeSpec":
        return cls("box", (ex, ey, ez))

    @classmethod
    def cylinder(cls, radius: float = 0.4, height: float = 1.2) -> "ShapeSpec":
        return cls("cylinder", (radius, height))

    @classmethod
    def torus(cls, major: float = 0.7, minor: float = 0.25) -> "ShapeSpec":
        return cls("torus", (major, minor))

    @classmethod
    def composite(cls, children) -> "ShapeSpec":
        kids = tuple((spec, tuple(float(v) for v in off)) for spec, off in children)
        return cls("composite", children=kids)

    @classmethod
    def ply(cls, path) -> "ShapeSpec":
        return cls("ply_file", path=str(path))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "symmetric": self.symmetric}
        if self.params:
            d["params"] = list(self.params)
        if self.children:
            d["children"] = [[spec.to_dict(), list(off)] for spec, off in self.children]
        if self.path:
            d["path"] = self.path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        children = tuple(
            (cls.from_dict(spec_d), tuple(off)) for spec_d, off in d.get("children", [])
        )
        return cls(
            kind=d["kind"],
            params=tuple(d.get("params", [])),
            children=children,
            path=d.get("path"),
            symmetric=d.get("symmetric"),
        )


def asymmetric_composite(seed_dims: int = 0) -> ShapeSpec:
    """A canonical composite with no rotational symmetry; `seed_dims` selects
    among a few fixed variants so training can mix distinct shapes."""
    variants = [
        ((1.0, 0.7, 0.5), 0.32, (0.55, 0.35, 0.28)),
        ((0.9, 0.6, 0.45), 0.28, (-0.5, 0.4, 0.3)),
        ((1.1, 0.5, 0.6), 0.3, (0.45, -0.4, 0.35)),
        ((0.8, 0.75, 0.4), 0.26, (0.5, 0.3, -0.38)),
    ]
    dims, r, off = variants[seed_dims % len(variants)]
    return ShapeSpec.composite([(ShapeSpec.box(*dims), (0.0, 0.0, 0.0)), (ShapeSpec.sphere(r), off)])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Analytic surface properties (used for area-weighted allocation and for the
# sample-independent normalization into the unit sphere).


def surface_area(spec: ShapeSpec) -> float:
    if spec.kind == "sphere":
        (r,) = spec.params
        return 4.0 * math.pi * r * r
    if spec.kind == "box":
        ex, ey, ez = spec.params
        return 2.0 * (ex * ey + ey * ez + ex * ez)
    if spec.kind == "cylinder":
        r, h = spec.params
        return 2.0 * math.pi * r * h + 2.0 * math.pi * r * r
    if spec.kind == "torus":
        major, minor = spec.params
        return 4.0 * math.pi * math.pi * major * minor
    if spec.kind == "composite":
        return sum(surface_area(c) for c, _ in spec.children)
    if spec.kind == "ply_file":
        return float(len(plyio.load_ply(spec.path)))  # vertex count stands in for area
    raise ValueError(spec.kind)


def _analytic_centroid(spec: ShapeSpec) -> np.ndarray:
    if spec.kind == "composite":
        areas = np.array([surface_area(c) for c, _ in spec.children])
        offs = np.array([off for _, off in spec.children], dtype=np.float64)
        return (areas[:, None] * offs).sum(axis=0) / areas.sum()
    if spec.kind == "ply_file":
        return plyio.load_ply(spec.path).mean(axis=0)
    return np.zeros(3)


def _bound_radius(spec: ShapeSpec) -> float:
    """Radius of a sphere around the analytic centroid containing the surface."""
    if spec.kind == "sphere":
        return spec.params[0]
    if spec.kind == "box":
        ex, ey, ez = spec.params
        return 0.5 * math.sqrt(ex * ex + ey * ey + ez * ez)
    if spec.kind == "cylinder":
        r, h = spec.params
        return math.sqrt(r * r + 0.25 * h * h)
    if spec.kind == "torus":
        major, minor = spec.params
        return major + minor
    if spec.kind == "composite":
        c = _analytic_centroid(spec)
        return max(float(np.linalg.norm(np.asarray(off) - c)) + _bound_radius(child) for child, off in spec.children)
    if spec.kind == "ply_file":
        pts = plyio.load_ply(spec.path)
        return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max())
    raise ValueError(spec.kind)


def _sample_raw(spec: ShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "sphere":
        (r,) = spec.params
        dirs = rng.normal(size=(n, 3))
        return r * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    if spec.kind == "box":
        ex, ey, ez = spec.params
        # Faces listed as (fixed axis, sign); area of the +-x pair is ey*ez etc.
        areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-0.5, 0.5, size=n)
        v = rng.uniform(-0.5, 0.5, size=n)
        pts = np.empty((n, 3))
        half = np.array([ex, ey, ez]) / 2.0
        for axis in range(3):
            for s, sign in enumerate((1.0, -1.0)):
                sel = face == 2 * axis + s
                a, b = [i for i in range(3) if i != axis]
                pts[sel, axis] = sign * half[axis]
                pts[sel, a] = u[sel] * (2 * half[a])
                pts[sel, b] = v[sel] * (2 * half[b])
        return pts
    if spec.kind == "cylinder":
        r, h = spec.params
        lateral = 2.0 * math.pi * r * h
        cap = math.pi * r * r
        part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        z = rng.uniform(-h / 2.0, h / 2.0, size=n)
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=n))
        pts = np.empty((n, 3))
        side = part == 0
        pts[side] = np.stack([r * np.cos(theta[side]), r * np.sin(theta[side]), z[side]], axis=1)
        for pid, zcap in ((1, h / 2.0), (2, -h / 2.0)):
            sel = part == pid
            pts[sel] = np.stack([rad[sel] * np.cos(theta[sel]), rad[sel] * np.sin(theta[sel]), np.full(sel.sum(), zcap)], axis=1)
        return pts
    if spec.kind == "torus":
        major, minor = spec.params
        u = rng.uniform(0.0, 2.0 * math.pi, size=n)
        # Poloidal angle by rejection: surface density weights by (R + r*cos v).
        v = np.empty(n)
        remaining = np.arange(n)
        while len(remaining):
            cand = rng.uniform(0.0, 2.0 * math.pi, size=len(remaining))
            accept = rng.uniform(0.0, 1.0, size=len(remaining)) < (major + minor * np.cos(cand)) / (major + minor)
            v[remaining[accept]] = cand[accept]
            remaining = remaining[~accept]
        ring = major + minor * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)
    if spec.kind == "composite":
        areas = np.array([surface_area(c) for c, _ in spec.children])
        child_idx = rng.choice(len(spec.children), size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        for i, (child, off) in enumerate(spec.children):
            sel = child_idx == i
            if sel.any():
                pts[sel] = _sample_raw(child, int(sel.sum()), rng) + np.asarray(off)
        return pts
    if spec.kind == "ply_file":
        verts = plyio.load_ply(spec.path)
        idx = rng.choice(len(verts), size=n, replace=n > len(verts))
        return verts[idx]
    raise ValueError(spec.kind)


def sample_surface(spec: ShapeSpec, n: int, seed, normalize: bool = True) -> np.ndarray:
    """n points uniform by surface area, centered and scaled into the unit sphere.

    Normalization uses the shape's analytic centroid and bounding radius, so
    two samplings of the same spec live in exactly the same frame. Pass
    `normalize=False` for raw surface coordinates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if surface_area(spec) <= 0.0:
        raise ValueError(f"degenerate shape (zero surface area): {spec}")
    pts = _sample_raw(spec, n, _rng(seed))
    if normalize:
        pts = (pts - _analytic_centroid(spec)) / _bound_radius(spec)
    return pts


def sample_rigid_transform(rot_range_deg: float, trans_range: float, seed) -> RigidTransform:
    """Random transform: each intrinsic ZYX Euler angle uniform in
    [0, rot_range_deg] degrees, each translation component uniform in
    [-trans_range, trans_range]."""
    if not (0.0 <= rot_range_deg < 180.0):
        raise ValueError(f"rot_range_deg must be in [0, 180), got {rot_range_deg}")
    if not math.isfinite(trans_range):
        raise ValueError("trans_range must be finite")
    rng = _rng(seed)
    angles = np.radians(rng.uniform(0.0, rot_range_deg, size=3))
    t = rng.uniform(-trans_range, trans_range, size=3)
    return RigidTransform(rotmat_to_quat(euler_zyx_to_rotmat(*angles)), t)


def partial_knn(cloud: np.ndarray, keep: int, seed, viewpoint=None) -> np.ndarray:
    """Keep the `keep` points nearest to a random viewpoint (uniform on the
    sphere of radius 2 around the cloud centroid). Original ordering is kept."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if keep > len(cloud):
        raise ValueError(f"keep={keep} exceeds cloud size {len(cloud)}")
    if viewpoint is None:
        rng = _rng(seed)
        d = rng.normal(size=3)
        viewpoint = cloud.mean(axis=0) + 2.0 * d / np.linalg.norm(d)
    dist = np.linalg.norm(cloud - np.asarray(viewpoint), axis=1)
    kept = np.sort(np.argsort(dist, kind="stable")[:keep])
    return cloud[kept]


def partial_halfspace(cloud: np.ndarray, retain_frac: float, downsample_to: int | None, seed, normal=None) -> np.ndarray:
    """Crop to a half-space with a random direction, keeping exactly
    ceil(retain_frac * n) points (offset chosen by order statistics), then
    optionally downsample uniformly to `downsample_to` points."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if not (0.0 < retain_frac <= 1.0):
        raise ValueError(f"retain_frac must be in (0, 1], got {retain_frac}")
    rng = _rng(seed)
    if normal is None:
        d = rng.normal(size=3)
        normal = d / np.linalg.norm(d)
    n_keep = int(math.ceil(retain_frac * len(cloud)))
    proj = cloud @ np.asarray(normal)
    kept = np.sort(np.argsort(-proj, kind="stable")[:n_keep])
    if downsample_to is not None:
        if downsample_to > n_keep:
            raise ValueError(f"downsample_to={downsample_to} exceeds retained count {n_keep}")
        kept = np.sort(rng.choice(kept, size=downsample_to, replace=False))
    return cloud[kept]


def add_gaussian_noise(cloud: np.ndarray, sigma: float, clip: float, seed) -> np.ndarray:
    """Per-coordinate i.i.d. Gaussian noise clamped to [-clip, clip]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if clip <= 0:
        raise ValueError("clip must be > 0")
    cloud = np.asarray(cloud, dtype=np.float64)
    if sigma == 0.0:
        return cloud.copy()
    noise = np.clip(_rng(seed).normal(0.0, sigma, size=cloud.shape), -clip, clip)
    return cloud + noise


def compute_gt_masks(x: np.ndarray, y: np.ndarray, gt: RigidTransform, threshold: float = DEFAULT_MASK_THRESHOLD):
    """Binary overlap masks: mask_x[j] = 1 iff the gt-transformed x_j has a
    neighbor in y within `threshold`; mask_y symmetrically via the inverse."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    moved = apply(gt, x)
    d_x = np.sqrt(((moved[:, None, :] - y[None, :, :]) ** 2).sum(axis=2).min(axis=1))
    back = apply(inverse(gt), y)
    d_y = np.sqrt(((back[:, None, :] - x[None, :, :]) ** 2).sum(axis=2).min(axis=1))
    return (d_x <= threshold).astype(np.float64), (d_y <= threshold).astype(np.float64)


# ---------------------------------------------------------------------------
# Pair construction


@dataclass
class RegistrationPair:
    """Source X, reference Y, the transform mapping X onto Y, binary overlap
    masks, the overlap ratio alpha, and the seed that generated everything.
    `mask_threshold` records the distance threshold the masks were labelled
    with, so downstream label recomputation stays consistent."""

    source: np.ndarray
    reference: np.ndarray
    gt: RigidTransform
    mask_x: np.ndarray
    mask_y: np.ndarray
    alpha: float
    seed: int
    rejections: int = 0
    mask_threshold: float = DEFAULT_MASK_THRESHOLD


@dataclass(frozen=True)
class PairConfig:
    """Knobs for one generated pair; `partial` is one of none/knn/halfspace."""

    shape: ShapeSpec
    n_points: int = 2048
    rot_range_deg: float = 45.0
    trans_range: float = 0.5
    partial: str = "none"
    keep: int = 768
    retain_frac: float = 0.7
    downsample_to: int | None = 717
    noise_sigma: float = 0.0
    noise_clip: float = 0.05
    mask_threshold: float = DEFAULT_MASK_THRESHOLD
    pool_size: int = 40

    def __post_init__(self):
        if self.partial not in ("none", "knn", "halfspace"):
            raise ValueError(f"partial must be none/knn/halfspace, got '{self.partial}'")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "shape"}
        d["shape"] = self.shape.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PairConfig":
        d = dict(d)
        d["shape"] = ShapeSpec.from_dict(d["shape"])
        if d.get("downsample_to") is not None:
            d["downsample_to"] = int(d["downsample_to"])
        return cls(**d)


def _crop(cloud: np.ndarray, config: PairConfig, seed) -> np.ndarray:
    if config.partial == "none":
        return cloud
    if config.partial == "knn":
        return partial_knn(cloud, config.keep, seed)
    return partial_halfspace(cloud, config.retain_frac, config.downsample_to, seed)


def make_pair(config: PairConfig, seed: int) -> RegistrationPair:
    """Generate one registration pair. Pairs whose overlap mask comes out all
    zero are rejected and regenerated from a derived seed, counting rejections."""
    rejections = 0
    for attempt in range(64):
        ss = np.random.SeedSequence([int(seed), attempt])
        k_meta, k_transform, k_crop_x, k_crop_y, k_noise_x, k_noise_y = ss.spawn(6)
        # Twice-sampled protocol: materialize 2 of `pool_size` independent
        # samplings of the surface, chosen without replacement.
        i, j = _rng(k_meta).choice(config.pool_size, size=2, replace=False)
        s_x = sample_surface(config.shape, config.n_points, np.random.SeedSequence([int(seed), attempt, int(i)]))
        s_y = sample_surface(config.shape, config.n_points, np.random.SeedSequence([int(seed), attempt, int(j)]))
        gt = sample_rigid_transform(config.rot_range_deg, config.trans_range, k_transform)
        x = _crop(s_x, config, k_crop_x)
        y = apply(gt, _crop(s_y, config, k_crop_y))
        x = add_gaussian_noise(x, config.noise_sigma, config.noise_clip, k_noise_x)
        y = add_gaussian_noise(y, config.noise_sigma, config.noise_clip, k_noise_y)
        mask_x, mask_y = compute_gt_masks(x, y, gt, config.mask_threshold)
        alpha = float(mask_x.mean())
        if alpha > 0.0:
            return RegistrationPair(x, y, gt, mask_x, mask_y, alpha, int(seed), rejections, config.mask_threshold)
        rejections += 1
    raise RuntimeError(f"make_pair: no overlapping pair after {rejections} attempts (seed {seed})")


def make_pair_twice_sampled(spec: ShapeSpec, n: int, rot_range_deg: float = 45.0, trans_range: float = 0.5, seed: int = 0, mask_threshold: float = DEFAULT_MASK_THRESHOLD, pool_size: int = 40) -> RegistrationPair:
    """Full-overlap twice-sampled pair (no partiality, no noise)."""
    config = PairConfig(
        shape=spec,
        n_points=n,
        rot_range_deg=rot_range_deg,
        trans_range=trans_range,
        partial="none",
        mask_threshold=mask_threshold,
        pool_size=pool_size,
    )
    return make_pair(config, seed)


def make_pair_at_overlap(spec: ShapeSpec, target_alpha: float, n: int = 2048, keep: int = 768, rot_range_deg: float = 45.0, trans_range: float = 0.5, noise_sigma: float = 0.0, noise_clip: float = 0.05, mask_threshold: float = DEFAULT_MASK_THRESHOLD, seed: int = 0, tol: float = 0.05) -> RegistrationPair:
    """Pair with a controlled overlap ratio.

    X is a contiguous patch (k nearest to a shared viewpoint); Y is a band of
    the same size in the viewpoint-distance ordering of an independent
    sampling, shifted so that its overlapping and non-overlapping parts sit
    adjacent to X's boundary. The shift is searched so the measured alpha lands
    within `tol` of the target.
    """
    if not (0.0 < target_alpha <= 1.0):
        raise ValueError(f"target_alpha must be in (0, 1], got {target_alpha}")
    if keep > n:
        raise ValueError(f"keep={keep} exceeds n={n}")
    ss = np.random.SeedSequence([int(seed), 0])
    k_view, k_transform, k_noise_x, k_noise_y = ss.spawn(4)
    s_x = sample_surface(spec, n, np.random.SeedSequence([int(seed), 0, 0]))
    s_y = sample_surface(spec, n, np.random.SeedSequence([int(seed), 0, 1]))
    d = _rng(k_view).normal(size=3)
    view = s_x.mean(axis=0) + 2.0 * d / np.linalg.norm(d)
    x0 = partial_knn(s_x, keep, None, viewpoint=view)
    order_y = np.argsort(np.linalg.norm(s_y - view, axis=1), kind="stable")

    def band(offset: int) -> np.ndarray:
        return s_y[np.sort(order_y[offset : offset + keep])]

    def measured_alpha(offset: int) -> float:
        mask, _ = compute_gt_masks(x0, band(offset), RigidTransform.identity(), mask_threshold)
        return float(mask.mean())

    max_offset = n - keep
    coarse = sorted(set(list(range(0, max_offset + 1, max(1, max_offset // 48))) + [0, max_offset]))
    achieved = {r: measured_alpha(r) for r in coarse}
    best = min(achieved, key=lambda r: (abs(achieved[r] - target_alpha), r))
    step = max(1, max_offset // 48)
    for r in range(max(0, best - step), min(max_offset, best + step) + 1):
        if r not in achieved:
            achieved[r] = measured_alpha(r)
    best = min(achieved, key=lambda r: (abs(achieved[r] - target_alpha), r))
    if abs(achieved[best] - target_alpha) > tol:
        lo, hi = min(achieved.values()), max(achieved.values())
        raise ValueError(
            f"target overlap {target_alpha} unreachable for this shape/crop; achievable range [{lo:.3f}, {hi:.3f}]"
        )
    y0 = band(best)
    gt = sample_rigid_transform(rot_range_deg, trans_range, k_transform)
    x = add_gaussian_noise(x0, noise_sigma, noise_clip, k_noise_x)
    y = add_gaussian_noise(apply(gt, y0), noise_sigma, noise_clip, k_noise_y)
    mask_x, mask_y = compute_gt_masks(x, y, gt, mask_threshold)
    return RegistrationPair(x, y, gt, mask_x, mask_y, float(mask_x.mean()), int(seed), mask_threshold=mask_threshold)


# ---------------------------------------------------------------------------
# Manifest: JSON lines, one pair per line, clouds stored as sibling PLY files.


def _mask_to_bits(mask: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in mask)


def _bits_to_mask(bits: str) -> np.ndarray:
    return np.array([1.0 if c == "1" else 0.0 for c in bits], dtype=np.float64)


def write_manifest(out_dir, pairs, name: str = "manifest.jsonl") -> Path:
    """Write pairs to `out_dir`: PLY clouds plus a JSONL manifest with
    file-relative paths, transforms, masks as bitstrings, alpha, and seeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / name
    with open(manifest, "w") as f:
        for i, pair in enumerate(pairs):
            src_name = f"pair_{i:05d}_src.ply"
            ref_name = f"pair_{i:05d}_ref.ply"
            plyio.save_ply(out_dir / src_name, pair.source)
            plyio.save_ply(out_dir / ref_name, pair.reference)
            record = {
                "source": src_name,
                "reference": ref_name,
                "gt": pair.gt.to_json_dict(),
                "mask_x": _mask_to_bits(pair.mask_x),
                "mask_y": _mask_to_bits(pair.mask_y),
                "alpha": pair.alpha,
                "seed": pair.seed,
                "mask_threshold": pair.mask_threshold,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest


def read_manifest(manifest_path) -> list:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    pairs = []
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pairs.append(
            RegistrationPair(
                source=plyio.load_ply(base / rec["source"]),
                reference=plyio.load_ply(base / rec["reference"]),
                gt=RigidTransform.from_json_dict(rec["gt"]),
                mask_x=_bits_to_mask(rec["mask_x"]),
                mask_y=_bits_to_mask(rec["mask_y"]),
                alpha=float(rec["alpha"]),
                seed=int(rec["seed"]),
                mask_threshold=float(rec.get("mask_threshold", DEFAULT_MASK_THRESHOLD)),
            )
        )
    return pairs
