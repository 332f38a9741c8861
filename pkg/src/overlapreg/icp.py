"""Classical point-to-point ICP: k-d tree correspondence search plus
closed-form SVD alignment, with optional correspondence trimming."""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform, apply, rotmat_to_quat


class KdTree:
    """Static k-d tree over an (n, d) cloud for exact nearest-neighbor queries.

    Median split on the widest axis down to bucketed leaves. Queries run in
    two vectorized passes over the leaf partition: an initial guess from each
    query's nearest leaf (by bounding-sphere center), then exact refinement
    over every leaf whose bounding sphere could still beat that guess.
    Distance ties resolve to the lowest point index.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = 32):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("KdTree requires a non-empty (n, d) array")
        self._leaves = []
        self._split(np.arange(len(self.points)), max(1, leaf_size))
        self._centers = np.array([self.points[idx].mean(axis=0) for idx in self._leaves])
        self._radii = np.array(
            [np.sqrt(((self.points[idx] - c) ** 2).sum(axis=1)).max() for idx, c in zip(self._leaves, self._centers)]
        )
        self._leaf_pts = [self.points[idx] for idx in self._leaves]
        self._leaf_sq = [np.einsum("ij,ij->i", p, p) for p in self._leaf_pts]

    def _split(self, idx: np.ndarray, leaf_size: int) -> None:
        pts = self.points[idx]
        spread = np.ptp(pts, axis=0)
        if len(idx) <= leaf_size or spread.max() == 0.0:
            self._leaves.append(np.sort(idx))
            return
        axis = int(np.argmax(spread))
        order = np.argsort(pts[:, axis], kind="stable")
        mid = len(idx) // 2
        self._split(idx[order[:mid]], leaf_size)
        self._split(idx[order[mid:]], leaf_size)

    def query_many(self, queries: np.ndarray):
        """Exact nearest neighbors of each query point: (indices, distances)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        nq = len(queries)
        q_sq = np.einsum("ij,ij->i", queries, queries)
        center_dist = np.sqrt(
            np.maximum(q_sq[:, None] + np.einsum("ij,ij->i", self._centers, self._centers)[None, :]
                       - 2.0 * queries @ self._centers.T, 0.0)
        )
        lower = np.maximum(center_dist - self._radii[None, :], 0.0)
        best_d2 = np.full(nq, np.inf)
        best_idx = np.full(nq, -1, dtype=np.int64)

        def scan(leaf_id: int, rows: np.ndarray) -> None:
            idx = self._leaves[leaf_id]
            d2 = q_sq[rows, None] + self._leaf_sq[leaf_id][None, :] - 2.0 * queries[rows] @ self._leaf_pts[leaf_id].T
            j = np.argmin(d2, axis=1)  # first hit = lowest index (leaf is sorted)
            cand_d2 = np.maximum(d2[np.arange(len(rows)), j], 0.0)
            cand_idx = idx[j]
            better = (cand_d2 < best_d2[rows]) | ((cand_d2 == best_d2[rows]) & (cand_idx < best_idx[rows]))
            upd = rows[better]
            best_d2[upd] = cand_d2[better]
            best_idx[upd] = cand_idx[better]

        first = np.argmin(center_dist, axis=1)
        for leaf_id in np.unique(first):
            scan(leaf_id, np.flatnonzero(first == leaf_id))
        # slight bound inflation absorbs last-ulp noise in the fast distance form
        candidate = lower**2 <= best_d2[:, None] * (1.0 + 1e-12) + 1e-30
        for leaf_id in range(len(self._leaves)):
            rows = np.flatnonzero(candidate[:, leaf_id] & (first != leaf_id))
            if len(rows):
                scan(leaf_id, rows)
        # report exact distances for the winners (the search form is ulp-fuzzy)
        exact = np.sqrt(((queries - self.points[best_idx]) ** 2).sum(axis=1))
        return best_idx, exact

    def query(self, q: np.ndarray):
        idx, dist = self.query_many(np.asarray(q, dtype=np.float64)[None, :])
        return int(idx[0]), float(dist[0])


def nearest_neighbors(query: np.ndarray, target: np.ndarray):
    """For each query point, the exact nearest target index and its distance."""
    target = np.asarray(target, dtype=np.float64)
    if len(target) == 0:
        raise ValueError("nearest_neighbors: empty target cloud")
    return KdTree(target).query_many(query)


def svd_align(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping src onto dst (known correspondences).

    Reflections are corrected so the rotation is proper (det = +1).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or len(src) < 3:
        raise ValueError(f"svd_align: need matching clouds of >= 3 points, got {src.shape} and {dst.shape}")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-12 * max(1.0, s[0]):
        raise ValueError(
            "svd_align: cross-covariance is rank-deficient "
            f"(singular values {s}); points are collinear or coincident"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - r @ c_src
    return RigidTransform(rotmat_to_quat(r), t)


@dataclass
class IcpConfig:
    max_iterations: int = 50
    convergence_eps: float = 1e-8
    max_correspondence_dist: float | None = None
    trim_fraction: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be > 0")


@dataclass
class IcpResult:
    transform: RigidTransform
    residuals: list = field(default_factory=list)
    converged: bool = False
    degenerate: bool = False
    iterations: int = 0


def icp_register(src: np.ndarray, dst: np.ndarray, init: RigidTransform | None = None, config: IcpConfig | None = None) -> IcpResult:
    """Alternate closest-point correspondences and SVD alignment from `init`.

    Stops when the RMS correspondence residual changes by less than
    `convergence_eps` (or drops below it), or after `max_iterations`. With no
    trimming active, the recorded residual history is non-increasing.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("icp_register: empty input cloud")
    config = config or IcpConfig()
    current = init or RigidTransform.identity()
    tree = KdTree(dst)
    residuals = []
    prev_res = math.inf
    result = IcpResult(transform=current)
    for it in range(1, config.max_iterations + 1):
        moved = apply(current, src)
        idx, dist = tree.query_many(moved)
        keep = np.ones(len(src), dtype=bool)
        if config.max_correspondence_dist is not None:
            keep &= dist <= config.max_correspondence_dist
        if config.trim_fraction is not None and 0.0 < config.trim_fraction < 1.0:
            n_keep = max(3, int(math.ceil((1.0 - config.trim_fraction) * len(src))))
            order = np.argsort(dist, kind="stable")
            trimmed = np.zeros(len(src), dtype=bool)
            trimmed[order[:n_keep]] = True
            keep &= trimmed
        if keep.sum() < 3:
            result.degenerate = True
            break
        try:
            current = svd_align(src[keep], dst[idx[keep]])
        except ValueError:
            result.degenerate = True
            break
        moved = apply(current, src)
        res = float(np.sqrt(np.mean(np.sum((moved[keep] - dst[idx[keep]]) ** 2, axis=1))))
        residuals.append(res)
        result.transform = current
        result.iterations = it
        if res < config.convergence_eps or abs(prev_res - res) < config.convergence_eps:
            result.converged = True
            break
        prev_res = res
    result.residuals = residuals
    return result
