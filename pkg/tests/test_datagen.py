import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlapreg import datagen as dg
from overlapreg.geometry import RigidTransform, apply, inverse, rotmat_to_euler_zyx


# --- ShapeSpec -------------------------------------------------------------------


def test_shape_validation():
    with pytest.raises(ValueError, match="positive"):
        dg.ShapeSpec("sphere", (0.0,))
    with pytest.raises(ValueError, match="major"):
        dg.ShapeSpec("torus", (0.2, 0.5))
    with pytest.raises(ValueError, match="child"):
        dg.ShapeSpec("composite")
    with pytest.raises(ValueError, match="unknown"):
        dg.ShapeSpec("klein_bottle")


def test_symmetric_flags():
    assert dg.ShapeSpec.sphere().symmetric
    assert dg.ShapeSpec.cylinder().symmetric
    assert dg.ShapeSpec.torus().symmetric
    assert not dg.ShapeSpec.box().symmetric
    assert not dg.asymmetric_composite(0).symmetric


def test_shape_dict_round_trip():
    spec = dg.asymmetric_composite(1)
    assert dg.ShapeSpec.from_dict(spec.to_dict()) == spec


# --- sample_surface --------------------------------------------------------------


def test_sphere_points_on_surface():
    pts = dg.sample_surface(dg.ShapeSpec.sphere(), 2048, seed=1, normalize=False)
    r = np.linalg.norm(pts, axis=1)
    assert np.abs(r - 1.0).max() < 1e-9


def test_box_face_counts_proportional_to_area():
    ex, ey, ez = 1.0, 0.5, 0.25
    n = 4096
    pts = dg.sample_surface(dg.ShapeSpec.box(ex, ey, ez), n, seed=2, normalize=False)
    half = np.array([ex, ey, ez]) / 2
    areas = np.array([ey * ez, ex * ez, ex * ey])  # one face per axis pair
    total = 2 * areas.sum()
    for axis in range(3):
        on_face = np.isclose(np.abs(pts[:, axis]), half[axis]).sum()
        p = 2 * areas[axis] / total
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(on_face - n * p) < 3 * sigma


def test_sampling_deterministic():
    spec = dg.ShapeSpec.torus()
    a = dg.sample_surface(spec, 256, seed=3)
    b = dg.sample_surface(spec, 256, seed=3)
    assert np.array_equal(a, b)
    c = dg.sample_surface(spec, 256, seed=4)
    assert not np.array_equal(a, c)


def test_normalized_cloud_fits_unit_sphere():
    for spec in (dg.ShapeSpec.cylinder(), dg.asymmetric_composite(2), dg.ShapeSpec.torus()):
        pts = dg.sample_surface(spec, 512, seed=5)
        assert np.linalg.norm(pts, axis=1).max() <= 1.0 + 1e-12


def test_sample_surface_rejects_bad_n():
    with pytest.raises(ValueError):
        dg.sample_surface(dg.ShapeSpec.sphere(), 0, seed=0)


def test_ply_shape_sampling(tmp_path, rng):
    from overlapreg import plyio

    cloud = rng.normal(size=(100, 3))
    path = tmp_path / "shape.ply"
    plyio.save_ply(path, cloud)
    spec = dg.ShapeSpec.ply(path)
    pts = dg.sample_surface(spec, 50, seed=1, normalize=False)
    assert pts.shape == (50, 3)
    # every sampled point is one of the vertices
    d = np.abs(pts[:, None, :] - cloud[None, :, :]).sum(axis=2).min(axis=1)
    assert d.max() == 0.0


# --- sample_rigid_transform ------------------------------------------------------


def test_zero_width_ranges_give_identity():
    t = dg.sample_rigid_transform(0.0, 0.0, seed=0)
    assert np.allclose(t.rotmat(), np.eye(3), atol=1e-12)
    assert np.array_equal(t.translation, np.zeros(3))


def test_transform_ranges_respected():
    for seed in range(200):
        t = dg.sample_rigid_transform(45.0, 0.5, seed=seed)
        angles = np.degrees(rotmat_to_euler_zyx(t.rotmat()))
        assert np.all(angles >= -1e-9) and np.all(angles <= 45.0 + 1e-9)
        assert np.all(np.abs(t.translation) <= 0.5)


def test_transform_deterministic():
    a = dg.sample_rigid_transform(45.0, 0.5, seed=9)
    b = dg.sample_rigid_transform(45.0, 0.5, seed=9)
    assert np.array_equal(a.rotmat(), b.rotmat())
    assert np.array_equal(a.translation, b.translation)


def test_transform_range_validation():
    with pytest.raises(ValueError):
        dg.sample_rigid_transform(200.0, 0.5, seed=0)
    with pytest.raises(ValueError):
        dg.sample_rigid_transform(45.0, math.inf, seed=0)


# --- partial crops ---------------------------------------------------------------


def test_partial_knn_keep_all_is_identity(rng):
    cloud = rng.normal(size=(64, 3))
    assert np.array_equal(dg.partial_knn(cloud, 64, seed=0), cloud)


def test_partial_knn_matches_distance_sort_oracle(rng):
    cloud = rng.normal(size=(2048, 3))
    viewpoint = np.array([0.3, -1.9, 0.6])
    kept = dg.partial_knn(cloud, 768, seed=0, viewpoint=viewpoint)
    assert kept.shape == (768, 3)
    d = np.linalg.norm(cloud - viewpoint, axis=1)
    oracle = cloud[np.sort(np.argsort(d, kind="stable")[:768])]
    assert np.array_equal(kept, oracle)
    # every kept point is at least as close as every discarded point
    kept_d = np.linalg.norm(kept - viewpoint, axis=1)
    cutoff = np.sort(d)[767]
    assert kept_d.max() <= cutoff


def test_partial_knn_viewpoint_bias_on_sphere():
    cloud = dg.sample_surface(dg.ShapeSpec.sphere(), 1024, seed=6)
    vp = np.array([0.0, 0.0, 2.0])
    kept = dg.partial_knn(cloud, 300, seed=0, viewpoint=vp)
    kept_set = {tuple(p) for p in kept}
    discarded = np.array([p for p in cloud if tuple(p) not in kept_set])
    assert kept[:, 2].mean() > discarded[:, 2].mean()


def test_partial_knn_rejects_keep_too_large(rng):
    with pytest.raises(ValueError, match="exceeds"):
        dg.partial_knn(rng.normal(size=(10, 3)), 11, seed=0)


def test_partial_halfspace_counts_and_side(rng):
    cloud = rng.normal(size=(1024, 3))
    kept = dg.partial_halfspace(cloud, 0.7, 717, seed=1)
    assert kept.shape == (717, 3)
    # without downsampling: exact count and a clean separating plane
    normal = np.array([0.2, 0.5, -0.8])
    normal /= np.linalg.norm(normal)
    kept_full = dg.partial_halfspace(cloud, 0.7, None, seed=1, normal=normal)
    assert len(kept_full) == math.ceil(0.7 * 1024)
    kept_set = {tuple(p) for p in kept_full}
    discarded = np.array([p for p in cloud if tuple(p) not in kept_set])
    assert (kept_full @ normal).min() >= (discarded @ normal).max()


def test_partial_halfspace_full_retain(rng):
    cloud = rng.normal(size=(50, 3))
    assert np.array_equal(dg.partial_halfspace(cloud, 1.0, None, seed=0), cloud)


def test_partial_halfspace_downsample_validation(rng):
    with pytest.raises(ValueError, match="exceeds retained"):
        dg.partial_halfspace(rng.normal(size=(100, 3)), 0.5, 51, seed=0)


# --- noise -----------------------------------------------------------------------


def test_noise_sigma_zero_is_identity(rng):
    cloud = rng.normal(size=(32, 3))
    assert np.array_equal(dg.add_gaussian_noise(cloud, 0.0, 0.05, seed=0), cloud)


def test_noise_clipped_and_calibrated(rng):
    cloud = np.zeros((100_000, 3))
    noisy = dg.add_gaussian_noise(cloud, 0.01, 0.05, seed=7)
    assert np.abs(noisy).max() <= 0.05
    assert abs(noisy.std() - 0.01) / 0.01 < 0.05


def test_noise_validation(rng):
    cloud = rng.normal(size=(4, 3))
    with pytest.raises(ValueError):
        dg.add_gaussian_noise(cloud, -0.1, 0.05, seed=0)
    with pytest.raises(ValueError):
        dg.add_gaussian_noise(cloud, 0.1, 0.0, seed=0)


# --- ground-truth masks ----------------------------------------------------------


def brute_force_masks(x, y, gt, threshold):
    moved = apply(gt, x)
    back = apply(inverse(gt), y)
    mask_x = np.zeros(len(x))
    for j, p in enumerate(moved):
        if np.sqrt(((y - p) ** 2).sum(axis=1)).min() <= threshold:
            mask_x[j] = 1.0
    mask_y = np.zeros(len(y))
    for k, p in enumerate(back):
        if np.sqrt(((x - p) ** 2).sum(axis=1)).min() <= threshold:
            mask_y[k] = 1.0
    return mask_x, mask_y


def test_masks_identical_clouds_all_ones(rng):
    x = rng.normal(size=(40, 3))
    mask_x, mask_y = dg.compute_gt_masks(x, x, RigidTransform.identity(), 0.01)
    assert mask_x.all() and mask_y.all()


def test_masks_disjoint_clouds_all_zero(rng):
    x = rng.normal(size=(20, 3))
    y = x + np.array([100.0, 0.0, 0.0])
    mask_x, mask_y = dg.compute_gt_masks(x, y, RigidTransform.identity(), 0.1)
    assert not mask_x.any() and not mask_y.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**9))
def test_masks_match_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    pair = dg.make_pair(
        dg.PairConfig(shape=dg.asymmetric_composite(seed % 4), n_points=64, partial="knn", keep=24, mask_threshold=0.3),
        seed,
    )
    ref_x, ref_y = brute_force_masks(pair.source, pair.reference, pair.gt, pair.mask_threshold)
    assert np.array_equal(pair.mask_x, ref_x)
    assert np.array_equal(pair.mask_y, ref_y)


def test_mask_threshold_validation(rng):
    x = rng.normal(size=(5, 3))
    with pytest.raises(ValueError):
        dg.compute_gt_masks(x, x, RigidTransform.identity(), 0.0)


# --- pair factories --------------------------------------------------------------


def test_twice_sampled_no_shared_points():
    pair = dg.make_pair_twice_sampled(dg.asymmetric_composite(0), 256, seed=1)
    d = np.abs(pair.source[:, None, :] - apply(inverse(pair.gt), pair.reference)[None, :, :]).sum(axis=2)
    assert d.min() > 0.0


def test_twice_sampled_full_overlap_all_ones():
    pair = dg.make_pair_twice_sampled(dg.ShapeSpec.sphere(), 1024, seed=2, mask_threshold=0.2)
    assert pair.mask_x.all() and pair.mask_y.all()
    assert pair.alpha == 1.0


def test_choose_two_of_forty_protocol():
    assert math.comb(40, 2) == 780
    # the two pool indices drawn are always distinct
    for seed in range(20):
        ss = np.random.SeedSequence([seed, 0])
        k_meta = ss.spawn(6)[0]
        i, j = np.random.default_rng(k_meta).choice(40, size=2, replace=False)
        assert i != j


def test_make_pair_deterministic():
    pc = dg.PairConfig(shape=dg.asymmetric_composite(1), n_points=128, partial="knn", keep=48, noise_sigma=0.01, mask_threshold=0.3)
    a = dg.make_pair(pc, 77)
    b = dg.make_pair(pc, 77)
    assert np.array_equal(a.source, b.source)
    assert np.array_equal(a.reference, b.reference)
    assert np.array_equal(a.mask_x, b.mask_x)
    assert a.alpha == b.alpha
    assert np.array_equal(a.gt.rotmat(), b.gt.rotmat())


def test_pair_alpha_counts_mask(rng):
    pc = dg.PairConfig(shape=dg.asymmetric_composite(0), n_points=128, partial="knn", keep=48, mask_threshold=0.3)
    pair = dg.make_pair(pc, 5)
    assert pair.alpha == pytest.approx(pair.mask_x.sum() / len(pair.source))
    assert 0.0 < pair.alpha <= 1.0


def test_pair_paper_defaults_alpha_positive():
    pc = dg.PairConfig(shape=dg.asymmetric_composite(0), n_points=2048, partial="knn", keep=768)
    pair = dg.make_pair(pc, 31)
    assert pair.alpha > 0.0
    assert pair.rejections == 0
    assert len(pair.source) == 768 and len(pair.reference) == 768


def test_pair_rejection_loop_exhausts_on_impossible_threshold():
    # twice-sampled points never coincide, so a near-zero threshold labels
    # everything non-overlapping and every attempt is rejected
    pc = dg.PairConfig(shape=dg.asymmetric_composite(0), n_points=48, partial="knn", keep=16, mask_threshold=1e-9)
    with pytest.raises(RuntimeError, match="no overlapping pair"):
        dg.make_pair(pc, 1)


def test_pair_masked_points_have_near_neighbors():
    pc = dg.PairConfig(shape=dg.asymmetric_composite(3), n_points=128, partial="knn", keep=48, mask_threshold=0.3)
    pair = dg.make_pair(pc, 6)
    moved = apply(pair.gt, pair.source)
    d = np.sqrt(((moved[:, None, :] - pair.reference[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    assert (d[pair.mask_x == 1.0] <= pc.mask_threshold).all()
    assert (d[pair.mask_x == 0.0] > pc.mask_threshold).all()


# --- controlled-overlap pairs -----------------------------------------------------


def test_overlap_target_one_gives_full_overlap():
    pair = dg.make_pair_at_overlap(dg.asymmetric_composite(0), 1.0, n=512, keep=192, mask_threshold=0.25, seed=3)
    assert pair.alpha >= 0.95


@pytest.mark.parametrize("target", [0.9, 0.5, 0.1])
def test_overlap_targets_achieved(target):
    pair = dg.make_pair_at_overlap(dg.asymmetric_composite(1), target, n=512, keep=192, mask_threshold=0.25, seed=4)
    recomputed, _ = dg.compute_gt_masks(pair.source, pair.reference, pair.gt, pair.mask_threshold)
    assert abs(float(recomputed.mean()) - target) <= 0.05
    assert pair.alpha == pytest.approx(float(recomputed.mean()))


def test_overlap_pair_deterministic():
    a = dg.make_pair_at_overlap(dg.asymmetric_composite(2), 0.5, n=256, keep=96, mask_threshold=0.28, seed=8)
    b = dg.make_pair_at_overlap(dg.asymmetric_composite(2), 0.5, n=256, keep=96, mask_threshold=0.28, seed=8)
    assert np.array_equal(a.source, b.source)
    assert np.array_equal(a.reference, b.reference)
    assert a.alpha == b.alpha


def test_overlap_infeasible_target_names_range():
    # keep == n leaves no room to shift the reference band away: only alpha ~ 1 is achievable
    with pytest.raises(ValueError, match="achievable range"):
        dg.make_pair_at_overlap(dg.asymmetric_composite(0), 0.1, n=256, keep=256, mask_threshold=0.28, seed=1)


def test_overlap_target_validation():
    with pytest.raises(ValueError, match="target_alpha"):
        dg.make_pair_at_overlap(dg.ShapeSpec.sphere(), 0.0, seed=0)


# --- manifest ---------------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    pc = dg.PairConfig(shape=dg.asymmetric_composite(0), n_points=96, partial="knn", keep=32, noise_sigma=0.01, mask_threshold=0.3)
    pairs = [dg.make_pair(pc, s) for s in (1, 2, 3)]
    manifest = dg.write_manifest(tmp_path, pairs)
    back = dg.read_manifest(manifest)
    assert len(back) == 3
    for orig, loaded in zip(pairs, back):
        assert np.array_equal(orig.source, loaded.source)
        assert np.array_equal(orig.reference, loaded.reference)
        assert np.array_equal(orig.mask_x, loaded.mask_x)
        assert np.array_equal(orig.mask_y, loaded.mask_y)
        assert loaded.alpha == orig.alpha
        assert loaded.seed == orig.seed
        assert loaded.mask_threshold == orig.mask_threshold
        assert np.allclose(loaded.gt.rotmat(), orig.gt.rotmat(), atol=1e-15)
        assert np.allclose(loaded.gt.translation, orig.gt.translation, atol=1e-15)
