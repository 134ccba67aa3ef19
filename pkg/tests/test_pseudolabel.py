import itertools
import logging

import numpy as np
import pytest

from maskcount.counter import init_counter_model
from maskcount.errors import NumericError
from maskcount.grids import cosine, make_rng
from maskcount.pseudolabel import (
    ClusterResult,
    PatchGrid,
    PseudoLabelResult,
    dotbox_mask,
    embed_patch,
    exemplar_embedding,
    kmeans,
    kmeans_best_of,
    load_pseudo_result,
    mask_from_clusters,
    optimal_k_mask,
    save_pseudo_result,
    threshold_mask,
    tile_patches,
    verify_k_star,
)
from maskcount.scenes import DESK_CLASSES, ExemplarBox, generate_single_class_scene


def brute_force_optimal_inertia(points, k):
    """Enumerate all surjective assignments; the global SSE optimum."""
    n = len(points)
    best = np.inf
    for assign in itertools.product(range(k), repeat=n):
        if len(set(assign)) < k:
            continue
        total = 0.0
        for c in range(k):
            members = points[[i for i in range(n) if assign[i] == c]]
            centroid = members.mean(axis=0)
            total += ((members - centroid) ** 2).sum()
        best = min(best, total)
    return best


class TestTilePatches:
    def test_first_center(self):
        image = np.zeros((3, 128, 128))
        boxes = [ExemplarBox(10.0, 10.0, 20.0, 20.0, 0)]
        grid, _ = tile_patches(image, boxes, 8)
        assert grid.centers[0] == (4.0, 4.0)

    def test_mean_patch_size(self):
        image = np.zeros((3, 128, 128))
        boxes = [
            ExemplarBox(0.0, 0.0, 10.0, 20.0, 0),
            ExemplarBox(0.0, 0.0, 20.0, 40.0, 0),
        ]
        grid, patches = tile_patches(image, boxes, 8)
        assert grid.patch_w == pytest.approx(15.0)
        assert grid.patch_h == pytest.approx(30.0)
        assert patches[0].shape == (3, 30, 15)

    def test_one_patch_per_mask_cell(self):
        image = np.zeros((3, 128, 128))
        boxes = [ExemplarBox(0.0, 0.0, 12.0, 12.0, 0)]
        grid, patches = tile_patches(image, boxes, 8)
        assert grid.h == 16 and grid.w == 16
        assert len(patches) == 256

    def test_border_patches_padded_to_full_size(self):
        image = np.zeros((3, 64, 64))
        boxes = [ExemplarBox(0.0, 0.0, 20.0, 20.0, 0)]
        _, patches = tile_patches(image, boxes, 8)
        assert all(p.shape == (3, 20, 20) for p in patches)


class TestEmbedPatch:
    def test_constant_patch(self):
        vec = embed_patch(np.full((3, 9, 9), 0.5))
        raw_std = vec[3:6]
        np.testing.assert_allclose(raw_std, 0.0, atol=1e-12)
        hist = vec[6:]
        np.testing.assert_allclose(hist, hist[0])  # uniform bins after normalization
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_rotation_invariant_moments(self):
        rng = make_rng(3)
        patch = rng.uniform(size=(3, 7, 7))
        rotated = np.rot90(patch, k=1, axes=(1, 2)).copy()
        a = embed_patch(patch)
        b = embed_patch(rotated)
        np.testing.assert_allclose(a[:6], b[:6], atol=1e-12)

    def test_distinct_colors_are_distinguishable(self):
        red = embed_patch(np.ones((3, 8, 8)) * np.array([0.9, 0.1, 0.1])[:, None, None])
        blue = embed_patch(np.ones((3, 8, 8)) * np.array([0.1, 0.1, 0.9])[:, None, None])
        assert cosine(red, blue) < 0.99

    def test_tiny_patch_uses_uniform_histogram(self):
        vec = embed_patch(make_rng(1).uniform(size=(3, 1, 1)))
        hist = vec[6:]
        np.testing.assert_allclose(hist, hist[0])


class TestKMeans:
    def test_two_blob_partition_matches_brute_force(self):
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
        result = kmeans(points, 2, make_rng(0))
        assert result.assignments[0] == result.assignments[1]
        assert result.assignments[2] == result.assignments[3]
        assert result.assignments[0] != result.assignments[2]
        assert result.inertia == pytest.approx(brute_force_optimal_inertia(points, 2))

    def test_singleton_clusters_zero_inertia(self):
        rng = make_rng(1)
        points = rng.normal(size=(5, 3))
        result = kmeans(points, 5, rng)
        assert result.inertia == pytest.approx(0.0, abs=1e-12)

    def test_k1_centroid_is_mean(self):
        rng = make_rng(2)
        points = rng.normal(size=(7, 2))
        result = kmeans(points, 1, rng)
        np.testing.assert_allclose(result.centroids[0], points.mean(axis=0), atol=1e-12)

    def test_deterministic_given_seed(self):
        rng_points = make_rng(3)
        points = rng_points.normal(size=(20, 4))
        r1 = kmeans(points, 3, make_rng(5))
        r2 = kmeans(points, 3, make_rng(5))
        np.testing.assert_array_equal(r1.assignments, r2.assignments)
        assert r1.inertia == r2.inertia

    def test_inertia_trace_non_increasing(self):
        rng = make_rng(4)
        for trial in range(20):
            points = rng.normal(size=(int(rng.integers(5, 40)), 3))
            result = kmeans(points, int(rng.integers(1, 5)), rng)
            trace = np.array(result.inertia_trace)
            assert np.all(np.diff(trace) <= 1e-9 * np.maximum(1.0, trace[:-1]))

    def test_every_centroid_owns_a_point(self):
        # identical points force empty-cluster repair
        points = np.zeros((6, 2))
        points[5] = [1.0, 0.0]
        result = kmeans(points, 3, make_rng(6))
        assert set(result.assignments.tolist()) == {0, 1, 2}

    def test_near_optimal_with_restarts(self):
        rng = make_rng(7)
        for trial in range(20):
            n = int(rng.integers(4, 11))
            d = int(rng.integers(1, 4))
            k = int(rng.integers(2, 4))
            if n < k:
                continue
            points = rng.uniform(-5.0, 5.0, size=(n, d))
            best = kmeans_best_of(points, k, rng, restarts=10)
            optimal = brute_force_optimal_inertia(points, k)
            assert best.inertia <= 1.05 * optimal + 1e-9

    def test_too_few_points(self):
        with pytest.raises(NumericError):
            kmeans(np.zeros((2, 2)), 3, make_rng(0))


class TestMaskFromClusters:
    def grid(self, h, w):
        return PatchGrid(r=8, patch_w=8.0, patch_h=8.0, h=h, w=w,
                         centers=[(0.0, 0.0)] * (h * w))

    def test_identical_embeddings_give_all_ones(self):
        points = np.zeros((17, 3))
        result = kmeans(points, 1, make_rng(0))
        mask = mask_from_clusters(result, self.grid(4, 4))
        assert np.all(mask == 1.0)

    def test_singleton_exemplar_cluster_warns_and_zeroes(self, caplog):
        assignments = np.array([0, 0, 0, 0, 1])
        cr = ClusterResult(2, np.zeros((2, 1)), assignments, 0.0, 1)
        with caplog.at_level(logging.WARNING):
            mask = mask_from_clusters(cr, self.grid(2, 2))
        assert np.all(mask == 0.0)
        assert any("singleton" in rec.message for rec in caplog.records)

    def test_checkerboard_separation(self):
        h = w = 4
        coords = []
        for i in range(h):
            for j in range(w):
                coords.append([0.0, 0.0] if (i + j) % 2 == 0 else [10.0, 10.0])
        coords.append([0.2, 0.1])  # exemplar embedding near class A
        result = kmeans(np.array(coords), 2, make_rng(1))
        mask = mask_from_clusters(result, self.grid(h, w))
        expected = np.fromfunction(lambda i, j: ((i + j) % 2 == 0).astype(float), (h, w))
        np.testing.assert_array_equal(mask, expected)

    def test_wrong_point_count_rejected(self):
        cr = ClusterResult(2, np.zeros((2, 1)), np.zeros(5, dtype=int), 0.0, 1)
        with pytest.raises(NumericError):
            mask_from_clusters(cr, self.grid(4, 4))


class TestOptimalK:
    def test_per_k_loss_enumerates_range(self):
        scene = generate_single_class_scene(DESK_CLASSES[0], (128, 128), 11, class_id=0)
        model = init_counter_model(8, 4, 0)
        result = optimal_k_mask(model, scene, (2, 6), make_rng(3), exemplar_size=16)
        assert sorted(result.per_k_loss) == [2, 3, 4, 5, 6]
        assert result.strategy == "kmeans"
        assert result.mask.shape == (16, 16)
        assert verify_k_star(result)

    def test_tie_breaks_to_smaller_k(self):
        result = PseudoLabelResult(
            mask=np.zeros((2, 2)), k_star=3, per_k_loss={2: 9.0, 3: 1.0, 4: 1.0},
            strategy="kmeans",
        )
        assert verify_k_star(result)
        result_bad = PseudoLabelResult(
            mask=np.zeros((2, 2)), k_star=4, per_k_loss={2: 9.0, 3: 1.0, 4: 1.0},
            strategy="kmeans",
        )
        assert not verify_k_star(result_bad)

    def test_returned_kstar_is_argmin(self):
        scene = generate_single_class_scene(DESK_CLASSES[1], (128, 128), 12, class_id=1)
        model = init_counter_model(8, 4, 1)
        result = optimal_k_mask(model, scene, (2, 4), make_rng(4), exemplar_size=16)
        best = min(sorted(result.per_k_loss), key=lambda k: (result.per_k_loss[k], k))
        assert result.k_star == best


class TestDotboxMask:
    def test_no_target_dots(self):
        scene = generate_single_class_scene(DESK_CLASSES[0], (128, 128), 13, class_id=0)
        scene.dots = [d for d in scene.dots if d.class_id != 0]
        assert np.all(dotbox_mask(scene, "mean", r=8) == 0.0)

    def test_single_dot_block_geometry(self):
        scene = generate_single_class_scene(DESK_CLASSES[0], (128, 128), 14, class_id=0)
        scene.dots = scene.dots[:1]
        scene.dots[0].x = 68.0
        scene.dots[0].y = 36.0
        scene.exemplars = [ExemplarBox(60.0, 28.0, 76.0, 44.0, 0)]  # 16x16 box
        mask = dotbox_mask(scene, "mean", r=8)
        expected = np.zeros((16, 16))
        # centers within 8px of (68, 36): x in {60, 68, 76} -> cols 7,8,9; rows 3,4,5
        expected[3:6, 7:10] = 1.0
        np.testing.assert_array_equal(mask, expected)

    def test_monotone_containment(self):
        for seed in range(5):
            scene = generate_single_class_scene(DESK_CLASSES[seed % 6], (128, 128), seed, seed % 6)
            small = dotbox_mask(scene, "min", r=8)
            mid = dotbox_mask(scene, "mean", r=8)
            big = dotbox_mask(scene, "max", r=8)
            assert np.all(small <= mid)
            assert np.all(mid <= big)


class TestThresholdMask:
    def test_tau_zero_all_ones(self):
        scene = generate_single_class_scene(DESK_CLASSES[2], (128, 128), 15, class_id=2)
        model = init_counter_model(8, 4, 2)
        assert np.all(threshold_mask(model, scene, 0.0, exemplar_size=16) == 1.0)

    def test_tau_one_only_max_cells(self):
        scene = generate_single_class_scene(DESK_CLASSES[2], (128, 128), 16, class_id=2)
        model = init_counter_model(8, 4, 3)
        from maskcount.counter import make_exemplars, similarity_map

        s = similarity_map(model, scene.image, make_exemplars(scene, 16))
        mask = threshold_mask(model, scene, 1.0, exemplar_size=16)
        np.testing.assert_array_equal(mask, (s == s.max()).astype(float))

    def test_tau_out_of_range(self):
        scene = generate_single_class_scene(DESK_CLASSES[2], (128, 128), 17, class_id=2)
        model = init_counter_model(8, 4, 3)
        with pytest.raises(NumericError):
            threshold_mask(model, scene, 1.5, exemplar_size=16)


class TestPseudoResultIO:
    def test_roundtrip(self, tmp_path):
        mask = (make_rng(5).uniform(size=(6, 7)) > 0.5).astype(float)
        result = PseudoLabelResult(
            mask=mask, k_star=3, per_k_loss={2: 4.5, 3: 1.25, 4: 2.0}, strategy="kmeans"
        )
        save_pseudo_result(tmp_path / "m.json", result, fingerprint="fp")
        back, fingerprint = load_pseudo_result(tmp_path / "m.json")
        assert fingerprint == "fp"
        np.testing.assert_array_equal(back.mask, mask)
        assert back.k_star == 3
        assert back.per_k_loss == {2: 4.5, 3: 1.25, 4: 2.0}

    def test_corrupt_bits_rejected(self, tmp_path):
        result = PseudoLabelResult(np.ones((2, 2)), 2, {2: 1.0}, "kmeans")
        save_pseudo_result(tmp_path / "m.json", result)
        text = (tmp_path / "m.json").read_text().replace('"1111"', '"11x1"')
        (tmp_path / "m.json").write_text(text)
        from maskcount.errors import ParseError

        with pytest.raises(ParseError):
            load_pseudo_result(tmp_path / "m.json")


class TestExemplarEmbedding:
    def test_mean_of_crop_descriptors(self):
        scene = generate_single_class_scene(DESK_CLASSES[0], (128, 128), 18, class_id=0)
        grid, _ = tile_patches(scene.image, scene.exemplars, 8)
        fb = exemplar_embedding(scene.image, scene.exemplars, grid)
        assert fb.shape == (14,)
        assert np.all(np.isfinite(fb))
