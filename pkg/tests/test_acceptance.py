"""Pass/fail checks for the package's headline guarantees, one test per guarantee.

Thresholds are fixed; a failure here is reported, not relaxed. The training
checks take several minutes each and are marked ``slow``.
"""

import time

import numpy as np
import pytest

from catpose.evaluation import METRICS, Detection, OrientedBox3D, ap_at, ap_curves, evaluate, iou3d, match_detections
from catpose.geometry import Pose, back_project, random_rotation, rotation_about, rotation_error_deg, umeyama_align
from catpose.learn.features import make_batch
from catpose.learn.model import Discriminator, SddrModel
from catpose.learn.train import TrainConfig, evaluate_model, train, variant_config
from catpose.spd import (
    LossTerms,
    LossWeights,
    assemble_depth,
    chamfer_distance,
    estimate_size,
    loss_adv_discriminator,
    loss_adv_generator,
    loss_corr,
    loss_depth_l1,
    loss_entropy,
    loss_reg,
    spd_apply,
    total_loss,
)
from catpose.synth.io import Prediction
from catpose.synth.scene import DEFAULT_CATEGORIES, generate_dataset
from gradcheck import FD_WEIGHTS, TINY, finite_difference_errors, jitter_biases, parameter_total

BENCHMARK_SEED = 0
TEST_PER_CATEGORY = 20  # 100 per category: 480 train, 120 test


@pytest.fixture(scope="session")
def benchmark():
    """The standard synthetic benchmark: six categories, 100 instances each."""
    ds = generate_dataset(DEFAULT_CATEGORIES, n_per_category=100, seed=BENCHMARK_SEED)
    train_split, test_split = ds.split(TEST_PER_CATEGORY)
    return ds, train_split, test_split


class _Runs:
    """Trains each variant at most once per session and remembers the outcome."""

    def __init__(self, benchmark):
        self.ds, self.train_split, self.test_split = benchmark
        self._done = {}

    def get(self, variant):
        if variant not in self._done:
            cfg = variant_config(TrainConfig(seed=BENCHMARK_SEED), variant)
            start = time.perf_counter()
            result = train(self.ds, self.train_split.instances, cfg)
            elapsed = time.perf_counter() - start
            ev = evaluate_model(result.model, self.ds, self.test_split.instances, seed=cfg.seed, with_curves=False)
            self._done[variant] = (ev, elapsed)
        return self._done[variant]


@pytest.fixture(scope="session")
def runs(benchmark):
    return _Runs(benchmark)


def _oriented_box(rng, center_spread):
    center = rng.uniform(-center_spread, center_spread, size=3)
    return OrientedBox3D(Pose(random_rotation(rng), center), rng.uniform(0.2, 1.0, size=3))


def _inside(points, box):
    local = (points - box.pose.translation) @ box.pose.rotation
    return np.all(np.abs(local) <= 0.5 * box.size, axis=1)


def monte_carlo_iou(a, b, n, rng, chunk=1_000_000):
    """Sample uniformly inside the smaller box and count hits in the other.

    Both volumes are exact, so only the intersection is estimated; its
    relative spread at 10^7 samples is a few parts in 10^4.
    """
    small, other = (a, b) if np.prod(a.size) <= np.prod(b.size) else (b, a)
    hits = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        local = rng.uniform(-0.5, 0.5, size=(m, 3)) * small.size
        pts = local @ small.pose.rotation.T + small.pose.translation
        hits += int(_inside(pts, other).sum())
        done += m
    va, vb = np.prod(a.size), np.prod(b.size)
    inter = hits / n * min(va, vb)
    return inter / (va + vb - inter)


def _aabb_iou(ca, sa, cb, sb):
    lo = np.maximum(ca - sa / 2, cb - sb / 2)
    hi = np.minimum(ca + sa / 2, cb + sb / 2)
    inter = np.prod(np.clip(hi - lo, 0, None))
    return inter / (np.prod(sa) + np.prod(sb) - inter)


class TestAcceptance:
    def test_1_oracle_pipeline_is_exact(self, benchmark):
        ds = benchmark[0]
        assert len(ds) == 600
        start = time.perf_counter()
        preds = []
        for inst in ds.instances:
            pose = umeyama_align(inst.gt_nocs, back_project(inst.depth_patch, inst.intrinsics))
            canonical_extent = inst.gt_size / inst.gt_pose.scale
            preds.append(Prediction(inst.id, inst.category, pose, pose.scale * canonical_extent))
        report = evaluate([p.to_detection() for p in preds], [i.as_detection() for i in ds.instances], ds.symmetric_categories)
        elapsed = time.perf_counter() - start

        assert all(report.mean[m] == 1.0 for m in METRICS), report.mean
        for p, inst in zip(preds, ds.instances):
            assert rotation_error_deg(p.pose, inst.gt_pose) < 1e-6
            assert np.linalg.norm(p.pose.translation - inst.gt_pose.translation) < 1e-8
        assert elapsed < 10.0

    def test_2_umeyama_recovery(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        noisy_errors = []
        for _ in range(1000):
            src = rng.uniform(-0.5, 0.5, size=(1024, 3))
            rot = random_rotation(rng)
            scale = rng.uniform(0.5, 2.0)
            direction = rng.normal(size=3)
            t = direction / np.linalg.norm(direction) * rng.uniform(0.0, 3.0)
            dst = scale * src @ rot.T + t
            pose = umeyama_align(src, dst)
            worst = max(
                worst,
                np.abs(pose.rotation - rot).max(),
                np.abs(pose.translation - t).max(),
                abs(pose.scale - scale),
            )
            noisy = umeyama_align(src, dst + rng.normal(0.0, 0.001, size=dst.shape))
            noisy_errors.append(np.linalg.norm(noisy.translation - t))
        assert worst < 1e-9
        assert np.median(noisy_errors) < 0.001

    @pytest.mark.slow
    def test_3_iou_kernel(self):
        rng = np.random.default_rng(3)
        mc_rng = np.random.default_rng(33)
        worst_mc = 0.0
        for _ in range(100):
            a = _oriented_box(rng, 0.1)
            b = _oriented_box(rng, 0.3)
            worst_mc = max(worst_mc, abs(iou3d(a, b) - monte_carlo_iou(a, b, 10_000_000, mc_rng)))

        worst_closed = 0.0
        for _ in range(200):
            ca, cb = rng.uniform(-0.5, 0.5, size=(2, 3))
            sa, sb = rng.uniform(0.1, 1.5, size=(2, 3))
            a = OrientedBox3D(Pose(np.eye(3), ca), sa)
            b = OrientedBox3D(Pose(np.eye(3), cb), sb)
            worst_closed = max(worst_closed, abs(iou3d(a, b) - _aabb_iou(ca, sa, cb, sb)))
        assert worst_mc < 1e-3
        assert worst_closed < 1e-12

    @pytest.mark.slow
    def test_4_gradient_suite(self):
        failures = {}
        for seed in range(5):
            ds = generate_dataset(DEFAULT_CATEGORIES, n_per_category=1, seed=seed, n_pixels=16, n_prior=16)
            batch = make_batch(ds, ds.instances[:3], seed=seed)
            # the full model and the direct-regression heads cover every parameter group
            for cfg in (TINY, variant_config(TrainConfig(model=TINY), "direct_regression").model):
                model = SddrModel(cfg, seed=seed)
                disc = Discriminator(cfg, seed=seed)
                jitter_biases([model, disc], seed)
                errors, skipped = finite_difference_errors(model, disc, batch, FD_WEIGHTS)
                bad = {k: v for k, v in errors.items() if not v < 1e-4}
                if bad or skipped > 0.01 * parameter_total(model, disc):
                    failures[(seed, cfg.shape_prior)] = (bad, skipped)
        assert not failures, failures

    @pytest.mark.slow
    def test_5_toy_training(self, runs):
        ev, elapsed = runs.get("full")
        assert ev.report.mean["10deg10cm"] >= 0.7, ev.report.mean
        assert ev.depth_l1 < 0.02
        assert elapsed < 30 * 60

    @pytest.mark.slow
    def test_6_ablation_direction(self, runs):
        full = runs.get("full")[0].report.mean
        no_ngph = runs.get("no_ngph")[0].report.mean
        no_decouple = runs.get("no_decouple")[0].report.mean
        assert no_ngph["10cm"] < full["10cm"], (no_ngph, full)
        assert no_decouple["IoU50"] < full["IoU50"], (no_decouple, full)

    def test_7_alignment_throughput(self):
        rng = np.random.default_rng(7)
        pairs = []
        for _ in range(150):
            src = rng.uniform(-0.5, 0.5, size=(1024, 3))
            dst = 0.3 * src @ random_rotation(rng).T + rng.uniform(-1, 1, size=3)
            pairs.append((src, dst))
        start = time.perf_counter()
        for src, dst in pairs:
            umeyama_align(src, dst)
        rate = len(pairs) / (time.perf_counter() - start)
        assert rate >= 30.0

    def test_8_loss_stack(self):
        cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
        prior = np.random.default_rng(8).uniform(-0.5, 0.5, size=(6, 3))
        offset = np.array([0.1, -0.2, 0.3])

        # shape prior deformation
        assert np.array_equal(spd_apply(prior, np.zeros_like(prior), np.eye(6)), prior)
        assert np.array_equal(spd_apply(prior, np.tile(offset, (6, 1)), np.eye(6)), prior + offset)
        assert np.array_equal(assemble_depth(np.zeros((4, 3)), 1.5), np.full(4, 1.5))
        assert np.allclose(assemble_depth(np.array([[0, 0, -0.1], [0, 0, 0.0], [0, 0, 0.1]]), 2.0), [1.9, 2.0, 2.1], rtol=0, atol=1e-15)
        assert chamfer_distance(prior, prior) == 0.0
        assert chamfer_distance([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]) == 2.0
        assert np.array_equal(estimate_size(cube, np.zeros_like(cube)), [1.0, 1.0, 1.0])
        assert np.array_equal(estimate_size(cube, cube), [2.0, 2.0, 2.0])

        # loss terms
        assert loss_depth_l1([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert loss_depth_l1([1.1, 0.9], [1.0, 1.0]) == pytest.approx(0.1, abs=1e-15)
        assert loss_adv_discriminator(1.0, 0.0) == 0.0
        assert loss_adv_discriminator(0.5, 0.5) == 0.5
        assert loss_adv_generator(1.0) == 0.0
        assert loss_adv_generator(0.0) == 1.0
        assert loss_corr(prior, prior) == 0.0
        assert loss_corr([[0.5, 0.0, 0.0]], [[0.0, 0.0, 0.0]]) == 0.125 / 3
        assert loss_entropy(np.eye(4)) == 0.0
        assert loss_entropy(np.full((2, 4), 0.25)) == pytest.approx(np.log(4), abs=1e-15)
        assert loss_reg(np.zeros((3, 4))) == 0.0
        assert loss_reg(np.eye(4)[[0, 1, 3]]) == 0.25
        assert total_loss(LossTerms()) == 0.0
        assert total_loss([1.0] * 7, LossWeights()) == pytest.approx(7.2101, abs=1e-12)

        # evaluation
        unit = OrientedBox3D(Pose(np.eye(3), np.zeros(3)), np.ones(3))
        tilted = OrientedBox3D(Pose(rotation_about("x", 33.0), np.zeros(3)), np.array([0.3, 0.2, 0.1]))
        assert iou3d(tilted, tilted) == pytest.approx(1.0, abs=1e-12)
        assert iou3d(unit, OrientedBox3D(Pose(np.eye(3), [0.5, 0, 0]), np.ones(3))) == pytest.approx(1 / 3, abs=1e-12)

        gts = [Detection("mug", OrientedBox3D(Pose(np.eye(3), [0.0, 0.0, k]), np.ones(3) * 0.1), Pose(np.eye(3), [0.0, 0.0, k]), k) for k in range(4)]
        exact = match_detections(gts, gts)
        assert all(m.gt is not None and m.iou == pytest.approx(1.0, abs=1e-12) for m in exact.matches)
        assert all(ap_at(exact, metric) == 1.0 for metric in METRICS)
        assert all(ap_at(match_detections([], gts), metric) == 0.0 for metric in METRICS)
        iou_curve = ap_curves(exact)["iou"]
        assert np.all(iou_curve.mean[iou_curve.thresholds < 1.0] == 1.0)

        pair = [Detection("mug", OrientedBox3D(Pose(np.eye(3), [d, 0, 0]), np.ones(3)), Pose.identity(), 0) for d in (1 / 9, 1 / 19)]
        lone = [Detection("mug", unit, Pose.identity(), 0)]
        greedy = match_detections(pair, lone)
        assert [(m.det, m.iou) for m in greedy.matches] == [(1, pytest.approx(0.9, abs=1e-12))]
        assert greedy.unmatched_dets == [0]

        turned = [Detection("mug", unit, Pose(rotation_about("y", 7.0), np.zeros(3)), 0)]
        rot_curve = ap_curves(match_detections(turned, lone), {"rotation": np.arange(0.0, 15.0, 0.5)})["rotation"]
        assert np.array_equal(rot_curve.mean, (rot_curve.thresholds > 7.0).astype(float))

        near = []
        for g in gts:
            pose = Pose(g.pose.rotation @ rotation_about("x", 5.0), g.pose.translation + [0.05, 0, 0])
            near.append(Detection("mug", g.box, pose, g.scene))
        m_near = match_detections(near, gts)
        assert all(ap_at(m_near, metric) == 1.0 for metric in ("10cm", "10deg", "10deg10cm"))

        far_box = OrientedBox3D(Pose(np.eye(3), [5.0, 5.0, 5.0]), np.ones(3) * 0.1)
        half = gts[:2] + [Detection("mug", far_box, Pose(rotation_about("x", 90.0), [5.0, 5.0, 5.0]), g.scene) for g in gts[2:]]
        m_half = match_detections(half, gts)
        assert all(ap_at(m_half, metric) == 0.5 for metric in METRICS)
