import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_connected_edges
from patchsync.align import (RelativeTransforms, align_patches, estimate_relative_rotation,
                             estimate_relative_scale, hierarchical_align, stitch_centroid,
                             synchronize_rotations, synchronize_scales, synchronize_translations,
                             unaligned_centroid)
from patchsync.errors import CoverError, DataError, DegenerateError, DisconnectedError
from patchsync.evaluation import generate_synthetic, procrustes_error, random_orthogonal
from patchsync.graph import EmbeddingMatrix
from patchsync.patches import PatchGraph


def _rel(edges, scales=None, rotations=None, d=2):
    edges = np.asarray(edges)
    E = len(edges)
    scales = np.ones(E) if scales is None else np.asarray(scales, dtype=float)
    rotations = np.tile(np.eye(d), (E, 1, 1)) if rotations is None else np.asarray(rotations)
    return RelativeTransforms(edges, scales, rotations, np.ones(E))


def test_relative_scale_examples(rng):
    x = rng.standard_normal((20, 3))
    assert estimate_relative_scale(x, x) == pytest.approx(1)
    assert estimate_relative_scale(3 * x + 5, x) == pytest.approx(3, rel=1e-12)
    with pytest.raises(DegenerateError):
        estimate_relative_scale(x, np.ones((20, 3)))


def test_relative_rotation_examples(rng):
    x = rng.standard_normal((10, 2))
    assert np.allclose(estimate_relative_rotation(x, x), np.eye(2), atol=1e-12)
    R90 = np.array([[0.0, -1.0], [1.0, 0.0]])
    # xi = xj @ R.T recovers R
    assert np.allclose(estimate_relative_rotation(x @ R90.T, x), R90, atol=1e-12)
    mirror = x * [1, -1]
    R = estimate_relative_rotation(mirror, x)
    assert np.allclose(R @ R.T, np.eye(2), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(-1)


def test_relative_rotation_degenerate():
    t = np.linspace(0, 1, 10)
    line = np.stack([t, t, t], axis=1)
    with pytest.raises(DegenerateError):
        estimate_relative_rotation(line, line)


def test_scale_sync_examples():
    s, _ = synchronize_scales(_rel([[0, 1]], [2.0]), 2)
    assert np.allclose(s, [4 / 3, 2 / 3], atol=1e-9)
    truth = np.array([2.0, 1.0, 0.5])
    s, _ = synchronize_scales(_rel([[0, 1], [1, 2]], [truth[0] / truth[1], truth[1] / truth[2]]), 3)
    assert np.allclose(s / s[1], truth, atol=1e-8)
    assert s.mean() == pytest.approx(1)
    s, _ = synchronize_scales(_rel([[0, 1], [1, 2], [0, 2]]), 3)
    assert np.allclose(s, 1, atol=1e-12)


def test_scale_sync_disconnected():
    with pytest.raises(DisconnectedError):
        synchronize_scales(_rel([[0, 1], [2, 3]]), 4)


def test_rotation_sync_identity():
    R, _ = synchronize_rotations(_rel(random_connected_edges(6, 4, np.random.default_rng(0)), d=3), 6)
    gauge = R[0]
    for k in range(6):
        assert np.allclose(R[k] @ gauge.T, np.eye(3), atol=1e-9)


def test_rotation_sync_exact_recovery(rng):
    p, d = 10, 4
    edges = random_connected_edges(p, 8, rng)
    S = np.stack([random_orthogonal(d, rng) for _ in range(p)])
    rel = _rel(edges, rotations=[S[i] @ S[j].T for i, j in edges], d=d)
    R, info = synchronize_rotations(rel, p)
    G = [S[k].T @ R[k] for k in range(p)]
    assert max(np.abs(g - G[0]).max() for g in G) < 1e-7
    assert max(info["residuals"]) < 1e-8


def test_rotation_sync_noisy_outputs_orthogonal(rng):
    p, d = 12, 3
    edges = random_connected_edges(p, 10, rng)
    S = np.stack([random_orthogonal(d, rng) for _ in range(p)])
    noisy = []
    for i, j in edges:
        U, _, Vt = np.linalg.svd(S[i] @ S[j].T + 0.01 * rng.standard_normal((d, d)))
        noisy.append(U @ Vt)
    R, _ = synchronize_rotations(_rel(edges, rotations=noisy, d=d), p)
    for k in range(p):
        assert np.abs(R[k] @ R[k].T - np.eye(d)).max() < 1e-8


def _two_patch_graph(coords0, coords1, nodes=(0, 1, 2, 3)):
    nodes = np.asarray(nodes)
    return PatchGraph((nodes, nodes), [[0, 1]], (np.asarray(coords0, float), np.asarray(coords1, float)))


def test_translation_examples(rng):
    x = rng.standard_normal((4, 2))
    pg = _two_patch_graph(x, x)
    T, _ = synchronize_translations(pg, list(pg.coords))
    assert np.allclose(T, 0)
    pg = _two_patch_graph(x, x - [1, 0])
    T, info = synchronize_translations(pg, list(pg.coords))
    assert np.allclose(T, [[-0.5, 0], [0.5, 0]], atol=1e-12)
    assert info["lsq_residual"] < 1e-10


def test_translation_three_cycle(rng):
    truth = rng.uniform(-5, 5, (3, 2))
    truth -= truth.mean(axis=0)
    x = rng.standard_normal((6, 2))
    nodes = np.arange(6)
    pg = PatchGraph((nodes,) * 3, [[0, 1], [1, 2], [0, 2]], tuple(x - t for t in truth))
    T, _ = synchronize_translations(pg, list(pg.coords))
    assert np.allclose(T, truth, atol=1e-10)


def test_translation_disconnected(rng):
    x = rng.standard_normal((4, 2))
    pg = PatchGraph((np.arange(4),) * 3, [[0, 1]], (x, x, x))
    with pytest.raises(DisconnectedError):
        synchronize_translations(pg, list(pg.coords))


def test_stitch_examples():
    pg = PatchGraph((np.array([0, 1]), np.array([1, 2])), [[0, 1]])
    aligned = [np.array([[3.0, 3.0], [0.0, 0.0]]), np.array([[1.0, 1.0], [7.0, 7.0]])]
    emb = stitch_centroid(pg, aligned)
    assert np.allclose(emb.rows([0, 1, 2]), [[3, 3], [0.5, 0.5], [7, 7]])
    with pytest.raises(CoverError):
        stitch_centroid(pg, aligned, nodes=np.array([0, 1, 2, 5]))


def test_single_patch_passthrough(rng):
    x = rng.standard_normal((10, 3))
    pg = PatchGraph((np.arange(10),), [], (x,))
    res = align_patches(pg)
    assert np.array_equal(res.embedding.values, x)


def test_align_requires_coords():
    with pytest.raises(DataError):
        align_patches(PatchGraph((np.arange(3),), []))


def test_align_noise_free_recovery():
    prob = generate_synthetic(300, 4, 6, 20, seed=1)
    res = align_patches(prob.patch_graph, scale_sync=True)
    assert procrustes_error(res.embedding, prob.ground_truth) < 1e-5
    assert np.all(np.isfinite(res.embedding.values))
    assert res.scales.mean() == pytest.approx(1)
    for R in res.rotations:
        assert np.allclose(R @ R.T, np.eye(4), atol=1e-10)
    assert res.diagnostics["rotation_sync"]["max_residual"] < 1e-8
    assert res.diagnostics["translation_sync"]["lsq_residual"] < 1e-6


def test_align_scale_sync_toggle_when_scales_are_one():
    prob = generate_synthetic(300, 3, 5, 20, seed=2)
    pg = prob.patch_graph
    coords = tuple(X / s for X, s in zip(pg.coords, prob.scales))
    pg = pg.with_coords(coords)
    on = align_patches(pg, scale_sync=True).embedding
    off = align_patches(pg, scale_sync=False).embedding
    assert np.abs(on.values - off.values).max() < 1e-7


def test_align_drops_low_overlap_edges(rng):
    prob = generate_synthetic(200, 3, 4, 10, seed=3)
    pg = prob.patch_graph
    # add a patch edge with too little overlap; it must be ignored
    extra = [e for e in [[0, 2], [1, 3]] if e not in pg.edges.tolist()]
    pg2 = pg.with_edges(pg.edges.tolist() + extra)
    res = align_patches(pg2, scale_sync=True)
    assert res.diagnostics.get("dropped_edges")
    assert procrustes_error(res.embedding, prob.ground_truth) < 1e-5


def test_equivariance():
    prob = generate_synthetic(300, 4, 6, 20, seed=4)
    pg = prob.patch_graph
    gen = np.random.default_rng(7)
    Q = random_orthogonal(4, gen)
    t = gen.uniform(-3, 3, 4)
    moved = pg.with_coords(tuple(X @ Q.T + t for X in pg.coords))
    a = align_patches(pg).embedding
    b = align_patches(moved).embedding
    assert procrustes_error(b, EmbeddingMatrix(a.values @ Q.T + t, a.node_ids)) < 1e-7


def test_monotone_noise_degradation():
    sigmas = [0.0, 0.01, 0.05, 0.1]
    errs = np.zeros((10, len(sigmas)))
    for seed in range(10):
        for k, sig in enumerate(sigmas):
            prob = generate_synthetic(300, 4, 6, 20, sigma=sig, seed=seed)
            errs[seed, k] = procrustes_error(align_patches(prob.patch_graph, scale_sync=True).embedding,
                                             prob.ground_truth)
    mean = errs.mean(axis=0)
    assert np.all(np.diff(mean) >= 0)


@pytest.mark.parametrize("sigma", [0.0, 0.01, 0.05])
def test_alignment_beats_raw_centroid(sigma):
    for seed in range(5):
        prob = generate_synthetic(300, 4, 6, 20, sigma=sigma, seed=seed)
        pg = prob.patch_graph
        aligned = procrustes_error(align_patches(pg, scale_sync=True).embedding, prob.ground_truth)
        raw = procrustes_error(unaligned_centroid(pg), prob.ground_truth)
        assert aligned < raw


def test_hierarchical_single_cluster_matches_flat():
    pg = generate_synthetic(400, 4, 8, 20, seed=5).patch_graph
    flat = align_patches(pg, scale_sync=True)
    hier = hierarchical_align(pg, 1, scale_sync=True)
    assert np.abs(flat.embedding.values - hier.embedding.values).max() < 1e-9


def test_hierarchical_recovery():
    prob = generate_synthetic(600, 4, 12, 20, seed=6)
    res = hierarchical_align(prob.patch_graph, 3, scale_sync=True)
    assert procrustes_error(res.embedding, prob.ground_truth) < 1e-4
    assert res.scales.mean() == pytest.approx(1)
    # composed per-patch transforms reproduce the stitched embedding
    emb = stitch_centroid(prob.patch_graph, res.aligned_patches(prob.patch_graph))
    assert np.abs(emb.values - res.embedding.values).max() < 1e-8


def test_hierarchical_errors():
    pg = generate_synthetic(400, 4, 8, 20, seed=7).patch_graph
    with pytest.raises(DataError):
        hierarchical_align(pg, 0)
    with pytest.raises(DataError):
        hierarchical_align(pg, 9)


def test_hierarchical_thin_bridge_is_rejected():
    # two 3-patch chains joined by a 6-node overlap, below d+1: the bridge is dropped
    rng = np.random.default_rng(0)
    d = 8
    X = rng.standard_normal((100, d))
    parts = [np.arange(0, 30), np.arange(20, 50), np.arange(40, 56),
             np.arange(50, 70), np.arange(60, 90), np.arange(80, 100)]
    edges = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]
    pg = PatchGraph(tuple(parts), edges, tuple(X[P] for P in parts))
    with pytest.raises(DisconnectedError):
        hierarchical_align(pg, 2)


@given(st.integers(0, 2 ** 31), st.integers(2, 5), st.integers(1, 7))
@settings(max_examples=20, deadline=None)
def test_exact_recovery_property(seed, d, p):
    prob = generate_synthetic(60 * p, d, p, 2 * d + 4, seed=seed)
    res = align_patches(prob.patch_graph, scale_sync=True, seed=seed)
    assert procrustes_error(res.embedding, prob.ground_truth) < 1e-5
    assert np.all(np.isfinite(res.embedding.values))
    assert res.scales.mean() == pytest.approx(1)
    assert np.all(res.scales > 0)
    eye = np.eye(d)
    assert all(np.abs(R @ R.T - eye).max() < 1e-8 for R in res.rotations)
    assert np.abs(res.translations.mean(axis=0)).max() < 1e-8 or p == 1


@given(st.integers(0, 2 ** 31))
@settings(max_examples=20, deadline=None)
def test_relative_transform_lookup_is_symmetric(seed):
    gen = np.random.default_rng(seed)
    R = random_orthogonal(3, gen)
    rel = RelativeTransforms(np.array([[0, 1]]), np.array([gen.uniform(0.5, 2)]), R[None], np.ones(1))
    assert rel.scale(0, 1) * rel.scale(1, 0) == pytest.approx(1)
    assert np.allclose(rel.rotation(0, 1) @ rel.rotation(1, 0), np.eye(3))
