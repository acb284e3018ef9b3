import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazeprior.codebook import (
    Codebook,
    CodeGrid,
    FrequencyProfile,
    activation_frequency,
    fit_kmeans,
    match_nearest,
    quantize_grid,
    reconstruct_from_codes,
)
from hazeprior.imgcore import PatchGrid, assemble_patches, extract_patches

from oracles import brute_nearest


def test_kmeans_single_code_is_mean():
    x = np.random.default_rng(0).random((50, 4))
    cb = fit_kmeans(x, 1, seed=3)
    assert np.allclose(cb.codes[0], x.mean(axis=0), atol=1e-6)


def test_kmeans_one_code_per_feature():
    x = np.random.default_rng(1).random((12, 3))
    hist = []
    cb = fit_kmeans(x, 12, seed=0, history=hist)
    assert hist[-1] == 0.0
    assert sorted(map(tuple, cb.codes.astype(np.float32))) == sorted(map(tuple, x.astype(np.float32)))


def test_kmeans_two_clusters():
    gen = np.random.default_rng(2)
    means = np.array([[0.2, 0.2, 0.2], [0.8, 0.7, 0.75]])
    x = np.concatenate([gen.normal(m, 0.03, (400, 3)) for m in means])
    cb = fit_kmeans(x, 2, max_iters=100, seed=5)
    order = np.argsort(cb.codes[:, 0])
    assert np.max(np.abs(cb.codes[order] - means)) < 0.05


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kmeans_objective_non_increasing(seed):
    x = np.random.default_rng(seed).random((300, 6))
    hist = []
    fit_kmeans(x, 10, max_iters=60, seed=seed, history=hist)
    assert len(hist) >= 2
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_kmeans_deterministic():
    x = np.random.default_rng(3).random((100, 5))
    a, b = fit_kmeans(x, 8, seed=9), fit_kmeans(x, 8, seed=9)
    assert np.array_equal(a.codes, b.codes)


def test_kmeans_needs_distinct_features():
    x = np.repeat(np.random.default_rng(4).random((3, 2)), 5, axis=0)
    with pytest.raises(ValueError, match="distinct"):
        fit_kmeans(x, 4)


def test_kmeans_no_duplicate_codes():
    # 20 stacked copies of 6 points: many clusters would collapse without dedupe
    x = np.repeat(np.random.default_rng(5).random((6, 2)), 20, axis=0)
    cb = fit_kmeans(x, 6, seed=1)
    assert np.unique(cb.codes, axis=0).shape[0] == 6


def test_nested_codebooks_error_non_increasing():
    x = np.random.default_rng(6).random((400, 12))
    prev, errs = None, []
    for K in (2, 4, 8, 16, 32):
        cb = fit_kmeans(x, K, seed=0, init=None if prev is None else prev.codes)
        d = np.array([match_nearest(f, cb)[1] for f in x])
        errs.append(float(np.sum(d**2)))
        prev = cb
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_match_nearest_examples():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
    k, d = match_nearest([0.4, 0.4], cb)
    assert k == 0 and d == pytest.approx(0.565685, abs=1e-6)


def test_match_exact_hit_and_tie():
    gen = np.random.default_rng(7)
    cb = Codebook(gen.random((10, 3)))
    k, d = match_nearest(cb.codes[7], cb)
    assert (k, d) == (7, 0.0)
    codes = np.array([[5, 5], [6, 6], [0.0, 0.0], [7, 7], [9, 9], [1.0, 1.0]])
    assert match_nearest([0.5, 0.5], Codebook(codes))[0] == 2


def test_match_dim_mismatch():
    with pytest.raises(ValueError):
        match_nearest([1.0, 2.0, 3.0], Codebook(np.zeros((2, 2))))


def test_match_against_brute_force():
    gen = np.random.default_rng(8)
    for _ in range(300):
        K, dim = int(gen.integers(1, 65)), int(gen.integers(1, 20))
        codes = gen.random((K, dim)).astype(np.float32)
        f = gen.random(dim)
        k, d = match_nearest(f, Codebook(codes))
        bk, bd = brute_nearest(f, codes)
        assert k == bk
        assert d == pytest.approx(bd, rel=1e-12, abs=1e-15)


def test_quantize_grid_constant():
    codes = np.random.default_rng(9).random((5, 12)).astype(np.float32)
    feats = np.broadcast_to(codes[3], (2, 4, 12))
    cg = quantize_grid(PatchGrid(np.array(feats), 2, 2, 3), Codebook(codes))
    assert np.all(cg.indices == 3) and np.all(cg.distances == 0)


def test_quantize_grid_brute_force():
    gen = np.random.default_rng(10)
    codes = gen.random((16, 27)).astype(np.float32)
    grid = extract_patches(gen.random((12, 15, 3)), 3, 3)
    cg = quantize_grid(grid, Codebook(codes))
    for r in range(grid.rows):
        for c in range(grid.cols):
            assert cg.indices[r, c] == brute_nearest(grid.features[r, c], codes)[0]


def test_quantize_empty_grid():
    cg = quantize_grid(PatchGrid(np.zeros((0, 0, 12)), 2, 2, 3), Codebook(np.ones((4, 12))))
    assert cg.indices.shape == (0, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100))
def test_quantize_scale_invariance(seed, scale):
    gen = np.random.default_rng(seed)
    codes = gen.random((8, 6))
    feats = gen.random((3, 3, 6))
    a = quantize_grid(PatchGrid(feats, 1, 1, 6), Codebook(codes))
    b = quantize_grid(PatchGrid(feats * scale, 1, 1, 6), Codebook(codes * scale))
    assert np.array_equal(a.indices, b.indices)


def _tile_codebook(patch=4, K=6, seed=11):
    codes = np.random.default_rng(seed).random((K, patch * patch * 3)).astype(np.float32)
    return Codebook(codes, patch, 3)


def test_reconstruct_fixed_point():
    cb = _tile_codebook()
    idx = np.random.default_rng(12).integers(0, cb.K, (3, 5))
    img = assemble_patches(PatchGrid(cb.codes[idx], 4, 4, 3))
    cg = quantize_grid(extract_patches(img, 4, 4), cb)
    assert np.array_equal(cg.indices, idx)
    assert np.array_equal(reconstruct_from_codes(cg, cb), img)


def test_reconstruct_error_identity():
    cb = _tile_codebook(K=10)
    img = np.random.default_rng(13).random((16, 20, 3)).astype(np.float32)
    cg = quantize_grid(extract_patches(img, 4, 4), cb)
    rec = reconstruct_from_codes(cg, cb)
    err = np.sum((img.astype(np.float64) - rec) ** 2)
    assert err == pytest.approx(np.sum(cg.distances**2), rel=1e-5)


def test_reconstruct_single_code():
    cb = _tile_codebook(K=1)
    img = np.random.default_rng(14).random((8, 12, 3))
    rec = reconstruct_from_codes(quantize_grid(extract_patches(img, 4, 4), cb), cb)
    tile = cb.codes[0].reshape(4, 4, 3)
    assert np.array_equal(rec, np.tile(tile, (2, 3, 1)))


def test_reconstruct_geometry_mismatch():
    cb = _tile_codebook()
    with pytest.raises(ValueError, match="geometry"):
        reconstruct_from_codes(CodeGrid(np.zeros((1, 1), int), np.zeros((1, 1))), cb, (3, 3))


def test_activation_frequency_examples():
    p = activation_frequency([CodeGrid(np.array([[0, 0], [1, 1]]), np.zeros((2, 2)))], 2)
    assert p.freq.tolist() == [0.5, 0.5] and p.sample_count == 4
    p = activation_frequency([np.full((3, 3), 3)], 8)
    assert p.freq.tolist() == [0, 0, 0, 1, 0, 0, 0, 0]


def test_activation_frequency_errors():
    with pytest.raises(ValueError):
        activation_frequency([], 4)
    with pytest.raises(ValueError):
        activation_frequency([np.array([[4]])], 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=30), min_size=1, max_size=6), st.randoms())
def test_activation_frequency_sum_and_permutation(grids, rnd):
    arrays = [np.array(g) for g in grids]
    p = activation_frequency(arrays, 10)
    assert abs(p.freq.sum() - 1) <= 1e-9 and np.all(p.freq >= 0)
    rnd.shuffle(arrays)
    assert np.array_equal(activation_frequency(arrays, 10).freq, p.freq)


def test_codebook_binary_format(tmp_path):
    cb = _tile_codebook(patch=2, K=5)
    cb.save(tmp_path / "cb.hqpc")
    blob = (tmp_path / "cb.hqpc").read_bytes()
    assert blob[:4] == b"HQPC"
    assert len(blob) == 4 + 2 + 4 + 4 + 2 + 1 + 5 * 12 * 4
    assert int.from_bytes(blob[6:10], "little") == 5
    assert int.from_bytes(blob[10:14], "little") == 12
    back = Codebook.load(tmp_path / "cb.hqpc")
    assert np.array_equal(back.codes, cb.codes)
    assert (back.patch_size, back.channels) == (2, 3)


def test_codebook_load_rejects_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError, match="magic"):
        Codebook.load(tmp_path / "x")


def test_profile_json_roundtrip(tmp_path):
    p = FrequencyProfile.from_counts([3, 0, 1])
    p.save(tmp_path / "p.json")
    q = FrequencyProfile.load(tmp_path / "p.json")
    assert np.array_equal(p.freq, q.freq) and q.sample_count == 4 and q.K == 3
