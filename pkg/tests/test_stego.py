import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cisnet.stego import (
    PGMError,
    center_crop,
    change_probabilities,
    downscale,
    embed_adaptive,
    embed_lsb_matching,
    half_smooth_half_noisy,
    load_pgm,
    save_pgm,
    synthetic_cover,
    toy_cost,
)


class TestCost:
    def test_constant_image(self):
        np.testing.assert_allclose(toy_cost(np.full((1, 16, 16), 77)), 10.0, rtol=1e-12)

    def test_smooth_half_costs_more(self):
        img = half_smooth_half_noisy(64, seed=0)
        c = toy_cost(img)
        # 3x3 windows that straddle the seam are excluded
        assert c[:, :31].mean() > c[:, 33:].mean()

    def test_shift_invariant(self):
        img = synthetic_cover(32, seed=1).astype(np.int64)
        np.testing.assert_allclose(toy_cost(img), toy_cost(img + 17), rtol=1e-9)

    def test_positive_finite(self):
        c = toy_cost(synthetic_cover(64, seed=2))
        assert np.isfinite(c).all() and (c > 0).all()


class TestAdaptive:
    def test_zero_payload(self):
        cover = synthetic_cover(32, seed=3)
        pair = embed_adaptive(cover, 0.0, seed=0)
        np.testing.assert_array_equal(pair.stego, cover)
        assert not pair.change_map.any()

    @pytest.mark.parametrize("payload", [-0.1, 1.5])
    def test_payload_range(self, payload):
        with pytest.raises(ValueError):
            embed_adaptive(synthetic_cover(16, seed=0), payload, 0)

    def test_expected_change_count(self):
        cover = synthetic_cover(64, seed=4)
        target = 0.4 * 0.5 * cover.size
        counts = [np.count_nonzero(embed_adaptive(cover, 0.4, seed=s).change_map) for s in range(100)]
        assert abs(np.mean(counts) - target) <= 0.05 * target

    def test_probabilities_hit_target(self):
        cost = toy_cost(synthetic_cover(64, seed=5))
        for payload in (0.05, 0.2, 0.4, 1.0):
            p = change_probabilities(cost, payload)
            assert p.sum() == pytest.approx(payload * 0.5 * cost.size, rel=1e-6)

    def test_changes_concentrate_in_noise(self):
        img = half_smooth_half_noisy(64, seed=6)
        ch = embed_adaptive(img, 0.2, seed=7).change_map[0] != 0
        assert ch[:, 32:].sum() > 0.8 * ch.sum()

    def test_deterministic(self):
        cover = synthetic_cover(32, seed=8)
        a, b = embed_adaptive(cover, 0.4, 9), embed_adaptive(cover, 0.4, 9)
        np.testing.assert_array_equal(a.stego, b.stego)

    def test_bad_costs(self):
        with pytest.raises(ValueError):
            change_probabilities(np.array([1.0, 0.0]), 0.5)


class TestLsbMatching:
    def test_full_payload_changes_half(self):
        cover = synthetic_cover(64, seed=10)
        counts = [np.count_nonzero(embed_lsb_matching(cover, 1.0, s).change_map) for s in range(20)]
        assert np.mean(counts) == pytest.approx(0.5 * cover.size, rel=0.02)

    def test_zero_payload(self):
        cover = synthetic_cover(16, seed=11)
        np.testing.assert_array_equal(embed_lsb_matching(cover, 0.0, 1).stego, cover)

    def test_constant_prob_map(self):
        pm = embed_lsb_matching(synthetic_cover(16, seed=12), 0.3, 2).prob_map
        assert np.ptp(pm) == 0 and pm.flat[0] == 0.15

    def test_uniform_cost_matches_lsbm(self):
        # chi-square on per-trial change counts across 1000 trials of each embedder
        cover = synthetic_cover(16, seed=13)
        uniform = np.ones(cover.shape[1:])
        a = [np.count_nonzero(embed_adaptive(cover, 0.5, s, cost=uniform).change_map) for s in range(1000)]
        b = [np.count_nonzero(embed_lsb_matching(cover, 0.5, 5000 + s).change_map) for s in range(1000)]
        edges = np.percentile(np.concatenate([a, b]), np.linspace(0, 100, 8))
        edges[0] -= 1
        edges[-1] += 1
        ha, _ = np.histogram(a, edges)
        hb, _ = np.histogram(b, edges)
        assert stats.chi2_contingency(np.vstack([ha, hb])).pvalue > 0.01
        pa = embed_adaptive(cover, 0.5, 0, cost=uniform).prob_map
        np.testing.assert_allclose(pa, 0.25, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.sampled_from(["adaptive", "lsbm"]))
def test_pair_invariants(seed, payload, kind):
    rng = np.random.default_rng(seed)
    # include saturated pixels so the clamp is exercised
    cover = rng.choice([0, 1, 128, 254, 255], size=(1, 12, 12)).astype(np.uint8)
    pair = (embed_adaptive if kind == "adaptive" else embed_lsb_matching)(cover, payload, seed)
    diff = pair.stego.astype(int) - cover.astype(int)
    assert set(np.unique(np.abs(diff))) <= {0, 1}
    np.testing.assert_array_equal(pair.stego, np.clip(cover.astype(int) + pair.change_map, 0, 255))
    assert np.all(pair.prob_map[pair.change_map != 0] > 0)
    # a requested change is lost only at the clamp
    lost = (pair.change_map != 0) & (diff == 0)
    assert np.all((cover[lost] == 0) | (cover[lost] == 255))


class TestPGM:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(1, 23, 17)).astype(np.uint8)
        save_pgm(img, tmp_path / "a.pgm")
        np.testing.assert_array_equal(load_pgm(tmp_path / "a.pgm"), img)

    def test_header_parse(self, tmp_path):
        p = tmp_path / "big.pgm"
        p.write_bytes(b"P5 512 512 255\n" + bytes(512 * 512))
        assert load_pgm(p).shape == (1, 512, 512)

    def test_comments(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x05\x06")
        np.testing.assert_array_equal(load_pgm(p), [[[5, 6]]])

    @pytest.mark.parametrize("raw", [b"P2\n2 1\n255\n12", b"P5\n2 1\n65535\n\x00\x00", b"P5\n4 4\n255\n\x00\x01", b"P5\n2"])
    def test_malformed(self, tmp_path, raw):
        p = tmp_path / "bad.pgm"
        p.write_bytes(raw)
        with pytest.raises(PGMError):
            load_pgm(p)

    def test_crop_and_downscale_range(self):
        img = np.random.default_rng(1).integers(0, 256, size=(1, 512, 512)).astype(np.uint8)
        for small in (center_crop(img, 64), downscale(img, 8)):
            assert small.shape == (1, 64, 64)
            assert small.min() >= 0 and small.max() <= 255


def test_synthetic_cover_range():
    c = synthetic_cover(64, seed=3)
    assert c.dtype == np.uint8 and c.shape == (1, 64, 64)
    assert 0 < c.min() and c.max() < 255
