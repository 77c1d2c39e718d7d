import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagpaint.metrics import (FeatureStats, TrunkFeatureExtractor, color_bleed,
                              feature_stats, fid_toy, frechet_distance,
                              nearest_color_index, tag_fidelity)
from tagpaint.sprites import (LABEL_EYES, LABEL_GARMENT, LABEL_HAIR,
                              SpriteSpec, render_sprite, sample_spec)


def flat_extractor(images):
    return np.stack([np.asarray(im, dtype=np.float64).ravel()
                     for im in images])


def mean_extractor(images):
    return np.stack([[float(np.mean(im))] for im in images])


def random_psd_stats(seed, d=4):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    sigma = a @ a.T
    return FeatureStats(mu=rng.normal(size=d), sigma=sigma, n=10)


def test_feature_stats_hand_example():
    stats = feature_stats([np.array([0.0]), np.array([2.0])],
                          lambda ims: np.array([[0.0], [2.0]]))
    assert stats.mu[0] == 1.0
    assert stats.sigma[0, 0] == 2.0  # n-1 denominator
    assert stats.n == 2


def test_feature_stats_identical_images_zero_sigma():
    img = np.full((4, 4), 0.3)
    stats = feature_stats([img] * 5, flat_extractor)
    assert np.allclose(stats.sigma, 0.0)


def test_feature_stats_needs_two():
    with pytest.raises(ValueError, match="at least 2"):
        feature_stats([np.zeros((2, 2))], flat_extractor)


def test_feature_stats_rejects_non_psd():
    with pytest.raises(ValueError, match="PSD"):
        FeatureStats(mu=np.zeros(2), sigma=np.array([[1.0, 2.0], [2.0, 1.0]]),
                     n=3)


def test_frechet_identical_is_zero():
    s = random_psd_stats(0)
    assert frechet_distance(s, s) < 1e-8


def test_frechet_1d_closed_form():
    a = FeatureStats(mu=np.array([0.0]), sigma=np.array([[1.0]]), n=5)
    b = FeatureStats(mu=np.array([1.0]), sigma=np.array([[4.0]]), n=5)
    # (0-1)^2 + (sqrt(1)-sqrt(4))^2 = 1 + 1 = 2
    assert abs(frechet_distance(a, b) - 2.0) < 1e-12


def test_frechet_diagonal_closed_form_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        d = 5
        va, vb = rng.uniform(0.1, 3.0, d), rng.uniform(0.1, 3.0, d)
        mua, mub = rng.normal(size=d), rng.normal(size=d)
        a = FeatureStats(mu=mua, sigma=np.diag(va), n=9)
        b = FeatureStats(mu=mub, sigma=np.diag(vb), n=9)
        expected = float(((mua - mub) ** 2).sum()
                         + ((np.sqrt(va) - np.sqrt(vb)) ** 2).sum())
        assert abs(frechet_distance(a, b) - expected) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_frechet_symmetric_and_nonnegative(seed):
    a = random_psd_stats(seed)
    b = random_psd_stats(seed + 1)
    ab = frechet_distance(a, b)
    ba = frechet_distance(b, a)
    assert ab >= 0.0
    assert abs(ab - ba) <= 1e-6 * max(1.0, ab)


def test_frechet_dimension_mismatch():
    a = random_psd_stats(0, d=3)
    b = random_psd_stats(1, d=4)
    with pytest.raises(ValueError, match="dimensions"):
        frechet_distance(a, b)


def test_fid_toy_self_is_zero(tmp_path):
    rng = np.random.default_rng(0)
    imgs = [rng.random((8, 8, 3)) for _ in range(6)]
    assert fid_toy(imgs, imgs, flat_extractor) < 1e-6


def test_fid_toy_symmetric_and_order_invariant():
    rng = np.random.default_rng(1)
    a = [rng.random((8, 8, 3)) for _ in range(6)]
    b = [rng.random((8, 8, 3)) + 0.1 for _ in range(6)]
    ab = fid_toy(a, b, mean_extractor)
    ba = fid_toy(b, a, mean_extractor)
    assert abs(ab - ba) < 1e-9
    shuffled = [a[i] for i in rng.permutation(len(a))]
    assert abs(fid_toy(shuffled, b, mean_extractor) - ab) < 1e-9


def test_fid_toy_noise_increases(vocab):
    rng = np.random.default_rng(2)
    specs = [sample_spec(s, vocab) for s in range(12)]
    imgs = [render_sprite(s, 64, vocab)[0] for s in specs]
    clean = fid_toy(imgs, imgs, mean_extractor)
    noisy = list(imgs)
    noisy[0] = rng.random((64, 64, 3)).astype(np.float32)
    assert fid_toy(noisy, imgs, mean_extractor) > clean


def test_nearest_color_tie_breaks_low_index():
    table = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    assert nearest_color_index(np.array([0.0, 0.0, 0.0]), table) == 0


def test_tag_fidelity_ground_truth_is_one(vocab):
    specs = [sample_spec(s, vocab) for s in range(8)]
    rendered = [render_sprite(s, 64, vocab) for s in specs]
    images = [r[0] for r in rendered]
    masks = [r[1] for r in rendered]
    assert tag_fidelity(images, specs, masks, vocab) == 1.0


def test_tag_fidelity_gray_is_chance(vocab):
    # uniform gray: the nearest color per category is fixed, so over
    # uniformly drawn specs the hit rate approaches 1/(colors per category)
    n = 300
    specs = [sample_spec(s, vocab) for s in range(n)]
    rendered = [render_sprite(s, 64, vocab) for s in specs]
    masks = [r[1] for r in rendered]
    gray = [np.full((64, 64, 3), 0.5) for _ in range(n)]
    fidelity = tag_fidelity(gray, specs, masks, vocab)
    assert abs(fidelity - 0.25) < 0.07


def test_tag_fidelity_counting(vocab):
    spec = SpriteSpec("blue_hair", "aqua_eyes", "navy_skirt", frozenset(), 3)
    color, mask = render_sprite(spec, 64, vocab)
    img = color.copy()
    # repaint eyes and garment with wrong colors; hair left correct
    img[mask == LABEL_EYES] = vocab.color_of("crimson_eyes")
    img[mask == LABEL_GARMENT] = vocab.color_of("pink_skirt")
    assert abs(tag_fidelity([img], [spec], [mask], vocab) - 1.0 / 3.0) < 1e-12


def test_tag_fidelity_missing_masks(vocab):
    spec = sample_spec(0, vocab)
    img = np.zeros((64, 64, 3))
    with pytest.raises(ValueError, match="mask"):
        tag_fidelity([img], [spec], [None], vocab)


def test_color_bleed_ground_truth_zero(vocab):
    specs = [sample_spec(s, vocab) for s in range(8)]
    rendered = [render_sprite(s, 64, vocab) for s in specs]
    images = [r[0] for r in rendered]
    masks = [r[1] for r in rendered]
    assert color_bleed(images, masks, vocab, specs) == 0.0


def test_color_bleed_total_fill_is_one(vocab):
    spec = SpriteSpec("red_hair", "aqua_eyes", "navy_skirt", frozenset(), 1)
    _, mask = render_sprite(spec, 64, vocab)
    img = np.tile(vocab.color_of("red_hair"), (64, 64, 1))
    assert color_bleed([img], [mask], vocab, [spec]) == 1.0


def test_color_bleed_counting(vocab):
    # eye pixels half hair-colored, garment clean, synthetic equal areas
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[0, :] = LABEL_EYES      # 4 px eyes
    mask[1, :] = LABEL_GARMENT   # 4 px garment
    img = np.ones((4, 4, 3))
    spec = SpriteSpec("red_hair", "aqua_eyes", "navy_skirt", frozenset(), 1)
    img[0, :2] = [0.85, 0.20, 0.20]   # red_hair on half the eye pixels
    img[0, 2:] = [0.25, 0.80, 0.80]   # correct eye color
    img[1, :] = [0.15, 0.20, 0.50]    # correct garment
    assert color_bleed([img], [mask], vocab, [spec]) == 0.25


def test_trunk_extractor_shapes(small_extractor, vocab):
    fx = TrunkFeatureExtractor(small_extractor.trunk, 64)
    rng = np.random.default_rng(0)
    rgb = [rng.random((64, 64, 3)) for _ in range(3)]
    gray = [rng.random((32, 32)) for _ in range(3)]  # resized internally
    feats = fx(rgb + gray)
    assert feats.shape == (6, fx.feature_dim)
    assert np.isfinite(feats).all()
