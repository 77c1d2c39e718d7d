import numpy as np
import pytest
import torch

from conftest import check_grads_against_fd
from tagpaint.blocks import BlockKind, count_params
from tagpaint.networks import (CitExtractor, CitTrunk, CvtEncoder,
                               Discriminator, Generator, NetworkConfig,
                               load_checkpoint, pixel_shuffle,
                               save_checkpoint)

CFG64 = NetworkConfig(cvt_count=12, cit_count=6, image_size=64,
                      base_channels=8)
CFG16 = NetworkConfig(cvt_count=12, cit_count=6, image_size=16,
                      base_channels=8)


def shuffle_oracle(x: torch.Tensor, r: int) -> torch.Tensor:
    # literal index map: out[b, c, r*y+dy, r*x+dx] = in[b, c*r*r + dy*r + dx, y, x]
    n, ch, h, w = x.shape
    c = ch // (r * r)
    out = torch.empty(n, c, h * r, w * r, dtype=x.dtype)
    for b in range(n):
        for cc in range(c):
            for y in range(h):
                for xx in range(w):
                    for dy in range(r):
                        for dx in range(r):
                            out[b, cc, r * y + dy, r * xx + dx] = \
                                x[b, cc * r * r + dy * r + dx, y, xx]
    return out


def test_pixel_shuffle_2x2_example():
    x = torch.tensor([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    out = pixel_shuffle(x, 2)
    assert out.shape == (1, 1, 2, 2)
    assert torch.equal(out[0, 0], torch.tensor([[1.0, 2.0], [3.0, 4.0]]))


def test_pixel_shuffle_matches_index_oracle():
    torch.manual_seed(0)
    x = torch.randn(2, 8, 4, 4)
    assert torch.equal(pixel_shuffle(x, 2), shuffle_oracle(x, 2))


def test_pixel_shuffle_identity_and_errors():
    x = torch.randn(1, 3, 5, 5)
    assert torch.equal(pixel_shuffle(x, 1), x)
    with pytest.raises(ValueError, match="divisible"):
        pixel_shuffle(torch.randn(1, 3, 2, 2), 2)


def test_pixel_shuffle_preserves_multiset():
    x = torch.randn(1, 16, 3, 3)
    out = pixel_shuffle(x, 4)
    assert torch.equal(x.flatten().sort().values, out.flatten().sort().values)


def test_config_invariants():
    with pytest.raises(ValueError, match="divide by 8"):
        NetworkConfig(cvt_count=12, cit_count=6, image_size=60)
    cfg = CFG64
    assert (cfg.encoder_channels + cfg.cit_channels + cfg.cvt_spatial_channels
            == cfg.fusion_depth)
    assert cfg.fusion_spatial == 8
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


def test_cit_trunk_output_contract():
    torch.manual_seed(0)
    trunk = CitTrunk(CFG64)
    x = torch.rand(2, 1, 64, 64)
    feats = trunk(x)
    assert feats.shape == (2, CFG64.cit_channels, 8, 8)
    assert (feats >= 0).all()  # post-ReLU
    trunk.eval()
    assert torch.equal(trunk(x), trunk(x))


def test_cvt_encoder_contract():
    torch.manual_seed(0)
    enc = CvtEncoder(CFG64)
    zero = torch.zeros(1, 12)
    spatial, style = enc(zero)
    assert style.shape == (1, 64)
    assert spatial.shape == (1, CFG64.cvt_spatial_channels, 8, 8)
    assert torch.isfinite(spatial).all() and torch.isfinite(style).all()
    s2, st2 = enc(zero)
    assert torch.equal(spatial, s2) and torch.equal(style, st2)


def test_cvt_encoder_distinct_styles():
    torch.manual_seed(1)
    enc = CvtEncoder(CFG64)
    styles = []
    for i in range(12):
        v = torch.zeros(1, 12)
        v[0, i] = 1.0
        styles.append(enc(v)[1])
    for i in range(12):
        for j in range(i + 1, 12):
            assert not torch.allclose(styles[i], styles[j])


def test_generator_output_contract():
    torch.manual_seed(0)
    gen = Generator(CFG64, CitTrunk(CFG64))
    x = torch.rand(2, 1, 64, 64)
    cvt = torch.zeros(2, 12)
    cvt[:, 0] = 1
    out = gen(x, cvt)
    assert out.full_image.shape == (2, 3, 64, 64)
    assert out.guide_image.shape == (2, 3, 64, 64)
    assert out.full_image.abs().max() <= 1.0
    assert out.guide_image.abs().max() <= 1.0


def test_generator_sensitive_to_cvt():
    torch.manual_seed(0)
    gen = Generator(CFG64, CitTrunk(CFG64))
    x = torch.rand(1, 1, 64, 64)
    a = torch.zeros(1, 12)
    a[0, 0] = 1
    b = torch.zeros(1, 12)
    b[0, 1] = 1
    diff = (gen(x, a).full_image - gen(x, b).full_image).abs().mean()
    assert diff > 0


def test_generator_rejects_bad_shapes():
    gen = Generator(CFG64, CitTrunk(CFG64))
    with pytest.raises(ValueError, match="64px"):
        gen(torch.rand(1, 1, 32, 32), torch.zeros(1, 12))
    with pytest.raises(ValueError, match="cvt"):
        gen(torch.rand(1, 1, 64, 64), torch.zeros(1, 5))


def test_generator_trunk_frozen():
    gen = Generator(CFG64, CitTrunk(CFG64))
    assert all(not p.requires_grad for p in gen.cit_trunk.parameters())
    trainable = count_params(gen)
    total = sum(p.numel() for p in gen.parameters())
    assert trainable < total


def test_generator_inference_determinism():
    torch.manual_seed(0)
    gen = Generator(CFG64, CitTrunk(CFG64))
    gen.eval()
    x = torch.rand(1, 1, 64, 64)
    cvt = torch.zeros(1, 12)
    cvt[0, 3] = 1
    with torch.no_grad():
        a = gen(x, cvt).full_image
        b = gen(x, cvt).full_image
    assert torch.equal(a, b)


def test_discriminator_contract():
    torch.manual_seed(0)
    disc = Discriminator(CFG64)
    img = torch.rand(3, 3, 64, 64) * 2 - 1
    out = disc(img)
    assert out.adv.shape == (3,)
    assert out.cvt_probs.shape == (3, 12)
    assert out.cit_probs.shape == (3, 6)
    for t in (out.adv, out.cvt_probs, out.cit_probs):
        assert (t > 0).all() and (t < 1).all()


def test_discriminator_grad_smoke():
    disc = Discriminator(CFG64)
    img = torch.rand(1, 3, 64, 64, requires_grad=True)
    disc(img).adv.sum().backward()
    assert img.grad is not None
    assert torch.isfinite(img.grad).all()


def test_cit_extractor_logits_shape():
    ext = CitExtractor(CFG64)
    logits = ext(torch.rand(2, 1, 64, 64))
    assert logits.shape == (2, 6)
    assert not ext.trunk.pretrained
    ext.trunk.mark_pretrained()
    assert ext.trunk.pretrained


def test_end_to_end_gradients_miniature():
    torch.manual_seed(0)
    gen = Generator(CFG16, CitTrunk(CFG16)).double()
    x = torch.rand(1, 1, 16, 16, dtype=torch.float64)
    cvt = torch.zeros(1, 12, dtype=torch.float64)
    cvt[0, 2] = 1
    cvt[0, 7] = 1

    def loss_fn():
        return gen(x, cvt).full_image.pow(2).sum()

    worst = check_grads_against_fd(gen, loss_fn, rel_tol=1e-2, n_samples=40,
                                   seed=0)
    assert worst <= 1e-2


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    gen = Generator(CFG64, CitTrunk(CFG64))
    disc = Discriminator(CFG64)
    gen.eval()
    x = torch.rand(1, 1, 64, 64)
    cvt = torch.zeros(1, 12)
    cvt[0, 1] = 1
    with torch.no_grad():
        before = gen(x, cvt).full_image
    path = save_checkpoint(tmp_path / "m.pt", gen, disc, "hash123",
                           {"epoch": 3})
    bundle = load_checkpoint(path, "hash123")
    with torch.no_grad():
        after = bundle.generator(x, cvt).full_image
    assert torch.equal(before, after)
    assert bundle.schedule_state["epoch"] == 3
    assert bundle.discriminator is not None


def test_checkpoint_vocab_hash_mismatch(tmp_path):
    gen = Generator(CFG64, CitTrunk(CFG64))
    path = save_checkpoint(tmp_path / "m.pt", gen, None, "aaa")
    with pytest.raises(ValueError, match="hash mismatch"):
        load_checkpoint(path, "bbb")
