import numpy as np
import pytest
import torch

from ldlab import autoencoder as ae
from ldlab.estimators import LatentAutoencoder
from ldlab.exceptions import BadConfig, BadResolution, EmptyCorpus, ShapeMismatch
from ldlab.procedural import render_face, sample_base_landmarks


def _faces(seeds, style=0):
    return np.stack([render_face(sample_base_landmarks(s), style, 64) for s in seeds]).astype(np.float32) / 255.0


def test_identity_round_trip_exact():
    m = ae.init_autoencoder(ae.AutoencoderConfig(1))
    x = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
    z = ae.encode(m, x)
    np.testing.assert_array_equal(z, np.transpose(x * 2 - 1, (2, 0, 1)))
    # the remap back is exact up to float32 rounding, and exact on 8-bit pixel values
    np.testing.assert_allclose(ae.decode(m, z), x, rtol=0, atol=6e-8)
    levels = (np.arange(256, dtype=np.float32) / 255).reshape(16, 16, 1).repeat(3, axis=2)
    back = np.round(ae.decode(m, ae.encode(m, levels)) * 255).astype(np.uint8)
    np.testing.assert_array_equal(back, np.arange(256).reshape(16, 16, 1).repeat(3, axis=2))


def test_identity_needs_matching_channels():
    with pytest.raises(BadConfig):
        ae.AutoencoderConfig(1, latent_channels=4)
    with pytest.raises(BadConfig):
        ae.AutoencoderConfig(3)


def test_factor_two_shapes_and_determinism():
    m = ae.init_autoencoder(ae.AutoencoderConfig(2, latent_channels=4, base_width=8), 0)
    x = _faces([0, 1])
    z = ae.encode(m, x)
    assert z.shape == (2, 4, 32, 32)
    np.testing.assert_array_equal(z, ae.encode(m, x))
    assert ae.encode(m, x[0]).shape == (4, 32, 32)


def test_decode_is_clamped():
    m = ae.init_autoencoder(ae.AutoencoderConfig(2, base_width=8), 0)
    img = ae.decode(m, np.full((3, 32, 32), 50.0, np.float32))
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_errors():
    m = ae.init_autoencoder(ae.AutoencoderConfig(4, base_width=8), 0)
    with pytest.raises(BadResolution):
        ae.encode(m, np.zeros((30, 30, 3), np.float32))
    with pytest.raises(ShapeMismatch):
        ae.decode(m, np.zeros((5, 16, 16), np.float32))
    with pytest.raises(EmptyCorpus):
        ae.train_autoencoder(np.zeros((0, 64, 64, 3)), ae.AutoencoderConfig(2))


def test_zero_steps_returns_init():
    cfg = ae.AutoencoderConfig(2, base_width=8)
    model, losses = ae.train_autoencoder(_faces([0]), cfg, 4, steps=0)
    ref = ae.init_autoencoder(cfg, 4)
    assert losses == []
    for k, v in ref.state_dict().items():
        assert torch.equal(v, model.state_dict()[k])


def test_training_deterministic():
    cfg = ae.AutoencoderConfig(2, base_width=8)
    x = _faces(range(6))
    a, la = ae.train_autoencoder(x, cfg, 1, steps=5, batch_size=4)
    b, lb = ae.train_autoencoder(x, cfg, 1, steps=5, batch_size=4)
    assert la == lb
    for k, v in a.state_dict().items():
        assert torch.equal(v, b.state_dict()[k])


def test_small_gradient_steps_do_not_increase_loss():
    torch.manual_seed(0)
    m = ae.init_autoencoder(ae.AutoencoderConfig(2, base_width=8), 0).double()
    x = ae.images_to_tensor(_faces(range(4))).double()
    opt = torch.optim.SGD(m.parameters(), lr=1e-5)
    prev = ae.reconstruction_loss(m, x).item()
    for _ in range(10):
        loss = ae.reconstruction_loss(m, x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        cur = ae.reconstruction_loss(m, x).item()
        assert cur <= prev + 1e-6
        prev = cur


def test_estimator_api():
    x = _faces(range(4))
    est = LatentAutoencoder(downsample_factor=2, base_width=8, steps=2, batch_size=2)
    z = est.fit_transform(x)
    assert z.shape == (4, 3, 32, 32)
    assert est.inverse_transform(z).shape == x.shape
    assert est.get_params()["downsample_factor"] == 2


@pytest.mark.slow
def test_factor_two_desk_training_quality():
    """2,000-step factor-2 run on the toy corpus: loss drops 4x and held-out PSNR >= 30 dB."""
    train = _faces(range(400))
    held = _faces(range(10_000, 10_032))
    cfg = ae.AutoencoderConfig(2, latent_channels=3, base_width=32)
    model, losses = ae.train_autoencoder(train, cfg, 0, steps=2000, batch_size=16, lr=1e-3)
    assert np.mean(losses[-50:]) < 0.25 * losses[0]
    recon = ae.decode(model, ae.encode(model, held))
    assert ae.psnr(recon, held) >= 30.0
