import numpy as np
import pytest

from src.particle_tracer.optim.losses import image_loss, l1_loss, psnr, ssim
from src.particle_tracer.services.io.images import to_srgb8


@pytest.fixture
def images():
    rng = np.random.default_rng(4)
    return rng.uniform(0.1, 0.9, (7, 6, 3)), rng.uniform(0.1, 0.9, (7, 6, 3))


def test_l1(images):
    pred, target = images
    value, grad = l1_loss(pred, target)
    assert value == pytest.approx(np.abs(pred - target).mean())
    np.testing.assert_allclose(grad, np.sign(pred - target) / pred.size)


def test_ssim_of_identical_images_is_one(images):
    value, _ = ssim(images[0], images[0])
    assert value == pytest.approx(1.0)


def test_ssim_gradient_matches_finite_differences(images):
    pred, target = images
    _, grad = ssim(pred, target)
    step = 1e-6
    for index in [(0, 0, 0), (3, 2, 1), (6, 5, 2), (2, 4, 0)]:
        plus, minus = pred.copy(), pred.copy()
        plus[index] += step
        minus[index] -= step
        fd = (ssim(plus, target)[0] - ssim(minus, target)[0]) / (2.0 * step)
        assert grad[index] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_image_loss_mixes_terms(images):
    pred, target = images
    assert image_loss(pred, target, 0.0)[0] == l1_loss(pred, target)[0]
    value, _ = image_loss(pred, target, 0.2)
    assert value == pytest.approx(0.8 * l1_loss(pred, target)[0] + 0.2 * (1.0 - ssim(pred, target)[0]))


def test_psnr(images):
    pred, target = images
    assert psnr(pred, pred) == float("inf")
    mse = np.mean((to_srgb8(pred).astype(float) - to_srgb8(target).astype(float)) ** 2)
    assert psnr(pred, target) == pytest.approx(10.0 * np.log10(255.0 ** 2 / mse))
