import numpy as np
import pytest
from PIL import Image

from src.particle_tracer.exceptions import ImageFormatError
from src.particle_tracer.services.io.images import (linear_to_srgb, read_image, srgb_to_linear, to_srgb8,
                                                    write_image)


def test_transfer_curves_invert():
    x = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(srgb_to_linear(linear_to_srgb(x)), x, atol=1e-12)


def test_to_srgb8_clamps():
    out = to_srgb8(np.array([[[-1.0, 0.5, 2.0]]]))
    assert out.dtype == np.uint8
    assert out[0, 0, 0] == 0 and out[0, 0, 2] == 255


def test_write_then_read(tmp_path):
    pixels = np.random.default_rng(0).random((5, 7, 3))
    path = tmp_path / "img.png"
    write_image(pixels, path)
    back = read_image(path)
    assert back.shape == (5, 7, 3)
    # 8-bit quantization in sRGB space
    np.testing.assert_allclose(linear_to_srgb(back), linear_to_srgb(pixels), atol=0.5 / 255.0 + 1e-9)


def test_grayscale_input_is_expanded(tmp_path):
    path = tmp_path / "gray.png"
    write_image(np.full((2, 3), 0.25), path)
    assert read_image(path).shape == (2, 3, 3)


def test_non_finite_pixels_written_as_zero(tmp_path):
    pixels = np.zeros((1, 2, 3))
    pixels[0, 0, 0] = np.nan
    path = tmp_path / "nan.png"
    write_image(pixels, path)
    assert read_image(path)[0, 0, 0] == 0.0


def test_bad_shape_rejected(tmp_path):
    with pytest.raises(ImageFormatError):
        write_image(np.zeros((2, 2, 4)), tmp_path / "rgba.png")


def test_sixteen_bit_rejected(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(path)
    with pytest.raises(ImageFormatError):
        read_image(path)


def test_unreadable_file(tmp_path):
    path = tmp_path / "not.png"
    path.write_bytes(b"definitely not a png")
    with pytest.raises(ImageFormatError):
        read_image(path)
