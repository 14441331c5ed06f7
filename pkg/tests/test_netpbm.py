"""PGM/PPM reader/writer round trips and malformed-input rejection."""

import numpy as np
import pytest

from ahmf.netpbm import NetpbmError, read_image, write_image


class TestRoundTrips:
    def test_pgm_8bit(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (1, 7, 5)).astype(np.uint16)
        path = tmp_path / "img.pgm"
        write_image(path, img, 255)
        back, maxval = read_image(path)
        assert maxval == 255
        np.testing.assert_array_equal(back, img)

    def test_pgm_16bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 65536, (1, 4, 6)).astype(np.uint16)
        path = tmp_path / "img16.pgm"
        write_image(path, img, 65535)
        back, maxval = read_image(path)
        assert maxval == 65535
        np.testing.assert_array_equal(back, img)

    def test_ppm_rgb(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (3, 5, 4)).astype(np.uint16)
        path = tmp_path / "img.ppm"
        write_image(path, img, 255)
        back, maxval = read_image(path)
        assert maxval == 255
        np.testing.assert_array_equal(back, img)

    def test_2d_input_promoted(self, tmp_path):
        img = np.arange(12).reshape(3, 4).astype(np.uint16)
        path = tmp_path / "flat.pgm"
        write_image(path, img, 255)
        back, _ = read_image(path)
        assert back.shape == (1, 3, 4)

    def test_16bit_is_big_endian_on_disk(self, tmp_path):
        path = tmp_path / "be.pgm"
        write_image(path, np.array([[[0x0102]]], np.uint16), 65535)
        raw = path.read_bytes()
        assert raw.endswith(b"\x01\x02")

    def test_comments_and_whitespace_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n 3 \n# another\n2\n255\n" + bytes(6))
        img, maxval = read_image(path)
        assert img.shape == (1, 2, 3) and maxval == 255


class TestErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(NetpbmError, match="magic"):
            read_image(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(NetpbmError, match="truncated"):
            read_image(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "hdr.pgm"
        path.write_bytes(b"P5\n4")
        with pytest.raises(NetpbmError):
            read_image(path)

    def test_write_rejects_out_of_range(self, tmp_path):
        with pytest.raises(NetpbmError, match="outside"):
            write_image(tmp_path / "x.pgm", np.array([[[300]]], np.uint16), 255)

    def test_write_rejects_bad_channels(self, tmp_path):
        with pytest.raises(NetpbmError, match="samples"):
            write_image(tmp_path / "x.pgm", np.zeros((2, 3, 3), np.uint16), 255)

    def test_error_message_carries_path(self, tmp_path):
        path = tmp_path / "named.pgm"
        path.write_bytes(b"P5\nnope\n")
        with pytest.raises(NetpbmError, match="named.pgm"):
            read_image(path)
