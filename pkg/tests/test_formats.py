import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from src.formats.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.formats.flow_io import decode_flow, encode_flow, read_flow, write_flow
from src.formats.images import center_crop_resize, load_style_dir, load_style_image, write_png
from src.formats.ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from src.formats.run_config import dump_run_config, load_run_config, parse_run_config, save_run_config
from src.formats.style_cache import StyleCache
from src.scene.flow import FlowField
from src.train.config import TrainConfig
from src.utils.errors import (ChecksumError, ConfigError, FormatError, InvalidInputError, TruncatedFileError,
                              UnsupportedVersionError, WrongMagicError)
from src.wct.transform import StyleTransform


@pytest.fixture
def tensors(rng):
    return {
        "gaussians.center": rng.normal(size=(5, 3)),
        "revnet.blocks.0.conv1.weight": rng.normal(size=(3, 3, 16, 32)).astype(np.float32),
        "meta.stage": np.array([1.0]),
        "scalar": np.array(2.5),
    }


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tensors):
        decoded = decode_checkpoint(encode_checkpoint(tensors))
        assert list(decoded) == list(tensors)
        for name, array in tensors.items():
            assert decoded[name].dtype == array.dtype
            np.testing.assert_array_equal(decoded[name], array)

    def test_file_round_trip(self, tensors, tmp_path):
        path = tmp_path / "nested" / "model.g4ds"
        save_checkpoint(path, tensors)
        np.testing.assert_array_equal(load_checkpoint(path)["gaussians.center"], tensors["gaussians.center"])

    def test_wrong_magic(self, tensors):
        raw = bytearray(encode_checkpoint(tensors))
        raw[:4] = b"NOPE"
        with pytest.raises(WrongMagicError) as info:
            decode_checkpoint(bytes(raw))
        assert info.value.offset == 0

    def test_unsupported_version(self, tensors):
        raw = bytearray(encode_checkpoint(tensors))
        raw[4:8] = struct.pack("<I", 7)
        with pytest.raises(UnsupportedVersionError):
            decode_checkpoint(bytes(raw))

    @pytest.mark.parametrize("keep", [10, 40, 200, -5])
    def test_truncated(self, tensors, keep):
        raw = encode_checkpoint(tensors)
        with pytest.raises(TruncatedFileError):
            decode_checkpoint(raw[:keep])

    def test_flipped_data_byte_fails_crc(self, tensors):
        raw = bytearray(encode_checkpoint(tensors))
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(ChecksumError) as info:
            decode_checkpoint(bytes(raw))
        assert info.value.offset == len(raw) - 4

    def test_unknown_dtype_tag(self):
        name = b"x"
        body = b"G4DS" + struct.pack("<IQ", 1, 1) + struct.pack("<H", 1) + name + struct.pack("<BB", 9, 0)
        raw = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        with pytest.raises(FormatError, match="dtype tag"):
            decode_checkpoint(raw)

    def test_integer_arrays_are_stored_as_float64(self):
        decoded = decode_checkpoint(encode_checkpoint({"counts": np.arange(4)}))
        assert decoded["counts"].dtype == np.float64


class TestPPM:
    def test_p6_round_trip(self, rng, tmp_path):
        image = np.round(rng.uniform(size=(5, 7, 3)) * 255) / 255
        write_ppm(tmp_path / "a.ppm", image)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), image)

    def test_header_layout(self):
        raw = encode_ppm(np.zeros((2, 3, 3)))
        assert raw.startswith(b"P6\n3 2\n255\n")
        assert len(raw) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3

    def test_p3_with_comments(self):
        raw = b"P3\n# a comment\n2 1\n255\n255 0 0  0 0 255\n"
        image = decode_ppm(raw)
        np.testing.assert_array_equal(image[0, 0], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(image[0, 1], [0.0, 0.0, 1.0])

    def test_maxval_is_rescaled(self):
        raw = b"P3\n1 1\n15\n15 0 7\n"
        np.testing.assert_array_equal(np.round(decode_ppm(raw)[0, 0] * 255), [255.0, 0.0, 119.0])

    def test_sixteen_bit_p6(self):
        raw = b"P6\n1 1\n65535\n" + struct.pack(">3H", 65535, 0, 32768)
        np.testing.assert_array_equal(np.round(decode_ppm(raw)[0, 0] * 255), [255.0, 0.0, 128.0])

    def test_wrong_magic(self):
        with pytest.raises(WrongMagicError):
            decode_ppm(b"P5\n1 1\n255\n\x00")

    def test_truncated_pixels(self):
        with pytest.raises(TruncatedFileError):
            decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00")

    def test_values_are_clamped(self):
        raw = encode_ppm(np.array([[[-0.5, 0.5, 1.5]]]))
        assert raw[-3:] == bytes([0, 128, 255])


class TestFlowFile:
    def test_round_trip(self, rng, tmp_path):
        flow = rng.normal(size=(4, 5, 2)).astype(np.float32).astype(np.float64)
        valid = rng.uniform(size=(4, 5)) > 0.3
        write_flow(tmp_path / "f.flo", FlowField(flow, valid))
        back = read_flow(tmp_path / "f.flo")
        np.testing.assert_array_equal(back.flow, flow)
        np.testing.assert_array_equal(back.valid, valid)

    def test_record_size(self):
        raw = encode_flow(FlowField.zeros(2, 3))
        assert len(raw) == 16 + 2 * 3 * 9

    def test_bad_magic_and_truncation(self):
        raw = encode_flow(FlowField.zeros(2, 3))
        with pytest.raises(WrongMagicError):
            decode_flow(b"XXXX" + raw[4:])
        with pytest.raises(TruncatedFileError):
            decode_flow(raw[:-1])


class TestRunConfig:
    def test_empty_document_gives_defaults(self):
        assert parse_run_config("") == TrainConfig()

    def test_dump_parse_is_idempotent(self, tmp_path):
        config = parse_run_config("seed: 4\nstage2: {iters: 10, lr: 1e-3}\nrender: {dtype: float32}\n")
        save_run_config(tmp_path / "run.yaml", config)
        again = load_run_config(tmp_path / "run.yaml")
        assert again == config
        assert dump_run_config(again) == dump_run_config(config)

    def test_scientific_notation_becomes_float(self):
        config = parse_run_config("stage2:\n  lr: 1e-3\nstage1:\n  lr_networks: 1\n")
        assert config.stage2.lr == pytest.approx(1e-3)
        assert isinstance(config.stage1.lr_networks, float)

    @pytest.mark.parametrize("text", [
        "bogus: 1\n",
        "stage1: {coarse_iterz: 3}\n",
        "stage1: {coarse_iters: -1}\n",
        "render: {dtype: float16}\n",
        "eval: {transform: magic}\n",
        "stage2: {lr: fast}\n",
        "- just\n- a list\n",
        "stage1: [1, 2\n",
    ])
    def test_invalid_documents(self, text):
        with pytest.raises(ConfigError):
            parse_run_config(text)


class TestStyleImages:
    def test_center_crop_resize(self):
        image = Image.fromarray(np.zeros((40, 100, 3), dtype=np.uint8))
        assert center_crop_resize(image, 64).size == (64, 64)

    def test_load_png_and_ppm(self, rng, tmp_path):
        pixels = np.round(rng.uniform(size=(64, 64, 3)) * 255) / 255
        write_png(tmp_path / "b.png", pixels)
        write_ppm(tmp_path / "a.ppm", pixels)
        (tmp_path / "notes.txt").write_text("not an image", encoding="utf-8")
        styles = load_style_dir(tmp_path, size=64)
        assert [s.name for s in styles] == ["a", "b"]
        np.testing.assert_array_equal(styles[0].pixels, pixels)
        np.testing.assert_array_equal(styles[1].pixels, pixels)
        assert styles[0].raw == (tmp_path / "a.ppm").read_bytes()

    def test_resize_to_style_size(self, rng, tmp_path):
        write_ppm(tmp_path / "s.ppm", rng.uniform(size=(80, 120, 3)))
        style = load_style_image(tmp_path / "s.ppm")
        assert style.pixels.shape == (256, 256, 3)
        assert style.pixels.min() >= 0.0 and style.pixels.max() <= 1.0

    def test_empty_directory(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_style_dir(tmp_path)

    def test_undecodable_png(self, tmp_path):
        (tmp_path / "broken.png").write_bytes(b"\x89PNG not really")
        with pytest.raises(FormatError):
            load_style_image(tmp_path / "broken.png")


class TestStyleCache:
    @pytest.fixture
    def transform(self, rng):
        return StyleTransform(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=4),
                              rng.normal(size=4))

    def test_key_depends_on_every_input(self):
        base = StyleCache.key(b"img", "digest", "predicted", (256, 256))
        assert base != StyleCache.key(b"img2", "digest", "predicted", (256, 256))
        assert base != StyleCache.key(b"img", "digest2", "predicted", (256, 256))
        assert base != StyleCache.key(b"img", "digest", "closed-form", (256, 256))
        assert base != StyleCache.key(b"img", "digest", "predicted", (128, 128))

    def test_put_then_get(self, transform, tmp_path):
        cache = StyleCache(tmp_path / "cache")
        key = StyleCache.key(b"img", "digest", "predicted", (256, 256))
        assert cache.get(key) is None
        cache.put(key, transform)
        hit = cache.get(key)
        np.testing.assert_array_equal(hit.t_s, transform.t_s)
        np.testing.assert_array_equal(hit.mu_f, transform.mu_f)

    def test_corrupt_entry_is_a_miss(self, transform, tmp_path):
        cache = StyleCache(tmp_path)
        key = StyleCache.key(b"img", "digest", "predicted", (256, 256))
        cache.put(key, transform)
        path = cache.path(key)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0x01
        path.write_bytes(bytes(raw))
        assert cache.get(key) is None
