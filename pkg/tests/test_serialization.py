import io
import struct

import numpy as np
import pytest

from scaseg import (ConfigError, DataError, Tensor, load_checkpoint,
                    load_tensor, save_checkpoint, save_tensor)
from scaseg.config import build_config, load_config, parse_config_text
from scaseg.serialization import read_tensor, write_tensor


class TestTensorFormat:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_preserves_values(self, tmp_path, dtype):
        arr = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(dtype)
        path = tmp_path / "t.tsr"
        save_tensor(path, Tensor(arr))
        back = load_tensor(path)
        assert back.data.dtype == dtype
        assert np.array_equal(back.data, arr)

    def test_scalar_and_1d(self):
        for arr in (np.array(3.5), np.arange(5.0)):
            buf = io.BytesIO()
            write_tensor(buf, Tensor(arr))
            buf.seek(0)
            assert np.array_equal(read_tensor(buf).data, arr)

    def test_exact_byte_layout(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.zeros((2, 3), dtype=np.float32)))
        raw = buf.getvalue()
        assert raw[:4] == b"SASF"
        version, rank = struct.unpack("<II", raw[4:12])
        assert (version, rank) == (1, 2)
        assert struct.unpack("<2Q", raw[12:28]) == (2, 3)
        assert raw[28] == 0  # float32 tag
        assert len(raw) == 29 + 6 * 4

    def test_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            read_tensor(io.BytesIO(b"NOPE" + bytes(40)))

    def test_bad_version(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.zeros(2)))
        raw = bytearray(buf.getvalue())
        raw[4] = 9
        with pytest.raises(DataError, match="version"):
            read_tensor(io.BytesIO(bytes(raw)))

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.zeros(8)))
        with pytest.raises(DataError, match="truncated"):
            read_tensor(io.BytesIO(buf.getvalue()[:-4]))

    def test_unknown_dtype_tag(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.zeros(1)))
        raw = bytearray(buf.getvalue())
        raw[20] = 7  # tag byte for a rank-1 tensor
        with pytest.raises(DataError, match="dtype"):
            read_tensor(io.BytesIO(bytes(raw)))


class TestCheckpointFormat:
    def test_round_trip_preserves_names_order_values(self, tmp_path):
        g = np.random.default_rng(1)
        items = [("b.weight", Tensor(g.normal(size=(3, 3)))),
                 ("a.bias", Tensor(g.normal(size=3)))]
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, items)
        back = load_checkpoint(path)
        assert [n for n, _ in back] == ["b.weight", "a.bias"]
        for (_, x), (_, y) in zip(items, back):
            assert np.array_equal(x.data, y.data)

    def test_empty_checkpoint(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        save_checkpoint(path, [])
        assert load_checkpoint(path) == []

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"\x01")
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestConfigParsing:
    def test_comments_and_blank_lines(self):
        text = "# full line comment\n\nnum_blocks = 2  # trailing\n"
        assert parse_config_text(text) == {"num_blocks": "2"}

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("num_blocks = 2\nmomentum = 0.9\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("just some words\n")

    def test_values_reach_the_right_sections(self):
        cfg = build_config({"num_blocks": "3", "base_lr": "0.002",
                            "encoder_channels": "4, 8, 12, 16",
                            "attention_bias": "false",
                            "ase_embed_dim": "none"})
        assert cfg.decoder.num_blocks == 3
        assert cfg.train.base_lr == 0.002
        assert cfg.encoder.channels == (4, 8, 12, 16)
        assert cfg.decoder.attention_bias is False
        assert cfg.decoder.ase_embed_dim is None

    def test_bad_typed_value(self):
        with pytest.raises(ConfigError, match="num_blocks"):
            build_config({"num_blocks": "four"})

    def test_invalid_combination_rejected(self):
        with pytest.raises(ConfigError):
            build_config({"scm_variant": "eq9"})
        with pytest.raises(ConfigError):
            build_config({"encoder_channels": "8,16,32"})

    def test_overrides_beat_file_values(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("num_blocks = 2\nseed = 5\n")
        cfg = load_config(path, {"num_blocks": "4"})
        assert cfg.decoder.num_blocks == 4
        assert cfg.train.seed == 5
