import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lstmp.cells import ArchSpec, Kind, init_params
from lstmp.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from lstmp.config import (RunConfig, build_train_config, format_config, load_config, parse_config,
                          parse_pairs)
from lstmp.errors import (BadMagicError, ConfigError, InconsistentRecordError, TruncatedFileError,
                          VersionMismatchError)


class TestCheckpoint:
    def test_roundtrip_is_bitwise(self, small_spec, tmp_path):
        params = init_params(small_spec, 5, scale=0.7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, step=1234)
        loaded, step = load_checkpoint(path)
        assert step == 1234
        assert loaded.spec == small_spec
        assert loaded.flat.tobytes() == params.flat.tobytes()
        assert checkpoint_bytes(loaded, step) == path.read_bytes()

    def test_float32_upcasts(self, tmp_path):
        spec = ArchSpec("LSTM_RP", 3, 4, 2, n_r=2)
        params = init_params(spec, 1, dtype=np.float32)
        save_checkpoint(tmp_path / "m.ckpt", params)
        loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
        assert loaded.dtype == np.float64
        np.testing.assert_array_equal(loaded.flat, params.flat.astype(np.float64))

    def test_header_layout(self):
        params = init_params(ArchSpec("LSTM_RP_NP", 5, 7, 6, 4, 3), 0)
        blob = checkpoint_bytes(params, 9)
        assert blob[:4] == b"LSTM"
        assert struct.unpack_from("<I6IQI", blob, 4) == (1, 3, 5, 7, 6, 4, 3, 9, len(params.layout))

    @pytest.fixture
    def saved(self, tmp_path):
        params = init_params(ArchSpec("LSTM", 3, 4, 2), 0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, 7)
        return path

    def test_bad_magic(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[0:4] = b"LSTX"
        saved.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            load_checkpoint(saved)

    def test_version_mismatch(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[4:8] = struct.pack("<I", 2)
        saved.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(saved)

    @pytest.mark.parametrize("keep", [6, 40, 50, 60, -1])
    def test_truncated(self, saved, keep):
        blob = saved.read_bytes()
        saved.write_bytes(blob[:keep])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(saved)

    def test_record_name_mismatch(self, saved):
        blob = saved.read_bytes().replace(b"W_fx", b"W_qx", 1)
        saved.write_bytes(blob)
        with pytest.raises(InconsistentRecordError):
            load_checkpoint(saved)

    def test_record_shape_mismatch(self, saved):
        blob = bytearray(saved.read_bytes())
        # first record header: after the fixed header, u16 length + "W_ix" + rows, cols
        pos = 44 + 2 + 4
        blob[pos:pos + 8] = struct.pack("<II", 2, 6)
        saved.write_bytes(bytes(blob))
        with pytest.raises(InconsistentRecordError):
            load_checkpoint(saved)

    def test_unknown_kind(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[8:12] = struct.pack("<I", 9)
        saved.write_bytes(bytes(blob))
        with pytest.raises(InconsistentRecordError):
            load_checkpoint(saved)

    def test_error_classes_are_distinct(self):
        classes = {BadMagicError, VersionMismatchError, TruncatedFileError, InconsistentRecordError}
        for a in classes:
            assert not any(issubclass(a, b) for b in classes - {a})


class TestRunConfig:
    def test_defaults_parse(self):
        assert parse_config("") == RunConfig()

    def test_values_comments_and_case(self):
        cfg = parse_config("""
            # model
            kind = lstm_rp
            n_c = 64     # cells
            n_r = 16
            lr0 = 0.25
            clip_lstm = yes
            max_frames = none
        """)
        assert (cfg.kind, cfg.n_c, cfg.n_r, cfg.lr0, cfg.clip_lstm, cfg.max_frames) == \
            ("LSTM_RP", 64, 16, 0.25, True, None)

    @pytest.mark.parametrize("text,match", [
        ("learning_rate = 0.1", "unknown key"),
        ("n_c = lots", "bad value"),
        ("kind = GRU", "bad value"),
        ("n_c 10", "key = value"),
        ("clip_rnn = maybe", "bad value"),
        ("t_bptt = 0", "t_bptt"),
        ("lr0 = -1", "lr0"),
        ("dev_fraction = 1.5", "dev_fraction"),
        ("kind = LSTM_RP", "n_r"),
    ])
    def test_rejections(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_normalized_echo_reparses(self):
        cfg = parse_config("kind=LSTM_RP_NP\nn_c=12\nn_r=3\nn_p=2\ntrain_path=a.seqd\nlr0=0.3")
        text = format_config(cfg)
        assert parse_config(text) == cfg
        assert format_config(parse_config(text)) == text
        assert "lr0 = 0.3\n" in text and "dev_path = none\n" in text

    @settings(max_examples=60, deadline=None)
    @given(n_c=st.integers(1, 500), lr=st.floats(0, 10, allow_nan=False),
           clip=st.booleans(), delay=st.integers(0, 20), frames=st.one_of(st.none(), st.integers(1, 10 ** 9)))
    def test_idempotent(self, n_c, lr, clip, delay, frames):
        cfg = parse_pairs([f"n_c={n_c}", f"lr0={lr!r}", f"clip_rnn={clip}", f"output_delay={delay}",
                           f"max_frames={frames}"])
        assert parse_config(format_config(cfg)) == cfg

    def test_overrides_apply_after_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_c = 10\nseed = 3\n")
        cfg = load_config(path, ["seed=9", "workers = 2"])
        assert (cfg.n_c, cfg.seed, cfg.workers) == (10, 9, 2)

    def test_train_config_from_dataset_dims(self):
        cfg = parse_config("kind=LSTM_RP\nn_c=16\nn_r=4\nlr0=0.5\ndecay_factor=0.5\noutput_delay=0")
        tc = build_train_config(cfg, n_i=8, n_o=8)
        assert tc.arch == ArchSpec(Kind.LSTM_RP, 8, 16, 8, 4)
        assert (tc.schedule.lr0, tc.schedule.decay_factor, tc.output_delay) == (0.5, 0.5, 0)

    def test_dimension_conflict(self):
        with pytest.raises(ConfigError, match="n_i"):
            build_train_config(parse_config("n_i = 5"), n_i=8, n_o=8)
        with pytest.raises(ConfigError, match="n_o"):
            build_train_config(parse_config("n_o = 4"), n_i=8, n_o=8)
        assert build_train_config(parse_config("n_o = 10"), n_i=8, n_o=8).arch.n_o == 10
