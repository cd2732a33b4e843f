import struct

import numpy as np
import pytest

from payloads import random_depth, random_keypoints, random_mask, random_trajectory
from vsslam.dataset_io import (InstanceMask, decode_depth, decode_keypoints, decode_mask,
                               encode_depth, encode_keypoints, encode_mask, format_trajectory,
                               load_frame_bundle, make_keypoints, open_sequence, parse_kv,
                               parse_trajectory, read_depth, read_keypoints, read_mask,
                               read_trajectory, write_depth, write_keypoints, write_mask,
                               write_trajectory)
from vsslam.exceptions import DataError, FormatError
from vsslam.simulator import (SceneConfig, TrajectorySpec, build_scene, export_sequence)
from vsslam.geometry import CameraIntrinsics


class TestDepth:
    def test_two_by_one_layout(self, tmp_path):
        p = tmp_path / "a.depth"
        write_depth(p, np.array([[1.5, 0.0]], dtype=np.float32))
        raw = p.read_bytes()
        assert len(raw) == 20
        assert raw[:4] == b"DPD1"
        assert struct.unpack("<II", raw[4:12]) == (2, 1)
        assert struct.unpack("<2f", raw[12:]) == (1.5, 0.0)
        np.testing.assert_array_equal(read_depth(p), [[1.5, 0.0]])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.depth"
        p.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(FormatError) as exc:
            read_depth(p)
        assert exc.value.offset == 0

    def test_large_raster_bitwise(self, tmp_path, rng):
        d = rng.uniform(0.2, 9.0, (480, 640)).astype(np.float32)
        write_depth(tmp_path / "d", d)
        back = read_depth(tmp_path / "d")
        assert back.tobytes() == d.tobytes()

    def test_invalid_values_become_zero(self):
        d = np.array([[np.nan, -1.0, np.inf, 2.0]], dtype=np.float32)
        np.testing.assert_array_equal(decode_depth(encode_depth(d)), [[0, 0, 0, 2.0]])

    def test_truncated_and_trailing(self):
        buf = encode_depth(np.ones((3, 3), np.float32))
        for cut in (0, 3, 8, 11, 12, len(buf) - 1):
            with pytest.raises(FormatError):
                decode_depth(buf[:cut])
        with pytest.raises(FormatError):
            decode_depth(buf + b"\0")

    def test_dimension_overflow(self):
        with pytest.raises(FormatError) as exc:
            decode_depth(b"DPD1" + struct.pack("<II", 1 << 20, 1 << 20))
        assert exc.value.offset == 4

    def test_random_round_trips(self, rng):
        for _ in range(200):
            d = random_depth(rng)
            buf = encode_depth(d)
            assert encode_depth(decode_depth(buf)) == buf


class TestMask:
    def test_empty(self, tmp_path):
        m = InstanceMask.empty(4, 3)
        write_mask(tmp_path / "m", m)
        assert read_mask(tmp_path / "m") == m
        assert len((tmp_path / "m").read_bytes()) == 14 + 2 * 12

    def test_single_instance(self, tmp_path):
        ids = np.zeros((3, 4), np.uint16)
        ids[0, :3] = 1
        m = InstanceMask(ids, ((1, 7),))
        write_mask(tmp_path / "m", m)
        back = read_mask(tmp_path / "m")
        assert back.instances == ((1, 7),)
        assert int((back.ids == 1).sum()) == 3

    def test_unknown_id_rejected(self):
        ids = np.zeros((2, 2), np.uint16)
        ids[1, 1] = 5
        good = encode_mask(InstanceMask(np.zeros((2, 2), np.uint16), ((1, 2),)))
        bad = bytearray(good)
        # last pixel sits after header (14) + table (4) + three u16 pixels
        bad[18 + 6:18 + 8] = struct.pack("<H", 5)
        with pytest.raises(FormatError) as exc:
            decode_mask(bytes(bad))
        assert exc.value.offset == 24
        with pytest.raises(FormatError):
            encode_mask(InstanceMask(ids, ()))

    def test_reserved_and_duplicate_ids(self):
        with pytest.raises(FormatError):
            encode_mask(InstanceMask(np.zeros((1, 1), np.uint16), ((0, 1),)))
        with pytest.raises(FormatError):
            encode_mask(InstanceMask(np.zeros((1, 1), np.uint16), ((3, 1), (3, 2))))

    def test_truncation(self, rng):
        buf = encode_mask(random_mask(rng))
        for cut in range(0, len(buf), max(1, len(buf) // 25)):
            with pytest.raises(FormatError):
                decode_mask(buf[:cut])

    def test_random_round_trips(self, rng):
        for _ in range(200):
            m = random_mask(rng)
            buf = encode_mask(m)
            back = decode_mask(buf)
            assert back == m and encode_mask(back) == buf


class TestKeypoints:
    def test_zero_records(self, tmp_path):
        write_keypoints(tmp_path / "k", make_keypoints(np.zeros((0, 2)), np.zeros((0, 32))))
        assert (tmp_path / "k").read_bytes() == b"KPT1" + bytes(4)
        assert len(read_keypoints(tmp_path / "k")) == 0

    def test_one_record_size(self, tmp_path):
        rec = make_keypoints([[1.25, 2.5]], np.arange(32).reshape(1, 32), response=0.5, octave=3)
        write_keypoints(tmp_path / "k", rec)
        raw = (tmp_path / "k").read_bytes()
        assert len(raw) == 8 + 45
        assert struct.unpack_from("<fffB", raw, 8) == (1.25, 2.5, 0.5, 3)
        assert raw[21:] == bytes(range(32))

    def test_thousand_records_bitwise(self, tmp_path, rng):
        rec = make_keypoints(rng.uniform(0, 600, (1000, 2)),
                             rng.integers(0, 256, (1000, 32), dtype=np.uint8),
                             response=rng.random(1000), octave=rng.integers(0, 5, 1000))
        write_keypoints(tmp_path / "k", rec)
        assert read_keypoints(tmp_path / "k").tobytes() == rec.tobytes()

    def test_count_mismatch(self):
        buf = encode_keypoints(make_keypoints([[1, 1], [2, 2]], np.zeros((2, 32))))
        with pytest.raises(FormatError):
            decode_keypoints(buf[:-1])
        with pytest.raises(FormatError):
            decode_keypoints(buf + bytes(45))
        with pytest.raises(FormatError):
            decode_keypoints(b"KPT")

    def test_octave_limit(self):
        buf = bytearray(encode_keypoints(make_keypoints([[1, 1]], np.zeros((1, 32)))))
        buf[8 + 12] = 5
        with pytest.raises(FormatError) as exc:
            decode_keypoints(bytes(buf))
        assert exc.value.offset == 20


class TestTrajectory:
    def test_comment_and_identity(self):
        t = parse_trajectory("# comment\n0.0 0 0 0 0 0 0 1\n")
        assert len(t) == 1
        np.testing.assert_array_equal(t.quats[0], [0, 0, 0, 1])
        np.testing.assert_array_equal(t.positions[0], [0, 0, 0])

    def test_out_of_order(self):
        with pytest.raises(DataError):
            parse_trajectory("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")

    def test_malformed_line_reports_number(self):
        with pytest.raises(DataError, match=":3:"):
            parse_trajectory("# h\n0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n")
        with pytest.raises(DataError, match=":1:"):
            parse_trajectory("0 0 0 zero 0 0 0 1\n")

    def test_non_unit_quaternion(self):
        with pytest.raises(DataError):
            parse_trajectory("0 0 0 0 0 0 0 2\n")

    def test_hundred_poses_round_trip(self, tmp_path, rng):
        traj = random_trajectory(rng, 100)
        write_trajectory(tmp_path / "t.txt", traj)
        back = read_trajectory(tmp_path / "t.txt")
        assert np.abs(back.positions - traj.positions).max() < 1e-9
        assert np.abs(back.quats - traj.quats).max() < 1e-9
        # repr formatting makes the text round trip exact
        assert format_trajectory(back) == format_trajectory(traj)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            read_trajectory(tmp_path / "nope.txt")


def test_parse_kv():
    assert parse_kv("a = 1\n# c\n\nb=x y # tail\n") == {"a": "1", "b": "x y"}
    with pytest.raises(DataError, match=":2:"):
        parse_kv("a = 1\nbroken\n")


@pytest.fixture(scope="module")
def small_sequence(tmp_path_factory):
    out = tmp_path_factory.mktemp("seq")
    scene = build_scene(SceneConfig(landmarks=300), 3)
    spec = TrajectorySpec("orbit", duration=5 / 30.0)
    k = CameraIntrinsics(125.0, 125.0, 79.5, 59.5, 160, 120)
    return export_sequence(scene, spec, k, out)


class TestFrameBundle:
    def test_index_zero(self, small_sequence):
        b = load_frame_bundle(small_sequence, 0)
        assert b.depth.shape == (120, 160) and b.masks.shape == (120, 160)
        assert len(b.keypoints) > 0 and b.timestamp == 0.0

    def test_timestamp_from_fps(self, small_sequence):
        assert load_frame_bundle(small_sequence, 3).timestamp == pytest.approx(0.1)
        assert open_sequence(small_sequence).frame_count == 5

    def test_index_out_of_range(self, small_sequence):
        with pytest.raises(DataError):
            load_frame_bundle(small_sequence, 5)

    def test_missing_depth_names_path(self, small_sequence, tmp_path):
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(small_sequence, copy)
        (copy / "frames" / "000003.depth").unlink()
        with pytest.raises(DataError, match=r"frames/000003\.depth"):
            load_frame_bundle(copy, 3)

    def test_missing_cfg(self, tmp_path):
        with pytest.raises(DataError):
            open_sequence(tmp_path)
