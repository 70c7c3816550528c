import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framepred import pnm
from framepred.data import (
    BimodalParams,
    BouncingParams,
    ClipDataset,
    DataError,
    DatasetSpec,
    MotionThresholdError,
    Shape,
    bimodal_clip,
    denormalize,
    load_clip_tree,
    load_frame_sequence,
    motion_score,
    normalize,
    read_labels,
    render_shapes,
    sample_patches,
    stack_frames,
    synth_bimodal_dot,
    synth_bouncing_shapes,
    to_uint8,
    unstack_frames,
    write_clip_tree,
    write_frame_sequence,
)


class TestPNM:
    def test_pgm_bytes(self, tmp_path):
        (tmp_path / "0.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        frames = load_frame_sequence(tmp_path)
        assert frames.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(frames[0, 0], [[0, 128], [255, 64]])

    def test_ppm_channel_order(self, tmp_path):
        raster = bytes([10, 20, 30, 40, 50, 60])  # two RGB pixels
        (tmp_path / "a.ppm").write_bytes(b"P6 2 1 255\n" + raster)
        f = load_frame_sequence(tmp_path)[0]
        np.testing.assert_array_equal(f[:, 0, :], [[10, 40], [20, 50], [30, 60]])

    def test_comments_in_header(self):
        img = pnm.decode(b"P5\n# made by hand\n1 1\n# depth\n255\n\x07")
        assert img.shape == (1, 1, 1) and img[0, 0, 0] == 7

    def test_roundtrip(self, rng, tmp_path):
        for c in (1, 3):
            img = rng.integers(0, 256, size=(c, 5, 7), dtype=np.uint8)
            pnm.write(tmp_path / "x", img)
            np.testing.assert_array_equal(pnm.read(tmp_path / "x"), img)

    def test_errors(self, tmp_path):
        with pytest.raises(pnm.PNMError, match="bit depth"):
            pnm.decode(b"P5 1 1 65535\n\x00\x00")
        with pytest.raises(pnm.PNMError, match="magic"):
            pnm.decode(b"P2 1 1 255\n0")
        with pytest.raises(pnm.PNMError, match="truncated"):
            pnm.decode(b"P5 2 2 255\n\x00")
        with pytest.raises(pnm.PNMError):
            pnm.encode(np.zeros((2, 2), dtype=np.float32))

    def test_sequence_errors(self, tmp_path):
        with pytest.raises(DataError, match="no .pgm"):
            load_frame_sequence(tmp_path)
        pnm.write(tmp_path / "0.pgm", np.zeros((2, 2), np.uint8))
        pnm.write(tmp_path / "1.pgm", np.zeros((3, 2), np.uint8))
        with pytest.raises(DataError, match="differs"):
            load_frame_sequence(tmp_path)
        (tmp_path / "1.pgm").write_bytes(b"P5 2 2 65535\n" + bytes(8))
        with pytest.raises(DataError, match="bit depth"):
            load_frame_sequence(tmp_path)

    def test_lexicographic_order(self, tmp_path):
        for name, v in (("b.pgm", 2), ("a.pgm", 1), ("c.pgm", 3)):
            pnm.write(tmp_path / name, np.full((1, 1), v, np.uint8))
        assert load_frame_sequence(tmp_path)[:, 0, 0, 0].tolist() == [1, 2, 3]

    def test_clip_tree(self, rng, tmp_path):
        clips = [rng.integers(0, 256, size=(3, 1, 4, 4)).astype(np.float32) for _ in range(3)]
        write_clip_tree(tmp_path, clips, [0, 1, 1])
        back = load_clip_tree(tmp_path)
        for a, b in zip(clips, back):
            np.testing.assert_array_equal(a, b)
        assert read_labels(tmp_path) == [0, 1, 1]
        with pytest.raises(DataError):
            load_clip_tree(tmp_path / "missing")


class TestNormalize:
    def test_endpoints(self):
        assert normalize(0) == -1 and normalize(255) == 1

    def test_byte_roundtrip(self):
        v = np.arange(256)
        np.testing.assert_array_equal(to_uint8(denormalize(normalize(v))), v)

    def test_export_clamps_and_rounds_half_up(self):
        np.testing.assert_array_equal(to_uint8([-5.0, 0.5, 1.49, 254.5, 300.0]), [0, 1, 1, 255, 255])

    def test_stack_unstack(self, rng):
        f = rng.normal(size=(4, 3, 2, 2))
        np.testing.assert_array_equal(unstack_frames(stack_frames(f), 3), f)


def moving_dot(t=8, size=12, start=(5, 0), v=(0, 1)):
    seq = np.zeros((t, 1, size, size), np.float32)
    for i in range(t):
        r, c = start[0] + v[0] * i, start[1] + v[1] * i
        seq[i, 0, r, c] = 255
    return seq


class TestSampling:
    def test_tau_zero_accepts_first_draw(self):
        seq = np.zeros((6, 1, 8, 8), np.float32)
        out = sample_patches(seq, DatasetSpec(patch_size=4, tau=0.0), 3, 2, 1, np.random.default_rng(0))
        ref = np.random.default_rng(0)
        for s in out:
            assert s.origin == tuple(int(ref.integers(0, k)) for k in (4, 5, 5))

    def test_infinite_tau(self):
        with pytest.raises(MotionThresholdError):
            sample_patches(moving_dot(), DatasetSpec(patch_size=4, tau=np.inf, max_retries=5), 1, 2, 1)

    def test_shapes_and_range(self, rng):
        seq = rng.integers(0, 256, size=(7, 3, 10, 10)).astype(np.float32)
        out = sample_patches(seq, DatasetSpec(patch_size=4, tau=0.0, channels=3), 5, 3, 2, rng)
        for s in out:
            assert s.X.shape == (9, 4, 4) and s.Y.shape == (6, 4, 4)
            assert s.X.min() >= -1 and s.X.max() <= 1

    def test_patches_follow_dot(self):
        seq = moving_dot()
        m, n, p = 2, 1, 4
        spec_args = dict(patch_size=p)
        # brute-force score map over every (t, y, x)
        scores = {}
        for t in range(seq.shape[0] - m - n + 1):
            for y in range(12 - p + 1):
                for x in range(12 - p + 1):
                    scores[t, y, x] = motion_score(normalize(seq[t : t + m + n, :, y : y + p, x : x + p]))
        positive = sorted({v for v in scores.values() if v > 0})
        tau = positive[0] / 2  # above the static score (0), below any dot window
        out = sample_patches(seq, DatasetSpec(tau=tau, **spec_args), 200, m, n, np.random.default_rng(3))
        for s in out:
            t, y, x = s.origin
            assert scores[t, y, x] >= tau
            win = seq[t : t + m + n, 0, y : y + p, x : x + p]
            assert win.max() == 255  # the dot is inside

    def test_reproducible(self):
        seq = moving_dot()
        a = sample_patches(seq, DatasetSpec(patch_size=4, tau=0.001, seed=9), 20, 2, 1)
        b = sample_patches(seq, DatasetSpec(patch_size=4, tau=0.001, seed=9), 20, 2, 1)
        assert [s.origin for s in a] == [s.origin for s in b]

    def test_errors(self):
        with pytest.raises(DataError):
            sample_patches(moving_dot(t=2), DatasetSpec(patch_size=4), 1, 2, 1)
        with pytest.raises(DataError):
            sample_patches(moving_dot(), DatasetSpec(patch_size=16), 1, 2, 1)
        with pytest.raises(ValueError):
            DatasetSpec(tau=-1)
        with pytest.raises(ValueError):
            DatasetSpec(patch_size=12).check_scales(4)

    def test_dataset_batch(self):
        ds = ClipDataset([moving_dot(), moving_dot(start=(2, 3))], DatasetSpec(patch_size=4, tau=0), 2, 1, [0, 1])
        X, Y = ds.batch(np.random.default_rng(0), 3)
        assert X.shape == (3, 2, 4, 4) and Y.shape == (3, 1, 4, 4)
        assert {s.label for s in ds.samples(np.random.default_rng(1), 30)} == {0, 1}
        with pytest.raises(DataError):
            ClipDataset([np.zeros((4, 3, 4, 4))], DatasetSpec(), 2, 1)


class TestBouncing:
    def test_zero_velocity_static(self):
        seq = render_shapes([Shape(3, 4, 5, 0, 0, "disc")], 16, 16, 5)
        for t in range(1, 5):
            np.testing.assert_array_equal(seq[t], seq[0])

    def test_square_kinematics(self):
        seq = render_shapes([Shape(0, 0, 2, 1, 0)], 2, 6, 8)
        xs = [int(np.argmax(f[0, 0] > 0)) for f in seq]
        assert xs == [0, 1, 2, 3, 4, 3, 2, 1]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_lit_pixels_constant(self, seed):
        # one shape never overlaps itself, so its lit count is frame-invariant
        p = BouncingParams(height=20, width=20, n_shapes=1, frames=12, min_speed=1, max_speed=3)
        seq = synth_bouncing_shapes(p, seed)
        counts = (seq > 0).sum(axis=(1, 2, 3))
        assert (counts == counts[0]).all() and counts[0] > 0

    def test_deterministic_and_background(self):
        p = BouncingParams(background=40)
        a, b = synth_bouncing_shapes(p, 5), synth_bouncing_shapes(p, 5)
        np.testing.assert_array_equal(a, b)
        assert a.min() == 40 and a.shape == (16, 1, 32, 32)
        assert synth_bouncing_shapes(BouncingParams(channels=3), 1).shape[1] == 3

    def test_shape_too_large(self):
        with pytest.raises(ValueError):
            synth_bouncing_shapes(BouncingParams(height=6, width=6, max_size=8), 0)
        with pytest.raises(ValueError):
            render_shapes([Shape(0, 0, 9, 1, 1)], 8, 8, 2)


class TestBimodal:
    P = BimodalParams(canvas=16, dot=2, m=4, n=1, speed=2)

    def test_mode_frequency(self):
        _, labels = synth_bimodal_dot(self.P, 10_000, 0)
        assert abs(np.mean(labels) - 0.5) < 0.01

    def test_modes_differ_only_in_dot_rows(self):
        a, b = bimodal_clip(self.P, 6, 1, 0), bimodal_clip(self.P, 6, 1, 1)
        np.testing.assert_array_equal(a[:4], b[:4])
        diff_rows = np.nonzero((a[4] != b[4]).any(axis=(0, 2)))[0]
        assert set(diff_rows) == {4, 5, 8, 9}

    def test_average_has_two_half_dots(self):
        p = self.P
        avg = (bimodal_clip(p, 6, 1, 0)[4, 0] + bimodal_clip(p, 6, 1, 1)[4, 0]) / 2
        half = (p.background + p.foreground) / 2
        assert (avg == half).sum() == 2 * p.dot * p.dot
        assert set(np.unique(avg)) == {p.background, half}

    def test_input_moves_right(self):
        clip = bimodal_clip(self.P, 6, 1, 0)
        cols = [int(np.nonzero(f[0, 6] == self.P.foreground)[0][0]) for f in clip[:4]]
        assert cols == [1, 3, 5, 7]

    def test_labels_match_clips(self):
        clips, labels = synth_bimodal_dot(self.P, 50, 3)
        for clip, lab in zip(clips, labels):
            rows = np.nonzero((clip[4, 0] == self.P.foreground).any(axis=1))[0]
            r_in = np.nonzero((clip[3, 0] == self.P.foreground).any(axis=1))[0]
            assert (rows.min() < r_in.min()) == (lab == 0)


def test_write_sequence_extension(tmp_path):
    write_frame_sequence(tmp_path / "g", np.zeros((2, 1, 2, 2)))
    write_frame_sequence(tmp_path / "c", np.zeros((2, 3, 2, 2)))
    assert sorted(p.name for p in (tmp_path / "g").iterdir()) == ["0000.pgm", "0001.pgm"]
    assert sorted(p.name for p in (tmp_path / "c").iterdir()) == ["0000.ppm", "0001.ppm"]
