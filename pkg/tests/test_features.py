import numpy as np
import pytest

from distillcap.compression import AudioFrames, VideoFrames, downsample_frames, downsample_indices
from distillcap.errors import DimensionMismatchError, FormatError, ShapeError, TruncatedFileError
from distillcap.features import (
    AUDIO,
    VISUAL,
    FeatureSequence,
    extract_audio_features,
    extract_visual_features,
    load_precomputed_features,
    make_audio_extractor,
    make_visual_extractor,
    pool_and_fuse,
    precomputed_extractor,
    save_features,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def frames(rng):
    return VideoFrames(rng.integers(0, 256, size=(6, 3, 16, 16), dtype=np.uint8))


@pytest.mark.parametrize("n,t", [(8, 1), (16, 3), (3, 1), (12, 2)])
def test_audio_window_count(rng, n, t):
    ex = make_audio_extractor(4, dim=5)
    out = extract_audio_features(AudioFrames(rng.normal(size=(4, n))), ex)
    assert out.data.shape == (t, 5) and out.modality == AUDIO


def test_audio_deterministic(rng):
    a = AudioFrames(rng.normal(size=(4, 20)))
    one = extract_audio_features(a, make_audio_extractor(4, seed=3)).data
    two = extract_audio_features(a, make_audio_extractor(4, seed=3)).data
    assert one.tobytes() == two.tobytes()
    assert not np.array_equal(one, extract_audio_features(a, make_audio_extractor(4, seed=4)).data)


def test_audio_rejects_wrong_rows(rng):
    with pytest.raises(ShapeError):
        extract_audio_features(AudioFrames(rng.normal(size=(3, 8))), make_audio_extractor(4))


def test_visual_one_row_per_frame(frames):
    out = extract_visual_features(frames, make_visual_extractor(dim=7))
    assert out.data.shape == (6, 7) and out.modality == VISUAL
    single = VideoFrames(frames.frames[:1])
    assert extract_visual_features(single, make_visual_extractor(dim=7)).length == 1


def test_visual_zero_frame_zero_bias_gives_zero():
    ex = make_visual_extractor(dim=8)
    ex.params["b1"][:] = 0.0
    ex.params["b2"][:] = 0.0
    out = extract_visual_features(VideoFrames(np.zeros((1, 3, 16, 16), dtype=np.uint8)), ex)
    assert not out.data.any()


def test_visual_permutation_equivariant(frames):
    ex = make_visual_extractor(dim=8)
    perm = np.array([3, 0, 5, 1, 4, 2])
    base = extract_visual_features(frames, ex).data
    shuffled = extract_visual_features(VideoFrames(frames.frames[perm]), ex).data
    np.testing.assert_array_equal(shuffled, base[perm])


@pytest.mark.parametrize("k", [0.2, 0.4, 0.6, 0.8, 1.0])
def test_downsampling_commutes_with_extraction(frames, k):
    ex = make_visual_extractor(dim=8)
    full = extract_visual_features(frames, ex).data
    small = extract_visual_features(downsample_frames(frames, k), ex).data
    np.testing.assert_array_equal(small, full[downsample_indices(frames.n_frames, k)])


def test_visual_channel_mismatch(frames):
    with pytest.raises(ShapeError):
        extract_visual_features(frames, make_visual_extractor(channels=1))


def test_pool_and_fuse_hand_example():
    a = FeatureSequence(np.array([[1.0, 3.0]]), AUDIO)
    v = FeatureSequence(np.array([[2.0], [4.0]]), VISUAL)
    assert pool_and_fuse(a, v).tolist() == [1.0, 3.0, 3.0]


def test_pool_and_fuse_single_step_is_concat():
    a = FeatureSequence(np.array([[1.0, 2.0]]), AUDIO)
    v = FeatureSequence(np.array([[5.0, 6.0, 7.0]]), VISUAL)
    assert pool_and_fuse(a, v).tolist() == [1.0, 2.0, 5.0, 6.0, 7.0]


def test_pool_and_fuse_modality_order():
    a = FeatureSequence(np.ones((1, 2)), AUDIO)
    v = FeatureSequence(np.ones((1, 2)), VISUAL)
    with pytest.raises(ValueError):
        pool_and_fuse(v, a)


def test_latent_length(rng, frames):
    a_ex, v_ex = make_audio_extractor(4, dim=5), make_visual_extractor(dim=9)
    for n in (3, 8, 30):
        lat = pool_and_fuse(extract_audio_features(AudioFrames(rng.normal(size=(4, n))), a_ex), extract_visual_features(frames, v_ex))
        assert lat.shape == (14,)


def test_feature_file_round_trip(tmp_path, rng):
    seq = FeatureSequence(rng.normal(size=(5, 16)).astype(np.float32), VISUAL)
    save_features(tmp_path / "f.dcft", seq)
    back = load_precomputed_features(tmp_path / "f.dcft")
    assert back.modality == VISUAL
    assert back.data.tobytes() == seq.data.tobytes()


def test_feature_file_errors(tmp_path, rng):
    path = tmp_path / "f.dcft"
    save_features(path, FeatureSequence(rng.normal(size=(2, 3)), AUDIO))
    raw = path.read_bytes()
    path.write_bytes(raw[:-2])
    with pytest.raises(TruncatedFileError):
        load_precomputed_features(path)
    path.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(DimensionMismatchError):
        load_precomputed_features(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        load_precomputed_features(path)
    assert not issubclass(TruncatedFileError, DimensionMismatchError)


def test_precomputed_extractor(tmp_path, rng):
    seq = FeatureSequence(rng.normal(size=(3, 4)).astype(np.float32), AUDIO)
    save_features(tmp_path / "clip.audio.dcft", seq)
    out = extract_audio_features(AudioFrames(np.zeros((2, 2)), name="clip"), precomputed_extractor(AUDIO, tmp_path))
    np.testing.assert_array_equal(out.data, seq.data)
