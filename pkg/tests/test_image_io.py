import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from entrokeys import image_io
from entrokeys.image_io import (BadMagicError, MalformedHeaderError, TruncatedPayloadError,
                                UnsupportedMaxvalError, load_pgm, load_ppm, make_frame, preprocess,
                                quantize, save_pgm, save_ppm)
from oracles import preprocess_pixelwise


def write_bytes(path, data: bytes):
    path.write_bytes(data)
    return path


def test_all_255_file_loads_as_ones(tmp_path):
    p = write_bytes(tmp_path / "w.ppm", b"P6\n2 2\n255\n" + bytes([255] * 12))
    f = load_ppm(p)
    assert f.shape == (2, 2, 3)
    assert np.all(f == 1.0)


def test_header_comments_are_skipped(tmp_path):
    p = write_bytes(tmp_path / "c.ppm", b"P6\n# made by hand\n1 1\n255\n" + bytes([0, 51, 255]))
    assert np.allclose(load_ppm(p)[0, 0], [0.0, 0.2, 1.0])


def test_save_load_round_trip_of_quantized_frame(tmp_path):
    rng = np.random.default_rng(3)
    f = rng.integers(0, 256, size=(7, 5, 3)) / 255.0
    save_ppm(f, tmp_path / "r.ppm")
    assert np.array_equal(load_ppm(tmp_path / "r.ppm"), f)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_round_trip_property(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("rt") / "f.ppm"
    f = data / 255.0
    save_ppm(f, path)
    assert np.array_equal(load_ppm(path), f)


def test_zero_frame_payload_is_zero_bytes(tmp_path):
    save_ppm(np.zeros((3, 4, 3)), tmp_path / "z.ppm")
    raw = (tmp_path / "z.ppm").read_bytes()
    assert raw.startswith(b"P6\n4 3\n255\n")
    assert raw[len(b"P6\n4 3\n255\n"):] == bytes(36)


def test_half_rounds_up_to_128(tmp_path):
    assert quantize(np.array([0.5]))[0] == 128
    save_ppm(np.full((1, 1, 3), 0.5), tmp_path / "h.ppm")
    assert (tmp_path / "h.ppm").read_bytes()[-3:] == bytes([128] * 3)


@pytest.mark.parametrize("content,error", [
    (b"P5\n1 1\n255\n\x00", BadMagicError),
    (b"P6\n1\n", MalformedHeaderError),
    (b"P6\nx 1\n255\n\x00\x00\x00", MalformedHeaderError),
    (b"P6\n1 1\n65535\n" + bytes(6), UnsupportedMaxvalError),
    (b"P6\n1 1\n100\n" + bytes(3), UnsupportedMaxvalError),
    (b"P6\n2 2\n255\n" + bytes(5), TruncatedPayloadError),
])
def test_parse_errors_are_distinct(tmp_path, content, error):
    p = write_bytes(tmp_path / "bad.ppm", content)
    with pytest.raises(error):
        load_ppm(p)


def test_pgm_round_trip(tmp_path):
    m = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    save_pgm(m, tmp_path / "m.pgm", maxval=3)
    data, maxval = load_pgm(tmp_path / "m.pgm")
    assert maxval == 3 and np.array_equal(data, m)
    with pytest.raises(ValueError):
        save_pgm(m, tmp_path / "bad.pgm", maxval=2)


def test_make_frame_validates():
    with pytest.raises(ValueError):
        make_frame(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        make_frame(np.full((2, 2, 3), 1.5))
    f = make_frame(np.zeros((2, 2, 3)))
    assert not f.flags.writeable


def test_load_video_orders_frames(tmp_path):
    for t in (2, 0, 1):
        save_ppm(np.full((2, 2, 3), t / 255.0), tmp_path / f"frame_{t:06d}.ppm")
    frames = image_io.load_video(tmp_path)
    assert [round(f[0, 0, 0] * 255) for f in frames] == [0, 1, 2]
    with pytest.raises(FileNotFoundError):
        image_io.load_video(tmp_path / "nothing")


@pytest.mark.parametrize("c", [0.1, 0.37, 0.8, 1.0])
def test_constant_frame_maps_to_one(c):
    out = preprocess(np.full((9, 11, 3), c))
    assert np.max(np.abs(out - 1.0)) <= 1e-4


def test_zero_frame_stays_zero():
    assert np.all(preprocess(np.zeros((6, 6, 3))) == 0.0)


def test_step_edge_matches_pixelwise_oracle():
    f = np.zeros((8, 10, 3))
    f[:, 5:, :] = 1.0
    assert np.allclose(preprocess(f, 2), preprocess_pixelwise(f, 2), atol=1e-12, rtol=0)


def test_random_frame_matches_pixelwise_oracle():
    f = np.random.default_rng(0).random((9, 7, 3))
    for r in (1, 2, 3):
        assert np.allclose(preprocess(f, r), preprocess_pixelwise(f, r), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)),
              elements=st.floats(0.0, 1.0)), st.integers(1, 3))
def test_preprocess_keeps_shape_and_range(frame, radius):
    out = preprocess(frame, radius)
    assert out.shape == frame.shape
    assert np.all(np.isfinite(out)) and out.min() >= 0.0 and out.max() <= 1.0


def test_blur_radius_must_be_positive():
    with pytest.raises(ValueError):
        preprocess(np.zeros((4, 4, 3)), 0)
