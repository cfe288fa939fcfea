import json
import os

import numpy as np
import pytest

from routes.errors import (
    ConfigurationError,
    DimensionMismatchError,
    FrameFileMissingError,
    ManifestError,
    PPMHeaderError,
    SynthSpecError,
)
from routes.framestream import (
    Frame,
    Mover,
    NovelEvent,
    Rect,
    SynthSpec,
    load_stream,
    load_synth_spec,
    read_ppm,
    recompute_truth,
    square_pad_resize,
    synth_stream,
    write_ppm,
)


def solid(width, height, value):
    return Frame.from_array(np.full((height, width, 3), value, dtype=np.uint8))


def write_manifest(tmp_path, frames):
    names = []
    for i, frame in enumerate(frames):
        name = f"f{i}.ppm"
        write_ppm(frame, str(tmp_path / name))
        names.append(name)
    manifest = tmp_path / 'manifest.json'
    manifest.write_text(json.dumps(names))
    return str(manifest)


def test_load_stream_three_frames(tmp_path):
    manifest = write_manifest(tmp_path, [solid(64, 64, v) for v in (10, 20, 30)])
    stream = load_stream(manifest)
    assert len(stream) == 3
    assert stream.width == 64 and stream.height == 64
    assert int(stream.frames[2].pixels[0, 0, 0]) == 30


def test_load_stream_single_frame_is_allowed(tmp_path):
    stream = load_stream(write_manifest(tmp_path, [solid(64, 64, 1)]))
    assert len(stream) == 1


def test_load_stream_accepts_directory(tmp_path):
    write_manifest(tmp_path, [solid(8, 8, 1), solid(8, 8, 2)])
    assert len(load_stream(str(tmp_path))) == 2


def test_dimension_mismatch_names_index(tmp_path):
    manifest = write_manifest(tmp_path, [solid(64, 64, 0), solid(32, 32, 0)])
    with pytest.raises(DimensionMismatchError) as exc:
        load_stream(manifest)
    assert exc.value.index == 1


def test_missing_frame_file(tmp_path):
    manifest = write_manifest(tmp_path, [solid(8, 8, 0)])
    with open(manifest, 'w') as fh:
        json.dump(['f0.ppm', 'nope.ppm'], fh)
    with pytest.raises(FrameFileMissingError) as exc:
        load_stream(manifest)
    assert exc.value.index == 1
    assert exc.value.path.endswith('nope.ppm')


@pytest.mark.parametrize('payload', [
    b'P3\n2 2\n255\n' + bytes(12),
    b'P6\n2\n255\n' + bytes(12),
    b'P6\n2 2\n65535\n' + bytes(24),
    b'P6\n2 2\n255\n' + bytes(5),
])
def test_malformed_ppm_header(tmp_path, payload):
    path = tmp_path / 'bad.ppm'
    path.write_bytes(payload)
    with pytest.raises(PPMHeaderError):
        read_ppm(str(path), index=4)


def test_ppm_header_comments(tmp_path):
    path = tmp_path / 'c.ppm'
    path.write_bytes(b'P6\n# comentario\n2 1\n255\n' + bytes([1, 2, 3, 4, 5, 6]))
    frame = read_ppm(str(path))
    assert frame.pixels[0, 1].tolist() == [4, 5, 6]


def test_manifest_must_be_list(tmp_path):
    manifest = tmp_path / 'manifest.json'
    manifest.write_text('{"frames": []}')
    with pytest.raises(ManifestError):
        load_stream(str(manifest))


def test_square_pad_identity():
    frame = solid(560, 560, 77)
    out, mask = square_pad_resize(frame, 560, 28)
    assert np.array_equal(out.pixels, frame.pixels)
    assert mask.n_active == 400


def test_square_pad_landscape_marks_padding_rows():
    frame = solid(560, 280, 200)
    out, mask = square_pad_resize(frame, 560, 28)
    assert mask.blocks.shape == (20, 20)
    active_rows = mask.blocks.any(axis=1)
    assert not active_rows[:5].any()
    assert not active_rows[15:].any()
    assert active_rows[5:15].all()
    assert (out.pixels[:140] == 0).all()
    assert (out.pixels[420:] == 0).all()
    assert (out.pixels[140:420] == 200).all()


def test_square_pad_upscale_square():
    pixels = np.arange(280 * 280 * 3, dtype=np.uint32).reshape(280, 280, 3) % 251
    frame = Frame.from_array(pixels.astype(np.uint8))
    out, mask = square_pad_resize(frame, 560, 28)
    assert mask.n_active == 400
    assert np.array_equal(out.pixels[::2, ::2], frame.pixels)


def test_square_pad_keeps_thin_strip_visible():
    pixels = (np.arange(1000 * 3, dtype=np.uint32).reshape(1, 1000, 3) % 251).astype(np.uint8)
    wide = Frame.from_array(pixels)
    out, mask = square_pad_resize(wide, 56, 28)
    assert mask.blocks.tolist() == [[True, True], [False, False]]
    cols = np.arange(56) * 1000 // 56
    assert np.array_equal(out.pixels[27], pixels[0, cols])
    assert not out.pixels[:27].any() and not out.pixels[28:].any()

    tall = Frame.from_array(np.ascontiguousarray(pixels.transpose(1, 0, 2)))
    _, mask = square_pad_resize(tall, 56, 28)
    assert mask.blocks.tolist() == [[True, False], [True, False]]

    _, mask = square_pad_resize(wide, 28, 28)
    assert mask.blocks.tolist() == [[True]]


def test_square_pad_rejects_bad_target():
    with pytest.raises(ConfigurationError):
        square_pad_resize(solid(10, 10, 0), 100, 28)


def test_static_stream_has_zero_truth():
    stream, truth = synth_stream(SynthSpec(width=112, height=56, n_frames=5, seed=3,
                                           background='textured'))
    assert len(stream) == 5
    assert truth.values.shape == (4, 2, 4)
    assert not truth.values.any()


def test_mover_changes_only_entered_and_exited_blocks(fixture_path):
    spec = load_synth_spec(fixture_path('synth_mover.json'))
    stream, truth = synth_stream(spec)
    for t in range(1, spec.n_frames):
        expected = np.zeros((4, 6), dtype=np.int64)
        expected[1, t - 1] = 100
        expected[1, t] = 100
        if t == 3:
            expected[3, 4] = 90
        assert np.array_equal(truth.values[t - 1], expected), t


def test_truth_matches_recomputation_with_flicker():
    spec = SynthSpec(width=84, height=84, n_frames=8, seed=11, background='textured',
                     movers=(Mover(Rect(3, 5, 20, 17), (7, 4), -40),),
                     novel_events=(NovelEvent(4, Rect(50, 50, 30, 30), 120),),
                     flicker=None)
    stream, truth = synth_stream(spec)
    assert np.array_equal(truth.values, recompute_truth(stream, 28).values)

    from routes.framestream import Flicker
    flicker = SynthSpec(width=56, height=56, n_frames=6, seed=2, background='textured',
                        flicker=Flicker(period=2, amplitude=9))
    stream, truth = synth_stream(flicker)
    assert np.array_equal(truth.values, recompute_truth(stream, 28).values)
    assert truth.values[1].min() > 0  # transición 1 -> 2 cambia la fase
    assert not truth.values[0].any()


def test_synth_is_deterministic():
    spec = SynthSpec(width=56, height=56, n_frames=4, seed=99, background='textured',
                     movers=(Mover(Rect(0, 0, 10, 10), (5, 5), 50),))
    a, _ = synth_stream(spec)
    b, _ = synth_stream(spec)
    assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a.frames, b.frames))


def test_mover_leaving_frame_is_spec_error():
    spec = SynthSpec(width=56, height=56, n_frames=4, seed=0,
                     movers=(Mover(Rect(40, 0, 10, 10), (5, 0), 50),))
    with pytest.raises(SynthSpecError):
        synth_stream(spec)


def test_synth_rejects_single_frame():
    with pytest.raises(SynthSpecError):
        synth_stream(SynthSpec(width=28, height=28, n_frames=1, seed=0))


def test_synth_command_writes_loadable_stream(runner, tmp_path, fixture_path):
    out_dir = tmp_path / 'mover'
    result = runner.invoke(args=['synth', '--spec', fixture_path('synth_mover.json'),
                                 '--out', str(out_dir)])
    assert result.exit_code == 0, result.output
    assert 'frames=5' in result.output
    stream = load_stream(str(out_dir))
    assert len(stream) == 5
    truth = json.loads((out_dir / 'truth.json').read_text())
    assert truth['config']['subcommand'] == 'synth'
    assert np.array_equal(np.asarray(truth['transitions']),
                          recompute_truth(stream, 28).values)
    assert os.path.exists(out_dir / 'frame_0004.ppm')


def test_synth_command_reports_bad_spec(runner, tmp_path):
    spec = tmp_path / 'spec.json'
    spec.write_text(json.dumps({'width': 30, 'height': 28, 'n_frames': 3}))
    result = runner.invoke(args=['synth', '--spec', str(spec), '--out', str(tmp_path / 'o')])
    assert result.exit_code == 2
