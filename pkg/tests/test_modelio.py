"""Round-trip and malformed-input behavior of all file formats."""

import json
import math

import numpy as np
import pytest

from rateconv import (BlobError, EpisodeTrace, FormatError, ManifestError, NetworkSpec,
                      ReportRow, TraceError, TraceStep, dense, conv2d, flatten,
                      load_frames, load_model, read_blob, read_report, read_trace,
                      save_model, write_blob, write_report, write_trace)

from conftest import rand_conv_net, rand_dense_net


# ---------------------------------------------------------------------------
# tensor blobs

def test_blob_round_trip_bit_exact(tmp_path, rng):
    arr = rng.normal(size=(4, 3, 2)).astype(np.float32)
    path = tmp_path / "t.bin"
    write_blob(path, arr)
    back = read_blob(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)
    # declared byte length: magic + ndim + dims + data
    assert path.stat().st_size == 8 + 4 + 4 * 3 + 4 * 24


def test_blob_truncated_names_file(tmp_path):
    path = tmp_path / "t.bin"
    write_blob(path, np.ones((5,), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(BlobError, match="t.bin"):
        read_blob(path)


def test_blob_bad_magic_and_trailing_bytes(tmp_path):
    path = tmp_path / "t.bin"
    write_blob(path, np.ones((2,), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(BlobError, match="magic"):
        read_blob(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(BlobError, match="trailing"):
        read_blob(path)


# ---------------------------------------------------------------------------
# model directories

@pytest.mark.parametrize("builder", [
    lambda rng: rand_dense_net(rng),
    lambda rng: rand_conv_net(rng),
    lambda rng: NetworkSpec((1, 4, 4), [flatten(),
                                        dense(rng.normal(size=(3, 16)), rng.normal(size=3),
                                              activation="none")]),
])
def test_model_round_trip_bit_exact(tmp_path, rng, builder):
    net = builder(rng)
    save_model(net, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.input_shape == net.input_shape
    assert len(back.layers) == len(net.layers)
    for a, b in zip(net.layers, back.layers):
        assert a.kind == b.kind and a.activation == b.activation
        if a.kind == "conv2d":
            assert a.stride == b.stride and a.padding == b.padding
        if a.parameterized:
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)


def test_save_model_bytes_stable_across_runs(tmp_path, rng):
    net = rand_conv_net(rng)
    save_model(net, tmp_path / "a")
    save_model(net, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_model_missing_dir_and_missing_blob(tmp_path, rng):
    with pytest.raises(ManifestError, match="manifest"):
        load_model(tmp_path / "nope")
    net = rand_dense_net(rng)
    save_model(net, tmp_path / "m")
    (tmp_path / "m" / "layer000_weights.bin").unlink()
    with pytest.raises(BlobError, match="layer000_weights.bin"):
        load_model(tmp_path / "m")


def test_load_model_dim_mismatch_reported(tmp_path, rng):
    net = NetworkSpec((5,), [dense(rng.normal(size=(4, 5)), np.zeros(4)),
                             dense(rng.normal(size=(3, 4)), np.zeros(3), activation="none")])
    save_model(net, tmp_path / "m")
    # replace the second weight blob with a [3, 4]-incompatible tensor
    write_blob(tmp_path / "m" / "layer001_weights.bin", np.zeros((3, 7), dtype=np.float32))
    with pytest.raises(ManifestError, match="layer 1"):
        load_model(tmp_path / "m")


def test_load_model_rejects_bad_json_and_version(tmp_path, rng):
    net = rand_dense_net(rng)
    save_model(net, tmp_path / "m")
    manifest = tmp_path / "m" / "manifest.json"
    payload = json.loads(manifest.read_text())
    payload["format_version"] = 99
    manifest.write_text(json.dumps(payload))
    with pytest.raises(ManifestError, match="format_version"):
        load_model(tmp_path / "m")
    manifest.write_text("{not json")
    with pytest.raises(ManifestError, match="JSON"):
        load_model(tmp_path / "m")


# ---------------------------------------------------------------------------
# traces

def _trace(rng, steps, action_count=4, shape=(1, 4, 4)):
    records = [TraceStep(observation=rng.random(shape).astype(np.float32),
                         action=int(rng.integers(action_count)),
                         reward=float(rng.integers(0, 2)))
               for _ in range(steps)]
    return EpisodeTrace(action_count=action_count, observation_shape=shape, steps=records)


def test_trace_round_trip_empty(tmp_path, rng):
    trace = _trace(rng, 0)
    write_trace(trace, tmp_path / "t.trace")
    back = read_trace(tmp_path / "t.trace")
    assert back.action_count == 4
    assert back.observation_shape == (1, 4, 4)
    assert back.steps == []


def test_trace_round_trip_bit_exact(tmp_path, rng):
    trace = _trace(rng, 100)
    write_trace(trace, tmp_path / "t.trace")
    back = read_trace(tmp_path / "t.trace")
    assert len(back.steps) == 100
    for a, b in zip(trace.steps, back.steps):
        assert np.array_equal(a.observation, b.observation)
        assert a.action == b.action and a.reward == b.reward


def test_trace_rejects_out_of_range_action(tmp_path, rng):
    trace = _trace(rng, 3)
    trace.steps[1].action = 7
    with pytest.raises(TraceError, match="out of range"):
        write_trace(trace, tmp_path / "t.trace")


def test_trace_truncation_detected(tmp_path, rng):
    write_trace(_trace(rng, 5), tmp_path / "t.trace")
    raw = (tmp_path / "t.trace").read_bytes()
    (tmp_path / "t.trace").write_bytes(raw[:-4])
    with pytest.raises(TraceError, match="truncated"):
        read_trace(tmp_path / "t.trace")


def test_load_frames_from_blob_and_trace(tmp_path, rng):
    frames = rng.random((7, 1, 4, 4)).astype(np.float32)
    write_blob(tmp_path / "f.bin", frames)
    got = load_frames(tmp_path / "f.bin")
    assert np.array_equal(got, frames)

    trace = _trace(rng, 7)
    write_trace(trace, tmp_path / "t.trace")
    got = load_frames(tmp_path / "t.trace")
    assert got.shape == (7, 1, 4, 4)
    assert np.array_equal(got, trace.observations())

    (tmp_path / "junk").write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(FormatError):
        load_frames(tmp_path / "junk")


# ---------------------------------------------------------------------------
# reports

GOLDEN = ("sweep_param,value,episodes,mean_score,std_score,mean_cr,std_cr,"
          "pearson_score_cr\n"
          "time,500,10,123.456789,1.5,0.875,0.0625,nan\n")


def test_report_golden_bytes(tmp_path):
    row = ReportRow("time", 500.0, 10, 123.456789, 1.5, 0.875, 0.0625, float("nan"))
    write_report([row], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == GOLDEN
    write_report([row], tmp_path / "r2.csv")
    assert (tmp_path / "r2.csv").read_bytes() == (tmp_path / "r.csv").read_bytes()


def test_report_zero_rows_header_only(tmp_path):
    write_report([], tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines() == [GOLDEN.splitlines()[0]]


def test_report_parse_back_within_1e9(tmp_path, rng):
    rows = [ReportRow("percentile", 99.0 + float(rng.random()), int(rng.integers(1, 100)),
                      float(rng.normal(0, 100)), float(rng.random() * 10),
                      float(rng.random()), float(rng.random()), float(rng.uniform(-1, 1)))
            for _ in range(20)]
    write_report(rows, tmp_path / "r.csv")
    back = read_report(tmp_path / "r.csv")
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert a.sweep_param == b.sweep_param and a.episodes == b.episodes
        for name in ("value", "mean_score", "std_score", "mean_cr", "std_cr",
                     "pearson_score_cr"):
            x, y = getattr(a, name), getattr(b, name)
            assert abs(x - y) <= 1e-9 * max(1.0, abs(x))


def test_report_nan_round_trips(tmp_path):
    write_report([ReportRow("time", 1.0, 1, float("nan"), 0.0, 1.0, 0.0, float("nan"))],
                 tmp_path / "r.csv")
    back = read_report(tmp_path / "r.csv")
    assert math.isnan(back[0].mean_score) and math.isnan(back[0].pearson_score_cr)


def test_report_rejects_bad_header(tmp_path):
    (tmp_path / "r.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(FormatError, match="header"):
        read_report(tmp_path / "r.csv")
