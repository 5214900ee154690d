"""Bit-exact persistence for models, tensors, episode traces and reports.

Three formats, all little-endian:

Tensor blob (``*.bin``)
    magic ``SNNT0001`` (8 bytes), ndim (u32), ndim dims (u32 each), then
    prod(dims) float32 values in row-major order.  Total length is
    exactly 8 + 4 + 4*ndim + 4*prod(dims) bytes.

Model directory
    ``manifest.json`` (format_version 1, input_shape, per-layer records
    with kind/activation/stride/padding and blob filenames) plus one
    tensor blob per parameter tensor.

Episode trace (``*.trace``)
    magic ``SNNTR001`` (8 bytes), action_count (u32), ndim (u32), dims
    (u32 each), step_count (u32), then per step: one tensor blob holding
    the observation (dims must match the header), action (u32), reward
    (f64).

CSV reports render every number with ten significant digits, so a
parse of the written file recovers values to within 1e-9 relative.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import LayerSpec, NetworkSpec, validate_network

BLOB_MAGIC = b"SNNT0001"
TRACE_MAGIC = b"SNNTR001"
MANIFEST_NAME = "manifest.json"
REPORT_HEADER = ("sweep_param,value,episodes,mean_score,std_score,"
                 "mean_cr,std_cr,pearson_score_cr")


class FormatError(Exception):
    """A file failed to parse; the message names the offending location."""


class BlobError(FormatError):
    pass


class ManifestError(FormatError):
    pass


class TraceError(FormatError):
    pass


# ---------------------------------------------------------------------------
# tensor blobs

def blob_to_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    parts = [BLOB_MAGIC, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def blob_from_buffer(buf: bytes, offset: int, where: str) -> tuple[np.ndarray, int]:
    """Parse one blob starting at `offset`; returns (array, next offset)."""
    def take(n, what):
        end = offset + n
        if end > len(buf):
            raise BlobError(f"{where}: truncated while reading {what}")
        return buf[offset:end], end

    chunk, offset = take(8, "magic")
    if chunk != BLOB_MAGIC:
        raise BlobError(f"{where}: bad magic {chunk!r}")
    chunk, offset = take(4, "ndim")
    ndim = struct.unpack("<I", chunk)[0]
    if ndim > 32:
        raise BlobError(f"{where}: implausible ndim {ndim}")
    chunk, offset = take(4 * ndim, "dims")
    dims = struct.unpack(f"<{ndim}I", chunk)
    count = 1
    for d in dims:
        count *= d
    chunk, offset = take(4 * count, "data")
    data = np.frombuffer(chunk, dtype="<f4").reshape(dims)
    return data.astype(np.float32), offset


def write_blob(path, array: np.ndarray) -> None:
    Path(path).write_bytes(blob_to_bytes(array))


def read_blob(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise BlobError(f"{p}: no such blob file")
    buf = p.read_bytes()
    arr, end = blob_from_buffer(buf, 0, str(p))
    if end != len(buf):
        raise BlobError(f"{p}: {len(buf) - end} trailing bytes after tensor data")
    return arr


# ---------------------------------------------------------------------------
# model directories

def save_model(net: NetworkSpec, model_dir) -> None:
    """Write manifest plus one blob per parameter tensor; byte-deterministic."""
    result = validate_network(net)
    if not result.ok:
        raise ValueError("cannot save invalid network: " + "; ".join(result.violations))
    d = Path(model_dir)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for i, layer in enumerate(net.layers):
        rec = {
            "kind": layer.kind,
            "activation": layer.activation,
            "stride": list(layer.stride) if layer.kind == "conv2d" else None,
            "padding": list(layer.padding) if layer.kind == "conv2d" else None,
            "weights": None,
            "bias": None,
        }
        if layer.parameterized:
            rec["weights"] = f"layer{i:03d}_weights.bin"
            rec["bias"] = f"layer{i:03d}_bias.bin"
            write_blob(d / rec["weights"], layer.weights)
            write_blob(d / rec["bias"], layer.bias)
        records.append(rec)
    manifest = {
        "format_version": 1,
        "input_shape": list(net.input_shape),
        "layers": records,
    }
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(model_dir) -> NetworkSpec:
    """Load a model directory; the result always passes validate_network."""
    d = Path(model_dir)
    mpath = d / MANIFEST_NAME
    if not mpath.is_file():
        raise ManifestError(f"{mpath}: no such manifest")
    try:
        manifest = json.loads(mpath.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{mpath}: not valid JSON ({exc})") from exc
    if manifest.get("format_version") != 1:
        raise ManifestError(f"{mpath}: unsupported format_version "
                            f"{manifest.get('format_version')!r}")
    try:
        input_shape = tuple(int(x) for x in manifest["input_shape"])
        records = manifest["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{mpath}: malformed manifest ({exc})") from exc

    layers = []
    for i, rec in enumerate(records):
        kind = rec.get("kind")
        if kind not in ("dense", "conv2d", "flatten"):
            raise ManifestError(f"{mpath}: layer {i} has unknown kind {kind!r}")
        weights = bias = None
        if kind != "flatten":
            for key in ("weights", "bias"):
                if not rec.get(key):
                    raise ManifestError(f"{mpath}: layer {i} is missing its {key} blob name")
            weights = read_blob(d / rec["weights"])
            bias = read_blob(d / rec["bias"])
        layers.append(LayerSpec(
            kind=kind,
            weights=weights,
            bias=bias,
            stride=tuple(rec.get("stride") or (1, 1)),
            padding=tuple(rec.get("padding") or (0, 0)),
            activation=rec.get("activation", "none" if kind == "flatten" else "relu"),
        ))
    net = NetworkSpec(input_shape=input_shape, layers=layers)
    result = validate_network(net)
    if not result.ok:
        raise ManifestError(f"{mpath}: loaded network is invalid: "
                            + "; ".join(result.violations))
    return net


# ---------------------------------------------------------------------------
# episode traces

@dataclass
class TraceStep:
    observation: np.ndarray  # float32, values in [0, 1]
    action: int
    reward: float


@dataclass
class EpisodeTrace:
    """Recorded observations with the source network's action per step."""

    action_count: int
    observation_shape: tuple[int, ...]
    steps: list[TraceStep] = field(default_factory=list)

    def observations(self) -> np.ndarray:
        """All observations stacked into [steps, *observation_shape]."""
        if not self.steps:
            return np.zeros((0, *self.observation_shape), dtype=np.float32)
        return np.stack([s.observation for s in self.steps])

    def actions(self) -> list[int]:
        return [s.action for s in self.steps]

    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))


def _check_trace(trace: EpisodeTrace, where: str) -> None:
    if trace.action_count < 1:
        raise TraceError(f"{where}: action_count must be >= 1")
    for i, step in enumerate(trace.steps):
        if not 0 <= step.action < trace.action_count:
            raise TraceError(f"{where}: step {i} action {step.action} out of range "
                             f"[0, {trace.action_count})")
        if tuple(step.observation.shape) != tuple(trace.observation_shape):
            raise TraceError(f"{where}: step {i} observation shape "
                             f"{step.observation.shape} != header "
                             f"{tuple(trace.observation_shape)}")


def write_trace(trace: EpisodeTrace, path) -> None:
    p = Path(path)
    _check_trace(trace, str(p))
    shape = tuple(int(d) for d in trace.observation_shape)
    parts = [TRACE_MAGIC,
             struct.pack("<I", trace.action_count),
             struct.pack("<I", len(shape)),
             struct.pack(f"<{len(shape)}I", *shape),
             struct.pack("<I", len(trace.steps))]
    for step in trace.steps:
        parts.append(blob_to_bytes(step.observation))
        parts.append(struct.pack("<I", step.action))
        parts.append(struct.pack("<d", step.reward))
    p.write_bytes(b"".join(parts))


def read_trace(path) -> EpisodeTrace:
    p = Path(path)
    if not p.is_file():
        raise TraceError(f"{p}: no such trace file")
    buf = p.read_bytes()
    offset = 0

    def take(n, what):
        nonlocal offset
        end = offset + n
        if end > len(buf):
            raise TraceError(f"{p}: truncated while reading {what}")
        chunk = buf[offset:end]
        offset = end
        return chunk

    if take(8, "magic") != TRACE_MAGIC:
        raise TraceError(f"{p}: bad magic")
    action_count = struct.unpack("<I", take(4, "action count"))[0]
    ndim = struct.unpack("<I", take(4, "ndim"))[0]
    if ndim > 32:
        raise TraceError(f"{p}: implausible observation ndim {ndim}")
    shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "observation shape"))
    step_count = struct.unpack("<I", take(4, "step count"))[0]

    steps = []
    for i in range(step_count):
        obs, offset = blob_from_buffer(buf, offset, f"{p}: step {i} observation")
        action = struct.unpack("<I", take(4, f"step {i} action"))[0]
        reward = struct.unpack("<d", take(8, f"step {i} reward"))[0]
        steps.append(TraceStep(observation=obs, action=int(action), reward=float(reward)))
    if offset != len(buf):
        raise TraceError(f"{p}: {len(buf) - offset} trailing bytes after last step")
    trace = EpisodeTrace(action_count=int(action_count),
                         observation_shape=tuple(int(d) for d in shape),
                         steps=steps)
    _check_trace(trace, str(p))
    return trace


def load_frames(path) -> np.ndarray:
    """Read a frame set from either a stacked tensor blob or a trace file."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{p}: no such file")
    magic = p.read_bytes()[:8]
    if magic == TRACE_MAGIC:
        return read_trace(p).observations()
    if magic == BLOB_MAGIC:
        frames = read_blob(p)
        if frames.ndim < 2:
            raise BlobError(f"{p}: frame blob must have a leading frame dimension")
        return frames
    raise FormatError(f"{p}: neither a tensor blob nor a trace (magic {magic!r})")


# ---------------------------------------------------------------------------
# CSV reports

@dataclass
class ReportRow:
    sweep_param: str
    value: float
    episodes: int
    mean_score: float
    std_score: float
    mean_cr: float
    std_cr: float
    pearson_score_cr: float


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_report(rows: list[ReportRow], path) -> None:
    """Write sweep rows as CSV with ten-significant-digit numbers."""
    lines = [REPORT_HEADER]
    for row in rows:
        lines.append(",".join([
            row.sweep_param,
            _fmt(row.value),
            str(int(row.episodes)),
            _fmt(row.mean_score),
            _fmt(row.std_score),
            _fmt(row.mean_cr),
            _fmt(row.std_cr),
            _fmt(row.pearson_score_cr),
        ]))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> list[ReportRow]:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{p}: no such report file")
    lines = p.read_text().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise FormatError(f"{p}: missing or unexpected CSV header")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != 8:
            raise FormatError(f"{p}: line {ln} has {len(cells)} cells, expected 8")
        try:
            rows.append(ReportRow(
                sweep_param=cells[0],
                value=float(cells[1]),
                episodes=int(cells[2]),
                mean_score=float(cells[3]),
                std_score=float(cells[4]),
                mean_cr=float(cells[5]),
                std_cr=float(cells[6]),
                pearson_score_cr=float(cells[7]),
            ))
        except ValueError as exc:
            raise FormatError(f"{p}: line {ln} failed to parse ({exc})") from exc
    return rows
