"""Model compression and payload sizing.

Magnitude pruning, post-training 8-bit quantization, a canonical
little-endian checkpoint format, deflate-based lossless coding, measured
payload sizes, and least-squares linear size models that the planner
inverts.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from edgecl.model import HEAD_AE, HEAD_MLP, DenseModel, forward_batch

MAGIC = b"TDM1"
_HEAD_TAGS = {HEAD_AE: 0, HEAD_MLP: 1}
_HEAD_NAMES = {v: k for k, v in _HEAD_TAGS.items()}

CODEC_DEFLATE = 1
SAMPLE_BITS = 32  # sensor readings travel as 32-bit floats

PAYLOAD_DATA = "DATA"
PAYLOAD_MODEL = "MODEL"


class CompressionError(ValueError):
    pass


class CodecError(ValueError):
    """Corrupt or foreign coded stream."""


@dataclass(frozen=True)
class SizeModel:
    """Fitted line bits = slope * x + intercept, with the worst residual kept."""

    slope: float
    intercept: float
    residual_max: float

    def at(self, x: float) -> float:
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class Payload:
    kind: str
    raw_bits: int
    coded_bits: int
    meta: tuple

    def __post_init__(self):
        if self.coded_bits <= 0:
            raise CompressionError("payload has no coded bits")


def prune(model: DenseModel, p_l: float) -> DenseModel:
    """Zero the globally smallest-magnitude fraction ``p_l`` of all weights.

    Biases are exempt.  Ranking is global across every weight matrix; ties
    resolve by position (stable), which makes the operation idempotent.
    """
    if not 0.0 <= p_l <= 1.0:
        raise CompressionError("pruning level must lie in [0, 1]")
    out = model.copy()
    out.p_l = float(p_l)
    n_w = model.weight_count()
    n_zero = int(np.floor(p_l * n_w))
    if n_zero == 0:
        return out
    flat = np.concatenate([np.abs(w).ravel() for w in out.weights])
    order = np.argsort(flat, kind="stable")
    kill = np.zeros(n_w, dtype=bool)
    kill[order[:n_zero]] = True
    offset = 0
    for w in out.weights:
        size = w.size
        mask = kill[offset:offset + size].reshape(w.shape)
        w[mask] = 0.0
        offset += size
    return out


def _tensor_codes(w: np.ndarray):
    """Symmetric per-tensor 8-bit codes and their grid step."""
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    if max_abs == 0.0:
        return np.zeros(w.shape, dtype=np.int8), 0.0
    delta = max_abs / 127.0
    codes = np.clip(np.round(w.astype(np.float64) / delta), -127, 127)
    return codes.astype(np.int8), delta


def _codes_to_weights(codes: np.ndarray, delta: float) -> np.ndarray:
    return (codes.astype(np.float64) * delta).astype(np.float32)


def quantize(model: DenseModel, q_l: int, calibration: np.ndarray | None = None) -> DenseModel:
    """Post-training quantization to ``q_l`` bits.

    32 bits is the identity.  8 bits maps every weight tensor onto a
    symmetric grid with step max|w|/127; when ``calibration`` rows are
    given, per-layer activation grids are derived from them and applied
    by the forward pass (clamp to the same grid).
    """
    if q_l not in (8, 32):
        raise CompressionError("quantization level must be 8 or 32")
    out = model.copy()
    out.q_l = q_l
    if q_l == 32:
        out.act_scales = None
        return out
    for i, w in enumerate(out.weights):
        codes, delta = _tensor_codes(w)
        out.weights[i] = _codes_to_weights(codes, delta)
    if calibration is not None and len(calibration):
        out.act_scales = _activation_scales(out, np.asarray(calibration))
    return out


def _activation_scales(model: DenseModel, x: np.ndarray) -> list:
    """Per-layer grid steps from the maximum activation seen on calibration data."""
    scales = []
    probe = model.copy()
    probe.act_scales = None
    h = x.astype(np.float32)
    last = len(probe.weights) - 1
    for i, (w, b) in enumerate(zip(probe.weights, probe.biases)):
        z = h @ w.T + b
        if i < last:
            h = np.maximum(z, 0.0)
        elif probe.head == HEAD_MLP:
            h = 1.0 / (1.0 + np.exp(-z))
        else:
            h = z
        scales.append(float(np.max(np.abs(h))) / 127.0 if h.size else 0.0)
    return scales


def serialize(model: DenseModel) -> bytes:
    """Canonical little-endian checkpoint; byte-for-byte deterministic.

    8-bit models carry int8 codes plus a float64 grid step per tensor;
    dense models carry raw float32 tensors.  Biases are always float32.
    """
    if not model.weights:
        raise CompressionError("cannot serialize a model without weights")
    parts = [MAGIC]
    flags = (1 if model.e_ref is not None else 0) | (2 if model.act_scales is not None else 0)
    parts.append(struct.pack("<BBBB", _HEAD_TAGS[model.head], model.q_l, flags,
                             len(model.layer_dims)))
    parts.append(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
    parts.append(struct.pack("<dd", model.e_ref if model.e_ref is not None else 0.0,
                             model.p_l))
    if model.act_scales is not None:
        parts.append(struct.pack(f"<{len(model.act_scales)}d", *model.act_scales))
    for w, b in zip(model.weights, model.biases):
        if model.q_l == 8:
            codes, delta = _tensor_codes(w)
            parts.append(struct.pack("<d", delta))
            parts.append(codes.tobytes())
        else:
            parts.append(np.ascontiguousarray(w, dtype=np.float32).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=np.float32).tobytes())
    return b"".join(parts)


def deserialize(blob: bytes) -> DenseModel:
    if blob[:4] != MAGIC:
        raise CompressionError("bad checkpoint magic")
    off = 4
    head_tag, q_l, flags, n_dims = struct.unpack_from("<BBBB", blob, off)
    off += 4
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, off))
    off += 4 * n_dims
    e_ref, p_l = struct.unpack_from("<dd", blob, off)
    off += 16
    act_scales = None
    if flags & 2:
        act_scales = list(struct.unpack_from(f"<{n_dims - 1}d", blob, off))
        off += 8 * (n_dims - 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if q_l == 8:
            (delta,) = struct.unpack_from("<d", blob, off)
            off += 8
            codes = np.frombuffer(blob, dtype=np.int8, count=fan_out * fan_in, offset=off)
            off += fan_out * fan_in
            weights.append(_codes_to_weights(codes.reshape(fan_out, fan_in), delta))
        else:
            w = np.frombuffer(blob, dtype="<f4", count=fan_out * fan_in, offset=off)
            off += 4 * fan_out * fan_in
            weights.append(w.reshape(fan_out, fan_in).copy())
        b = np.frombuffer(blob, dtype="<f4", count=fan_out, offset=off)
        off += 4 * fan_out
        biases.append(b.copy())
    return DenseModel(dims, weights, biases, _HEAD_NAMES[head_tag],
                      e_ref=e_ref if flags & 1 else None, p_l=p_l, q_l=q_l,
                      act_scales=act_scales)


def lossless_code(data: bytes) -> bytes:
    """Deflate the buffer; a one-byte codec id prefixes the stream."""
    if not data:
        raise CodecError("refusing to code an empty buffer")
    return bytes([CODEC_DEFLATE]) + zlib.compress(data, 9)


def lossless_decode(coded: bytes) -> bytes:
    if not coded or coded[0] != CODEC_DEFLATE:
        raise CodecError("unknown codec id")
    try:
        return zlib.decompress(coded[1:])
    except zlib.error as exc:
        raise CodecError(f"corrupt coded stream: {exc}") from exc


def model_payload(model: DenseModel, p_l: float, q_l: int,
                  calibration: np.ndarray | None = None) -> tuple[bytes, Payload]:
    """Compress a model for downlink: prune, quantize, serialize, code."""
    compressed = quantize(prune(model, p_l), q_l, calibration)
    raw = serialize(compressed)
    coded = lossless_code(raw)
    return coded, Payload(PAYLOAD_MODEL, 8 * len(raw), 8 * len(coded), (p_l, q_l))


def measure_dl_bits(model: DenseModel, p_l: float, q_l: int,
                    calibration: np.ndarray | None = None) -> int:
    """Coded downlink size in bits of the model at the given compression point."""
    _, payload = model_payload(model, p_l, q_l, calibration)
    return payload.coded_bits


def pack_samples(indices: np.ndarray, features: np.ndarray) -> bytes:
    """Uplink sample block: per sample a uint32 index then float32 features."""
    if len(indices) == 0:
        raise CompressionError("refusing to pack an empty sample block")
    idx = np.ascontiguousarray(indices, dtype="<u4")
    feats = np.ascontiguousarray(features, dtype="<f4")
    header = struct.pack("<II", len(idx), feats.shape[1])
    return header + idx.tobytes() + feats.tobytes()


def unpack_samples(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    count, width = struct.unpack_from("<II", blob, 0)
    off = 8
    idx = np.frombuffer(blob, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    feats = np.frombuffer(blob, dtype="<f4", count=count * width, offset=off)
    return idx, feats.reshape(count, width).copy()


def data_payload(indices: np.ndarray, features: np.ndarray, w: int) -> tuple[bytes, Payload]:
    """Code an uplink sample block; meta keeps (window, sample count)."""
    raw = pack_samples(indices, features)
    coded = lossless_code(raw)
    return coded, Payload(PAYLOAD_DATA, 8 * len(raw), 8 * len(coded), (w, len(indices)))


def uplink_bits(w: int, n_features: int, sample_count: int, header_bits: int = 0) -> int:
    """Pre-coding uplink size: header plus 32 bits per feature value.

    ``sample_count`` is normally 2w+1; transmission itself uses the coded
    byte count, this formula is the linear reference the planner works in.
    """
    if w < 0:
        raise CompressionError("window must be non-negative")
    if sample_count < 0 or n_features <= 0 or header_bits < 0:
        raise CompressionError("bad uplink size arguments")
    return header_bits + SAMPLE_BITS * n_features * sample_count


def fit_size_model(points) -> SizeModel:
    """Ordinary least squares line through (x, bits) measurements."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise CompressionError("need at least two measurements to fit")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(x) == 0.0:
        raise CompressionError("all measurement abscissae identical")
    x_mean, y_mean = x.mean(), y.mean()
    slope = float(np.sum((x - x_mean) * (y - y_mean)) / np.sum((x - x_mean) ** 2))
    intercept = float(y_mean - slope * x_mean)
    residual_max = float(np.max(np.abs(y - (slope * x + intercept))))
    return SizeModel(slope, intercept, residual_max)
