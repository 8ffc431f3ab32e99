"""Sensor trace ingestion, train/test splitting and synthetic trace generation.

A trace is an ordered sequence of N-dimensional sensor readings with a
binary fault label per sample.  The CSV loader targets pump-telemetry
style files (status column with NORMAL / BROKEN / RECOVERING values);
the synthetic generator produces controllable desk-scale substitutes.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

STATUS_MAP = {"BROKEN": 1, "NORMAL": 0, "RECOVERING": 0}

# The public pump telemetry file carries 52 sensor columns; sensor_15 is
# empty and sensor_50 is mostly missing, leaving 50 usable features.
PUMP_FEATURE_COLUMNS = tuple(
    f"sensor_{i:02d}" for i in range(52) if i not in (15, 50)
)


class DatasetError(ValueError):
    """Raised for unusable input files or infeasible generator configs."""


@dataclass(frozen=True)
class Sample:
    """One sensor reading: sampling-period counter, feature vector, fault state."""

    index: int
    features: np.ndarray
    label: int


@dataclass
class Trace:
    """Ordered sensor readings with per-sample fault labels.

    ``features`` is (n, feature_count) float32, ``labels`` is (n,) uint8 and
    ``indices`` carries the original sampling-period counters (so slices of a
    parent trace keep their global positions).
    """

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-D array")
        n = len(self.features)
        if len(self.labels) != n or len(self.indices) != n:
            raise DatasetError("features, labels and indices must have equal length")
        if not np.isfinite(self.features).all():
            raise DatasetError("trace features contain NaN or Inf")
        if not np.isin(self.labels, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")

    def __len__(self):
        return len(self.features)

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    @property
    def fault_event_indices(self) -> np.ndarray:
        """Original indices of all samples labelled faulty."""
        return self.indices[self.labels == 1]

    def fault_runs(self) -> list[tuple[int, int]]:
        """Contiguous fault runs as local [start, end) half-open pairs."""
        runs = []
        lab = self.labels
        start = None
        for i, v in enumerate(lab):
            if v and start is None:
                start = i
            elif not v and start is not None:
                runs.append((start, i))
                start = None
        if start is not None:
            runs.append((start, len(lab)))
        return runs

    def sample(self, i: int) -> Sample:
        return Sample(int(self.indices[i]), self.features[i], int(self.labels[i]))

    def slice(self, start: int, stop: int) -> "Trace":
        return Trace(self.features[start:stop], self.labels[start:stop], self.indices[start:stop])


@dataclass(frozen=True)
class SplitSpec:
    """Train fraction plus the all-faults-to-test adjustment flag."""

    train_fraction: float = 0.1
    faults_to_test: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DatasetError("train_fraction must lie in (0, 1)")


def load_trace(path, status_column: str = "machine_status",
               feature_columns=None, scale_fraction: float = 0.1) -> Trace:
    """Ingest a CSV sensor trace.

    Unparseable feature cells are imputed with the previous valid value of
    the column (column median for a leading gap).  Status values map
    BROKEN -> 1 and NORMAL / RECOVERING -> 0.  Features are min-max scaled
    to [0, 1] with statistics fitted on the leading ``scale_fraction`` of
    rows only, so the eventual test portion never leaks into the scaler.

    ``feature_columns`` defaults to every column except the status column
    and any column without a single parseable number.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open trace file {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("zero rows") from None
        rows = list(reader)
    if not rows:
        raise DatasetError("zero rows")

    header = [h.strip() for h in header]
    if status_column not in header:
        raise DatasetError(f"status column {status_column!r} absent from header")
    status_idx = header.index(status_column)

    if feature_columns is None:
        candidates = [h for h in header if h != status_column]
    else:
        candidates = list(feature_columns)
        for name in candidates:
            if name not in header:
                raise DatasetError(f"feature column {name!r} absent from header")

    n = len(rows)
    labels = np.empty(n, dtype=np.uint8)
    for k, row in enumerate(rows):
        status = row[status_idx].strip() if status_idx < len(row) else ""
        if status not in STATUS_MAP:
            raise DatasetError(f"row {k}: unknown status value {status!r}")
        labels[k] = STATUS_MAP[status]

    columns = []
    for name in candidates:
        col_idx = header.index(name)
        raw = np.full(n, np.nan)
        for k, row in enumerate(rows):
            if col_idx < len(row):
                try:
                    raw[k] = float(row[col_idx])
                except ValueError:
                    pass
        valid = np.isfinite(raw)
        if not valid.any():
            if feature_columns is not None:
                raise DatasetError(f"feature column {name!r} has no parseable values")
            continue  # auto-selection drops all-blank columns
        median = float(np.median(raw[valid]))
        if not np.isfinite(raw[0]):
            raw[0] = median
        for k in range(1, n):
            if not np.isfinite(raw[k]):
                raw[k] = raw[k - 1]
        columns.append(raw)
    if not columns:
        raise DatasetError("zero usable feature columns")

    features = np.column_stack(columns)
    fit_rows = max(1, math.floor(scale_fraction * n))
    lo = features[:fit_rows].min(axis=0)
    hi = features[:fit_rows].max(axis=0)
    span = hi - lo
    span[span == 0.0] = 1.0  # constant-in-train column maps to 0
    features = (features - lo) / span

    return Trace(features.astype(np.float32), labels, np.arange(n, dtype=np.int64))


def split_initial(trace: Trace, spec: SplitSpec = SplitSpec()) -> tuple[Trace, Trace]:
    """Contiguous prefix/suffix split at the fraction boundary.

    With ``faults_to_test`` set, the boundary moves earlier as needed so
    every faulty sample lands in the test part.
    """
    n = len(trace)
    if n == 0:
        raise DatasetError("cannot split an empty trace")
    boundary = math.floor(spec.train_fraction * n)
    if spec.faults_to_test:
        fault_local = np.flatnonzero(trace.labels)
        if fault_local.size and fault_local[0] < boundary:
            boundary = int(fault_local[0])
    if boundary == 0:
        raise DatasetError("no fault-free prefix available for training")
    return trace.slice(0, boundary), trace.slice(boundary, n)


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic trace generator.

    ``coherence`` is the number of samples over which readings stay
    correlated; fault events are contiguous runs of ``fault_width``
    samples (defaulting to the coherence length) whose feature
    distribution is shifted by ``fault_shift`` on a per-event subset of
    the features.
    """

    feature_count: int = 16
    length: int = 10_000
    fault_events: int = 5
    coherence: int = 20
    noise_scale: float = 0.05
    fault_width: int = 0  # 0 means "use coherence"
    fault_shift: float = 0.3
    fault_region_start: float = 0.15  # keep events clear of the train prefix

    def __post_init__(self):
        if self.length <= 0:
            raise DatasetError("trace length must be positive")
        if self.feature_count <= 0:
            raise DatasetError("feature_count must be positive")
        if self.fault_events < 0 or self.coherence <= 0 or self.noise_scale < 0:
            raise DatasetError("bad generator parameter")
        width = self.fault_width or self.coherence
        if self.fault_events * width > self.length:
            raise DatasetError("fault events do not fit into the trace length")


def synth_trace(config: SynthConfig, seed: int) -> Trace:
    """Generate a deterministic synthetic trace with injected fault runs."""
    rng = np.random.default_rng(seed)
    n, d = config.length, config.feature_count
    width = config.fault_width or config.coherence

    # Autoregressive smoothing realises the coherence of the readings.
    rho = math.exp(-1.0 / config.coherence)
    innovations = rng.normal(0.0, config.noise_scale, size=(n, d))
    signal = np.empty((n, d))
    signal[0] = innovations[0]
    for k in range(1, n):
        signal[k] = rho * signal[k - 1] + (1.0 - rho) * innovations[k]
    baseline = rng.uniform(0.35, 0.65, size=d)
    features = baseline + signal

    labels = np.zeros(n, dtype=np.uint8)
    if config.fault_events:
        region_lo = int(config.fault_region_start * n)
        segment = (n - region_lo) // config.fault_events
        if segment < width + 1:
            raise DatasetError("fault events do not fit into the fault region")
        # One event per equal segment of the fault region: never overlaps.
        for i in range(config.fault_events):
            offset = int(rng.integers(0, segment - width))
            s = region_lo + i * segment + offset
            labels[s:s + width] = 1
            shifted = rng.random(d) < 0.5
            if not shifted.any():
                shifted[rng.integers(d)] = True
            sign = np.where(rng.random(d) < 0.5, 1.0, -1.0)
            features[s:s + width, shifted] += (config.fault_shift * sign[shifted])

    features = np.clip(features, 0.0, 1.0)
    return Trace(features.astype(np.float32), labels, np.arange(n, dtype=np.int64))
