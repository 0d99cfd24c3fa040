"""Seeded synthetic data: beam-pulse traces with two anomaly families,
gated multichannel series with out-of-distribution segments, windowing,
filtering, pairing, and CSV round-trips.

All generators are pure functions of (parameters, rng state); the same
stream state always reproduces the same records bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import RngStream
from .errors import ContractViolation, DataFormatError

PULSE_LEN = 256
WINDOW_STEPS = 15
N_CHANNELS = 5
GATE_THRESHOLD = 0.995

CLASS_NORMAL = "normal"
CLASS_ANOMALY_A = "anomaly_a"  # droop family, present in training
CLASS_ANOMALY_B = "anomaly_b"  # oscillation family, held out as unseen
PULSE_CLASSES = (CLASS_NORMAL, CLASS_ANOMALY_A, CLASS_ANOMALY_B)


@dataclass
class PulseRecord:
    trace: np.ndarray  # [PULSE_LEN]
    label: str         # one of PULSE_CLASSES
    seed_id: int


@dataclass
class PulsePair:
    trace_a: np.ndarray
    trace_b: np.ndarray
    label: int  # 0 = normal-normal, 1 = normal-anomaly
    id_a: int = -1
    id_b: int = -1


@dataclass
class BoosterSeries:
    channels: np.ndarray  # [N_CHANNELS, T]
    gate: np.ndarray      # [T], in [0.9, 1.0]
    ood_mask: np.ndarray  # [T] bool


@dataclass
class WindowedSample:
    inputs: np.ndarray   # [N_CHANNELS, WINDOW_STEPS]
    target: float        # output channel at the step after the window
    gate_value: float    # gate at the target step
    ood_flag: bool       # generator ground truth at the target step
    window_id: int = -1


def base_pulse() -> np.ndarray:
    """Noise-free trapezoid: rise 32-80, plateau at 1 until 176, fall to 224."""
    t = np.zeros(PULSE_LEN)
    t[32:80] = np.linspace(0.0, 1.0, 48, endpoint=False)
    t[80:176] = 1.0
    t[176:224] = np.linspace(1.0, 0.0, 48, endpoint=False)
    return t


PULSE_NOISE_SIGMA = 0.02


def _droop(base: np.ndarray, rng: RngStream) -> np.ndarray:
    """Seen anomaly family: plateau amplitude droop, 20-40% deep."""
    depth = rng.uniform((), 0.2, 0.4)
    onset = int(rng.integers(88, 128))
    width = int(rng.integers(24, 48))
    out = base.copy()
    out[onset:onset + width] *= 1.0 - depth
    return out


def _oscillation(base: np.ndarray, rng: RngStream) -> np.ndarray:
    """Unseen anomaly family: high-frequency ripple riding the pulse."""
    period = rng.uniform((), 8.0, 16.0)
    amp = rng.uniform((), 0.2, 0.4)
    phase = rng.uniform((), 0.0, 2.0 * np.pi)
    t = np.arange(PULSE_LEN)
    return base + amp * np.sin(2.0 * np.pi * t / period + phase) * base


def gen_pulses(counts: dict[str, int], rng: RngStream) -> list[PulseRecord]:
    """Generate pulse records per class; classes are drawn in fixed order."""
    for cls, n in counts.items():
        if cls not in PULSE_CLASSES:
            raise ContractViolation(f"unknown pulse class {cls!r}")
        if n < 0:
            raise ContractViolation(f"count for {cls!r} must be >= 0, got {n}")
    base = base_pulse()
    records: list[PulseRecord] = []
    seed_id = 0
    for cls in PULSE_CLASSES:
        for _ in range(counts.get(cls, 0)):
            if cls == CLASS_NORMAL:
                shaped = base
            elif cls == CLASS_ANOMALY_A:
                shaped = _droop(base, rng)
            else:
                shaped = _oscillation(base, rng)
            trace = np.clip(shaped + rng.normal((PULSE_LEN,), PULSE_NOISE_SIGMA), -2.0, 2.0)
            records.append(PulseRecord(trace, cls, seed_id))
            seed_id += 1
    return records


CHANNEL_LEVELS = (0.5, 1.5, -0.3, 0.9, 2.0)   # output channel index 1 sits at 1.5
CHANNEL_PERIODS = (97.0, 131.0, 79.0, 151.0, 113.0)
COMMON_PERIOD = 173.0
SERIES_NOISE_SIGMA = 0.01
OOD_AMPLITUDE_FACTOR = 8.0   # added-cycle amplitude as a multiple of the quiet p2p range


def gen_booster_series(length: int, ood_segments: list[tuple[int, int]],
                       rng: RngStream, output_channel: int = 1) -> BoosterSeries:
    """Coupled slow-drift channels with gated high-amplitude segments.

    Inside each [start, end) segment the output channel gains an offset
    cycle of period 4-8 steps whose amplitude is a fixed multiple of the
    quiet-series peak-to-peak range, and the gate rises strictly above
    0.995; outside, the gate stays at or below 0.995.
    """
    segments = sorted((int(s), int(e)) for s, e in ood_segments)
    prev_end = 0
    for s, e in segments:
        if not (0 <= s < e <= length):
            raise ContractViolation(f"segment ({s}, {e}) outside [0, {length})")
        if s < prev_end:
            raise ContractViolation(f"segment ({s}, {e}) overlaps a previous segment")
        prev_end = e
    if not 0 <= output_channel < N_CHANNELS:
        raise ContractViolation(f"output channel must be in [0, {N_CHANNELS})")

    t = np.arange(length, dtype=np.float64)
    common_phase = rng.uniform((), 0.0, 2.0 * np.pi)
    common = 0.10 * np.sin(2.0 * np.pi * t / COMMON_PERIOD + common_phase)
    channels = np.zeros((N_CHANNELS, length))
    for c in range(N_CHANNELS):
        phase = rng.uniform((), 0.0, 2.0 * np.pi)
        weight = rng.uniform((), 0.5, 1.0)
        own = 0.08 * np.sin(2.0 * np.pi * t / CHANNEL_PERIODS[c] + phase)
        noise = rng.normal((length,), SERIES_NOISE_SIGMA)
        channels[c] = CHANNEL_LEVELS[c] + weight * common + own + noise

    quiet = channels[output_channel].copy()
    quiet_p2p = float(quiet.max() - quiet.min())
    amplitude = OOD_AMPLITUDE_FACTOR * quiet_p2p

    gate_phase = rng.uniform((), 0.0, 2.0 * np.pi)
    gate = 0.93 + 0.03 * np.sin(2.0 * np.pi * t / 150.0 + gate_phase)
    gate = gate + rng.normal((length,), 0.004)
    gate = np.clip(gate, 0.90, GATE_THRESHOLD)

    ood_mask = np.zeros(length, dtype=bool)
    for s, e in segments:
        seg = np.arange(s, e)
        period = rng.uniform((), 4.0, 8.0)
        phase = rng.uniform((), 0.0, 2.0 * np.pi)
        # offset cycle: every step in the segment sits well above the quiet band
        cycle = amplitude * (0.75 + 0.25 * np.sin(2.0 * np.pi * seg / period + phase))
        channels[output_channel, s:e] += cycle
        gate_wobble = rng.normal(((e - s),), 0.0005)
        gate[s:e] = np.clip(0.9975 + gate_wobble, 0.9951, 1.0)
        ood_mask[s:e] = True
    return BoosterSeries(channels, gate, ood_mask)


def make_windows(series: BoosterSeries, output_channel: int = 1) -> list[WindowedSample]:
    """Stride-1 sliding windows; target is the output channel one step past
    the window, and gate/ood annotations are taken at that target step."""
    length = series.channels.shape[1]
    if length < WINDOW_STEPS + 1:
        raise ContractViolation(f"series length {length} < {WINDOW_STEPS + 1}")
    windows = []
    for k in range(length - WINDOW_STEPS):
        target_step = k + WINDOW_STEPS
        windows.append(WindowedSample(
            inputs=series.channels[:, k:target_step].copy(),
            target=float(series.channels[output_channel, target_step]),
            gate_value=float(series.gate[target_step]),
            ood_flag=bool(series.ood_mask[target_step]),
            window_id=k,
        ))
    return windows


def filter_windows(windows: list[WindowedSample],
                   threshold: float = GATE_THRESHOLD) -> list[WindowedSample]:
    """Keep windows whose gate value does not exceed the threshold."""
    return [w for w in windows if w.gate_value <= threshold]


def make_pairs(pulses: list[PulseRecord], pairs_per_label: int,
               unseen_excluded: bool, rng: RngStream) -> list[PulsePair]:
    """Sample normal-normal (label 0) and normal-anomaly (label 1) pairs.

    With unseen_excluded the oscillation family never appears, matching
    the training regime where one anomaly type is held back.
    """
    if pairs_per_label < 0:
        raise ContractViolation("pairs_per_label must be >= 0")
    normals = [p for p in pulses if p.label == CLASS_NORMAL]
    allowed = (CLASS_ANOMALY_A,) if unseen_excluded else (CLASS_ANOMALY_A, CLASS_ANOMALY_B)
    anomalies = [p for p in pulses if p.label in allowed]
    if pairs_per_label == 0:
        return []
    if len(normals) < 2:
        raise ContractViolation(f"need >= 2 normal pulses, got {len(normals)}")
    if len(anomalies) < 1:
        raise ContractViolation("need >= 1 anomaly pulse of an allowed class")
    pairs: list[PulsePair] = []
    idx = rng.integers(0, len(normals), (pairs_per_label, 2))
    bump = rng.integers(1, len(normals), (pairs_per_label,))
    for k in range(pairs_per_label):
        i, j = int(idx[k, 0]), int(idx[k, 1])
        if i == j:
            j = (i + int(bump[k])) % len(normals)
        pairs.append(PulsePair(normals[i].trace, normals[j].trace, 0,
                               normals[i].seed_id, normals[j].seed_id))
    ni = rng.integers(0, len(normals), (pairs_per_label,))
    ai = rng.integers(0, len(anomalies), (pairs_per_label,))
    for k in range(pairs_per_label):
        n, a = normals[int(ni[k])], anomalies[int(ai[k])]
        pairs.append(PulsePair(n.trace, a.trace, 1, n.seed_id, a.seed_id))
    return pairs


# ---------------------------------------------------------------------------
# CSV serialization; floats rendered with 17 significant digits so that
# load(save(x)) reproduces every f64 bit for bit.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_rows(path) -> list[list[str]]:
    text = Path(path).read_text()
    lines = text.splitlines()
    return [line.split(",") for line in lines if line != ""]


def _parse_float(token: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(f"bad float {token!r}", line=line_no) from None


PULSE_HEADER = ["id", "class"] + [f"v{i}" for i in range(PULSE_LEN)]
SERIES_HEADER = ["t"] + [f"ch{i}" for i in range(N_CHANNELS)] + ["gate", "ood"]
WINDOW_HEADER = (["id", "target", "gate", "ood"]
                 + [f"x{i}" for i in range(N_CHANNELS * WINDOW_STEPS)])


def save_pulses(path, records: list[PulseRecord]) -> None:
    lines = [",".join(PULSE_HEADER)]
    for r in records:
        lines.append(",".join([str(r.seed_id), r.label] + [_fmt(v) for v in r.trace]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_pulses(path) -> list[PulseRecord]:
    rows = _read_rows(path)
    if not rows or rows[0] != PULSE_HEADER:
        raise DataFormatError("pulse header mismatch", line=1)
    records = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(PULSE_HEADER):
            raise DataFormatError(f"expected {len(PULSE_HEADER)} columns, got {len(row)}",
                                  line=n)
        if row[1] not in PULSE_CLASSES:
            raise DataFormatError(f"unknown class {row[1]!r}", line=n)
        trace = np.array([_parse_float(v, n) for v in row[2:]])
        records.append(PulseRecord(trace, row[1], int(row[0])))
    return records


def save_series(path, series: BoosterSeries) -> None:
    lines = [",".join(SERIES_HEADER)]
    for t in range(series.channels.shape[1]):
        vals = [str(t)] + [_fmt(series.channels[c, t]) for c in range(N_CHANNELS)]
        vals += [_fmt(series.gate[t]), str(int(series.ood_mask[t]))]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_series(path) -> BoosterSeries:
    rows = _read_rows(path)
    if not rows or rows[0] != SERIES_HEADER:
        raise DataFormatError("series header mismatch", line=1)
    body = rows[1:]
    length = len(body)
    channels = np.zeros((N_CHANNELS, length))
    gate = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    for n, row in enumerate(body, start=2):
        if len(row) != len(SERIES_HEADER):
            raise DataFormatError(f"expected {len(SERIES_HEADER)} columns, got {len(row)}",
                                  line=n)
        t = n - 2
        for c in range(N_CHANNELS):
            channels[c, t] = _parse_float(row[1 + c], n)
        gate[t] = _parse_float(row[1 + N_CHANNELS], n)
        mask[t] = row[2 + N_CHANNELS] == "1"
    return BoosterSeries(channels, gate, mask)


def save_windows(path, windows: list[WindowedSample]) -> None:
    lines = [",".join(WINDOW_HEADER)]
    for w in windows:
        flat = w.inputs.reshape(-1)  # channel-major: ch0 steps, then ch1 steps, ...
        vals = [str(w.window_id), _fmt(w.target), _fmt(w.gate_value), str(int(w.ood_flag))]
        vals += [_fmt(v) for v in flat]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_windows(path) -> list[WindowedSample]:
    rows = _read_rows(path)
    if not rows or rows[0] != WINDOW_HEADER:
        raise DataFormatError("window header mismatch", line=1)
    windows = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(WINDOW_HEADER):
            raise DataFormatError(f"expected {len(WINDOW_HEADER)} columns, got {len(row)}",
                                  line=n)
        flat = np.array([_parse_float(v, n) for v in row[4:]])
        windows.append(WindowedSample(
            inputs=flat.reshape(N_CHANNELS, WINDOW_STEPS),
            target=_parse_float(row[1], n),
            gate_value=_parse_float(row[2], n),
            ood_flag=row[3] == "1",
            window_id=int(row[0]),
        ))
    return windows
