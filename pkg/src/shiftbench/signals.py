"""Waveform types, synthetic biosignal generation, and dataset I/O.

A dataset is an immutable collection of labeled 1-D signals. Synthetic
tasks use three morphology families that loosely mimic physiological
recordings: regular spike trains, jittered spike trains, and band-limited
noise bursts. All randomness flows through named substreams of the task
seed, so generation order and thread count never change the data.
"""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, UnsupportedFormatError
from .rng import substream

SPLIT_TAGS = ("train", "validation", "test")

MANIFEST_NAME = "manifest.csv"
_MANIFEST_HEADER = ["id", "label", "path"]


@dataclass(frozen=True)
class Signal:
    """A finite 1-D waveform with a positive sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ConfigError("a signal needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("signal contains non-finite samples")
        rate = float(self.sample_rate)
        if not (rate > 0.0 and math.isfinite(rate)):
            raise ConfigError(f"sample_rate must be positive and finite, got {self.sample_rate}")
        samples = samples.copy()
        samples.flags.writeable = False  # signals are shared across threads
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return int(self.samples.size)


def signal_equal(a: Signal, b: Signal) -> bool:
    return a.sample_rate == b.sample_rate and np.array_equal(a.samples, b.samples)


@dataclass(frozen=True)
class LabeledSignal:
    signal: Signal
    label: int
    id: str

    def __post_init__(self) -> None:
        if self.label < 0:
            raise ConfigError(f"label must be non-negative, got {self.label}")
        if not self.id:
            raise ConfigError("every item needs a non-empty id")


@dataclass(frozen=True)
class SignalDataset:
    """Immutable labeled collection belonging to one split."""

    items: tuple[LabeledSignal, ...]
    num_classes: int
    split_tag: str = "train"
    label_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        if self.num_classes < 1:
            raise ConfigError("num_classes must be at least 1")
        if self.split_tag not in SPLIT_TAGS:
            raise ConfigError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate item ids in dataset")
        for it in self.items:
            if it.label >= self.num_classes:
                raise ConfigError(f"item {it.id}: label {it.label} >= num_classes {self.num_classes}")
        if self.label_names is not None and len(self.label_names) != self.num_classes:
            raise ConfigError("label_names must have one entry per class")
        # A training split has to cover every class or downstream fits are meaningless.
        if self.split_tag == "train" and self.items:
            present = {it.label for it in self.items}
            if present != set(range(self.num_classes)):
                missing = sorted(set(range(self.num_classes)) - present)
                raise ConfigError(f"train split is missing classes {missing}")

    def __len__(self) -> int:
        return len(self.items)

    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.int64)


@dataclass(frozen=True)
class SynthTaskSpec:
    """Controls for the synthetic classification task.

    Every signal shares a strong low-frequency rhythm (common_freq) that
    carries most of the power; the class-specific morphology rides on top
    of it scaled by class_gain. Each class c < num_classes gets a
    fundamental frequency, a fractional spike-interval jitter and a tuple
    of harmonic weights. Classes 0 and 1 are spike trains (regular and
    jittered); class 2, when present, is a train of band-limited noise
    bursts. Signals are peak-normalized to 1. Keeping class_gain well
    below 1 is what makes the task clean-separable yet fragile under
    power-matched noise.
    """

    num_classes: int = 3
    signal_length: int = 512
    sample_rate: float = 250.0
    base_freqs: tuple[float, ...] = (4.0, 7.0, 12.5)
    spike_jitter: tuple[float, ...] = (0.03, 0.4, 0.0)
    harmonic_weights: tuple[tuple[float, ...], ...] = (
        (1.0, 0.4, 0.15),
        (1.0, 0.15, 0.5),
        (0.3, 1.0, 0.6),
    )
    common_freq: float = 1.5
    class_gain: float = 0.25
    noise_floor: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes not in (2, 3):
            raise ConfigError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.signal_length < 64:
            raise ConfigError(f"signal_length must be at least 64, got {self.signal_length}")
        if not (self.sample_rate > 0):
            raise ConfigError("sample_rate must be positive")
        if self.noise_floor < 0:
            raise ConfigError("noise_floor must be non-negative")
        for name, seq in (
            ("base_freqs", self.base_freqs),
            ("spike_jitter", self.spike_jitter),
            ("harmonic_weights", self.harmonic_weights),
        ):
            if len(seq) < self.num_classes:
                raise ConfigError(f"{name} needs an entry per class")
        for f in (*self.base_freqs[: self.num_classes], self.common_freq):
            if not (0 < f < self.sample_rate / 2):
                raise ConfigError(f"base frequency {f} outside (0, Nyquist)")
        if not (0 < self.class_gain <= 1):
            raise ConfigError("class_gain must be in (0, 1]")


def _spike_pulse(width: float) -> np.ndarray:
    # Biphasic bump: a sharp positive lobe followed by a shallow dip.
    half = int(math.ceil(4 * width))
    k = np.arange(-half, 3 * half + 1, dtype=np.float64)
    pulse = np.exp(-0.5 * (k / width) ** 2)
    pulse -= 0.35 * np.exp(-0.5 * ((k - 2.2 * width) / (1.8 * width)) ** 2)
    return pulse


def _add_pulse(x: np.ndarray, pos: float, pulse: np.ndarray, gain: float) -> None:
    start = int(round(pos))
    lo = max(0, start)
    hi = min(len(x), start + len(pulse))
    if hi > lo:
        x[lo:hi] += gain * pulse[lo - start : hi - start]


def _spike_train(spec: SynthTaskSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    l = spec.signal_length
    t = np.arange(l) / spec.sample_rate
    freq = spec.base_freqs[label]
    jitter = spec.spike_jitter[label]
    weights = spec.harmonic_weights[label]
    interval = spec.sample_rate / freq
    width = max(2.0, 0.012 * spec.sample_rate)
    pulse = _spike_pulse(width)

    x = np.zeros(l)
    pos = float(rng.uniform(0.0, interval))
    while pos < l + 4 * width:
        gain = 1.0 + 0.1 * rng.standard_normal()
        _add_pulse(x, pos, pulse, gain)
        step = interval * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        pos += max(4.0, step)

    # Low-amplitude tonal bed whose harmonic mix is class-specific.
    for h, w in enumerate(weights):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        x += 0.22 * w * np.sin(2.0 * math.pi * freq * (h + 1) * t + phase)
    return x


def _noise_bursts(spec: SynthTaskSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    l = spec.signal_length
    t = np.arange(l) / spec.sample_rate
    freq = spec.base_freqs[label]
    weights = spec.harmonic_weights[label]

    # Carrier: random sinusoids confined to a band above the fundamental.
    carrier = np.zeros(l)
    for j in range(12):
        f = rng.uniform(1.4 * freq, 2.8 * freq)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        carrier += rng.uniform(0.5, 1.0) * np.sin(2.0 * math.pi * f * t + phase)
    carrier /= max(1e-12, np.max(np.abs(carrier)))

    burst_rate = freq / 4.0
    phase = rng.uniform(0.0, 2.0 * math.pi)
    gate = np.maximum(0.0, np.sin(2.0 * math.pi * burst_rate * t + phase)) ** 2

    x = 0.9 * gate * carrier
    for h, w in enumerate(weights):
        ph = rng.uniform(0.0, 2.0 * math.pi)
        x += 0.18 * w * np.sin(2.0 * math.pi * freq * (h + 1) * t + ph)
    return x


def _common_bed(spec: SynthTaskSpec, rng: np.random.Generator) -> np.ndarray:
    # Shared, class-independent rhythm; dominates the power budget so that
    # power-matched noise lands squarely on the class-specific content.
    t = np.arange(spec.signal_length) / spec.sample_rate
    f = spec.common_freq
    bed = np.sin(2.0 * math.pi * f * t + rng.uniform(0, 2 * math.pi))
    bed += 0.6 * np.sin(2.0 * math.pi * 2.0 * f * t + rng.uniform(0, 2 * math.pi))
    bed += 0.35 * np.sin(2.0 * math.pi * 0.3 * f * t + rng.uniform(0, 2 * math.pi))
    return bed


def _synth_signal(spec: SynthTaskSpec, label: int, rng: np.random.Generator) -> Signal:
    bed = _common_bed(spec, rng)
    if label <= 1:
        morph = _spike_train(spec, label, rng)
    else:
        morph = _noise_bursts(spec, label, rng)
    x = bed + spec.class_gain * morph
    if spec.noise_floor > 0:
        x = x + spec.noise_floor * rng.standard_normal(spec.signal_length)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    return Signal(x, spec.sample_rate)


def synthesize_split(
    spec: SynthTaskSpec, per_class_counts: tuple[int, ...], split_tag: str
) -> SignalDataset:
    """Generate a split with an explicit per-class item count."""
    if len(per_class_counts) != spec.num_classes:
        raise ConfigError("per_class_counts needs one entry per class")
    if any(n < 1 for n in per_class_counts):
        raise ConfigError("every class needs at least one item")
    items = []
    for label, count in enumerate(per_class_counts):
        for i in range(count):
            rng = substream(spec.seed, "synth", split_tag, label, i)
            items.append(
                LabeledSignal(_synth_signal(spec, label, rng), label, f"{split_tag}-c{label}-{i:05d}")
            )
    names = tuple(f"class_{c}" for c in range(spec.num_classes))
    return SignalDataset(tuple(items), spec.num_classes, split_tag, names)


def generate_synthetic_dataset(
    spec: SynthTaskSpec, n_per_class: int, split_tag: str = "train"
) -> SignalDataset:
    """Generate a class-balanced synthetic dataset.

    Deterministic: item i of class c is drawn from the substream named
    (seed, "synth", split_tag, c, i) regardless of the other counts.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be at least 1, got {n_per_class}")
    return synthesize_split(spec, (n_per_class,) * spec.num_classes, split_tag)


def split_dataset(
    d: SignalDataset, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2), seed: int = 0
) -> tuple[SignalDataset, SignalDataset, SignalDataset]:
    """Stratified train/validation/test partition.

    Per class the item counts follow the ratios to within one item
    (largest-remainder rounding, remainders broken toward the earlier
    split). The partition is disjoint, exhaustive, and a pure function
    of (dataset order, ratios, seed).
    """
    if len(ratios) != 3:
        raise ConfigError("ratios must have exactly three entries")
    if any(not (r > 0) for r in ratios):
        raise ConfigError(f"split ratios must all be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")

    by_class: dict[int, list[int]] = {}
    for idx, item in enumerate(d.items):
        by_class.setdefault(item.label, []).append(idx)

    assigned: list[list[int]] = [[], [], []]
    for label in sorted(by_class):
        indices = np.array(by_class[label])
        rng = substream(seed, "split", label)
        rng.shuffle(indices)
        n_c = len(indices)
        exact = [n_c * r for r in ratios]
        counts = [int(math.floor(e)) for e in exact]
        remainder = n_c - sum(counts)
        order = sorted(range(3), key=lambda j: (-(exact[j] - counts[j]), j))
        for j in order[:remainder]:
            counts[j] += 1
        if any(c < 1 for c in counts):
            raise ConfigError(
                f"class {label} has {n_c} items, too few for one per split at ratios {ratios}"
            )
        start = 0
        for j in range(3):
            assigned[j].extend(int(i) for i in indices[start : start + counts[j]])
            start += counts[j]

    out = []
    for j, tag in enumerate(SPLIT_TAGS):
        picked = tuple(d.items[i] for i in sorted(assigned[j]))
        out.append(SignalDataset(picked, d.num_classes, tag, d.label_names))
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# Manifest I/O: a CSV of (id, label, path) plus one plain-text file per signal.
# Signal files carry "rate=<float>" on the first line and one amplitude per
# line after that, at 9 significant digits.
# ---------------------------------------------------------------------------


def _safe_filename(item_id: str) -> str:
    if "/" in item_id or "\\" in item_id or item_id in (".", ".."):
        raise ConfigError(f"item id {item_id!r} is not usable as a file name")
    return item_id + ".txt"


def write_manifest(d: SignalDataset, out_dir: str | Path) -> Path:
    """Write the dataset to ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for item in d.items:
            fname = _safe_filename(item.id)
            label = d.label_names[item.label] if d.label_names else str(item.label)
            with open(out / fname, "w") as sig_fh:
                sig_fh.write(f"rate={item.signal.sample_rate!r}\n")
                for v in item.signal.samples:
                    sig_fh.write(f"{v:.9g}\n")
            writer.writerow([item.id, label, fname])
    return manifest_path


def _read_signal_file(path: Path) -> Signal:
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read signal file {path}: {e}") from e
    if not lines or not lines[0].startswith("rate="):
        raise IngestionError(f"{path}: first line must be 'rate=<float>'")
    try:
        rate = float(lines[0][len("rate=") :])
    except ValueError as e:
        raise IngestionError(f"{path}: bad sample rate {lines[0]!r}") from e
    values = []
    for ln, text in enumerate(lines[1:], start=2):
        text = text.strip()
        if not text:
            continue
        try:
            v = float(text)
        except ValueError as e:
            raise IngestionError(f"{path}:{ln}: bad amplitude {text!r}") from e
        if not math.isfinite(v):
            raise IngestionError(f"{path}:{ln}: non-finite amplitude {text!r}")
        values.append(v)
    if not values:
        raise IngestionError(f"{path}: no samples")
    try:
        return Signal(np.array(values), rate)
    except ConfigError as e:
        raise IngestionError(f"{path}: {e}") from e


def read_manifest(path: str | Path, split_tag: str = "train") -> SignalDataset:
    """Load a dataset from a manifest CSV.

    Labels are remapped to contiguous integers in order of first
    appearance; the original strings are kept in ``label_names``.
    Signal paths are resolved relative to the manifest's directory.
    """
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise IngestionError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{manifest_path}: empty manifest") from None
        if [h.strip() for h in header] != _MANIFEST_HEADER:
            raise IngestionError(
                f"{manifest_path}: header must be {','.join(_MANIFEST_HEADER)!r}, got {','.join(header)!r}"
            )
        label_map: dict[str, int] = {}
        items = []
        rate_seen: tuple[float, str] | None = None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(f"{manifest_path}:{row_no}: expected 3 columns, got {len(row)}")
            item_id, label_str, rel_path = (c.strip() for c in row)
            if not item_id:
                raise IngestionError(f"{manifest_path}:{row_no}: empty id")
            if label_str not in label_map:
                label_map[label_str] = len(label_map)
            sig = _read_signal_file(base / rel_path)
            if rate_seen is None:
                rate_seen = (sig.sample_rate, rel_path)
            elif sig.sample_rate != rate_seen[0]:
                raise IngestionError(
                    f"{manifest_path}:{row_no}: sample rate {sig.sample_rate} in {rel_path} "
                    f"differs from {rate_seen[0]} in {rate_seen[1]}"
                )
            items.append(LabeledSignal(sig, label_map[label_str], item_id))
    if not items:
        raise IngestionError(f"{manifest_path}: no data rows")
    try:
        return SignalDataset(tuple(items), len(label_map), split_tag, tuple(label_map))
    except ConfigError as e:
        raise IngestionError(f"{manifest_path}: {e}") from e


def read_wav_mono16(path: str | Path) -> Signal:
    """Read a RIFF/WAVE file that is PCM, 16-bit, mono; refuse anything else.

    Amplitudes are int16 / 32768 exactly. No resampling, no channel mixing,
    no bit-depth conversion.
    """
    p = Path(path)
    if not p.is_file():
        raise IngestionError(f"wav file not found: {p}")
    try:
        with wave.open(str(p), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"{p}: compressed WAVE ({wf.getcomptype()}) not supported")
            if wf.getnchannels() != 1:
                raise UnsupportedFormatError(f"{p}: {wf.getnchannels()} channels; only mono supported")
            if wf.getsampwidth() != 2:
                raise UnsupportedFormatError(
                    f"{p}: {8 * wf.getsampwidth()}-bit samples; only 16-bit PCM supported"
                )
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"{p}: not a readable PCM WAVE file ({e})") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise IngestionError(f"{p}: no audio frames")
    return Signal(samples, float(rate))
