"""Controlled perturbations of 1-D signals, graded by severity degree 0-5.

Five shift kinds are supported; degree 0 is always the identity. The
severity schedules are fixed tables indexed by degree:

    gaussian_noise          target SNR (dB):   inf, 50, 40, 30, 20, 10
    background_noise        target SNR (dB):   inf, 50, 40, 30, 20, 10
    amplitude_distortion    clip fraction:     1.0, 0.8, 0.6, 0.5, 0.2, 0.1
    segment_missing         masked fraction:   0, .20, .35, .50, .65, .80
    sampling_rate_mismatch  drop stride:       inf, 80, 50, 30, 20, 10

SNR follows the usual mean-power convention: P = (1/l) * sum(s_i^2) and
SNR_dB = 10*log10(P_signal / P_noise). The additive noise vector is
rescaled to hit the target noise power exactly, so the achieved SNR is
the target up to float rounding rather than a sampling estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShiftBenchError
from .rng import derive_seed, substream
from .signals import LabeledSignal, Signal, SignalDataset

SHIFT_KINDS = (
    "gaussian_noise",
    "background_noise",
    "amplitude_distortion",
    "segment_missing",
    "sampling_rate_mismatch",
)

SNR_DB_BY_DEGREE = (math.inf, 50.0, 40.0, 30.0, 20.0, 10.0)
CLIP_FRACTION_BY_DEGREE = (1.0, 0.8, 0.6, 0.5, 0.2, 0.1)
MASK_FRACTION_BY_DEGREE = (0.0, 0.20, 0.35, 0.50, 0.65, 0.80)
DROP_STRIDE_BY_DEGREE = (math.inf, 80, 50, 30, 20, 10)


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    degree: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.kind!r}; expected one of {SHIFT_KINDS}")
        if not (0 <= self.degree <= 5):
            raise ConfigError(f"degree must be in 0..5, got {self.degree}")


@dataclass(frozen=True)
class ResolvedShiftParams:
    """Concrete perturbation parameters; identity values for unused fields."""

    snr_db: float = math.inf
    clip_fraction: float = 1.0
    mask_fraction: float = 0.0
    drop_stride: float = math.inf


def resolve(spec: ShiftSpec) -> ResolvedShiftParams:
    """Map (kind, degree) to concrete parameters via the severity tables."""
    p = ResolvedShiftParams()
    if spec.kind in ("gaussian_noise", "background_noise"):
        return replace(p, snr_db=SNR_DB_BY_DEGREE[spec.degree])
    if spec.kind == "amplitude_distortion":
        return replace(p, clip_fraction=CLIP_FRACTION_BY_DEGREE[spec.degree])
    if spec.kind == "segment_missing":
        return replace(p, mask_fraction=MASK_FRACTION_BY_DEGREE[spec.degree])
    return replace(p, drop_stride=DROP_STRIDE_BY_DEGREE[spec.degree])


@dataclass(frozen=True)
class MixCoefficients:
    """Bookkeeping from a noise mix: scales applied and the SNR obtained."""

    sigma: float
    lam: float
    achieved_snr_db: float


@dataclass(frozen=True)
class BackgroundBank:
    clips: tuple[Signal, ...]


def signal_power(s: Signal) -> float:
    """Mean power (1/l) * sum(s_i^2)."""
    return float(np.mean(np.square(s.samples)))


def _copy(s: Signal) -> Signal:
    return Signal(s.samples, s.sample_rate)


def mix_gaussian(s: Signal, snr_db: float, seed) -> tuple[Signal, MixCoefficients]:
    """Add white Gaussian noise at the given SNR.

    The drawn noise vector is rescaled to the exact target power
    P_signal / 10^(snr/10), so achieved_snr_db equals the target to float
    precision instead of fluctuating with the sample.
    """
    if math.isinf(snr_db):
        return _copy(s), MixCoefficients(0.0, 0.0, math.inf)
    p = signal_power(s)
    if p <= 0.0:
        raise ShiftBenchError("SNR is undefined for a zero-power signal")
    sigma = math.sqrt(p / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(len(s))
    rms = math.sqrt(float(np.mean(np.square(raw))))
    if rms == 0.0:
        raise ShiftBenchError("degenerate noise draw")
    noise = raw * (sigma / rms)
    achieved = 10.0 * math.log10(p / float(np.mean(np.square(noise))))
    return Signal(s.samples + noise, s.sample_rate), MixCoefficients(sigma, 0.0, achieved)


def mix_background(
    s: Signal, snr_db: float, bank: BackgroundBank, seed
) -> tuple[Signal, MixCoefficients]:
    """Add a randomly chosen, cyclically tiled background clip at the given SNR."""
    if math.isinf(snr_db):
        return _copy(s), MixCoefficients(0.0, 0.0, math.inf)
    if not bank.clips:
        raise ShiftBenchError("background bank is empty")
    p = signal_power(s)
    if p <= 0.0:
        raise ShiftBenchError("SNR is undefined for a zero-power signal")
    rng = np.random.default_rng(seed)
    clip = bank.clips[int(rng.integers(len(bank.clips)))]
    offset = int(rng.integers(len(clip)))
    tiled = np.resize(np.roll(clip.samples, -offset), len(s))
    p_clip = float(np.mean(np.square(tiled)))
    if p_clip <= 0.0:
        raise ShiftBenchError("background clip has zero power over the mixed window")
    lam = math.sqrt(p / (10.0 ** (snr_db / 10.0) * p_clip))
    achieved = 10.0 * math.log10(p / (lam * lam * p_clip))
    return Signal(s.samples + lam * tiled, s.sample_rate), MixCoefficients(0.0, lam, achieved)


def clip_amplitude(s: Signal, clip_fraction: float) -> Signal:
    """Clamp the waveform to +/- clip_fraction of full scale (1.0).

    Signals in this toolkit are peak-normalized, so the clamp level equals
    clip_fraction * max |s| for them. The level is held absolute rather
    than recomputed from the current peak: that is what makes the
    operation idempotent (re-clipping at the same fraction is a no-op).
    Fraction 1.0 is an exact copy regardless of amplitude range.
    """
    if not (0.0 < clip_fraction <= 1.0):
        raise ConfigError(f"clip_fraction must be in (0, 1], got {clip_fraction}")
    if clip_fraction == 1.0:
        return _copy(s)
    return Signal(np.clip(s.samples, -clip_fraction, clip_fraction), s.sample_rate)


def mask_segments(s: Signal, mask_fraction: float, n_blocks: int = 5, seed=0) -> Signal:
    """Zero out exactly round(mask_fraction * l) samples in contiguous blocks.

    The zeros are spread over n_blocks non-overlapping blocks whose lengths
    differ by at most one; block placement is uniform given the seed.
    Rounding is half-away-from-zero. Unmasked samples are untouched.
    """
    if not (0.0 <= mask_fraction < 1.0):
        raise ConfigError(f"mask_fraction must be in [0, 1), got {mask_fraction}")
    if n_blocks < 1:
        raise ConfigError(f"n_blocks must be at least 1, got {n_blocks}")
    l = len(s)
    total = int(math.floor(mask_fraction * l + 0.5))
    if total > l:
        raise ShiftBenchError(f"cannot zero {total} of {l} samples")
    if total == 0:
        return _copy(s)
    rng = np.random.default_rng(seed)
    base, extra = divmod(total, n_blocks)
    lengths = np.full(n_blocks, base, dtype=np.int64)
    lengths[:extra] += 1
    rng.shuffle(lengths)
    free = l - total
    cuts = np.sort(rng.integers(0, free + 1, size=n_blocks))
    out = s.samples.copy()
    pos = 0
    prev_cut = 0
    for i in range(n_blocks):
        pos += int(cuts[i] - prev_cut)
        prev_cut = int(cuts[i])
        out[pos : pos + int(lengths[i])] = 0.0
        pos += int(lengths[i])
    return Signal(out, s.sample_rate)


def drop_samples(s: Signal, drop_stride) -> Signal:
    """Remove every drop_stride-th sample (1-based), rescaling the rate.

    Output length is l - floor(l / stride); the sample rate becomes
    rate * (stride - 1) / stride so duration is approximately preserved.
    """
    if isinstance(drop_stride, float) and math.isinf(drop_stride):
        return _copy(s)
    stride = int(drop_stride)
    if stride != drop_stride or stride < 2:
        raise ConfigError(f"drop_stride must be an integer >= 2 or inf, got {drop_stride}")
    keep = (np.arange(len(s)) + 1) % stride != 0
    return Signal(s.samples[keep], s.sample_rate * (stride - 1) / stride)


def make_babble_bank(
    num_clips: int, length: int, sample_rate: float, seed: int
) -> BackgroundBank:
    """Synthesize a bank of speech-babble-like clips (tonal chatter over
    low-passed noise), peak-normalized."""
    if num_clips < 1:
        raise ConfigError("num_clips must be at least 1")
    if length < 8:
        raise ConfigError("clip length must be at least 8")
    clips = []
    kernel = np.exp(-np.arange(min(40, length)) / 8.0)
    kernel /= kernel.sum()
    for j in range(num_clips):
        rng = substream(seed, "babble", j)
        t = np.arange(length) / sample_rate
        x = np.zeros(length)
        for _ in range(8):
            f = rng.uniform(1.0, min(40.0, 0.45 * sample_rate))
            x += rng.uniform(0.3, 1.0) * np.sin(2.0 * math.pi * f * t + rng.uniform(0, 2 * math.pi))
        rumble = np.convolve(rng.standard_normal(length), kernel, mode="same")
        x += 1.5 * rumble
        x /= np.max(np.abs(x))
        clips.append(Signal(x, sample_rate))
    return BackgroundBank(tuple(clips))


def apply_shift(
    d: SignalDataset,
    spec: ShiftSpec,
    bank: BackgroundBank | None = None,
    n_blocks: int = 5,
    renormalize: bool = False,
) -> SignalDataset:
    """Apply one shift to every item of a dataset.

    Each item uses the substream named (spec.seed, "shift", item.id), so
    results do not depend on iteration order or worker count. Degree 0
    returns a value-equal copy. Mixed outputs are not re-normalized unless
    ``renormalize`` is set. Labels, ids, and item order are preserved.
    """
    if spec.degree == 0:
        items = tuple(LabeledSignal(_copy(it.signal), it.label, it.id) for it in d.items)
        return SignalDataset(items, d.num_classes, d.split_tag, d.label_names)

    params = resolve(spec)
    if spec.kind == "background_noise" and bank is None:
        max_len = max(len(it.signal) for it in d.items)
        rate = d.items[0].signal.sample_rate if d.items else 1.0
        bank = make_babble_bank(4, max(64, max_len), rate, derive_seed(spec.seed, "bank"))

    items = []
    for item in d.items:
        rng = substream(spec.seed, "shift", item.id)
        try:
            if spec.kind == "gaussian_noise":
                out, _ = mix_gaussian(item.signal, params.snr_db, rng)
            elif spec.kind == "background_noise":
                out, _ = mix_background(item.signal, params.snr_db, bank, rng)
            elif spec.kind == "amplitude_distortion":
                out = clip_amplitude(item.signal, params.clip_fraction)
            elif spec.kind == "segment_missing":
                out = mask_segments(item.signal, params.mask_fraction, n_blocks, rng)
            else:
                out = drop_samples(item.signal, params.drop_stride)
        except ShiftBenchError as e:
            raise ShiftBenchError(f"item {item.id}: {e}") from e
        if renormalize:
            peak = float(np.max(np.abs(out.samples)))
            if peak > 0:
                out = Signal(out.samples / peak, out.sample_rate)
        items.append(LabeledSignal(out, item.label, item.id))
    return SignalDataset(tuple(items), d.num_classes, d.split_tag, d.label_names)
