"""Fixed-size spectral features from variable-length signals.

Signals are cut into overlapping frames, each frame goes through a direct
discrete Fourier transform (dense matrix product; an FFT would be a drop-in
replacement behind the same contract), and log magnitudes of the lowest
bins are aggregated across frames. The output dimension depends only on
the config, never on signal length, which is what lets one classifier
serve every shift severity including sample dropping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShiftBenchError
from .signals import Signal, SignalDataset

_AGGREGATIONS = ("mean", "mean_std")


@dataclass(frozen=True)
class FeatureConfig:
    frame_length: int = 128
    hop_length: int = 64
    n_bins: int = 32
    aggregation: str = "mean_std"
    log_offset: float = 1e-6

    def __post_init__(self) -> None:
        f = self.frame_length
        if f < 32 or (f & (f - 1)) != 0:
            raise ConfigError(f"frame_length must be a power of two >= 32, got {f}")
        if self.hop_length < 1:
            raise ConfigError(f"hop_length must be at least 1, got {self.hop_length}")
        if not (1 <= self.n_bins <= f // 2):
            raise ConfigError(f"n_bins must be in 1..{f // 2}, got {self.n_bins}")
        if self.aggregation not in _AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {_AGGREGATIONS}")
        if not (self.log_offset > 0):
            raise ConfigError("log_offset must be positive")

    @property
    def dim(self) -> int:
        return self.n_bins if self.aggregation == "mean" else 2 * self.n_bins


_DFT_CACHE: dict[int, np.ndarray] = {}


def _dft_matrix(n: int) -> np.ndarray:
    w = _DFT_CACHE.get(n)
    if w is None:
        k = np.arange(n).reshape(-1, 1)
        t = np.arange(n).reshape(1, -1)
        w = np.exp(-2j * np.pi * k * t / n)
        _DFT_CACHE[n] = w
    return w


def frame_spectrum(frame: np.ndarray) -> np.ndarray:
    """Full complex spectrum of one frame via the direct transform.

    Verification path: the unnormalized transform satisfies
    sum |X_k|^2 = n * sum |x_t|^2 over all n bins.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ConfigError("frame must be 1-D")
    return _dft_matrix(len(frame)) @ frame


def featurize(s: Signal, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Log-magnitude spectral features of one signal.

    Returns a vector of length cfg.dim: per-bin means of
    log(|DFT bin| + log_offset) across frames, followed by per-bin
    standard deviations (population) when aggregation is "mean_std".
    """
    l = len(s)
    if l < cfg.frame_length:
        raise ShiftBenchError(
            f"signal has {l} samples, shorter than one frame ({cfg.frame_length}); pad upstream"
        )
    frames = np.lib.stride_tricks.sliding_window_view(s.samples, cfg.frame_length)
    frames = frames[:: cfg.hop_length]
    spectra = frames @ _dft_matrix(cfg.frame_length).T
    mags = np.abs(spectra[:, : cfg.n_bins])
    logm = np.log(mags + cfg.log_offset)
    mean = logm.mean(axis=0)
    if cfg.aggregation == "mean":
        return mean
    return np.concatenate([mean, logm.std(axis=0)])


def featurize_dataset(
    d: SignalDataset, cfg: FeatureConfig = FeatureConfig()
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Feature matrix, label vector, and ids for a whole dataset."""
    rows = []
    for item in d.items:
        try:
            rows.append(featurize(item.signal, cfg))
        except ShiftBenchError as e:
            raise ShiftBenchError(f"item {item.id}: {e}") from e
    x = np.stack(rows) if rows else np.zeros((0, cfg.dim))
    return x, d.labels(), [it.id for it in d.items]


@dataclass(frozen=True)
class FeatureScaler:
    """Per-dimension standardization fitted on training features."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureScaler":
        if x.ndim != 2 or x.shape[0] < 1:
            raise ConfigError("scaler needs a non-empty 2-D feature matrix")
        std = np.maximum(x.std(axis=0), 1e-8)
        return cls(x.mean(axis=0), std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std
