"""Five prediction strategies wrapping the trained nets.

vanilla      softmax of the deterministic forward
scaling      softmax of logits / T, T fitted on validation NLL
mcdropout    mean over M stochastic dropout passes
bayesian     mean over M posterior weight samples
ensemble     mean over M independently trained members

Sampled strategies derive their randomness from named substreams of the
caller's seed, so worker count and evaluation order cannot change a
result. Per-pass probabilities are kept on the Predictions object for
downstream analyses.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nnet import ModelParams, forward, mean_nll, softmax
from .rng import substream

METHODS = ("vanilla", "scaling", "mcdropout", "bayesian", "ensemble")

_T_LO, _T_HI = 0.05, 20.0
_T_TOL = 1e-4


@dataclass
class Predictions:
    """Per-sample class probabilities, plus per-pass detail when sampled."""

    probs: np.ndarray
    per_pass: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ConfigError("probs must be (n_samples, n_classes)")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("rows of probs must be distributions summing to 1")
        if self.per_pass is not None:
            q = np.asarray(self.per_pass, dtype=np.float64)
            if q.ndim != 3 or q.shape[0] != p.shape[0] or q.shape[2] != p.shape[1]:
                raise ConfigError("per_pass must be (n_samples, n_passes, n_classes)")
            if np.max(np.abs(q.mean(axis=1) - p)) > 1e-12:
                raise ConfigError("probs must equal the mean of per-pass probabilities")


def predict_vanilla(params: ModelParams, x: np.ndarray) -> Predictions:
    return Predictions(softmax(forward(params, np.atleast_2d(x))))


def predict_scaled(params: ModelParams, temperature: float, x: np.ndarray) -> Predictions:
    """Temperature-scaled softmax. Argmax is invariant, so accuracy always
    matches the vanilla prediction exactly."""
    if not (temperature > 0):
        raise ConfigError(f"temperature must be positive, got {temperature}")
    logits = forward(params, np.atleast_2d(x))
    return Predictions(softmax(logits / temperature))


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll_before: float
    nll_after: float
    trace: tuple[tuple[float, float], ...]


def fit_temperature(params: ModelParams, val) -> TemperatureFit:
    """Pick T minimizing validation NLL by golden-section search on
    [0.05, 20] to |dT| < 1e-4. Falls back to T = 1 whenever the search
    cannot strictly beat it, so scaling never hurts validation NLL.
    """
    xva = np.asarray(val[0], dtype=np.float64)
    yva = np.asarray(val[1], dtype=np.int64)
    if xva.ndim != 2 or len(yva) != xva.shape[0] or len(yva) == 0:
        raise ConfigError("fit_temperature needs a non-empty (features, labels) pair")
    logits = forward(params, xva)
    trace: list[tuple[float, float]] = []

    def f(t: float) -> float:
        nll = mean_nll(logits / t, yva)
        trace.append((t, nll))
        return nll

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = _T_LO, _T_HI
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > _T_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    f((a + b) / 2.0)

    nll_one = mean_nll(logits, yva)
    t_best, nll_best = min(trace, key=lambda p: p[1])
    if nll_best >= nll_one:
        t_best, nll_best = 1.0, nll_one
    return TemperatureFit(t_best, nll_one, nll_best, tuple(trace))


def predict_mcdropout(params: ModelParams, x: np.ndarray, num_passes: int = 10, seed: int = 0) -> Predictions:
    """Monte Carlo dropout: dropout stays on for num_passes forwards.

    Pass m for sample i draws from the substream (seed, "sample", i), m-th
    draw, so results are identical whether samples run serially or in
    parallel. With dropout 0 this degenerates to the vanilla prediction
    (a warning is emitted; the output is still valid).
    """
    if num_passes < 1:
        raise ConfigError("num_passes must be at least 1")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if params.arch.dropout == 0.0:
        # Dropout masks are all-ones, so every pass is bit-identical to
        # the deterministic batched forward. Tiling that single pass keeps
        # the aggregate exactly equal to the vanilla prediction instead of
        # accumulating mean-of-identical-rows rounding.
        warnings.warn("architecture has dropout 0; mcdropout equals the deterministic forward")
        probs = softmax(forward(params, x))
        per_pass = np.repeat(probs[:, None, :], num_passes, axis=1)
        return Predictions(probs, per_pass)
    per_pass = np.empty((n, num_passes, params.arch.num_classes))
    for i in range(n):
        rng = substream(seed, "sample", i)
        for m in range(num_passes):
            per_pass[i, m] = softmax(forward(params, x[i], mode="dropout", rng=rng))
    return Predictions(per_pass.mean(axis=1), per_pass)


def predict_bayesian(params: ModelParams, x: np.ndarray, num_passes: int = 10, seed: int = 0) -> Predictions:
    """Posterior-sampled prediction: one weight draw per pass, shared by
    the whole batch, averaged over num_passes draws."""
    if num_passes < 1:
        raise ConfigError("num_passes must be at least 1")
    if not params.arch.variational:
        raise ConfigError("bayesian prediction requires a variational model")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    per_pass = np.empty((x.shape[0], num_passes, params.arch.num_classes))
    for m in range(num_passes):
        rng = substream(seed, "pass", m)
        per_pass[:, m] = softmax(forward(params, x, mode="variational", rng=rng))
    return Predictions(per_pass.mean(axis=1), per_pass)


def predict_ensemble(members: list[ModelParams], x: np.ndarray) -> Predictions:
    """Mean of the members' softmax outputs (deterministic forwards)."""
    if not members:
        raise ConfigError("ensemble needs at least one member")
    arch = members[0].arch
    if any(m.arch != arch for m in members):
        raise ConfigError("ensemble members must share one architecture")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    per_pass = np.empty((x.shape[0], len(members), arch.num_classes))
    for m, member in enumerate(members):
        per_pass[:, m] = softmax(forward(member, x))
    return Predictions(per_pass.mean(axis=1), per_pass)
