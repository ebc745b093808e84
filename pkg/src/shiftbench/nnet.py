"""Small feedforward classifiers built from scratch on numpy.

One parameter layout serves three uses: a plain deterministic net, the
same net with dropout sampled at inference, and a mean-field variational
variant where each hidden layer stores a per-weight (mu, rho) posterior
with sigma = softplus(rho). The output layer is always deterministic.
Everything runs in float64; training is plain minibatch Adam.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingError
from .rng import derive_seed, substream

# Initial posterior scale for variational layers: softplus(-3) ~ 0.0486.
_RHO_INIT = -3.0

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    num_classes: int
    hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.5
    variational: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("need input_dim >= 1 and num_classes >= 2")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.num_classes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    prior_sigma: float = 1.0
    kl_anneal_frac: float = 0.25

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not (self.learning_rate > 0):
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must be in [0, 1)")
        if not (self.prior_sigma > 0):
            raise ConfigError("prior_sigma must be positive")
        if not (0 < self.kl_anneal_frac <= 1):
            raise ConfigError("kl_anneal_frac must be in (0, 1]")


@dataclass
class ModelParams:
    """Parameter container; treat as immutable once training returns it.

    layers[i] holds {"w", "b"} for a deterministic layer or
    {"w_mu", "w_rho", "b_mu", "b_rho"} for a variational one.
    """

    arch: Architecture
    layers: list[dict[str, np.ndarray]]

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [{k: v.copy() for k, v in l.items()} for l in self.layers])

    def num_params(self) -> int:
        return sum(v.size for l in self.layers for v in l.values())


def init_params(arch: Architecture, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    layers: list[dict[str, np.ndarray]] = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        if arch.variational and i < len(sizes) - 2:
            layers.append(
                {
                    "w_mu": w,
                    "w_rho": np.full((fan_out, fan_in), _RHO_INIT),
                    "b_mu": b,
                    "b_rho": np.full(fan_out, _RHO_INIT),
                }
            )
        else:
            layers.append({"w": w, "b": b})
    return ModelParams(arch, layers)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _is_variational_layer(layer: dict[str, np.ndarray]) -> bool:
    return "w_mu" in layer


def _forward_cache(
    params: ModelParams,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    train_dropout: bool = False,
    sample_variational: bool = False,
    frozen_noise: list[tuple[np.ndarray, np.ndarray]] | None = None,
):
    """Batched forward pass keeping everything backprop needs.

    frozen_noise, when given, supplies (eps_w, eps_b) per variational
    layer instead of drawing from rng; used for gradient checking.
    """
    arch = params.arch
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if a.shape[1] != arch.input_dim:
        raise ConfigError(f"input has {a.shape[1]} features, expected {arch.input_dim}")
    cache = []
    n_layers = len(params.layers)
    v_idx = 0
    for i, layer in enumerate(params.layers):
        entry: dict[str, object] = {"a_in": a}
        if _is_variational_layer(layer) and sample_variational:
            sigma_w = _softplus(layer["w_rho"])
            sigma_b = _softplus(layer["b_rho"])
            if frozen_noise is not None:
                eps_w, eps_b = frozen_noise[v_idx]
            else:
                eps_w = rng.standard_normal(layer["w_mu"].shape)
                eps_b = rng.standard_normal(layer["b_mu"].shape)
            v_idx += 1
            w = layer["w_mu"] + sigma_w * eps_w
            b = layer["b_mu"] + sigma_b * eps_b
            entry["vnoise"] = (eps_w, eps_b)
        else:
            w = layer.get("w", layer.get("w_mu"))
            b = layer.get("b", layer.get("b_mu"))
        z = a @ w.T + b
        entry["w_eff"] = w
        entry["z"] = z
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            if train_dropout and arch.dropout > 0.0:
                # Inverted dropout: surviving units scaled by 1/(1-p) so the
                # deterministic forward needs no rescaling.
                keep = 1.0 - arch.dropout
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
                entry["mask"] = mask
            a = h
        else:
            a = z
        cache.append(entry)
    return a, cache


def forward(params: ModelParams, x: np.ndarray, mode: str = "deterministic", rng=None) -> np.ndarray:
    """Class logits for x (1-D or 2-D; output shape matches).

    mode "deterministic" uses stored weights (posterior means for
    variational layers) and no dropout; "dropout" samples dropout masks;
    "variational" samples weights from the posterior. Sampling modes
    require ``rng`` (a Generator or an int seed).
    """
    if mode not in ("deterministic", "dropout", "variational"):
        raise ConfigError(f"unknown forward mode {mode!r}")
    if mode != "deterministic":
        if rng is None:
            raise ConfigError(f"mode {mode!r} needs an rng or seed")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
    if mode == "variational" and not params.arch.variational:
        raise ConfigError("variational forward requires a variational architecture")
    logits, _ = _forward_cache(
        params,
        x,
        rng=rng,
        train_dropout=(mode == "dropout"),
        sample_variational=(mode == "variational"),
    )
    x = np.asarray(x)
    return logits[0] if x.ndim == 1 else logits


def _backward(params: ModelParams, cache, dlogits: np.ndarray) -> list[dict[str, np.ndarray]]:
    grads: list[dict[str, np.ndarray]] = [dict() for _ in params.layers]
    da = dlogits
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        entry = cache[i]
        if i < len(params.layers) - 1:
            mask = entry.get("mask")
            if mask is not None:
                da = da * mask
            da = da * (entry["z"] > 0.0)
        dw = da.T @ entry["a_in"]
        db = da.sum(axis=0)
        if _is_variational_layer(layer):
            if "vnoise" in entry:
                eps_w, eps_b = entry["vnoise"]
                grads[i]["w_mu"] = dw
                grads[i]["w_rho"] = dw * eps_w * _sigmoid(layer["w_rho"])
                grads[i]["b_mu"] = db
                grads[i]["b_rho"] = db * eps_b * _sigmoid(layer["b_rho"])
            else:
                grads[i]["w_mu"] = dw
                grads[i]["b_mu"] = db
                grads[i]["w_rho"] = np.zeros_like(layer["w_rho"])
                grads[i]["b_rho"] = np.zeros_like(layer["b_rho"])
        else:
            grads[i]["w"] = dw
            grads[i]["b"] = db
        da = da @ entry["w_eff"]
    return grads


def _nll_and_grad(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient wrt logits."""
    n = len(y)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(n), y]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


def mean_nll(logits: np.ndarray, y: np.ndarray) -> float:
    return _nll_and_grad(np.atleast_2d(logits), np.asarray(y))[0]


def kl_gaussian(mu: np.ndarray, sigma: np.ndarray, prior_sigma: float) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(0, prior_sigma^2)), summed."""
    s2 = prior_sigma * prior_sigma
    return float(np.sum(np.log(prior_sigma / sigma) + (sigma**2 + mu**2) / (2.0 * s2) - 0.5))


def _kl_total(params: ModelParams, prior_sigma: float) -> float:
    total = 0.0
    for layer in params.layers:
        if _is_variational_layer(layer):
            total += kl_gaussian(layer["w_mu"], _softplus(layer["w_rho"]), prior_sigma)
            total += kl_gaussian(layer["b_mu"], _softplus(layer["b_rho"]), prior_sigma)
    return total


def _add_kl_grads(params: ModelParams, grads, prior_sigma: float, scale: float) -> None:
    s2 = prior_sigma * prior_sigma
    for layer, g in zip(params.layers, grads):
        if not _is_variational_layer(layer):
            continue
        for mu_key, rho_key in (("w_mu", "w_rho"), ("b_mu", "b_rho")):
            mu = layer[mu_key]
            rho = layer[rho_key]
            sigma = _softplus(rho)
            g[mu_key] = g[mu_key] + scale * mu / s2
            g[rho_key] = g[rho_key] + scale * (sigma / s2 - 1.0 / sigma) * _sigmoid(rho)


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in l.items()} for l in params.layers]
        self.v = [{k: np.zeros_like(v) for k, v in l.items()} for l in params.layers]

    def step(self, params: ModelParams, grads) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for layer, g, m, v in zip(params.layers, grads, self.m, self.v):
            for k in layer:
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k]
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k]
                layer[k] = layer[k] - c.learning_rate * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + c.adam_eps)


def _check_data(x: np.ndarray, y: np.ndarray, arch: Architecture, name: str):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError(f"{name} features must be a non-empty 2-D array")
    if x.shape[1] != arch.input_dim:
        raise ConfigError(f"{name} features have dim {x.shape[1]}, architecture wants {arch.input_dim}")
    if y.shape != (x.shape[0],):
        raise ConfigError(f"{name} labels must be 1-D with one entry per row")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= arch.num_classes:
        raise ConfigError(f"{name} labels outside 0..{arch.num_classes - 1}")
    return x, y


def _train(train, val, arch: Architecture, cfg: TrainConfig, variational: bool) -> ModelParams:
    xtr, ytr = _check_data(train[0], train[1], arch, "train")
    xva, yva = _check_data(val[0], val[1], arch, "validation")
    params = init_params(arch, derive_seed(cfg.seed, "init"))
    opt = _Adam(params, cfg)
    rng = substream(cfg.seed, "batches")
    n = len(ytr)
    warm = max(1, int(round(cfg.kl_anneal_frac * cfg.epochs)))

    best_loss = math.inf
    best_params = params.copy()
    for epoch in range(cfg.epochs):
        kl_w = min(1.0, (epoch + 1) / warm) if variational else 0.0
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits, cache = _forward_cache(
                params,
                xtr[idx],
                rng=rng,
                train_dropout=arch.dropout > 0.0,
                sample_variational=variational,
            )
            loss, dlogits = _nll_and_grad(logits, ytr[idx])
            grads = _backward(params, cache, dlogits)
            if variational:
                loss += kl_w * _kl_total(params, cfg.prior_sigma) / n
                _add_kl_grads(params, grads, cfg.prior_sigma, kl_w / n)
            if cfg.weight_decay > 0.0:
                for layer, g in zip(params.layers, grads):
                    for k in ("w", "w_mu"):
                        if k in layer:
                            loss += 0.5 * cfg.weight_decay * float(np.sum(layer[k] ** 2))
                            g[k] = g[k] + cfg.weight_decay * layer[k]
            if not math.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch} (non-finite loss)")
            opt.step(params, grads)
        val_logits, _ = _forward_cache(params, xva)
        val_loss, _ = _nll_and_grad(val_logits, yva)
        if not math.isfinite(val_loss):
            raise TrainingError(f"validation loss non-finite at epoch {epoch}")
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
    return best_params


def train_deterministic(train, val, arch: Architecture, cfg: TrainConfig) -> ModelParams:
    """Minibatch-Adam training of the (optionally dropout-bearing) net.

    Returns the parameters of the epoch with the lowest validation NLL
    (deterministic forward). Identical inputs and seed give bit-identical
    parameters.
    """
    if arch.variational:
        raise ConfigError("use train_variational for a variational architecture")
    return _train(train, val, arch, cfg, variational=False)


def train_variational(train, val, arch: Architecture, cfg: TrainConfig) -> ModelParams:
    """Mean-field variational training.

    Per batch the loss is NLL under one reparameterized posterior sample
    plus kl_weight * KL(q || N(0, prior_sigma^2)) / n_train, with
    kl_weight annealed linearly from 0 to 1 over the first
    kl_anneal_frac of the epochs. Validation NLL for model selection is
    computed at the posterior means.
    """
    if not arch.variational:
        raise ConfigError("train_variational needs a variational architecture")
    return _train(train, val, arch, cfg, variational=True)


def train_ensemble(
    train, val, arch: Architecture, cfg: TrainConfig, num_members: int, workers: int = 1
) -> list[ModelParams]:
    """Train num_members independent nets with member-derived seeds."""
    if num_members < 1:
        raise ConfigError("num_members must be at least 1")
    configs = [replace(cfg, seed=derive_seed(cfg.seed, "member", i)) for i in range(num_members)]

    def run(i: int) -> ModelParams:
        try:
            return _train(train, val, arch, configs[i], variational=arch.variational)
        except TrainingError as e:
            raise TrainingError(f"ensemble member {i}: {e}") from e

    if workers > 1 and num_members > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(num_members)))
    return [run(i) for i in range(num_members)]


def grad_check(params: ModelParams, batch, n_checks: int = 100, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    Checks n_checks randomly chosen parameters. For variational nets the
    loss is the ELBO with a frozen noise sample; otherwise plain NLL.
    Relative error uses max(|a| + |n|, 1e-6) in the denominator, so
    gradients that are numerically zero on both sides count as exact.
    """
    x, y = _check_data(batch[0], batch[1], params.arch, "batch")
    rng = np.random.default_rng(seed)
    variational = params.arch.variational
    frozen = None
    if variational:
        frozen = [
            (rng.standard_normal(l["w_mu"].shape), rng.standard_normal(l["b_mu"].shape))
            for l in params.layers
            if _is_variational_layer(l)
        ]

    def loss_of(p: ModelParams) -> float:
        logits, _ = _forward_cache(p, x, sample_variational=variational, frozen_noise=frozen)
        loss, _ = _nll_and_grad(logits, y)
        if variational:
            loss += _kl_total(p, 1.0) / len(y)
        return loss

    logits, cache = _forward_cache(params, x, sample_variational=variational, frozen_noise=frozen)
    _, dlogits = _nll_and_grad(logits, y)
    grads = _backward(params, cache, dlogits)
    if variational:
        _add_kl_grads(params, grads, 1.0, 1.0 / len(y))

    sites = [
        (li, key, flat)
        for li, layer in enumerate(params.layers)
        for key in sorted(layer)
        for flat in range(layer[key].size)
    ]
    if len(sites) > n_checks:
        chosen = rng.choice(len(sites), size=n_checks, replace=False)
        sites = [sites[int(i)] for i in chosen]

    worst = 0.0
    for li, key, flat in sites:
        analytic = float(grads[li][key].flat[flat])
        plus = params.copy()
        plus.layers[li][key].flat[flat] += step
        minus = params.copy()
        minus.layers[li][key].flat[flat] -= step
        numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * step)
        rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def save_model(params: ModelParams, path: str | Path) -> Path:
    """Serialize to a versioned .npz container (bit-exact round trip)."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    arch = params.arch
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "input_dim": arch.input_dim,
            "num_classes": arch.num_classes,
            "hidden": list(arch.hidden),
            "dropout": arch.dropout,
            "variational": arch.variational,
        },
        "layer_keys": [sorted(l) for l in params.layers],
    }
    arrays = {
        f"l{i}_{k}": layer[k] for i, layer in enumerate(params.layers) for k in sorted(layer)
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    return path


def load_model(path: str | Path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        a = meta["arch"]
        arch = Architecture(
            input_dim=a["input_dim"],
            num_classes=a["num_classes"],
            hidden=tuple(a["hidden"]),
            dropout=a["dropout"],
            variational=a["variational"],
        )
        layers = [
            {k: data[f"l{i}_{k}"] for k in keys} for i, keys in enumerate(meta["layer_keys"])
        ]
    return ModelParams(arch, layers)
