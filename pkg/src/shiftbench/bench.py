"""End-to-end benchmark: data, training, the full evaluation matrix, CSV
and figure export.

A run is a pure function of its config. The master seed fans out through
named substreams (data, training, shifting, prediction), evaluation cells
are independent, and output rows are written in a fixed order, so the
emitted metrics.csv and provenance.json are byte-identical no matter how
many worker threads execute the matrix. Worker count comes from the
SHIFTBENCH_THREADS environment variable (0 or unset picks a small
automatic value).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .features import FeatureConfig, FeatureScaler, featurize_dataset
from .metrics import (
    MetricsReport,
    accuracy,
    brier,
    ece,
    entropy_histogram,
    mean_uncertainty,
    selective_prediction_curve,
    shift_detection_sweep,
    tpr_tnr,
)
from .nnet import (
    Architecture,
    ModelParams,
    TrainConfig,
    train_deterministic,
    train_ensemble,
    train_variational,
)
from .plots import Series, line_chart, paired_histogram, write_svg
from .rng import derive_seed
from .shifts import SHIFT_KINDS, ShiftSpec, apply_shift, make_babble_bank
from .signals import SignalDataset, SynthTaskSpec, read_manifest, split_dataset, synthesize_split
from .uq import (
    METHODS,
    Predictions,
    TemperatureFit,
    fit_temperature,
    predict_bayesian,
    predict_ensemble,
    predict_mcdropout,
    predict_scaled,
    predict_vanilla,
)

METRICS_HEADER = "method,shift_kind,degree,accuracy,brier,ece,mean_uncertainty,tpr,tnr,n_samples"

_SELECTIVE_HEADER = ["method", "shift_kind", "degree", "threshold", "retained_fraction", "accuracy"]
_DETECTION_HEADER = ["method", "shift_kind", "degree", "threshold", "accuracy"]
_HISTOGRAM_HEADER = ["method", "shift_kind", "degree", "set", "bin_lo", "bin_hi", "count"]
_RELIABILITY_HEADER = ["method", "shift_kind", "degree", "bucket", "conf_lo", "conf_hi", "size", "accuracy", "confidence", "gap"]


@dataclass(frozen=True)
class BenchmarkConfig:
    task: str = "synthetic"
    manifest: str | None = None
    seed: int = 7
    out_dir: str = "results"
    synthetic: SynthTaskSpec = SynthTaskSpec()
    n_train: int = 600
    n_val: int = 120
    n_test: int = 200
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    features: FeatureConfig = FeatureConfig()
    hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.5
    epochs: int = 150
    ensemble_epochs: int = 80
    variational_epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    prior_sigma: float = 1.0
    num_passes: int = 10
    methods: tuple[str, ...] = METHODS
    shift_kinds: tuple[str, ...] = SHIFT_KINDS
    degrees: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    ece_buckets: int = 10
    mask_blocks: int = 5
    histogram_bins: int = 20
    selective_thresholds: tuple[float, ...] | None = None
    detection_thresholds: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "shift_kinds", tuple(self.shift_kinds))
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if self.task not in ("synthetic", "manifest"):
            raise ConfigError(f"task must be 'synthetic' or 'manifest', got {self.task!r}")
        if self.task == "manifest" and not self.manifest:
            raise ConfigError("task 'manifest' requires a manifest path")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected a subset of {METHODS}")
        for k in self.shift_kinds:
            if k not in SHIFT_KINDS:
                raise ConfigError(f"unknown shift kind {k!r}; expected a subset of {SHIFT_KINDS}")
        if not self.methods or not self.shift_kinds or not self.degrees:
            raise ConfigError("methods, shift_kinds, and degrees must be non-empty")
        if len(set(self.degrees)) != len(self.degrees) or any(not 0 <= d <= 5 for d in self.degrees):
            raise ConfigError("degrees must be distinct values in 0..5")
        if self.task == "synthetic" and min(self.n_train, self.n_val, self.n_test) < self.synthetic.num_classes:
            raise ConfigError("each synthetic split needs at least one item per class")
        if self.num_passes < 1:
            raise ConfigError("num_passes must be at least 1")


_GROUPS = {
    "synthetic": SynthTaskSpec,
    "features": FeatureConfig,
}
_TRAIN_KEYS = (
    "epochs", "ensemble_epochs", "variational_epochs", "batch_size",
    "learning_rate", "weight_decay", "prior_sigma",
)
_MODEL_KEYS = ("hidden", "dropout")
_TOP_KEYS = (
    "task", "manifest", "seed", "out_dir", "n_train", "n_val", "n_test", "split_ratios",
    "methods", "shift_kinds", "degrees", "ece_buckets", "mask_blocks", "histogram_bins",
    "selective_thresholds", "detection_thresholds", "num_passes",
)


def config_from_dict(raw: dict) -> BenchmarkConfig:
    """Build a config from a JSON-shaped dict; unknown keys are errors.

    Recognized groups: "synthetic", "features", "model" (hidden, dropout),
    "train" (epochs and optimizer settings), "uq" (num_passes). Everything
    else sits at the top level. The empty dict is a valid config.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs: dict = {}
    for key, value in raw.items():
        if key in _GROUPS:
            cls = _GROUPS[key]
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            try:
                kwargs[key] = cls(**{k: _tupled(v) for k, v in value.items()})
            except TypeError as e:
                raise ConfigError(f"config section {key!r}: {e}") from e
        elif key == "model":
            for k, v in value.items():
                if k not in _MODEL_KEYS:
                    raise ConfigError(f"unknown key model.{k}")
                kwargs[k] = _tupled(v)
        elif key == "train":
            for k, v in value.items():
                if k not in _TRAIN_KEYS:
                    raise ConfigError(f"unknown key train.{k}")
                kwargs[k] = v
        elif key == "uq":
            for k, v in value.items():
                if k != "num_passes":
                    raise ConfigError(f"unknown key uq.{k}")
                kwargs[k] = v
        elif key in _TOP_KEYS:
            kwargs[key] = _tupled(raw[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return BenchmarkConfig(**kwargs)


def _tupled(v):
    # JSON arrays become (nested) tuples so parsed configs compare equal
    # to natively constructed ones.
    return tuple(_tupled(item) for item in v) if isinstance(v, list) else v


def config_from_file(path: str | Path) -> BenchmarkConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    return config_from_dict(raw)


def config_to_dict(cfg: BenchmarkConfig) -> dict:
    """Fully resolved config echo (defaults filled in) for provenance."""
    s = cfg.synthetic
    f = cfg.features
    return {
        "task": cfg.task,
        "manifest": cfg.manifest,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "synthetic": {
            "num_classes": s.num_classes,
            "signal_length": s.signal_length,
            "sample_rate": s.sample_rate,
            "base_freqs": list(s.base_freqs),
            "spike_jitter": list(s.spike_jitter),
            "harmonic_weights": [list(w) for w in s.harmonic_weights],
            "common_freq": s.common_freq,
            "class_gain": s.class_gain,
            "noise_floor": s.noise_floor,
            "seed": s.seed,
        },
        "n_train": cfg.n_train,
        "n_val": cfg.n_val,
        "n_test": cfg.n_test,
        "split_ratios": list(cfg.split_ratios),
        "features": {
            "frame_length": f.frame_length,
            "hop_length": f.hop_length,
            "n_bins": f.n_bins,
            "aggregation": f.aggregation,
            "log_offset": f.log_offset,
        },
        "model": {"hidden": list(cfg.hidden), "dropout": cfg.dropout},
        "train": {
            "epochs": cfg.epochs,
            "ensemble_epochs": cfg.ensemble_epochs,
            "variational_epochs": cfg.variational_epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "weight_decay": cfg.weight_decay,
            "prior_sigma": cfg.prior_sigma,
        },
        "uq": {"num_passes": cfg.num_passes},
        "methods": list(cfg.methods),
        "shift_kinds": list(cfg.shift_kinds),
        "degrees": list(cfg.degrees),
        "ece_buckets": cfg.ece_buckets,
        "mask_blocks": cfg.mask_blocks,
        "histogram_bins": cfg.histogram_bins,
        "selective_thresholds": None if cfg.selective_thresholds is None else list(cfg.selective_thresholds),
        "detection_thresholds": None if cfg.detection_thresholds is None else list(cfg.detection_thresholds),
    }


def resolve_workers(explicit: int | None = None) -> int:
    """Worker-thread count: explicit argument, else SHIFTBENCH_THREADS,
    else a small automatic value. 0 means auto."""
    if explicit is not None and explicit > 0:
        return explicit
    raw = os.environ.get("SHIFTBENCH_THREADS", "0")
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"SHIFTBENCH_THREADS must be an integer, got {raw!r}") from None
    if v > 0:
        return v
    return min(8, os.cpu_count() or 1)


def _spread(total: int, k: int) -> tuple[int, ...]:
    base, extra = divmod(total, k)
    return tuple(base + (1 if c < extra else 0) for c in range(k))


@dataclass
class ExperimentData:
    train_ds: SignalDataset
    val_ds: SignalDataset
    test_ds: SignalDataset
    scaler: FeatureScaler
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int


def prepare_data(cfg: BenchmarkConfig) -> ExperimentData:
    """Build the three splits and their standardized features.

    Synthetic tasks generate each split directly (per-class counts as
    equal as the totals allow); manifest tasks read the manifest and
    apply the stratified ratio split.
    """
    if cfg.task == "synthetic":
        spec = cfg.synthetic
        k = spec.num_classes
        train_ds = synthesize_split(spec, _spread(cfg.n_train, k), "train")
        val_ds = synthesize_split(spec, _spread(cfg.n_val, k), "validation")
        test_ds = synthesize_split(spec, _spread(cfg.n_test, k), "test")
    else:
        full = read_manifest(cfg.manifest)
        train_ds, val_ds, test_ds = split_dataset(
            full, cfg.split_ratios, seed=derive_seed(cfg.seed, "split")
        )
    x_train_raw, y_train, _ = featurize_dataset(train_ds, cfg.features)
    scaler = FeatureScaler.fit(x_train_raw)
    x_val_raw, y_val, _ = featurize_dataset(val_ds, cfg.features)
    x_test_raw, y_test, _ = featurize_dataset(test_ds, cfg.features)
    return ExperimentData(
        train_ds, val_ds, test_ds, scaler,
        scaler.transform(x_train_raw), y_train,
        scaler.transform(x_val_raw), y_val,
        scaler.transform(x_test_raw), y_test,
        train_ds.num_classes,
    )


@dataclass
class TrainedModels:
    backbone: ModelParams
    variational: ModelParams | None
    members: list[ModelParams]
    temperature: TemperatureFit | None


def _needs(cfg: BenchmarkConfig, *methods: str) -> bool:
    return any(m in cfg.methods for m in methods)


def train_models(cfg: BenchmarkConfig, data: ExperimentData, workers: int | None = None) -> TrainedModels:
    """Train the deterministic backbone, the variational net, and the
    ensemble members, as required by the configured methods."""
    workers = resolve_workers(workers)
    dim = data.x_train.shape[1]
    arch = Architecture(dim, data.num_classes, cfg.hidden, cfg.dropout, variational=False)
    base = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        prior_sigma=cfg.prior_sigma,
        seed=derive_seed(cfg.seed, "train", "backbone"),
    )
    train_xy = (data.x_train, data.y_train)
    val_xy = (data.x_val, data.y_val)

    backbone = train_deterministic(train_xy, val_xy, arch, base)

    temperature = None
    if "scaling" in cfg.methods:
        temperature = fit_temperature(backbone, val_xy)

    variational = None
    if "bayesian" in cfg.methods:
        v_arch = Architecture(dim, data.num_classes, cfg.hidden, 0.0, variational=True)
        v_cfg = replace(
            base, epochs=cfg.variational_epochs, seed=derive_seed(cfg.seed, "train", "variational")
        )
        variational = train_variational(train_xy, val_xy, v_arch, v_cfg)

    members: list[ModelParams] = []
    if "ensemble" in cfg.methods:
        e_cfg = replace(
            base, epochs=cfg.ensemble_epochs, seed=derive_seed(cfg.seed, "train", "ensemble")
        )
        members = train_ensemble(train_xy, val_xy, arch, e_cfg, cfg.num_passes, workers=workers)
    return TrainedModels(backbone, variational, members, temperature)


def predict_method(
    cfg: BenchmarkConfig, models: TrainedModels, method: str, x: np.ndarray, cell_tag: str
) -> Predictions:
    """Dispatch one method on one feature matrix; sampled methods get a
    seed derived from (config seed, method, cell_tag)."""
    seed = derive_seed(cfg.seed, "predict", method, cell_tag)
    if method == "vanilla":
        return predict_vanilla(models.backbone, x)
    if method == "scaling":
        return predict_scaled(models.backbone, models.temperature.temperature, x)
    if method == "mcdropout":
        return predict_mcdropout(models.backbone, x, cfg.num_passes, seed)
    if method == "bayesian":
        return predict_bayesian(models.variational, x, cfg.num_passes, seed)
    if method == "ensemble":
        return predict_ensemble(models.members, x)
    raise ConfigError(f"unknown method {method!r}")


@dataclass
class RunMatrixResult:
    reports: list[MetricsReport]
    selective_rows: list[tuple]
    detection_rows: list[tuple]
    histogram_rows: list[tuple]
    reliability_rows: list[tuple]
    provenance: dict


def _cell_report(cfg, method, kind, degree, preds, labels, num_classes):
    report_tpr = report_tnr = None
    if num_classes == 2 and len(set(labels.tolist())) == 2:
        report_tpr, report_tnr = tpr_tnr(preds.probs, labels)
    ece_value, buckets = ece(preds.probs, labels, cfg.ece_buckets)
    report = MetricsReport(
        method=method,
        shift_kind=kind,
        degree=degree,
        accuracy=accuracy(preds.probs, labels),
        brier=brier(preds.probs, labels),
        ece=ece_value,
        mean_uncertainty=mean_uncertainty(preds.probs),
        tpr=report_tpr,
        tnr=report_tnr,
        n_samples=len(labels),
    )
    reliability = [
        (method, kind, degree, b, lo, hi, size, acc_b, conf_b, gap)
        for (b, lo, hi, size, acc_b, conf_b, gap) in buckets.rows()
    ]
    return report, reliability


def run_benchmark(cfg: BenchmarkConfig, workers: int | None = None) -> RunMatrixResult:
    """Evaluate every (method, shift kind, degree) cell of the config.

    Training happens once per model family; the clean test set is
    evaluated once per method and reused for every kind's degree 0, which
    is what makes degree-0 rows identical across kinds by construction.
    """
    workers = resolve_workers(workers)
    data = prepare_data(cfg)
    models = train_models(cfg, data, workers)
    k = data.num_classes
    y_test = data.y_test

    baseline = {m: predict_method(cfg, models, m, data.x_test, "degree0") for m in cfg.methods}

    bank = None
    if "background_noise" in cfg.shift_kinds:
        max_len = max(len(it.signal) for it in data.test_ds.items)
        rate = data.test_ds.items[0].signal.sample_rate
        bank = make_babble_bank(4, max(64, max_len), rate, derive_seed(cfg.seed, "bank"))

    shifted_cells = [(kind, d) for kind in cfg.shift_kinds for d in cfg.degrees if d > 0]

    def eval_cell(cell):
        kind, degree = cell
        spec = ShiftSpec(kind, degree, seed=derive_seed(cfg.seed, "shiftseed", kind, degree))
        shifted = apply_shift(data.test_ds, spec, bank=bank, n_blocks=cfg.mask_blocks)
        x_raw, _, _ = featurize_dataset(shifted, cfg.features)
        x = data.scaler.transform(x_raw)
        return {m: predict_method(cfg, models, m, x, f"{kind}-d{degree}") for m in cfg.methods}

    if workers > 1 and len(shifted_cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cell_preds = dict(zip(shifted_cells, pool.map(eval_cell, shifted_cells)))
    else:
        cell_preds = {cell: eval_cell(cell) for cell in shifted_cells}

    reports: list[MetricsReport] = []
    reliability_rows: list[tuple] = []
    for method in cfg.methods:
        for kind in cfg.shift_kinds:
            for degree in cfg.degrees:
                preds = baseline[method] if degree == 0 else cell_preds[(kind, degree)][method]
                report, rel = _cell_report(cfg, method, kind, degree, preds, y_test, k)
                reports.append(report)
                reliability_rows.extend(rel)

    taus_sel = cfg.selective_thresholds or tuple(np.linspace(0.0, math.log(k), 13))
    taus_det = cfg.detection_thresholds or tuple(np.linspace(0.0, math.log(k), 13))

    selective_rows: list[tuple] = []
    detection_rows: list[tuple] = []
    for method in cfg.methods:
        for pt in selective_prediction_curve(baseline[method].probs, y_test, taus_sel):
            selective_rows.append((method, "none", 0, pt.threshold, pt.retained_fraction, pt.accuracy))
        for kind, degree in shifted_cells:
            probs_s = cell_preds[(kind, degree)][method].probs
            mixed = np.vstack([baseline[method].probs, probs_s])
            mixed_y = np.concatenate([y_test, y_test])
            for pt in selective_prediction_curve(mixed, mixed_y, taus_sel):
                selective_rows.append((method, kind, degree, pt.threshold, pt.retained_fraction, pt.accuracy))
            for tau, det_acc in shift_detection_sweep(baseline[method].probs, probs_s, taus_det):
                detection_rows.append((method, kind, degree, tau, det_acc))

    histogram_rows: list[tuple] = []
    hist_kind = "gaussian_noise" if "gaussian_noise" in cfg.shift_kinds else cfg.shift_kinds[0]
    hist_degree = max(d for d in cfg.degrees)
    if hist_degree > 0:
        for method in cfg.methods:
            counts_o, edges = entropy_histogram(baseline[method].probs, cfg.histogram_bins)
            counts_s, _ = entropy_histogram(cell_preds[(hist_kind, hist_degree)][method].probs, cfg.histogram_bins)
            for name, counts in (("original", counts_o), ("shifted", counts_s)):
                for b in range(len(counts)):
                    histogram_rows.append(
                        (method, hist_kind, hist_degree, name, float(edges[b]), float(edges[b + 1]), int(counts[b]))
                    )

    cfg_dict = config_to_dict(cfg)
    canonical = json.dumps(cfg_dict, sort_keys=True)
    provenance = {
        "toolkit_version": __version__,
        "seed": cfg.seed,
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
    }
    if models.temperature is not None:
        provenance["temperature"] = models.temperature.temperature
    return RunMatrixResult(reports, selective_rows, detection_rows, histogram_rows, reliability_rows, provenance)


# ---------------------------------------------------------------------------
# CSV / JSON export and re-import. Floats are written with repr-shortest
# formatting, which is deterministic for a given value.
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def export_csv(result: RunMatrixResult, out_dir: str | Path) -> Path:
    """Write metrics.csv, the analysis tables, and provenance.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(
        out / "metrics.csv",
        METRICS_HEADER.split(","),
        [
            (r.method, r.shift_kind, r.degree, r.accuracy, r.brier, r.ece,
             r.mean_uncertainty, r.tpr, r.tnr, r.n_samples)
            for r in result.reports
        ],
    )
    _write_rows(out / "selective_prediction.csv", _SELECTIVE_HEADER, result.selective_rows)
    _write_rows(out / "shift_detection.csv", _DETECTION_HEADER, result.detection_rows)
    _write_rows(out / "entropy_histograms.csv", _HISTOGRAM_HEADER, result.histogram_rows)
    _write_rows(out / "reliability.csv", _RELIABILITY_HEADER, result.reliability_rows)
    with open(out / "provenance.json", "w") as fh:
        json.dump(result.provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


TREND_METRICS = ("accuracy", "brier", "ece", "mean_uncertainty")
_BINARY_METRICS = ("tpr", "tnr")


def plot_trends(reports: list[MetricsReport], out_dir: str | Path) -> list[Path]:
    """One SVG per (shift kind, metric): metric vs degree, a line per method."""
    out = Path(out_dir)
    kinds = sorted({r.shift_kind for r in reports})
    methods = sorted({r.method for r in reports})
    metrics = list(TREND_METRICS)
    if any(r.tpr is not None for r in reports):
        metrics += list(_BINARY_METRICS)
    paths = []
    for kind in kinds:
        for metric in metrics:
            series = []
            for method in methods:
                cells = sorted(
                    (r.degree, getattr(r, metric))
                    for r in reports
                    if r.shift_kind == kind and r.method == method
                )
                series.append(Series(method, [c[0] for c in cells], [c[1] for c in cells]))
            svg = line_chart(series, f"{metric} vs shift degree ({kind})", "shift degree", metric)
            paths.append(write_svg(out / f"trend_{kind}_{metric}.svg", svg))
    return paths


def _selective_svg(rows, out_dir: Path) -> Path:
    methods = sorted({r[0] for r in rows})
    series = []
    for method in methods:
        clean = sorted((r[3], r[5]) for r in rows if r[0] == method and r[1] == "none")
        series.append(Series(f"{method} (clean)", [p[0] for p in clean], [p[1] for p in clean]))
        mixed: dict[float, list[float]] = {}
        for r in rows:
            if r[0] == method and r[1] != "none" and r[5] is not None:
                mixed.setdefault(r[3], []).append(r[5])
        taus = sorted(mixed)
        series.append(
            Series(f"{method} (mixed)", taus, [sum(mixed[t]) / len(mixed[t]) for t in taus], dashed=True)
        )
    svg = line_chart(series, "selective prediction", "entropy threshold", "accuracy on retained")
    return write_svg(out_dir / "selective_prediction.svg", svg)


def _detection_svg(rows, out_dir: Path) -> Path:
    methods = sorted({r[0] for r in rows})
    series = []
    for method in methods:
        acc_by_tau: dict[float, list[float]] = {}
        for r in rows:
            if r[0] == method:
                acc_by_tau.setdefault(r[3], []).append(r[4])
        taus = sorted(acc_by_tau)
        series.append(Series(method, taus, [sum(acc_by_tau[t]) / len(acc_by_tau[t]) for t in taus]))
    svg = line_chart(series, "shift detection (mean over cells)", "entropy threshold", "detection accuracy")
    return write_svg(out_dir / "shift_detection.svg", svg)


def _histogram_svgs(rows, out_dir: Path) -> list[Path]:
    paths = []
    for method in sorted({r[0] for r in rows}):
        mine = [r for r in rows if r[0] == method]
        if not mine:
            continue
        kind, degree = mine[0][1], mine[0][2]
        orig = sorted((r[4], r[5], r[6]) for r in mine if r[3] == "original")
        shif = sorted((r[4], r[5], r[6]) for r in mine if r[3] == "shifted")
        edges = [b[0] for b in orig] + [orig[-1][1]]
        svg = paired_histogram(
            edges,
            [b[2] for b in orig],
            [b[2] for b in shif],
            "original",
            f"shifted ({kind} degree {degree})",
            f"predictive entropy ({method})",
            "entropy (nats)",
        )
        paths.append(write_svg(out_dir / f"entropy_hist_{method}.svg", svg))
    return paths


def export_figures(result: RunMatrixResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = plot_trends(result.reports, out)
    if result.selective_rows:
        paths.append(_selective_svg(result.selective_rows, out))
    if result.detection_rows:
        paths.append(_detection_svg(result.detection_rows, out))
    paths.extend(_histogram_svgs(result.histogram_rows, out))
    return paths


def _parse_opt_float(s: str):
    return None if s == "" else float(s)


def read_metrics_csv(path: str | Path) -> list[MetricsReport]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"metrics file not found: {p}")
    reports = []
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER.split(","):
            raise ConfigError(f"{p}: unexpected metrics header {header}")
        for row in reader:
            reports.append(
                MetricsReport(
                    method=row[0], shift_kind=row[1], degree=int(row[2]),
                    accuracy=float(row[3]), brier=float(row[4]), ece=float(row[5]),
                    mean_uncertainty=float(row[6]), tpr=_parse_opt_float(row[7]),
                    tnr=_parse_opt_float(row[8]), n_samples=int(row[9]),
                )
            )
    return reports


def _read_rows(path: Path, header: list[str], parsers) -> list[tuple]:
    if not path.is_file():
        return []
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ConfigError(f"{path}: unexpected header {got}")
        for row in reader:
            rows.append(tuple(parse(v) for parse, v in zip(parsers, row)))
    return rows


def render_report(in_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Rebuild every figure from the CSV tables in ``in_dir``."""
    src = Path(in_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = read_metrics_csv(src / "metrics.csv")
    paths = plot_trends(reports, out)
    selective = _read_rows(
        src / "selective_prediction.csv", _SELECTIVE_HEADER,
        (str, str, int, float, float, _parse_opt_float),
    )
    if selective:
        paths.append(_selective_svg(selective, out))
    detection = _read_rows(
        src / "shift_detection.csv", _DETECTION_HEADER, (str, str, int, float, float)
    )
    if detection:
        paths.append(_detection_svg(detection, out))
    hist = _read_rows(
        src / "entropy_histograms.csv", _HISTOGRAM_HEADER,
        (str, str, int, str, float, float, int),
    )
    if hist:
        paths.extend(_histogram_svgs(hist, out))
    return paths
