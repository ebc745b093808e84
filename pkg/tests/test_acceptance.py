"""Acceptance gate: ten shipping criteria, each with pinned tolerances.

Every test prints one `[A#] ...: PASS/FAIL` line with its measured values
before asserting (visible with `pytest -s` or in captured output of a
failed run). The full default benchmark runs once as a module fixture and
is shared by criteria 6, 8, and 10. Oracles here are written from scratch
in plain Python and share no code with the library.
"""

import json
import math
import os
import time
import warnings
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from shiftbench.bench import (
    BenchmarkConfig,
    export_csv,
    export_figures,
    render_report,
    run_benchmark,
)
from shiftbench.features import FeatureConfig
from shiftbench.metrics import (
    brier,
    ece,
    predictive_entropy,
    selective_prediction_curve,
    shift_detection_accuracy,
)
from shiftbench.nnet import Architecture, grad_check, init_params
from shiftbench.rng import substream
from shiftbench.shifts import (
    CLIP_FRACTION_BY_DEGREE,
    DROP_STRIDE_BY_DEGREE,
    MASK_FRACTION_BY_DEGREE,
    SNR_DB_BY_DEGREE,
    clip_amplitude,
    drop_samples,
    make_babble_bank,
    mask_segments,
    mix_background,
    mix_gaussian,
)
from shiftbench.signals import Signal, SynthTaskSpec
from shiftbench.uq import (
    fit_temperature,
    predict_bayesian,
    predict_ensemble,
    predict_mcdropout,
    predict_vanilla,
)


def _report(num: int, text: str, ok: bool) -> None:
    print(f"[A{num}] {text}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="module")
def full_run():
    """The default benchmark: 5 methods x 5 kinds x 6 degrees, seed 7."""
    cfg = BenchmarkConfig()
    t0 = time.perf_counter()
    result = run_benchmark(cfg)
    elapsed = time.perf_counter() - t0
    return cfg, result, elapsed


# --------------------------------------------------------------------------
# Criterion 1: metric implementations match brute-force oracles.
# --------------------------------------------------------------------------


def _oracle_entropy(row):
    return -sum(p * math.log(p) for p in row if p > 0.0)


def _oracle_argmax(row):
    best = 0
    for k in range(1, len(row)):
        if row[k] > row[best]:
            best = k
    return best


def _oracle_brier(probs, labels):
    n = len(labels)
    return sum((1.0 - probs[i][labels[i]]) ** 2 for i in range(n)) / n


def _oracle_ece(probs, labels, num_buckets):
    n = len(labels)
    conf = [max(row) for row in probs]
    correct = [
        1.0 if _oracle_argmax(row) == y else 0.0 for row, y in zip(probs, labels)
    ]
    order = sorted(range(n), key=lambda i: conf[i])  # stable sort
    base, extra = divmod(n, num_buckets)
    total = 0.0
    start = 0
    for b in range(num_buckets):
        size = base + (1 if b < extra else 0)
        idx = order[start : start + size]
        start += size
        if not idx:
            continue
        acc = sum(correct[i] for i in idx) / size
        avg_conf = sum(conf[i] for i in idx) / size
        total += size / n * abs(acc - avg_conf)
    return total


def _oracle_selective(probs, labels, tau):
    h = [_oracle_entropy(row) for row in probs]
    keep = [i for i in range(len(labels)) if h[i] <= tau]
    if not keep:
        return 0.0, None
    acc = sum(
        1.0 for i in keep if _oracle_argmax(probs[i]) == labels[i]
    ) / len(keep)
    return len(keep) / len(labels), acc


def _oracle_detection(probs_orig, probs_shifted, tau):
    h_o = [_oracle_entropy(row) for row in probs_orig]
    h_s = [_oracle_entropy(row) for row in probs_shifted]
    correct = sum(1 for h in h_o if h <= tau) + sum(1 for h in h_s if h > tau)
    return correct / (len(h_o) + len(h_s))


def _random_instance(rng):
    k = int(rng.integers(2, 6))
    buckets = int(rng.integers(1, 11))
    n = int(rng.integers(buckets, 101))
    probs = rng.uniform(0.01, 1.0, size=(n, k))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, size=n)
    return probs, labels, buckets, k


def test_criterion_1_metric_oracles():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        probs, labels, buckets, k = _random_instance(rng)
        rows = probs.tolist()
        ys = labels.tolist()

        worst = max(worst, abs(brier(probs, labels) - _oracle_brier(rows, ys)))
        got_ece, _ = ece(probs, labels, buckets)
        worst = max(worst, abs(got_ece - _oracle_ece(rows, ys, buckets)))

        taus = [0.0, 0.25 * math.log(k), 0.7 * math.log(k), math.log(k)]
        for pt, tau in zip(selective_prediction_curve(probs, labels, taus), taus):
            frac, acc = _oracle_selective(rows, ys, tau)
            worst = max(worst, abs(pt.retained_fraction - frac))
            if acc is None:
                assert pt.accuracy is None
            else:
                worst = max(worst, abs(pt.accuracy - acc))

        shifted = rng.uniform(0.01, 1.0, size=probs.shape)
        shifted /= shifted.sum(axis=1, keepdims=True)
        for tau in taus:
            got = shift_detection_accuracy(probs, shifted, tau)
            worst = max(worst, abs(got - _oracle_detection(rows, shifted.tolist(), tau)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10.0
    _report(
        1,
        f"metric oracles on 200 instances, max abs err {worst:.3e}, {elapsed:.2f}s",
        ok,
    )
    assert worst <= 1e-12
    assert elapsed < 10.0


# --------------------------------------------------------------------------
# Criterion 2: entropy anchors and bounds.
# --------------------------------------------------------------------------


def test_criterion_2_entropy_bounds():
    uniform_err = abs(
        float(predictive_entropy(np.full((1, 3), 1.0 / 3.0))[0]) - math.log(3.0)
    )
    onehot = float(predictive_entropy(np.array([[0.0, 1.0, 0.0]]))[0])
    rng = np.random.default_rng(102)
    worst_violation = 0.0
    total = 0
    for k in (2, 3, 5, 8):
        p = rng.uniform(0.0, 1.0, size=(25000, k)) ** 2
        p /= p.sum(axis=1, keepdims=True)
        h = predictive_entropy(p)
        total += len(h)
        worst_violation = max(
            worst_violation,
            float(max(0.0, -h.min())),
            float(max(0.0, h.max() - math.log(k))),
        )
    ok = uniform_err <= 1e-12 and onehot == 0.0 and worst_violation <= 1e-12
    _report(
        2,
        f"entropy: |H(uniform,3)-ln3|={uniform_err:.2e}, H(one-hot)={onehot}, "
        f"worst bound violation {worst_violation:.2e} on {total} distributions",
        ok,
    )
    assert uniform_err <= 1e-12
    assert onehot == 0.0
    assert worst_violation <= 1e-12


# --------------------------------------------------------------------------
# Criterion 3: SNR round trip at every degree.
# --------------------------------------------------------------------------


def _measured_snr_db(clean: Signal, noisy: Signal) -> float:
    noise = noisy.samples - clean.samples
    p_s = float(np.mean(np.square(clean.samples)))
    p_n = float(np.mean(np.square(noise)))
    return 10.0 * math.log10(p_s / p_n)


def test_criterion_3_snr_round_trip():
    rng = np.random.default_rng(103)
    bank = make_babble_bank(4, 4096, 250.0, seed=9)
    t0 = time.perf_counter()
    worst_gauss = 0.0
    worst_bg = 0.0
    for i in range(100):
        s = Signal(rng.normal(size=4096), 250.0)
        for degree in range(1, 6):
            target = SNR_DB_BY_DEGREE[degree]
            noisy, _ = mix_gaussian(s, target, substream(103, "g", i, degree))
            worst_gauss = max(worst_gauss, abs(_measured_snr_db(s, noisy) - target))
            mixed, _ = mix_background(s, target, bank, substream(103, "b", i, degree))
            worst_bg = max(worst_bg, abs(_measured_snr_db(s, mixed) - target))
    elapsed = time.perf_counter() - t0
    ok = worst_gauss <= 0.1 and worst_bg <= 1e-9 and elapsed < 10.0
    _report(
        3,
        f"SNR round trip: gaussian max |err| {worst_gauss:.2e} dB (tol 0.1), "
        f"background {worst_bg:.2e} dB (tol 1e-9), {elapsed:.2f}s",
        ok,
    )
    assert worst_gauss <= 0.1
    assert worst_bg <= 1e-9
    assert elapsed < 10.0


# --------------------------------------------------------------------------
# Criterion 4: perturbation contracts as property tests.
# --------------------------------------------------------------------------


def test_criterion_4_perturbation_contracts():
    rng = np.random.default_rng(104)
    clip_fracs = [f for f in CLIP_FRACTION_BY_DEGREE if f < 1.0]
    mask_fracs = [f for f in MASK_FRACTION_BY_DEGREE if f > 0.0]
    strides = [int(v) for v in DROP_STRIDE_BY_DEGREE if math.isfinite(v)]
    bad_clip = bad_mask = bad_drop = 0

    for trial in range(1000):
        x = rng.normal(size=int(rng.integers(64, 512)))
        x /= np.max(np.abs(x))
        s = Signal(x, 250.0)
        f = clip_fracs[trial % len(clip_fracs)]
        once = clip_amplitude(s, f)
        twice = clip_amplitude(once, f)
        if not np.array_equal(once.samples, twice.samples):
            bad_clip += 1
        elif not np.all(np.abs(once.samples) <= np.abs(s.samples)):
            bad_clip += 1

    for trial in range(1000):
        l = int(rng.integers(64, 512))
        vals = rng.uniform(0.1, 1.0, size=l) * rng.choice([-1.0, 1.0], size=l)
        f = mask_fracs[trial % len(mask_fracs)]
        out = mask_segments(Signal(vals, 250.0), f, n_blocks=5, seed=trial)
        if int(np.sum(out.samples == 0.0)) != int(math.floor(f * l + 0.5)):
            bad_mask += 1

    for trial in range(1000):
        l = int(rng.integers(64, 2048))
        stride = strides[trial % len(strides)]
        out = drop_samples(Signal(rng.normal(size=l), 250.0), stride)
        if len(out.samples) != l - l // stride:
            bad_drop += 1

    ok = bad_clip == 0 and bad_mask == 0 and bad_drop == 0
    _report(
        4,
        "perturbation contracts on 1000 signals each: "
        f"clip violations {bad_clip}, mask {bad_mask}, drop {bad_drop}",
        ok,
    )
    assert bad_clip == 0
    assert bad_mask == 0
    assert bad_drop == 0


# --------------------------------------------------------------------------
# Criterion 5: gradient checks against central finite differences.
# --------------------------------------------------------------------------


def test_criterion_5_gradient_checks():
    rng = np.random.default_rng(105)
    worst = 0.0
    for seed in (0, 1, 2):
        arch = Architecture(input_dim=8, num_classes=3, hidden=(10,), dropout=0.0)
        params = init_params(arch, seed=seed)
        x = rng.normal(size=(16, 8))
        y = rng.integers(0, 3, size=16)
        worst = max(worst, grad_check(params, (x, y), n_checks=120, seed=seed))

        v_arch = Architecture(
            input_dim=6, num_classes=3, hidden=(8,), dropout=0.0, variational=True
        )
        v_params = init_params(v_arch, seed=seed)
        xv = rng.normal(size=(12, 6))
        yv = rng.integers(0, 3, size=12)
        worst = max(worst, grad_check(v_params, (xv, yv), n_checks=120, seed=seed))
    ok = worst < 1e-4
    _report(5, f"gradient checks: max relative error {worst:.3e} (tol 1e-4)", ok)
    assert worst < 1e-4


# --------------------------------------------------------------------------
# Criterion 6: temperature scaling keeps accuracy and never hurts NLL.
# --------------------------------------------------------------------------


def test_criterion_6_scaling_invariance(full_run):
    cfg, result, _ = full_run
    by_key = {(r.method, r.shift_kind, r.degree): r for r in result.reports}
    mismatches = 0
    for kind in cfg.shift_kinds:
        for degree in cfg.degrees:
            if by_key[("vanilla", kind, degree)].accuracy != by_key[
                ("scaling", kind, degree)
            ].accuracy:
                mismatches += 1

    rng = np.random.default_rng(106)
    nll_regressions = 0
    for seed in range(20):
        arch = Architecture(input_dim=5, num_classes=3, hidden=(6,), dropout=0.0)
        params = init_params(arch, seed=seed)
        x = rng.normal(size=(30, 5))
        y = rng.integers(0, 3, size=30)
        fit = fit_temperature(params, (x, y))
        if fit.nll_after > fit.nll_before + 1e-12:
            nll_regressions += 1
    ok = mismatches == 0 and nll_regressions == 0
    _report(
        6,
        f"scaling: accuracy mismatches vs vanilla {mismatches}/30 cells, "
        f"NLL regressions {nll_regressions}/20 fits",
        ok,
    )
    assert mismatches == 0
    assert nll_regressions == 0


# --------------------------------------------------------------------------
# Criterion 7: aggregation identities.
# --------------------------------------------------------------------------


def test_criterion_7_aggregation_identities():
    rng = np.random.default_rng(107)
    x = rng.normal(size=(40, 6))

    arch = Architecture(input_dim=6, num_classes=3, hidden=(8,), dropout=0.5)
    net = init_params(arch, seed=1)
    pred = predict_mcdropout(net, x, num_passes=8, seed=3)
    mc_err = float(np.max(np.abs(pred.probs - pred.per_pass.mean(axis=1))))

    members = [
        init_params(
            Architecture(input_dim=6, num_classes=3, hidden=(8,), dropout=0.0), seed=s
        )
        for s in range(5)
    ]
    e_pred = predict_ensemble(members, x)
    member_mean = np.mean(
        [predict_vanilla(m, x).probs for m in members], axis=0
    )
    ens_err = float(np.max(np.abs(e_pred.probs - member_mean)))

    v_arch = Architecture(
        input_dim=6, num_classes=3, hidden=(8,), dropout=0.0, variational=True
    )
    v_net = init_params(v_arch, seed=2)
    b_pred = predict_bayesian(v_net, x, num_passes=8, seed=4)
    bayes_err = float(np.max(np.abs(b_pred.probs - b_pred.per_pass.mean(axis=1))))

    plain = Architecture(input_dim=6, num_classes=3, hidden=(8,), dropout=0.0)
    p_net = init_params(plain, seed=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zero_drop = predict_mcdropout(p_net, x, num_passes=8, seed=6)
    exact = bool(np.array_equal(zero_drop.probs, predict_vanilla(p_net, x).probs))

    ok = mc_err <= 1e-12 and ens_err <= 1e-12 and bayes_err <= 1e-12 and exact
    _report(
        7,
        f"aggregation: mcdropout mean err {mc_err:.2e}, ensemble {ens_err:.2e}, "
        f"bayesian {bayes_err:.2e} (tol 1e-12); p=0 equals vanilla exactly: {exact}",
        ok,
    )
    assert mc_err <= 1e-12
    assert ens_err <= 1e-12
    assert bayes_err <= 1e-12
    assert exact


# --------------------------------------------------------------------------
# Criterion 8: degradation trend on the default benchmark, within budget.
# --------------------------------------------------------------------------


def test_criterion_8_trend_reproduction(full_run):
    cfg, result, elapsed = full_run
    by_key = {(r.method, r.shift_kind, r.degree): r for r in result.reports}
    parts = []
    ok = elapsed < 300.0
    for method in cfg.methods:
        r0 = by_key[(method, "gaussian_noise", 0)]
        r5 = by_key[(method, "gaussian_noise", 5)]
        drop = r0.accuracy - r5.accuracy
        good = drop >= 0.10 and r5.brier > r0.brier and r0.accuracy >= 0.85
        ok = ok and good
        parts.append(
            f"{method} acc {r0.accuracy:.3f}->{r5.accuracy:.3f} "
            f"brier {r0.brier:.3f}->{r5.brier:.3f}"
        )
    _report(8, f"trend ({elapsed:.1f}s of 300s budget): " + "; ".join(parts), ok)
    assert elapsed < 300.0
    for method in cfg.methods:
        r0 = by_key[(method, "gaussian_noise", 0)]
        r5 = by_key[(method, "gaussian_noise", 5)]
        assert r0.accuracy >= 0.85, method
        assert r0.accuracy - r5.accuracy >= 0.10, method
        assert r5.brier > r0.brier, method


# --------------------------------------------------------------------------
# Criterion 9: byte-identical outputs across worker counts.
# --------------------------------------------------------------------------


def test_criterion_9_thread_determinism(tmp_path, monkeypatch):
    cfg = BenchmarkConfig(
        seed=13,
        synthetic=SynthTaskSpec(signal_length=256, seed=1),
        n_train=120,
        n_val=60,
        n_test=60,
        features=FeatureConfig(frame_length=64, hop_length=32, n_bins=16),
        hidden=(24,),
        epochs=40,
        ensemble_epochs=20,
        variational_epochs=50,
        num_passes=4,
        degrees=(0, 2, 5),
    )
    outs = {}
    for threads in ("1", "8"):
        monkeypatch.setenv("SHIFTBENCH_THREADS", threads)
        result = run_benchmark(cfg)
        outs[threads] = export_csv(result, tmp_path / f"threads{threads}")
    same_metrics = (
        (outs["1"] / "metrics.csv").read_bytes()
        == (outs["8"] / "metrics.csv").read_bytes()
    )
    same_prov = (
        (outs["1"] / "provenance.json").read_bytes()
        == (outs["8"] / "provenance.json").read_bytes()
    )
    ok = same_metrics and same_prov
    _report(
        9,
        "determinism: metrics.csv byte-identical across SHIFTBENCH_THREADS"
        f"=1 and =8: {same_metrics}; provenance.json: {same_prov}",
        ok,
    )
    assert same_metrics
    assert same_prov


# --------------------------------------------------------------------------
# Criterion 10: every figure family is emitted and well-formed.
# --------------------------------------------------------------------------


def test_criterion_10_figure_completeness(full_run, tmp_path):
    cfg, result, _ = full_run
    csv_dir = export_csv(result, tmp_path / "csv")
    fig_paths = export_figures(result, tmp_path / "figs")

    names = {p.name for p in fig_paths}
    missing = []
    for kind in cfg.shift_kinds:
        for metric in ("accuracy", "brier", "ece", "mean_uncertainty"):
            want = f"trend_{kind}_{metric}.svg"
            if want not in names:
                missing.append(want)
    for want in ("selective_prediction.svg", "shift_detection.svg"):
        if want not in names:
            missing.append(want)
    for method in cfg.methods:
        want = f"entropy_hist_{method}.svg"
        if want not in names:
            missing.append(want)

    malformed = []
    for p in fig_paths:
        try:
            root = ET.parse(p).getroot()
            if not root.tag.endswith("svg"):
                malformed.append(p.name)
        except ET.ParseError:
            malformed.append(p.name)

    reliability_lines = (csv_dir / "reliability.csv").read_text().strip().splitlines()
    expected_rel = 1 + len(result.reports) * cfg.ece_buckets

    rebuilt = render_report(csv_dir, tmp_path / "rebuilt")
    rebuild_matches = sorted(p.name for p in rebuilt) == sorted(names)

    ok = (
        not missing
        and not malformed
        and len(reliability_lines) == expected_rel
        and rebuild_matches
    )
    _report(
        10,
        f"figures: {len(fig_paths)} SVGs, missing {missing or 'none'}, "
        f"malformed {malformed or 'none'}, reliability rows "
        f"{len(reliability_lines) - 1}, report rebuild matches: {rebuild_matches}",
        ok,
    )
    assert not missing
    assert not malformed
    assert len(reliability_lines) == expected_rel
    assert rebuild_matches
