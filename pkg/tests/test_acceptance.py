"""Acceptance gate: one test per release criterion, each printing a verdict line.

Criteria 1-9 and 11 are self-contained. Criteria 10 and 12 drive the CLI on a
bundled regime-switching dataset end to end; they share one module-scoped
pipeline run and dominate the suite's runtime.
"""

import json
import time

import numpy as np
import pytest

from tempo_contrast import autodiff as ad
from tempo_contrast import models
from tempo_contrast.autodiff import Tensor
from tempo_contrast.edf import parse_edf, write_edf
from tempo_contrast.evaluation import balanced_accuracy
from tempo_contrast.features import (
    BAND_EDGES_HZ,
    approximate_entropy,
    band_log_power,
    compute_feature_vector,
    hjorth_complexity,
    hurst_exponent,
)
from tempo_contrast.models import FeatureExtractorConfig
from tempo_contrast.optim import Adam
from tempo_contrast.sampling import (
    SamplerConfig,
    label_rp,
    label_ts,
    sample_rp_dataset,
    sample_ts_dataset,
)
from tempo_contrast.training import TrainConfig, fit_autoencoder
from tempo_contrast.windows import Recording, Window, WindowDataset, extract_windows, merge_datasets


def verdict(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {number:>2}] {status}: {detail}")
    assert ok, detail


# --------------------------------------------------------------------------
# criterion 1: pair labeling matches a literal brute-force oracle


def test_criterion_01_label_oracle():
    started = time.perf_counter()
    times = np.arange(200) * 30.0
    checked = 0
    for tau_pos, tau_neg in [(60.0, 60.0), (240.0, 900.0), (7200.0, 7200.0)]:
        cfg = SamplerConfig(tau_pos_s=tau_pos, tau_neg_s=tau_neg)
        for t in times:
            for t2 in times:
                if t == t2:
                    continue
                gap = abs(t - t2)
                expected = 1 if gap <= tau_pos else (-1 if gap > tau_neg else None)
                assert label_rp(t, t2, cfg) == expected
                checked += 1
    elapsed = time.perf_counter() - started
    verdict(1, elapsed < 1.0, f"{checked} pairs agree with the oracle in {elapsed:.2f}s")


# --------------------------------------------------------------------------
# criterion 2: sampler balance and label re-validation


def grid_dataset(n_windows):
    windows = [Window(data=np.zeros((1, 1)), start_sample=i, recording_ref="r0")
               for i in range(n_windows)]
    return WindowDataset(windows=windows, window_samples=1, rate_hz=1.0 / 30.0,
                         channel_names=["CH0"])


def test_criterion_02_sampler_balance():
    started = time.perf_counter()
    ds = grid_dataset(2000)
    cfg = SamplerConfig(tau_pos_s=240.0, tau_neg_s=900.0, n_anchors_per_recording=50,
                        n_pos_per_anchor=3, n_neg_per_anchor=3, seed=20)
    times = ds.start_times_s()

    rp = sample_rp_dataset(ds, cfg)
    assert rp.skipped_anchors == 0
    labels = rp.labels()
    assert (labels == 1).sum() == (labels == -1).sum() == 150
    for ex in rp.examples:
        assert label_rp(times[ex.anchor_idx], times[ex.other_idx], cfg) == ex.y

    ts = sample_ts_dataset(ds, cfg)
    assert ts.skipped_anchors == 0
    labels = ts.labels()
    assert (labels == 1).sum() == (labels == -1).sum() == 150
    for ex in ts.examples:
        assert label_ts(times[ex.first_idx], times[ex.middle_idx],
                        times[ex.last_idx]) == ex.y
    elapsed = time.perf_counter() - started
    verdict(2, elapsed < 1.0,
            f"RP and TS exactly balanced, all labels re-validate ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# criterion 3: reverse-mode gradients vs central differences on all graphs


GRAD_CFG = FeatureExtractorConfig(channels=2, window_samples=64, conv_kernel=5,
                                  pool_size=4, embed_dim=8, dropout_rate=0.5)


def composed_loss(task, bundle, inputs, rng_seed=123):
    drop_rng = np.random.default_rng(rng_seed)  # identical masks per evaluation
    cfg = bundle.config
    x1, x2, x3, y, targets = inputs
    h1 = models.feature_extractor_forward(Tensor(x1), cfg, bundle.extractor, "train",
                                          drop_rng)
    if task == models.TASK_RP:
        h2 = models.feature_extractor_forward(Tensor(x2), cfg, bundle.extractor,
                                              "train", drop_rng)
        scores = models.pretext_score(models.contrast_rp(h1, h2), bundle.head["w"],
                                      bundle.head["w0"])
        return ad.binary_logistic_loss(scores, y)
    if task == models.TASK_TS:
        h2 = models.feature_extractor_forward(Tensor(x2), cfg, bundle.extractor,
                                              "train", drop_rng)
        h3 = models.feature_extractor_forward(Tensor(x3), cfg, bundle.extractor,
                                              "train", drop_rng)
        scores = models.pretext_score(models.contrast_ts(h1, h2, h3), bundle.head["w"],
                                      bundle.head["w0"])
        return ad.binary_logistic_loss(scores, y)
    if task == models.TASK_AE:
        recon = models.decode_autoencoder(h1, cfg, bundle.head)
        return ad.mse_loss(recon, x1)
    logits = models.supervised_logits(h1, bundle.head)
    return ad.weighted_cross_entropy(logits, targets, np.ones(5))


def test_criterion_03_gradient_fidelity():
    started = time.perf_counter()
    rng = np.random.default_rng(42)
    inputs = (
        rng.standard_normal((2, 2, 64)),
        rng.standard_normal((2, 2, 64)),
        rng.standard_normal((2, 2, 64)),
        np.array([1.0, -1.0]),
        np.array([0, 3]),
    )
    worst = {}
    for task in (models.TASK_RP, models.TASK_TS, models.TASK_AE,
                 models.TASK_SUPERVISED):
        bundle = models.init_bundle(task, GRAD_CFG, seed=1, dtype=np.float64)
        for p in bundle.head.values():
            if not p.data.any():
                p.data[...] = rng.standard_normal(p.shape) * 0.1

        loss = composed_loss(task, bundle, inputs)
        ad.backward(loss)
        grads = {name: p.grad.copy() for name, p in bundle.named_tensors().items()}

        step = 1e-5
        task_worst = 0.0
        for name, p in bundle.named_tensors().items():
            fd = np.zeros_like(p.data)
            flat, out = p.data.ravel(), fd.ravel()
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                plus = composed_loss(task, bundle, inputs).item()
                flat[i] = original - step
                minus = composed_loss(task, bundle, inputs).item()
                flat[i] = original
                out[i] = (plus - minus) / (2 * step)
            denom = max(np.linalg.norm(grads[name]) + np.linalg.norm(fd), 1e-6)
            task_worst = max(task_worst, np.linalg.norm(grads[name] - fd) / denom)
        worst[task] = task_worst
        assert task_worst < 1e-6, f"{task}: relative error {task_worst:.2e}"
    elapsed = time.perf_counter() - started
    detail = ", ".join(f"{t}={e:.1e}" for t, e in worst.items())
    verdict(3, elapsed < 10.0, f"finite-difference agreement ({detail}) in {elapsed:.1f}s")


# --------------------------------------------------------------------------
# criterion 4: siamese weight sharing equals the duplicated-parameter oracle


def test_criterion_04_siamese_sharing():
    started = time.perf_counter()
    rng = np.random.default_rng(6)
    bundle = models.init_bundle(models.TASK_RP, GRAD_CFG, seed=2, dtype=np.float64)
    bundle.head["w"].data[...] = rng.standard_normal(8)
    x1 = rng.standard_normal((4, 2, 64))
    x2 = rng.standard_normal((4, 2, 64))
    y = np.array([1.0, -1.0, 1.0, -1.0])

    h1 = models.feature_extractor_forward(Tensor(x1), GRAD_CFG, bundle.extractor, "eval")
    h2 = models.feature_extractor_forward(Tensor(x2), GRAD_CFG, bundle.extractor, "eval")
    scores = models.pretext_score(models.contrast_rp(h1, h2), bundle.head["w"],
                                  bundle.head["w0"])
    ad.backward(ad.binary_logistic_loss(scores, y))
    shared = {name: p.grad.copy() for name, p in bundle.extractor.items()}

    copy_a = {n: Tensor(p.data.copy(), requires_grad=True)
              for n, p in bundle.extractor.items()}
    copy_b = {n: Tensor(p.data.copy(), requires_grad=True)
              for n, p in bundle.extractor.items()}
    h1 = models.feature_extractor_forward(Tensor(x1), GRAD_CFG, copy_a, "eval")
    h2 = models.feature_extractor_forward(Tensor(x2), GRAD_CFG, copy_b, "eval")
    scores = models.pretext_score(models.contrast_rp(h1, h2), bundle.head["w"],
                                  bundle.head["w0"])
    ad.backward(ad.binary_logistic_loss(scores, y))

    worst = 0.0
    for name in shared:
        gap = np.max(np.abs(shared[name] - (copy_a[name].grad + copy_b[name].grad)))
        worst = max(worst, gap)
    elapsed = time.perf_counter() - started
    verdict(4, worst < 1e-10 and elapsed < 5.0,
            f"shared-vs-duplicated gradient gap {worst:.1e} in {elapsed:.1f}s")


# --------------------------------------------------------------------------
# criterion 5: optimizer update identities


def test_criterion_05_adam():
    started = time.perf_counter()
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    Adam([p]).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])

    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([0.5])
    Adam([p], lr=0.001).step()
    assert abs(abs(p.data[0]) - 0.001) < 1e-6

    # The 200-step descent target needs steps of ~0.01 to cover the distance
    # from 1.0; Adam's per-step movement is capped near the learning rate.
    theta = Tensor(np.array([1.0]), requires_grad=True)
    optimizer = Adam([theta], lr=0.01)
    for _ in range(200):
        ad.backward(ad.mul(theta, theta))
        optimizer.step()
    elapsed = time.perf_counter() - started
    verdict(5, abs(theta.data[0]) < 0.5 and elapsed < 1.0,
            f"fixed point exact, first step 0.001, |theta|={abs(theta.data[0]):.3f} "
            f"after 200 steps ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# criterion 6: logistic loss reference values and stability


def test_criterion_06_logistic_loss_values():
    started = time.perf_counter()
    at_zero = ad.binary_logistic_loss(Tensor(np.array([0.0])), np.array([1.0])).item()
    at_two = ad.binary_logistic_loss(Tensor(np.array([2.0])), np.array([1.0])).item()
    extreme = ad.binary_logistic_loss(Tensor(np.array([1000.0])), np.array([-1.0])).item()
    ok = (abs(at_zero - 0.693147) < 1e-6 and abs(at_two - 0.126928) < 1e-6
          and np.isfinite(extreme) and abs(extreme - 1000.0) < 1e-6)
    elapsed = time.perf_counter() - started
    verdict(6, ok and elapsed < 1.0,
            f"loss(0)={at_zero:.6f}, loss(2)={at_two:.6f}, loss(-1000 margin)="
            f"{extreme:.1f} ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# criterion 7: balanced accuracy equals the confusion-matrix oracle


def test_criterion_07_balanced_accuracy_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 50))
        labels = rng.integers(k, size=n).tolist()
        predictions = rng.integers(k, size=n).tolist()
        classes = sorted(set(labels))
        recalls = []
        for c in classes:
            total = sum(1 for l in labels if l == c)
            hits = sum(1 for p, l in zip(predictions, labels) if l == c and p == c)
            recalls.append(hits / total)
        assert balanced_accuracy(predictions, labels) == pytest.approx(
            float(np.mean(recalls)), abs=1e-12)

    two_class = balanced_accuracy(["a"] * 4 + ["b", "b", "a", "a"],
                                  ["a"] * 4 + ["b"] * 4)
    elapsed = time.perf_counter() - started
    verdict(7, two_class == 0.75 and elapsed < 1.0,
            f"1000 random cases exact, (1.0, 0.5) recalls -> {two_class} "
            f"({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# criterion 8: handcrafted feature bank reference behaviors


def test_criterion_08_feature_bank():
    started = time.perf_counter()
    rng = np.random.default_rng(8)

    for channels in (1, 2, 3):
        window = Window(data=rng.standard_normal((512, channels)), start_sample=0,
                        recording_ref="r")
        vec = compute_feature_vector(window, rate_hz=100.0)
        assert len(vec.values) == 34 * channels

    t = np.arange(3000) / 100.0
    sine10 = np.sin(2 * np.pi * 10.0 * t)
    powers = [band_log_power(sine10, lo, hi, 100.0)
              for lo, hi in zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:])]
    band_ok = int(np.argmax(powers)) == 2

    hurst_values = [hurst_exponent(np.random.default_rng(seed).standard_normal(3000))
                    for seed in range(20)]
    hurst_mean = float(np.mean(hurst_values))

    apen_const = approximate_entropy(np.ones(500))
    hjorth_sine = hjorth_complexity(np.sin(2 * np.pi * 5.0 * np.arange(3000) / 100.0))

    ok = (band_ok and 0.4 <= hurst_mean <= 0.6 and apen_const == 0.0
          and abs(hjorth_sine - 1.0) <= 0.02)
    elapsed = time.perf_counter() - started
    verdict(8, ok and elapsed < 30.0,
            f"34*C lengths, 10 Hz -> 8-13 Hz band, Hurst(noise)={hurst_mean:.3f}, "
            f"ApEn(const)={apen_const}, Hjorth(sine)={hjorth_sine:.4f} ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# criterion 9: EDF round trip and scaling


def test_criterion_09_edf_round_trip(tmp_path):
    started = time.perf_counter()
    from tests.test_edf import build_edf_bytes

    rec = parse_edf(build_edf_bytes(digital=(0, 0, 0, 0)))
    scaling_ok = abs(rec.signals[0][0] - 0.003815) < 1e-6

    rng = np.random.default_rng(9)
    fixture = Recording(signals=rng.standard_normal((2, 300)) * 40.0, rate_hz=100.0,
                        channel_names=["Fpz", "Pz"], subject_id="fix", age_years=52.0)
    first, second = tmp_path / "a.edf", tmp_path / "b.edf"
    write_edf(fixture, first, record_duration_s=1.0, physical_range=(-128.0, 128.0))
    write_edf(parse_edf(first.read_bytes()), second, record_duration_s=1.0,
              physical_range=(-128.0, 128.0))
    round_trip_ok = first.read_bytes() == second.read_bytes()
    elapsed = time.perf_counter() - started
    verdict(9, scaling_ok and round_trip_ok and elapsed < 1.0,
            f"scaling formula {rec.signals[0][0]:.6f} uV, write-parse-write "
            f"bit-identical ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# criterion 11: reconstruction favors low frequencies

# Non-integer cycles per window, so the carrier phase differs window to window
# and the decoder cannot memorize a single waveform.
LOW_HZ, HIGH_HZ = 1.07, 19.63


def sine_windows(freq_hz, subject, seed, n_windows=90, rate=50.0, window_s=4.0):
    rng = np.random.default_rng(seed)
    samples = int(n_windows * window_s * rate)
    t = np.arange(samples) / rate
    wave = np.sin(2 * np.pi * freq_hz * t + rng.uniform(0, 2 * np.pi))
    wave = wave + 0.05 * rng.standard_normal(samples)
    rec = Recording(signals=wave[None, :], rate_hz=rate, channel_names=["CH0"],
                    subject_id=subject)
    return extract_windows(rec, window_s)


def test_criterion_11_autoencoder_frequency_bias():
    started = time.perf_counter()
    train = merge_datasets([sine_windows(LOW_HZ, "low-train", 1),
                            sine_windows(HIGH_HZ, "high-train", 2)])
    valid = merge_datasets([sine_windows(LOW_HZ, "low-valid", 3),
                            sine_windows(HIGH_HZ, "high-valid", 4)])
    low_test = sine_windows(LOW_HZ, "low-test", 5)
    high_test = sine_windows(HIGH_HZ, "high-test", 6)

    cfg = FeatureExtractorConfig(channels=1, window_samples=200, conv_kernel=9,
                                 pool_size=4, embed_dim=16, dropout_rate=0.5)
    train_cfg = TrainConfig(batch_size=64, max_epochs=150, patience_epochs=30, lr=0.005,
                            seed=0)
    bundle, _ = fit_autoencoder(train, valid, cfg, train_cfg)

    def held_out_mse(ds):
        stack = ds.stack()
        with ad.no_grad():
            emb = models.feature_extractor_forward(Tensor(stack), cfg,
                                                   bundle.extractor, "eval")
            recon = models.decode_autoencoder(emb, cfg, bundle.head)
        return float(((recon.data - stack) ** 2).mean())

    mse_low = held_out_mse(low_test)
    mse_high = held_out_mse(high_test)
    margin = (mse_high - mse_low) / mse_high
    elapsed = time.perf_counter() - started
    verdict(11, mse_low < mse_high and margin >= 0.20 and elapsed < 300.0,
            f"held-out MSE low={mse_low:.3f} vs high={mse_high:.3f} "
            f"(margin {margin:.0%}) in {elapsed:.0f}s")
