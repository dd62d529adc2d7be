"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. The end-to-end criteria train real models and take
minutes; every criterion asserts its own wall-clock budget.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import check_gradients
from sslr.cli import main as cli_main
from sslr.data import (
    JointLayout,
    SignSample,
    generate_synthetic,
    mask_labels,
    split_train_val_test,
)
from sslr.model import ModelConfig, SignClassifier, sample_to_input
from sslr.preprocess import (
    AugmentationConfig,
    NormalizationConfig,
    apply_homography,
    augment,
    derive_rng,
    normalize_sample,
    rotate_arm,
    rotate_in_plane,
    squeeze_homography,
)
from sslr.pseudolabel import SslConfig, run_fsl_baseline, run_ssl, select_from_probabilities
from sslr.tensor import (
    Tensor,
    add,
    backward,
    cross_entropy,
    first_rows,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    sub,
    swapaxes,
    tsum,
)
from sslr.training import TrainConfig, evaluate, fit

DATA_DIR = Path(__file__).parent / "data"

# Frozen acceptance dataset: 5 classes, 30 samples/class, 40 frames.
# class_separation/noise_sigma/placement_sigma were calibrated so that a
# raw-coordinate 1-NN classifier scores ~95% on held-out samples (the
# placement jitter is what normalization exists to remove).
SYNTH = dict(num_classes=5, samples_per_class=30, frames_per_sample=40,
             noise_sigma=0.11, class_separation=0.12, placement_sigma=0.065)

ACCEPT_MODEL = ModelConfig(num_classes=5, hidden_dim=36, num_heads=3,
                           num_encoder_blocks=2, num_decoder_blocks=2,
                           max_sequence_len=64)
ACCEPT_LR = 0.01


def _report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {name}: PASS{suffix}", flush=True)


def accept_train_config(seed: int, epochs: int = 100, patience: int = 0) -> TrainConfig:
    # patience=0 disables early stopping: plain SGD can sit on a plateau for
    # tens of epochs before the loss surface opens up, and stopping early
    # strands it there. Best-validation restoration still applies.
    return TrainConfig(epochs=epochs, learning_rate=ACCEPT_LR, seed=seed,
                       patience=patience,
                       augmentation=AugmentationConfig.disabled(seed),
                       normalization=NormalizationConfig(enabled=True))


def synth_split(seed: int):
    ds = generate_synthetic(seed=seed, **SYNTH)
    return split_train_val_test(ds.samples, seed=seed)


class TestNumericCoreSuite:
    """Criterion: every differentiable op passes finite-difference checks
    (< 1e-4 per op, < 1e-3 full tiny model), 5 seeds each, within 60 s."""

    def test_numeric_core(self):
        started = time.monotonic()
        worst = 0.0
        for seed in range(5):
            r = np.random.default_rng(seed)
            w = {name: r.normal(size=shape) for name, shape in [
                ("m34", (3, 4)), ("m43", (4, 3)), ("v4", (4,)), ("v3", (3,)),
                ("m33", (3, 3)), ("m24", (2, 4)),
            ]}
            relu_input = r.normal(size=(3, 4))
            relu_input[np.abs(relu_input) < 1e-2] = 0.5  # keep off the kink
            target = int(r.integers(4))
            cases = [
                (lambda ts: tsum(mul(matmul(ts[0], ts[1]), Tensor(w["m33"]))),
                 [r.normal(size=(3, 4)), r.normal(size=(4, 3))]),
                (lambda ts: tsum(mul(matmul(ts[0], ts[1]), matmul(ts[0], ts[1]))),
                 [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 3))]),
                (lambda ts: tsum(mul(softmax(ts[0]), Tensor(w["v4"]))),
                 [r.normal(size=4)]),
                (lambda ts: tsum(mul(softmax(ts[0], axis=-1), Tensor(w["m34"]))),
                 [r.normal(size=(3, 4))]),
                (lambda ts: cross_entropy(ts[0], target),
                 [r.normal(size=4)]),
                (lambda ts: tsum(mul(layer_norm(ts[0], ts[1], ts[2]), Tensor(w["m34"]))),
                 [r.normal(size=(3, 4)), r.normal(size=4), r.normal(size=4)]),
                (lambda ts: tsum(mul(add(ts[0], ts[1]), Tensor(w["m34"]))),
                 [r.normal(size=(3, 4)), r.normal(size=4)]),
                (lambda ts: tsum(mul(sub(ts[0], ts[1]), ts[1])),
                 [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
                (lambda ts: tsum(mul(relu(ts[0]), ts[0])),
                 [relu_input]),
                (lambda ts: tsum(mul(reshape(swapaxes(reshape(
                    first_rows(ts[0], 2), (2, 2, 2)), 0, 1), (2, 4)),
                    Tensor(w["m24"]))),
                 [r.normal(size=(3, 4))]),
            ]
            for build, arrays in cases:
                worst = max(worst, check_gradients(build, arrays, tol=1e-4))

        # Full tiny model: loss gradient for 20 random parameters < 1e-3.
        tiny = ModelConfig(num_classes=3, hidden_dim=18, num_heads=3,
                           num_encoder_blocks=1, num_decoder_blocks=1,
                           max_sequence_len=8)
        model = SignClassifier(tiny, seed=0)
        r = np.random.default_rng(1)
        x = sample_to_input(SignSample(
            id="g", frames=r.uniform(size=(4, 54, 2))))
        loss = cross_entropy(model.forward_logits(x), 1)
        backward(loss)
        analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                    for k, p in model.params.items()}
        for p in model.parameters():
            p.grad = None
        names = sorted(model.params)
        eps = 1e-5
        model_worst = 0.0
        for _ in range(20):
            name = names[int(r.integers(len(names)))]
            data = model.params[name].data
            idx = int(r.integers(data.size))
            orig = data.flat[idx]
            data.flat[idx] = orig + eps
            up = cross_entropy(model.forward_logits(x), 1).item()
            data.flat[idx] = orig - eps
            down = cross_entropy(model.forward_logits(x), 1).item()
            data.flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            ana = analytic[name].flat[idx]
            denom = max(abs(ana), abs(numeric), 1.0)
            model_worst = max(model_worst, abs(ana - numeric) / denom)
        assert model_worst < 1e-3

        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"numeric suite took {elapsed:.1f}s"
        _report("numeric-core",
                f"per-op worst rel err {worst:.1e}, model worst {model_worst:.1e},"
                f" {elapsed:.1f}s")


class TestGeometrySuite:
    """Criterion: normalization similarity invariance, rotation isometry,
    shear corner mapping, augmentation determinism — all < 1e-9, within 30 s."""

    def test_geometry(self):
        started = time.monotonic()
        layout = JointLayout()
        norm_cfg = NormalizationConfig()
        worst_sim = worst_iso = worst_corner = 0.0
        for seed in range(5):
            r = np.random.default_rng(seed)
            frames = r.uniform(0.2, 0.8, size=(6, 54, 2))
            s = SignSample(id=f"g{seed}", frames=frames)

            base = normalize_sample(s, norm_cfg).frames
            k = float(r.uniform(0.5, 3.0))
            t = r.uniform(-50.0, 50.0, size=2)
            moved = normalize_sample(s.with_frames(k * frames + t), norm_cfg).frames
            worst_sim = max(worst_sim, float(np.max(np.abs(base - moved))))

            rotated = rotate_in_plane(s, 13.0, np.random.default_rng(seed), layout)
            for f_in, f_out in zip(s.frames, rotated.frames):
                d_in = np.linalg.norm(f_in[:, None] - f_in[None], axis=-1)
                d_out = np.linalg.norm(f_out[:, None] - f_out[None], axis=-1)
                worst_iso = max(worst_iso, float(np.max(np.abs(d_in - d_out))))
            armed = rotate_arm(s, 4.0, np.random.default_rng(seed), "left", layout)
            chain = list(layout.left_arm)
            for f_in, f_out in zip(s.frames, armed.frames):
                d_in = np.linalg.norm(f_in[chain] - f_in[layout.left_shoulder], axis=-1)
                d_out = np.linalg.norm(f_out[chain] - f_out[layout.left_shoulder], axis=-1)
                worst_iso = max(worst_iso, float(np.max(np.abs(d_in - d_out))))

            insets = r.uniform(0.0, 0.15, size=4)
            h = squeeze_homography(insets, axis=0)
            corners = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
            lt, rt, lb, rb = insets
            target = np.array([(lt, 0.0), (1.0 - rt, 0.0), (lb, 1.0), (1.0 - rb, 1.0)])
            worst_corner = max(worst_corner,
                               float(np.max(np.abs(apply_homography(corners, h) - target))))

            cfg = AugmentationConfig(seed=seed)
            a = augment(s, cfg, derive_rng(cfg.seed, 7, s.id)).frames
            b = augment(s, cfg, derive_rng(cfg.seed, 7, s.id)).frames
            assert np.array_equal(a, b), "augmentation must be deterministic"

        assert worst_sim < 1e-9
        assert worst_iso < 1e-9
        assert worst_corner < 1e-9
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"geometry suite took {elapsed:.1f}s"
        _report("geometry",
                f"sim {worst_sim:.1e}, iso {worst_iso:.1e},"
                f" corners {worst_corner:.1e}, {elapsed:.1f}s")


class TestAlgorithmSuite:
    """Criterion: selection equals the brute-force rule on >= 1000 random
    matrices; loop set algebra and termination hold; within 60 s."""

    @staticmethod
    def _brute_force(probs, ids):
        n, c = probs.shape
        free_samples = list(range(n))
        free_classes = list(range(c))
        out = []
        while free_samples and free_classes:
            best = None
            for i in free_samples:
                for k in free_classes:
                    key = (-probs[i, k], k, ids[i])
                    if best is None or key < best[0]:
                        best = (key, i, k)
            _, i, k = best
            out.append((ids[i], k, float(probs[i, k])))
            free_samples.remove(i)
            free_classes.remove(k)
        return out

    def test_algorithm(self):
        started = time.monotonic()
        rng = np.random.default_rng(2024)
        for case in range(1000):
            n = int(rng.integers(1, 24))
            c = int(rng.integers(1, 7))
            probs = rng.dirichlet(np.ones(c) + rng.uniform(0, 2), size=n)
            if case % 5 == 0:  # force ties sometimes
                probs = np.round(probs, 2)
                probs = probs / probs.sum(axis=1, keepdims=True)
            ids = [f"u{i:03d}" for i in range(n)]
            got = [(s.sample_id, s.label, s.confidence)
                   for s in select_from_probabilities(probs, ids)]
            expected = self._brute_force(probs, ids)
            assert got == expected, f"case {case}: {got} != {expected}"
            assert 1 <= len(got) <= min(n, c)

        # Loop invariants on randomized small runs.
        small = ModelConfig(num_classes=4, hidden_dim=8, num_heads=2,
                            num_encoder_blocks=1, num_decoder_blocks=1,
                            max_sequence_len=8)
        for seed in range(3):
            ds = generate_synthetic(4, 6, 4, noise_sigma=0.05, seed=seed)
            train, val, test = split_train_val_test(ds.samples, seed=seed)
            labeled, unlabeled, audit = mask_labels(train, 0.3, seed=seed)
            pool = len(labeled) + len(unlabeled)
            cfg = SslConfig(
                train=TrainConfig(epochs=2, learning_rate=0.01, seed=seed, patience=0,
                                  augmentation=AugmentationConfig.disabled(),
                                  normalization=NormalizationConfig(enabled=False)),
                inner_epochs=1)
            model = SignClassifier(small, seed=seed)
            report = run_ssl(model, labeled, unlabeled, val, test, cfg,
                             audit_labels=audit)
            prev_l, prev_u = len(labeled), len(unlabeled)
            for rec in report.cycles:
                assert rec.labeled_size + rec.unlabeled_size == pool
                assert rec.labeled_size > prev_l and rec.unlabeled_size < prev_u
                prev_l, prev_u = rec.labeled_size, rec.unlabeled_size
            assert len(report.cycles) <= len(unlabeled)
            assert report.cycles[-1].unlabeled_size == 0

        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"algorithm suite took {elapsed:.1f}s"
        _report("algorithm-loop", f"1000 matrices + {3} loop runs, {elapsed:.1f}s")


@pytest.fixture(scope="module")
def fsl_results():
    """Timed supervised runs at 100% labels for the end-to-end criterion."""
    started = time.monotonic()
    results = {}
    for seed in range(5):
        train, val, test = synth_split(seed)
        model = SignClassifier(ACCEPT_MODEL, seed=seed)
        cfg = accept_train_config(seed)
        fit(model, train, val, cfg)
        results[seed] = evaluate(model, test, cfg.normalization).accuracy
    return results, time.monotonic() - started


class TestEndToEndLearning:
    """Criterion: supervised training at 100% labels reaches >= 90% test
    accuracy within 100 epochs on >= 4/5 seeds; under 10 minutes."""

    def test_end_to_end(self, fsl_results):
        accuracy_by_seed, train_seconds = fsl_results
        started = time.monotonic()
        # Dataset difficulty pin: raw-coordinate 1-NN sits near 95%.
        nn_scores = []
        for seed in range(5):
            train, _, test = synth_split(seed)
            X = np.stack([s.frames.reshape(-1) for s in train])
            y = np.array([s.label for s in train])
            hits = [y[int(np.argmin(np.sum((X - q.frames.reshape(-1)) ** 2, axis=1)))]
                    == q.label for q in test]
            nn_scores.append(float(np.mean(hits)))
        nn_mean = float(np.mean(nn_scores))
        assert 0.90 <= nn_mean <= 0.99, f"1-NN separability drifted: {nn_mean:.3f}"

        accuracies = list(accuracy_by_seed.values())
        passing = sum(acc >= 0.90 for acc in accuracies)
        elapsed = train_seconds + (time.monotonic() - started)
        assert passing >= 4, f"only {passing}/5 seeds reached 90%: {accuracies}"
        assert elapsed < 600.0, f"end-to-end check took {elapsed:.1f}s"
        _report("end-to-end-learning",
                f"test accuracies {['%.2f' % a for a in accuracies]},"
                f" 1-NN {nn_mean:.2f}, {elapsed:.1f}s")


class TestSslVersusFsl:
    """Criterion: at 10% and 25% labels, median-over-5-seeds self-training
    test accuracy >= supervised baseline - 2 points; first-cycle pseudo-label
    audit accuracy >= chance + 10 points; under 30 minutes."""

    def test_paired_ssl(self):
        started = time.monotonic()
        margins = {}
        first_cycle_audits = []
        for fraction in (0.10, 0.25):
            fsl_accs, ssl_accs = [], []
            for seed in range(5):
                train, val, test = synth_split(seed)
                labeled, unlabeled, audit = mask_labels(train, fraction, seed=seed)

                fsl_model = SignClassifier(ACCEPT_MODEL, seed=seed)
                _, fsl_eval = run_fsl_baseline(fsl_model, labeled, val, test,
                                               accept_train_config(seed))
                fsl_accs.append(fsl_eval.accuracy)

                ssl_model = SignClassifier(ACCEPT_MODEL, seed=seed)
                ssl_cfg = SslConfig(train=accept_train_config(seed),
                                    inner_epochs=15, seed=seed)
                report = run_ssl(ssl_model, labeled, unlabeled, val, test,
                                 ssl_cfg, audit_labels=audit)
                ssl_accs.append(report.final_test.accuracy)
                if fraction == 0.10:
                    first_cycle_audits.append(report.cycles[0].audit_accuracy)
            margins[fraction] = (float(np.median(ssl_accs)), float(np.median(fsl_accs)),
                                 ssl_accs, fsl_accs)

        for fraction, (ssl_med, fsl_med, ssl_accs, fsl_accs) in margins.items():
            assert ssl_med >= fsl_med - 0.02, (
                f"at {fraction:.0%} labels: SSL median {ssl_med:.3f} fell more than"
                f" 2 points below FSL median {fsl_med:.3f}"
                f" (ssl={ssl_accs}, fsl={fsl_accs})")

        audit_median = float(np.median(first_cycle_audits))
        chance = 1.0 / SYNTH["num_classes"]
        assert audit_median >= chance + 0.10, (
            f"first-cycle audit accuracy {audit_median:.3f} not better than"
            f" chance+10pts ({chance + 0.10:.3f}); audits={first_cycle_audits}")

        elapsed = time.monotonic() - started
        assert elapsed < 1800.0, f"paired check took {elapsed:.1f}s"
        _report("ssl-vs-fsl",
                f"10%: ssl {margins[0.10][0]:.2f} vs fsl {margins[0.10][1]:.2f};"
                f" 25%: ssl {margins[0.25][0]:.2f} vs fsl {margins[0.25][1]:.2f};"
                f" audit {audit_median:.2f}, {elapsed:.0f}s")


TINY_CLI_CFG = """
[model]
hidden_dim = 12
num_heads = 2
encoder_blocks = 1
decoder_blocks = 1
max_sequence_len = 16

[train]
epochs = 5
learning_rate = 0.01
patience = 0

[ssl]
inner_epochs = 2

[normalize]
enabled = false

[augment]
noise = false
rotation = false
arm_rotation = false
shear = false
"""


class TestHarnessFidelity:
    """Criterion: matrix output matches the golden table layouts; the
    ablation emits the five toggle rows; checkpoints reload bit-equal."""

    def test_harness(self, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        assert cli_main(["synth", "--classes", "100", "--per-class", "3",
                         "--frames", "3", "--sigma", "0.02", "--seed", "5",
                         "--out", str(data)]) == 0
        cfg = tmp_path / "run.cfg"
        cfg.write_text(TINY_CLI_CFG + f"\n[data]\npath = {data}\n")

        matrix_dir = tmp_path / "matrix"
        assert cli_main(["matrix", "--config", str(cfg), "--out", str(matrix_dir),
                         "--set", "matrix.seeds=0", "--set", "train.epochs=1"]) == 0
        golden_classes = list(csv.reader(
            (DATA_DIR / "golden_matrix_by_classes.csv").open()))
        golden_fraction = list(csv.reader(
            (DATA_DIR / "golden_matrix_by_fraction.csv").open()))
        got_classes = list(csv.reader((matrix_dir / "matrix_by_classes.csv").open()))
        got_fraction = list(csv.reader((matrix_dir / "matrix_by_fraction.csv").open()))
        assert got_classes[0] == golden_classes[0], "by-classes header layout"
        assert [r[0] for r in got_classes] == [r[0] for r in golden_classes], \
            "by-classes row labels"
        assert got_fraction[0] == golden_fraction[0], "by-fraction header layout"
        assert [r[0] for r in got_fraction] == [r[0] for r in golden_fraction], \
            "by-fraction row labels"
        # The golden annotations carry the reference 100-class values with
        # the 75% column holding the (48.1, 48.4) supervised/self-trained pair.
        assert golden_fraction[1][-1] == "48.1" and golden_fraction[2][-1] == "48.4"
        assert golden_classes[-1][-2:] == ["48.1", "48.4"]

        small_data = tmp_path / "small.jsonl"
        assert cli_main(["synth", "--classes", "3", "--per-class", "6",
                         "--frames", "4", "--sigma", "0.03", "--seed", "2",
                         "--out", str(small_data)]) == 0
        small_cfg = tmp_path / "small.cfg"
        small_cfg.write_text(TINY_CLI_CFG + f"\n[data]\npath = {small_data}\n")
        ablate_dir = tmp_path / "ablate"
        assert cli_main(["ablate", "--config", str(small_cfg),
                         "--out", str(ablate_dir)]) == 0
        rows = list(csv.DictReader((ablate_dir / "ablation.csv").open()))
        pattern = [(r["shear"], r["rotation"], r["gaussian_noise"], r["normalization"])
                   for r in rows]
        assert pattern == [
            ("False", "False", "False", "False"),
            ("False", "False", "False", "True"),
            ("False", "False", "True", "True"),
            ("False", "True", "True", "True"),
            ("True", "True", "True", "True"),
        ]

        train_dir = tmp_path / "train"
        assert cli_main(["train", "--config", str(small_cfg),
                         "--out", str(train_dir), "--seed", "1"]) == 0
        report = json.loads((train_dir / "report.json").read_text())
        capsys.readouterr()
        assert cli_main(["eval", "--config", str(small_cfg),
                         "--checkpoint", str(train_dir / "checkpoint.npz"),
                         "--split", "test", "--seed", "1"]) == 0
        evaluated = json.loads(capsys.readouterr().out.strip())
        assert evaluated["accuracy"] == report["test_accuracy"], \
            "checkpoint reload must give bit-equal evaluation"

        _report("harness-fidelity")


class TestDeterminism:
    """Criterion: re-running any command with the same config and seed
    yields bit-equal accuracy values."""

    def test_determinism(self, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        assert cli_main(["synth", "--classes", "3", "--per-class", "6",
                         "--frames", "4", "--sigma", "0.03", "--seed", "9",
                         "--out", str(data)]) == 0
        cfg = tmp_path / "run.cfg"
        cfg.write_text(TINY_CLI_CFG + f"\n[data]\npath = {data}\n")

        values = {}
        for command in ("train", "ssl"):
            accs = []
            for attempt in ("a", "b"):
                out_dir = tmp_path / f"{command}_{attempt}"
                args = [command, "--config", str(cfg), "--out", str(out_dir),
                        "--seed", "7", "--set", "train.epochs=15"]
                if command == "ssl":
                    args += ["--set", "split.fraction=0.5"]
                assert cli_main(args) == 0
                report = json.loads((out_dir / "report.json").read_text())
                accs.append((report["test_accuracy"], report["validation_accuracy"]))
            assert accs[0] == accs[1], f"{command} re-run differed: {accs}"
            values[command] = accs[0]
        assert any(acc not in (None, 1.0 / 3.0) for pair in values.values()
                   for acc in pair), "determinism check should run off chance level"
        capsys.readouterr()
        _report("determinism", f"train/ssl accuracy pairs stable: {values}")
