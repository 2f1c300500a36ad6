"""Acceptance suite: one test per acceptance criterion, each printing a pass/fail line."""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import SMALL_CONFIG, grad_error, module_grad_error
from mqa.augment import AugmentationSpec, augment_batch, augment_joint_occlusion, augment_masking, augment_pace
from mqa.cli import RUN_MANIFEST, main
from mqa.harness import (
    Labeled, TrainConfig, attach_labels, clinical_labels, evaluate_mae, run_experiment, train_scorer,
)
from mqa.mqaformer import (
    KINDS, UPPER_BODY_PARTS, EmbedderConfig, ScorerConfig, ScorerModel, build_embedder, predict_scores,
)
from mqa.numcore import ops
from mqa.scoregen import (
    ExerciseModel, ScoreGenConfig, calibrate_scoring, fit_gmm_em, fit_score_model, generate_labels,
    performance_metric, reconstruction_error, score_from_metric, separation_degree, separation_report,
    train_denoising_autoencoder,
)
from mqa.skeldata import group_by_exercise, load_dataset, resample_sequence, write_dataset
from mqa.synth import SynthConfig, generate

TINY = dict(W=4, K=8, D=30, K_part=6, hfe_attention_heads=2, mlp_hidden=(8, 8), cnn_channels=(4, 4),
            cnn_kernels=(3, 2), hfe_channels=4)


def _primitive_cases(rng):
    """(name, build, arrays) for every differentiable primitive; inputs kept clear of kinks."""
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    away = np.sign(a) * (np.abs(a) + 0.2)
    pos = np.abs(a) + 0.5
    w = rng.normal(size=(4, 5))
    x3 = rng.normal(size=(2, 6, 3))
    kern = rng.normal(size=(4, 3, 3))
    tgt = rng.uniform(0.05, 0.95, size=(3, 4))
    return [
        ("add", lambda t: ops.sum(ops.mul(ops.add(t[0], t[1]), t[0])), [a, b]),
        ("sub", lambda t: ops.sum(ops.mul(ops.sub(t[0], t[1]), t[1])), [a, b]),
        ("mul", lambda t: ops.sum(ops.mul(t[0], t[1])), [a, b]),
        ("div", lambda t: ops.sum(ops.div(t[0], t[1])), [a, pos]),
        ("square", lambda t: ops.sum(ops.square(t[0])), [a]),
        ("exp", lambda t: ops.sum(ops.exp(t[0])), [a]),
        ("log", lambda t: ops.sum(ops.log(t[0])), [pos]),
        ("abs", lambda t: ops.sum(ops.mul(ops.abs(t[0]), t[0])), [away]),
        ("relu", lambda t: ops.sum(ops.mul(ops.relu(t[0]), t[0])), [away]),
        ("sigmoid", lambda t: ops.sum(ops.sigmoid(t[0])), [a]),
        ("tanh", lambda t: ops.sum(ops.tanh(t[0])), [a]),
        ("sum", lambda t: ops.sum(ops.square(ops.sum(t[0], axis=0))), [a]),
        ("mean", lambda t: ops.sum(ops.square(ops.mean(t[0], axis=1))), [a]),
        ("reshape", lambda t: ops.sum(ops.mul(ops.reshape(t[0], (4, 3)), b.reshape(4, 3))), [a]),
        ("transpose", lambda t: ops.sum(ops.mul(ops.transpose(t[0]), b.T)), [a]),
        ("swapaxes", lambda t: ops.sum(ops.mul(ops.swapaxes(t[0], 0, 1), b.T)), [a]),
        ("getitem", lambda t: ops.sum(ops.square(t[0][1:, [0, 2, 2]])), [a]),
        ("take", lambda t: ops.sum(ops.square(ops.take(t[0], np.array([3, 0, 3]), axis=1))), [a]),
        ("concat", lambda t: ops.sum(ops.square(ops.concat([t[0], t[1]], axis=1))), [a, b]),
        ("stack", lambda t: ops.sum(ops.mul(ops.stack([t[0], t[1]], axis=0), 1.5)), [a, b]),
        ("max", lambda t: ops.sum(ops.square(ops.max(t[0], axis=1))), [a]),
        ("global_max_pool", lambda t: ops.sum(ops.square(ops.global_max_pool(t[0]))), [x3]),
        ("matmul", lambda t: ops.sum(ops.square(ops.matmul(t[0], t[1]))), [a, w]),
        ("linear", lambda t: ops.sum(ops.square(ops.linear(t[0], t[1], t[2]))), [a, w, rng.normal(size=5)]),
        ("conv1d", lambda t: ops.sum(ops.square(ops.conv1d(t[0], t[1]))), [x3, kern]),
        ("conv1d_stride", lambda t: ops.sum(ops.square(ops.conv1d(t[0], t[1], stride=2))), [x3, kern]),
        ("softmax", lambda t: ops.sum(ops.mul(ops.softmax(t[0]), b)), [a]),
        ("layer_norm", lambda t: ops.sum(ops.mul(ops.layer_norm(t[0], t[1], t[2]), b)),
         [a, rng.normal(size=4), rng.normal(size=4)]),
        ("bce", lambda t: ops.bce_loss(ops.sigmoid(t[0]), tgt), [a]),
        ("mse", lambda t: ops.mse_loss(t[0], t[1]), [a, b]),
    ]


def test_criterion_1_gradient_correctness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for name, build, arrays in _primitive_cases(rng):
        worst[name] = grad_error(build, arrays)
    for kind in KINDS:
        cfg = ScorerConfig(EmbedderConfig(kind, **TINY), canonical_T=8, heads=2, blocks=1, head_hidden=(8, 4))
        model = ScorerModel(cfg, np.random.default_rng(7))
        for pname, p in model.named_parameters():
            if pname.endswith("bias"):  # move ReLU inputs off their kinks
                p.data = p.data + rng.normal(scale=0.1, size=p.shape)
        x = rng.normal(size=(3, 8, 30))
        model.fit_normalization(x)
        assert model.cfg.N == 2
        y = np.array([0.2, 0.5, 0.9])
        worst[f"scorer[{kind}]"] = module_grad_error(model, lambda: ops.bce_loss(model(x)[0], y))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-3}
    verdict(1, not bad and elapsed < 60.0,
            f"{len(worst)} gradient checks, max rel err {max(worst.values()):.2e}, {elapsed:.1f}s"
            + (f", failing: {bad}" if bad else ""))


def test_criterion_2_augmentation_invariants(verdict):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(57, 30)) + 5.0  # no zeros in the input
    identity = (
        augment_pace(x, 1.0).tobytes() == x.tobytes()
        and augment_joint_occlusion(x, 10, 0, seed=1).tobytes() == x.tobytes()
        and augment_masking(x, 10, 0.0, seed=1).tobytes() == x.tobytes()
    )
    h, n = 10, 2
    occ = augment_joint_occlusion(x[:50], h, n, seed=5)
    zero_counts = [int(np.sum(occ[s : s + h] == 0.0)) for s in range(0, 50, h)]
    occlusion_ok = all(c == n * 3 * h for c in zero_counts)

    p, windows = 0.2, 10_000
    y = np.ones((windows * 4, 3))
    masked = augment_masking(y, 4, p, seed=11)
    freq = float(np.mean(masked.reshape(windows, 4, 3)[:, 0, 0] == 0.0))
    freq_ok = abs(freq - p) <= 0.01

    batch = rng.normal(size=(6, 40, 30))
    policy = [AugmentationSpec("pace", pace_range=(0.75, 1.33)), AugmentationSpec("occlusion"),
              AugmentationSpec("masking")]
    deterministic = (
        augment_batch(batch, policy, 9).tobytes() == augment_batch(batch, policy, 9).tobytes()
        and augment_joint_occlusion(x, 10, 2, seed=4).tobytes() == augment_joint_occlusion(x, 10, 2, seed=4).tobytes()
        and augment_masking(x, 10, 0.5, seed=4).tobytes() == augment_masking(x, 10, 0.5, seed=4).tobytes()
    )
    verdict(2, identity and occlusion_ok and freq_ok and deterministic,
            f"identity={identity}, occlusion zeros/window={sorted(set(zero_counts))} (want {n * 3 * h}), "
            f"masking freq={freq:.4f} (p={p}), deterministic={deterministic}")


def test_criterion_3_em_monotonicity_and_recovery(verdict):
    decreasing = []
    for seed in range(100):
        r = np.random.default_rng(seed)
        C = int(r.integers(1, 4))
        X = np.concatenate([r.normal(r.normal(scale=4, size=2), r.uniform(0.5, 2), size=(40, 2)) for _ in range(3)])
        trace = fit_gmm_em(X, C, seed=seed, tol=1e-12, max_iters=300).log_likelihood_trace
        if np.any(np.diff(trace) < 0):
            decreasing.append(seed)
    r = np.random.default_rng(0)
    X = np.concatenate([r.normal(-5, 1, 200), r.normal(5, 1, 200)])[:, None]
    m = fit_gmm_em(X, 2, seed=0)
    order = np.argsort(m.means[:, 0])
    mean_err = float(np.max(np.abs(m.means[order, 0] - [-5, 5])))
    weight_err = float(np.max(np.abs(m.weights - 0.5)))
    verdict(3, not decreasing and mean_err <= 0.2 and weight_err <= 0.05,
            f"non-decreasing on {100 - len(decreasing)}/100 seeds, mean error {mean_err:.3f}, "
            f"weight error {weight_err:.3f}")


def test_criterion_4_metric_and_scoring_identities(verdict):
    errs = []
    for var in (0.3, 1.0, 2.5):
        m = ExerciseModel(np.array([1.0]), np.array([[1.7]]), np.array([[[var]]]))
        errs.append(abs(performance_metric(m, [1.7]) - 0.5 * math.log(2 * math.pi * var)))
    r = np.random.default_rng(1)
    X = r.normal(3.0, 1.5, size=(200, 1))
    fitted = fit_gmm_em(X, 1)
    var = float(X.var()) + 1e-6
    errs.append(abs(performance_metric(fitted, X.mean(axis=0)) - 0.5 * math.log(2 * math.pi * var)))
    nll_ok = max(errs) <= 1e-9

    decreasing, mean_scores, mid_errs = True, [], []
    for seed in range(200):
        metrics = np.random.default_rng(seed).gamma(2.0, 3.0, size=30)
        cal = calibrate_scoring(metrics)
        # stay where adjacent scores are distinguishable in float64
        grid = cal.delta + np.linspace(-15.0, 15.0, 4001) / cal.alpha
        decreasing &= bool(np.all(np.diff(score_from_metric(cal, grid)) < 0))
        mean_scores.append(score_from_metric(cal, metrics.mean()))
        mid_errs.append(abs(score_from_metric(cal, cal.delta) - 0.5))
    calib_ok = min(mean_scores) >= 0.95
    mid_ok = max(mid_errs) <= 1e-9
    verdict(4, nll_ok and decreasing and calib_ok and mid_ok,
            f"NLL closed-form max error {max(errs):.1e}, strictly decreasing={decreasing}, "
            f"min score(mean of correct)={min(mean_scores):.6f}, max |score(delta)-0.5|={max(mid_errs):.1e}")


def test_criterion_5_separation_and_denoising(verdict):
    disjoint = []
    identical = []
    L, n = 4, 1000
    for seed in range(100):
        # mixture fitted on reference correct codes; SD measured on fresh codes
        r = np.random.default_rng(seed)
        model = fit_gmm_em(r.normal(size=(n, L)), 1, seed=seed)
        cor = performance_metric(model, r.normal(size=(n, L)))
        far = performance_metric(model, r.normal(10.0, 1.0, size=(n, L)))
        same = performance_metric(model, r.normal(size=(n, L)))
        disjoint.append(separation_degree(cor, far))
        identical.append(separation_degree(cor, same))
    seqs = generate(SynthConfig(subjects=3, correct_per_subject=6, incorrect_per_subject=4, joints=4,
                                min_frames=30, max_frames=40), seed=3)
    sg = ScoreGenConfig(canonical_T=24, latent_dim=2, hidden=(32, 16), epochs=150, lr=2e-3, components=1,
                        sd_folds=3)
    pipeline_sd = separation_report("E1", seqs, sg, seed=0).within_subject

    wins, pairs = 0, []
    cfg = SynthConfig(subjects=4, correct_per_subject=5, incorrect_per_subject=3, joints=4, min_frames=30,
                      max_frames=40)
    policy = [AugmentationSpec("masking", h=4, p=0.3)]
    for seed in range(10):
        X = np.stack([resample_sequence(s, 24).frames for s in generate(cfg, seed=seed)])
        idx = np.random.default_rng(seed).permutation(len(X))
        train, held = X[idx[:24]], X[idx[24:]]
        kw = dict(epochs=150, seed=seed, latent_dim=4, hidden=(32, 16), lr=2e-3, l1=1e-4)
        denoising, _ = train_denoising_autoencoder(train, policy, **kw)
        clean, _ = train_denoising_autoencoder(train, None, **kw)
        masked = np.stack([augment_masking(v, 4, 0.3, seed=1000 + i) for i, v in enumerate(held)])
        a, b = reconstruction_error(denoising, masked, held), reconstruction_error(clean, masked, held)
        pairs.append((a, b))
        wins += a < b
    ok = min(disjoint) > 0.9 and max(np.abs(identical)) < 0.05 and pipeline_sd > 0.9 and wins >= 9
    verdict(5, ok,
            f"disjoint SD min {min(disjoint):.3f}, identical |SD| max {max(np.abs(identical)):.4f}, "
            f"synthetic pipeline SD {pipeline_sd:.3f}, denoising wins {wins}/10")


def test_criterion_6_overfit_sanity(verdict):
    start = time.perf_counter()
    seqs = generate(SynthConfig(subjects=1, correct_per_subject=4, incorrect_per_subject=4, min_frames=30,
                                max_frames=40), seed=0)
    data = [Labeled(s, 0.9 if s.label == "correct" else 0.1) for s in seqs]
    results = {}
    for kind in KINDS:
        cfg = TrainConfig(embedder=kind, W=4, K=8, heads=2, blocks=1, canonical_T=16, lr=1e-3, augment=False,
                          K_part=6, hfe_attention_heads=2, mlp_hidden=(16, 16), cnn_channels=(8, 8),
                          cnn_kernels=(3, 2), hfe_channels=4, head_hidden=(16, 8), max_epochs=2000,
                          patience=2000, target_mae=0.05)
        model, log = train_scorer(cfg, data, validation=data, seed=0)
        results[kind] = (evaluate_mae(model, data), len(log.epochs))
    elapsed = time.perf_counter() - start
    ok = all(mae < 0.05 for mae, _ in results.values()) and elapsed < 300
    detail = ", ".join(f"{k}: MAE {m:.4f} in {e} epochs" for k, (m, e) in results.items())
    verdict(6, ok, f"{detail}; {elapsed:.1f}s total")


def test_criterion_7_attention_contracts(verdict, tmp_path):
    emb = build_embedder(EmbedderConfig("hfe_a", D=75), np.random.default_rng(0))
    _, w = emb.part_attention(np.tile(np.random.default_rng(1).normal(size=64), (5, 1)))
    uniform_err = float(np.max(np.abs(w - 0.2)))

    seqs = generate(SynthConfig(subjects=4, correct_per_subject=6, incorrect_per_subject=6, upper_body_only=True,
                                min_frames=40, max_frames=60), seed=0)
    cfg = TrainConfig(embedder="hfe_a", W=8, K=16, heads=2, blocks=1, canonical_T=32, lr=2e-3, augment=False,
                      K_part=8, hfe_attention_heads=5, hfe_channels=8, head_hidden=(16, 8), max_epochs=300,
                      patience=50)
    model, _ = train_scorer(cfg, clinical_labels(seqs), seed=0)
    _, record = predict_scores(model, seqs)
    A = record.mean_part_attention()
    upper = [i for i, name in enumerate(record.part_names) if name in UPPER_BODY_PARTS]
    mass = float(A[..., upper].sum(axis=-1).mean())

    write_dataset(seqs, tmp_path / "data")
    model.save(tmp_path / "model.ckpt")
    assert main(["attention", "--data", str(tmp_path / "data"),
                 "--model", str(tmp_path / "model.ckpt"), "--out", str(tmp_path / "out")]) == 0
    row_err, negative = 0.0, False
    files = sorted((tmp_path / "out" / "attention").glob("*.csv"))
    for f in files:
        rows = [line.split(",")[1:] for line in f.read_text().splitlines()[1:]]
        values = np.array(rows, dtype=float)
        row_err = max(row_err, float(np.max(np.abs(values.sum(axis=1) - 1.0))))
        negative |= bool(np.any(values < 0))
    ok = uniform_err <= 1e-6 and row_err <= 1e-6 and not negative and mass > 0.6 and len(files) == 7
    verdict(7, ok, f"{len(files)} exported maps, max row-sum error {row_err:.1e}, uniform-part error "
                   f"{uniform_err:.1e}, upper-body attention mass {mass:.3f}")


UIPRMD = os.environ.get("MQA_UIPRMD_DIR")


@pytest.mark.skipif(not UIPRMD, reason="UI-PRMD not present (set MQA_UIPRMD_DIR to a dataset directory)")
def test_criterion_8_uiprmd(verdict):
    seqs = load_dataset(UIPRMD)
    sg = ScoreGenConfig(policy=[AugmentationSpec("pace", pace_range=(0.75, 1.33)), AugmentationSpec("occlusion"),
                                AugmentationSpec("masking")])
    within, between, labels = [], [], {}
    models = {}
    for ex, group in group_by_exercise(seqs).items():
        model = fit_score_model(group, sg, seed=0)
        models[ex] = model
        report = separation_report(ex, group, sg, seed=0, model=model)
        within.append(report.within_subject)
        if report.between_subject is not None:
            between.append(report.between_subject)
        labels.update(generate_labels(model.ae, model.gmm, model.calibration, group))
    w, b = float(np.mean(within)), float(np.mean(between))
    e1 = [s for s in seqs if s.exercise == "E1"]
    report = run_experiment(TrainConfig(), attach_labels(e1, labels))
    ok = abs(w - 0.518) <= 0.15 and abs(b - 0.478) <= 0.15 and report.mean_mae is not None and report.mean_mae <= 0.05
    verdict(8, ok, f"within-subject SD {w:.3f} (0.518), between-subject SD {b:.3f} (0.478), "
                   f"E1 MAE {report.mean_mae} over {len(report.run_maes)} runs")


def _pipeline(root: Path, conf: Path) -> Path:
    c = ["--config", str(conf), "--seed", "5"]
    data, labels = root / "data", root / "scores" / "labels.csv"
    steps = [
        ["synth", *c, "--out", str(data)],
        ["augment", *c, "--data", str(data), "--out", str(root / "aug")],
        ["gen-scores", *c, "--data", str(data), "--out", str(root / "scores")],
        ["train", *c, "--data", str(data), "--labels", str(labels), "--out", str(root / "train")],
        ["eval", *c, "--data", str(data), "--labels", str(labels), "--model", str(root / "train/models/E1.ckpt"),
         "--out", str(root / "eval")],
        ["eval", *c, "--data", str(data), "--labels", str(labels), "--out", str(root / "experiment")],
        ["ablate", *c, "--set", "train.runs=1", "--data", str(data), "--labels", str(labels),
         "--out", str(root / "ablate")],
        ["attention", *c, "--data", str(data), "--model", str(root / "train/models/E1.ckpt"),
         "--out", str(root / "attention")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return root


def test_criterion_9_reproducibility(verdict, tmp_path):
    conf = tmp_path / "small.yaml"
    conf.write_text(yaml.safe_dump({**SMALL_CONFIG, "train": {**SMALL_CONFIG["train"], "embedder": "hfe_a"}}))
    a = _pipeline(tmp_path / "a", conf)
    b = _pipeline(tmp_path / "b", conf)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differing = []
    for rel in files:
        left, right = (a / rel).read_bytes(), (b / rel).read_bytes()
        if rel.name == RUN_MANIFEST:
            left_m, right_m = json.loads(left), json.loads(right)
            for m in (left_m, right_m):
                m.pop("volatile")
                m["inputs"] = {k: v.get("sha256") for k, v in m["inputs"].items()}
            if left_m != right_m:
                differing.append(str(rel))
        elif left != right:
            differing.append(str(rel))
    checked = [f for f in files if f.suffix in (".csv", ".json")]
    verdict(9, files == other and not differing,
            f"{len(files)} files ({len(checked)} CSV/JSON) compared across two runs, {len(differing)} differ"
            + (f": {differing[:5]}" if differing else ""))
