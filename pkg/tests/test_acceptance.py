"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one `[ACCEPTANCE] criterion N (<name>): PASS` line on
success (run pytest with -s to see them); a failing assertion marks the
criterion FAIL. The phantom mixed-supervision study (criteria 6 and 7)
trains six models and dominates the runtime of the suite.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from mixvox import metrics as M
from mixvox.autodiff import Tensor, no_grad, seeded_rng, softmax
from mixvox.data.exam import GradeBinning
from mixvox.data.normalize import normalize_exam
from mixvox.data.phantom import PhantomConfig, generate_dataset
from mixvox.data.bundle import save_exam
from mixvox.geometry import LESION_KIND
from mixvox.losses import (
    RegionTarget,
    exam_targets,
    loss_hist_high,
    loss_hist_strong,
    loss_seg_dice,
    region_histograms,
    total_objective,
)
from mixvox.model import ModelConfig
from mixvox.training import TrainConfig, train
from mixvox.training.sampler import batch_stratum_counts, epoch_batches, stratify
from mixvox.verify import full_objective_grad_check, loss_term_grad_checks

BINNING = GradeBinning.cs_detection()

# Desk-scale study settings: 200/40/60 exams at 32x32x16, three seeds.
STUDY_SEEDS = (1, 2, 3)
STUDY_EPOCHS = 13
STUDY_LR = 2e-3
STUDY_WIDTH = 4


def _report(number, name):
    print(f"\n[ACCEPTANCE] criterion {number} ({name}): PASS")


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    term_reports = loss_term_grad_checks(seed=7, step=1e-5, tolerance=1e-4)
    for name, report in term_reports.items():
        assert report.passed, f"{name}: max rel err {report.max_rel_error:.3e}"
    # every parameter tensor is probed: small tensors in full, conv kernels
    # through a seeded 200-entry sample so the sweep fits the time budget
    full = full_objective_grad_check(seed=202, step=1e-5, tolerance=1e-4,
                                     max_entries=200)
    elapsed = time.time() - t0
    assert full.passed, f"composed objective: max rel err {full.max_rel_error:.3e}"
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s (budget 60s)"
    _report(1, f"gradient correctness, max rel {full.max_rel_error:.1e}, {elapsed:.0f}s")


def test_criterion_2_histogram_oracle():
    rng = seeded_rng(92)
    checked = 0
    while checked < 1000:
        num_bins = int(rng.integers(2, 5))
        shape = (int(rng.integers(3, 8)), int(rng.integers(3, 8)), int(rng.integers(2, 5)))
        # voxel-wise one-hot map
        hard = rng.integers(0, num_bins, size=shape)
        grade = np.zeros((num_bins,) + shape)
        for k in range(num_bins):
            grade[k][hard == k] = 1.0
        mask = rng.uniform(size=shape) < 0.5
        if not mask.any():
            continue
        rows, _ = region_histograms(
            Tensor(grade), [RegionTarget("r", mask, LESION_KIND, 0)])
        counts = np.bincount(hard[mask], minlength=num_bins) / mask.sum()
        assert np.abs(rows[0].data - counts).max() <= 1e-6
        assert abs(rows[0].data.sum() - 1.0) <= 1e-6
        checked += 1
    _report(2, "histogram oracle, 1000 regions exact")


def test_criterion_3_loss_fixed_points():
    y = np.zeros((1, 4, 4, 2), dtype=bool)
    y[0, 1:3, 1:3, :] = True
    dice = loss_seg_dice(y, Tensor(y.astype(np.float64)))
    assert abs(float(dice.data)) <= 1e-6

    # hist-high: zero when no mass above the label, and for the top bin
    assert float(loss_hist_high([Tensor(np.array([0.8, 0.2, 0.0]))], [1]).data) <= 1e-6
    assert float(loss_hist_high([Tensor(np.array([0.1, 0.2, 0.7]))], [2]).data) == 0.0

    hs = loss_hist_strong([Tensor(np.array([0.5, 0.5]))], [0])
    assert abs(float(hs.data) - np.log(2)) <= 1e-6
    _report(3, "loss fixed points exact within 1e-6")


def test_criterion_4_batching():
    sizes = {"ISUP-0": 92, "ISUP-1": 222, "ISUP-2": 228, "ISUP-3-5": 137}
    # stratification reproduces the cohort-table counts from metadata
    grades = {}
    idx = 0
    for grade, n in ((0, 92), (1, 222), (2, 228), (5, 137)):
        for _ in range(n):
            grades[f"exam{idx}"] = grade
            idx += 1
    strata = stratify(grades)
    assert {k: len(v) for k, v in strata.items()} == sizes

    rng = seeded_rng(4)
    for _ in range(50):
        for batch in epoch_batches(strata, 6, rng):
            counts = list(batch_stratum_counts(batch, strata).values())
            assert max(counts) - min(counts) <= 1
    _report(4, "round-robin balance over 50 epochs at cohort-table sizes")


def test_criterion_5_metric_oracles():
    rng = seeded_rng(55)
    # IoU on randomized masks vs brute force
    for _ in range(400):
        a = rng.uniform(size=(5, 5, 3)) < 0.4
        b = rng.uniform(size=(5, 5, 3)) < 0.4
        inter = int(np.sum(a & b))
        union = int(np.sum(a | b))
        expected = 1.0 if union == 0 else inter / union
        assert M.iou(a, b) == pytest.approx(expected, abs=0)

    # balanced accuracy vs direct formula
    for _ in range(300):
        n = int(rng.integers(2, 40))
        t = rng.uniform(size=n) < 0.5
        p = rng.uniform(size=n) < 0.5
        if t.all() or (~t).all():
            continue
        r = M.binary_rates(t, p)
        tp = np.sum(t & p); fn = np.sum(t & ~p)
        tn = np.sum(~t & ~p); fp = np.sum(~t & p)
        assert r.balanced == pytest.approx(
            0.5 * (tp / (tp + fn) + tn / (tn + fp)), abs=1e-12)

    # gland-via-lesion-max vs brute force
    for trial in range(300):
        preds = []
        per_exam = {}
        for e in range(int(rng.integers(2, 10))):
            eid = f"x{trial}_{e}"
            for l in range(int(rng.integers(1, 4))):
                tb = int(rng.integers(0, 2))
                pb = int(rng.integers(0, 2))
                preds.append(M.RegionPrediction(
                    exam_id=eid, region_id=f"l{l}", kind=LESION_KIND, rule="mode",
                    predicted_bin=pb, histogram=np.zeros(2), truth_bin=tb))
                prev = per_exam.get(eid, (0, 0))
                per_exam[eid] = (max(prev[0], tb), max(prev[1], pb))
        truth = np.array([v[0] >= 1 for v in per_exam.values()])
        pred = np.array([v[1] >= 1 for v in per_exam.values()])
        if truth.all() or (~truth).all():
            continue
        r = M.gland_accuracy(preds, BINNING)
        brute = M.binary_rates(truth, pred)
        assert r.balanced == pytest.approx(brute.balanced, abs=1e-12)

    # the constructed confusion reproduces the reported rates
    t = [True] * 36 + [False] * 64
    p = [True] * 23 + [False] * 13 + [False] * 49 + [True] * 15
    r = M.binary_rates(t, p)
    assert 100 * r.sensitivity == pytest.approx(63.9, abs=0.1)
    assert 100 * r.specificity == pytest.approx(76.6, abs=0.1)
    assert 100 * r.balanced == pytest.approx(70.3, abs=0.1)
    _report(5, "metric oracles incl. constructed confusion 63.9/76.6/70.3")


def _study_data(seed):
    cfg = PhantomConfig()
    exams, truths = generate_dataset(cfg, 300, seed=1000 + seed, with_truth=True)
    train_set = [normalize_exam(e) for e in exams[:200]]
    val_set = [normalize_exam(e) for e in exams[200:240]]
    test_set = [normalize_exam(e) for e in exams[240:]]
    return train_set, val_set, test_set, truths[240:]


def _run_experiment(experiment, seed, data):
    train_set, val_set, test_set, test_truths = data
    mcfg = ModelConfig(base_width=STUDY_WIDTH, depth=2, num_bins=2, seed=seed)
    tcfg = TrainConfig(experiment_id=experiment, epochs=STUDY_EPOCHS,
                       learning_rate=STUDY_LR, seed=seed)
    result = train(mcfg, tcfg, train_set, val_set, binning=BINNING, normalized=True)
    net = result.restore_best()
    rule = M.RULE_MSB if experiment[0] == "1" else M.RULE_MODE
    preds = []
    minority_scores = []  # (msb_hit, mode_hit) per minority region
    with no_grad():
        for exam, truth in zip(test_set, test_truths):
            _, grade = net.forward(Tensor(exam.channels))
            preds.extend(M.predict_exam_regions(
                grade.data, exam, BINNING, rule, region_bias=net.region_bias.data))
            minority = set(truth.minority_cs_regions())
            for region in exam.regions:
                if region.region_id not in minority:
                    continue
                hist = M.region_histogram_values(grade.data, region.mask)
                scores = M.region_scores_values(hist, net.region_bias.data)
                msb_hit = M.classify_region_msb(scores) >= BINNING.cs_bin_threshold
                mode_hit = (M.classify_region_mode(grade.data, region.mask)
                            >= BINNING.cs_bin_threshold)
                minority_scores.append((msb_hit, mode_hit))
    accuracy = M.lesion_accuracy(preds, BINNING)
    return {
        "experiment": experiment,
        "seed": seed,
        "balanced": accuracy.balanced,
        "region_bias": net.region_bias.data.copy(),
        "minority_scores": minority_scores,
    }


@pytest.fixture(scope="module")
def phantom_study():
    t0 = time.time()
    runs = {}
    for seed in STUDY_SEEDS:
        data = _study_data(seed)  # one generation per seed, shared by both arms
        for experiment in ("0011", "1111"):
            runs[(experiment, seed)] = _run_experiment(experiment, seed, data)
        del data
    runs["elapsed"] = time.time() - t0
    return runs


def test_criterion_6_mixed_supervision_study(phantom_study):
    elapsed = phantom_study["elapsed"]
    acc = {exp: [phantom_study[(exp, s)]["balanced"] for s in STUDY_SEEDS]
           for exp in ("0011", "1111")}
    mean_0011 = float(np.mean(acc["0011"]))
    mean_1111 = float(np.mean(acc["1111"]))
    ordering_holds = sum(h > b for h, b in zip(acc["1111"], acc["0011"]))
    detail = (f"1111={['%.3f' % a for a in acc['1111']]} "
              f"0011={['%.3f' % a for a in acc['0011']]} "
              f"means {mean_1111:.3f} vs {mean_0011:.3f}, {elapsed:.0f}s")
    assert ordering_holds >= 2, f"ordering holds only {ordering_holds}/3: {detail}"
    assert mean_1111 >= mean_0011 + 0.05, detail
    assert mean_0011 > 0.55 and mean_1111 > 0.55, detail
    assert elapsed < 45 * 60, f"study took {elapsed:.0f}s (budget 45 min)"
    _report(6, f"mixed-supervision study, {detail}")


def test_criterion_7_msb_vs_mode_separation(phantom_study):
    detected_msb = detected_mode = total = 0
    for seed in STUDY_SEEDS:
        for msb_hit, mode_hit in phantom_study[("1111", seed)]["minority_scores"]:
            total += 1
            detected_msb += bool(msb_hit)
            detected_mode += bool(mode_hit)
    msb_rate = detected_msb / total
    mode_rate = detected_mode / total
    assert msb_rate >= 0.70, f"msb detected {msb_rate:.2%} of {total} minority regions"
    assert mode_rate <= 0.30, f"mode detected {mode_rate:.2%} of {total} minority regions"
    _report(7, f"msb {msb_rate:.0%} vs mode {mode_rate:.0%} on {total} minority regions")


def test_criterion_8_determinism(tmp_path):
    # bit-identical first 10 training-step losses
    exams = generate_dataset(PhantomConfig(), 16, seed=321)
    train_set, val_set = exams[:12], exams[12:]
    mcfg = ModelConfig(base_width=2, depth=2, num_bins=2, seed=4)
    tcfg = TrainConfig(experiment_id="1111", epochs=4, learning_rate=1e-3, seed=9)
    traces = []
    for run in range(2):
        out = tmp_path / f"det{run}"
        train(mcfg, tcfg, train_set, val_set, binning=BINNING, out_dir=out,
              max_steps=10)
        records = [json.loads(line)
                   for line in (out / "training_log.jsonl").read_text().splitlines()]
        traces.append([r["total"] for r in records if "total" in r][:10])
    assert len(traces[0]) == 10
    assert traces[0] == traces[1]

    # byte-identical phantom bundles
    for run in range(2):
        root = tmp_path / f"bundles{run}"
        for exam in generate_dataset(PhantomConfig(), 3, seed=77):
            save_exam(exam, root / exam.exam_id)
    a, b = tmp_path / "bundles0", tmp_path / "bundles1"
    files_a = sorted(p for p in a.rglob("*") if p.is_file())
    assert files_a
    for fa in files_a:
        fb = b / fa.relative_to(a)
        assert fa.read_bytes() == fb.read_bytes(), fa.name
    _report(8, "bit-identical losses and byte-identical bundles")


def test_criterion_9_gating_audit(tmp_path):
    exams = generate_dataset(PhantomConfig(), 16, seed=11)
    train_set, val_set = exams[:12], exams[12:]
    mcfg = ModelConfig(base_width=2, depth=2, num_bins=2, seed=2)
    cases = {
        "0111": ("region_classifier", ["region_bias"]),
        "1011": ("hist_strong", []),
        "1101": ("ggmap", []),
        "1110": ("seg_dice", ["risk_head."]),
        "0001": ("region_classifier", ["region_bias", "grade_head."]),
    }
    for experiment, (absent_term, frozen_prefixes) in cases.items():
        out = tmp_path / experiment
        tcfg = TrainConfig(experiment_id=experiment, epochs=2,
                           learning_rate=1e-3, seed=6)
        result = train(mcfg, tcfg, train_set, val_set, binning=BINNING,
                       out_dir=out, max_steps=5)
        records = [json.loads(line)
                   for line in (out / "training_log.jsonl").read_text().splitlines()]
        step_records = [r for r in records if "total" in r]
        assert len(step_records) == 5
        for record in step_records:
            assert absent_term not in record, (experiment, record)
        moved = set(result.optimizer.m)
        for prefix in frozen_prefixes:
            touched = [n for n in moved if n.startswith(prefix)]
            assert not touched, f"{experiment}: {prefix} got gradients {touched}"
    _report(9, "alpha-gating audit over 5 steps per masked bit")
