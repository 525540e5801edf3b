"""Acceptance suite: one test per criterion, each at its stated tolerance and budget.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary (see conftest.py), then asserts.
"""
import json
import math
import time

import numpy as np
import pytest

from clar import pipeline
from clar.autodiff import Tensor
from clar.autodiff.gradcheck import gradcheck
from clar.classifier import LinearProbe, cross_entropy
from clar.config import from_dict
from clar.contrastive import EmbeddingBatch, Encoder, total_loss, weighted_ntxent
from clar.data import ActivitySpec, SubjectHabit, render_sample, static_sequence
from clar.diffusion import (
    EpsNet,
    GuidanceConfig,
    conditioned_generate,
    ddpm_train_loss,
    forward_sample,
    guidance_weights,
    sample_from_source,
    scaled_schedule,
)
from clar.signal import dtw_cross, haar_high, haar_low, resample
from clar.weighting import default_window, response_map, sample_weight, select_templates
from conftest import ACCEPTANCE_RESULTS
from oracles import brute_dtw_batch, integer_grid, ntxent_reference

# Reference experiment for criteria 8 and 9. The corpus shape is fixed by the
# criteria; the remaining values are the desk-scale choices documented in the
# README.
REFERENCE_RUN = {
    "seed": 0,
    "data": {"num_classes": 5, "per_class": 50, "length": 128, "test_fraction": 0.2, "labeled_fraction": 0.25},
    "guidance": {"lambda_l": 0.01},
    "ablate": {"seeds": [0, 1, 2]},
}


def record(num: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((num, title, bool(ok), detail))
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}: {title}: {detail}")


# ------------------------------------------------------------- criterion 1


def test_criterion_01_dtw_exhaustive_grid():
    """Every pair of integer sequences in [-3, 3] with lengths 1..6, against brute-force enumeration.

    The grid is walked smallest length pairs first until it is exhausted or
    the 60 s budget runs out; an unfinished grid counts as a failure.
    """
    budget = 60.0
    lengths = range(1, 7)
    grids = {n: integer_grid(n) for n in lengths}
    total = sum(len(g) for g in grids.values()) ** 2
    checked = mismatches = 0
    start = time.perf_counter()
    finished = True
    for n, m in sorted(((n, m) for n in lengths for m in lengths), key=lambda p: (p[0] * p[1], p)):
        A, B = grids[n], grids[m]
        rows = max(1, 200_000 // len(B))
        for a0 in range(0, len(A), rows):
            if time.perf_counter() - start > budget:
                finished = False
                break
            chunk = A[a0 : a0 + rows]
            got = dtw_cross(chunk, B).ravel()
            ia, ib = np.meshgrid(np.arange(len(chunk)), np.arange(len(B)), indexing="ij")
            want = brute_dtw_batch(chunk[ia.ravel()], B[ib.ravel()])
            mismatches += int(np.count_nonzero(got != want))
            checked += got.size
        if not finished:
            break
    elapsed = time.perf_counter() - start
    ok = finished and mismatches == 0 and elapsed < budget
    record(
        1,
        "DTW equals brute force on the full grid",
        ok,
        f"{checked:,} of {total:,} pairs checked ({checked / total:.2e}), {mismatches} mismatches, {elapsed:.1f}s",
    )
    assert mismatches == 0
    assert finished, "exhaustive grid not completed within the 60 s budget"


# ------------------------------------------------------------- criterion 2


def test_criterion_02_dwt_reconstruction():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(size=int(rng.integers(2, 257)))
        worst = max(worst, float(np.max(np.abs(haar_high(x) + haar_low(x) - x))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    record(2, "high + low reconstructs the input", ok, f"max error {worst:.2e} over 1000 series, {elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------- criterion 3


def test_criterion_03_forward_moments():
    s = scaled_schedule(100)
    rng = np.random.default_rng(3)
    z0 = np.array([1.0, -0.5, 0.25, 2.0])
    n = 10_000
    start = time.perf_counter()
    worst_mean, worst_var = 0.0, 0.0
    for t in (1, 50, 100):
        draws = forward_sample(np.broadcast_to(z0, (n, len(z0))), t, rng.standard_normal((n, len(z0))), s)
        ab = s.alpha_bars[t - 1]
        se = math.sqrt((1 - ab) / n)
        worst_mean = max(worst_mean, float(np.max(np.abs(draws.mean(0) - math.sqrt(ab) * z0)) / se))
        worst_var = max(worst_var, float(np.max(np.abs(draws.var(0) / (1 - ab) - 1))))
    elapsed = time.perf_counter() - start
    ok = worst_mean < 3 and worst_var < 0.05 and elapsed < 30
    record(3, "forward moments at t = 1, 50, 100", ok, f"mean within {worst_mean:.2f} SE, variance within {worst_var:.2%}, {elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------- criterion 4


def test_criterion_04_gradcheck():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    s = scaled_schedule(100)
    net = EpsNet(16, rng, hidden=12, emb_dim=8)
    z0 = rng.normal(size=(4, 16))
    eps_err = max(gradcheck(lambda: ddpm_train_loss(net, z0, s, np.random.default_rng(0)), net.parameters()).values())

    enc = Encoder(32, rng, d=8, proj=6)
    x1, x2 = Tensor(rng.normal(size=(8, 32))), Tensor(rng.normal(size=(8, 32)))
    w1, w2 = rng.uniform(0.2, 2.0, size=(2, 4))
    loss = lambda: total_loss(EmbeddingBatch(enc(x1), w1), EmbeddingBatch(enc(x2), w2), 0.5)
    ntx_err = max(gradcheck(loss, enc.parameters()).values())

    probe = LinearProbe(8, 5, rng)
    feats, labels = Tensor(rng.normal(size=(10, 8))), rng.integers(0, 5, size=10)
    probe_err = max(gradcheck(lambda: cross_entropy(probe(feats), labels), probe.parameters()).values())
    elapsed = time.perf_counter() - start
    worst = max(eps_err, ntx_err, probe_err)
    ok = worst < 1e-4 and elapsed < 60
    record(
        4,
        "finite-difference gradients",
        ok,
        f"relative error eps-net {eps_err:.1e}, NT-Xent {ntx_err:.1e}, probe {probe_err:.1e}, {elapsed:.1f}s",
    )
    assert ok


# ------------------------------------------------------------- criterion 5


def test_criterion_05_unit_weights_reduce_to_ntxent():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        z = rng.normal(size=(16, 16))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        got = float(weighted_ntxent(EmbeddingBatch(Tensor(z), np.ones(8)), 0.1).data)
        worst = max(worst, abs(got - ntxent_reference(z, 0.1)))
    ok = worst <= 1e-12
    record(5, "unit weights give plain NT-Xent", ok, f"max abs difference {worst:.1e} over 100 batches (M = 8, d = 16)")
    assert ok


# ------------------------------------------------------------- criterion 6


def test_criterion_06_guidance_schedule():
    problems = []
    for T in (100, 1000):
        cfg = GuidanceConfig(lambda_h=5 / T, lambda_l=5 / T, n_h=0.7, n_l=0.9)
        ws = np.array([guidance_weights(t, cfg, T) for t in range(1, T + 1)])
        if ws[0, 0] != cfg.n_h:
            problems.append(f"T={T}: high weight at the last step is {ws[0, 0]}")
        if ws[-1, 1] != cfg.n_l:
            problems.append(f"T={T}: low weight at the first step is {ws[-1, 1]}")
        if not (np.all(np.diff(ws[:, 0]) < 0) and np.all(np.diff(ws[:, 1]) > 0)):
            problems.append(f"T={T}: not strictly monotone")
    s = scaled_schedule(100)
    net = EpsNet(32, np.random.default_rng(6), hidden=16)
    net.steps_trained = 1
    rng = np.random.default_rng(60)
    src, ref = rng.normal(size=32), rng.normal(size=32)
    off = GuidanceConfig(lambda_h=0.05, lambda_l=0.05, n_h=0.0, n_l=0.0)
    a = conditioned_generate(src, ref, net, s, off, np.random.default_rng(61))
    b = sample_from_source(src, net, s, np.random.default_rng(61))
    if a.tobytes() != b.tobytes():
        problems.append("zero guidance differs from unconditional sampling")
    ok = not problems
    record(6, "guidance endpoints, monotonicity, zero-guidance identity", ok, "; ".join(problems) or "T = 100 and 1000, bitwise identity holds")
    assert ok


# ------------------------------------------------------------- criterion 7


def test_criterion_07_pause_crops_weigh_less():
    L, H = 128, default_window(128)
    spec = ActivitySpec(0, (0.08, 0.08), (1.0, 1.0), (0.0, 0.0), pause_fraction=0.3)

    def centred_crop(x, centre, n=40):
        start = min(L - n, max(0, int(round(centre - n / 2))))
        return resample(x[start : start + n], L)

    means = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        templates = select_templates([static_sequence(L, 0.05, rng) for _ in range(20)], 5, H, rng)
        pause, stroke = [], []
        for _ in range(20):
            x, layout = render_sample(spec, SubjectHabit(), L, 0.05, rng)
            pause.append(sample_weight(response_map(centred_crop(x, sum(layout["pause"]) / 2), templates, H), 0.5))
            stroke.append(sample_weight(response_map(centred_crop(x, sum(layout["strokes"][0]) / 2), templates, H), 0.5))
        means.append((float(np.mean(pause)), float(np.mean(stroke))))
    ok = all(p < s for p, s in means)
    record(7, "pause-centred crops weigh less", ok, ", ".join(f"seed {i}: {p:.3f} < {s:.3f}" for i, (p, s) in enumerate(means)))
    assert ok


# ---------------------------------------------------- criteria 8, 9 and 10


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    """Corpus and trained noise predictor for the reference experiment."""
    out = tmp_path_factory.mktemp("reference")
    cfg = from_dict({**REFERENCE_RUN, "out_dir": str(out)}).validate()
    start = time.perf_counter()
    corpus = pipeline.gen_data(cfg)
    net, history = pipeline.train_ddpm_stage(cfg, corpus)
    return cfg, corpus, net, history, time.perf_counter() - start


def test_criterion_08_augmentation_quality(reference):
    cfg, corpus, net, history, train_time = reference
    start = time.perf_counter()
    summary = pipeline.augment_stage(cfg, corpus, net, 50)
    elapsed = train_time + time.perf_counter() - start
    h = np.asarray(history)
    tail = len(h) // 10
    plateau = abs(h[-tail:].mean() - h[-2 * tail : -tail].mean()) / h[-tail:].mean()
    cross = summary["mean_dtw_cross_class"]
    ok = summary["mean_dtw_aug_src"] < cross and summary["mean_dtw_aug_ref"] < cross and elapsed < 600
    record(
        8,
        "augmentations closer than the cross-class mean",
        ok,
        f"DTW to source {summary['mean_dtw_aug_src']:.2f}, to reference {summary['mean_dtw_aug_ref']:.2f}, "
        f"cross-class {cross:.2f}; last-decile loss change {plateau:.1%}; {elapsed:.0f}s",
    )
    assert ok


def test_criterion_09_ablation_orderings(reference):
    cfg, corpus, net, _, train_time = reference
    start = time.perf_counter()
    results = pipeline.ablate(cfg, corpus, net)
    elapsed = train_time + time.perf_counter() - start
    acc = {arm: mean for arm, (mean, _) in pipeline.arm_means(results).items()}
    checks = {
        "Full >= Aug": acc["Full"] >= acc["Aug"],
        "Aug >= Base": acc["Aug"] >= acc["Base"],
        "Full >= Weight": acc["Full"] >= acc["Weight"],
        "Weight >= Base": acc["Weight"] >= acc["Base"],
        "Full - Base >= 3 points": acc["Full"] - acc["Base"] >= 0.03 - 1e-12,
        "Full >= 70%": acc["Full"] >= 0.70,
        "runtime < 20 min": elapsed < 1200,
    }
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    arms = ", ".join(f"{arm} {100 * a:.2f}" for arm, a in acc.items())
    record(9, "ablation orderings", ok, f"seed-mean accuracy {arms}; {elapsed:.0f}s; " + (f"failed: {'; '.join(failed)}" if failed else "all orderings hold"))
    assert ok, failed


SMALL_RUN = {
    "data": {"num_classes": 3, "per_class": 12, "length": 64, "static_pool": 6},
    "ddpm": {"T": 50, "steps": 200, "batch": 16},
    "pretrain": {"epochs": 3, "batch": 8, "bank_size": 2},
    "probe": {"epochs": 60},
    "augment": {"n": 4},
    "ablate": {"seeds": [0, 1]},
}


def test_criterion_10_reproducible_outputs(tmp_path, monkeypatch):
    from clar.cli import main

    monkeypatch.delenv("CLAR_SEED", raising=False)
    config = tmp_path / "small.json"
    config.write_text(json.dumps(SMALL_RUN))
    commands = ["gen-data", "train-ddpm", "augment", "pretrain", "finetune", "evaluate", "ablate"]
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        for cmd in commands:
            assert main([cmd, "--config", str(config), "--out-dir", str(out), "--seed", "3"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    differing = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    ok = not differing and set(runs[0]) == set(runs[1])
    record(
        10,
        "byte-identical reruns",
        ok,
        f"{len(runs[0])} output files compared (metrics.json, ablation.csv and all others)"
        + (f"; differing: {', '.join(differing)}" if differing else ""),
    )
    assert ok
