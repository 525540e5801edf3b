"""Pipeline stages shared by the command line and the acceptance suite.

Each stage reads its inputs from and writes its outputs to ``cfg.out``:

    corpus.csv / corpus.json        gen-data
    ddpm.ckpt, ddpm_opt.ckpt,
    ddpm.json, ddpm_loss.csv        train-ddpm
    augment.csv, augment.json       augment
    encoder.ckpt, encoder.json,
    pretrain_loss.csv               pretrain
    probe.ckpt, probe.json          finetune
    metrics.json                    evaluate
    ablation.csv                    ablate
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clar.autodiff import Adam, load_params, save_params
from clar.classifier import LinearProbe, Metrics, evaluate, fit_probe, write_metrics
from clar.config import ARMS, RunConfig, substream
from clar.contrastive import (
    DiffusionArtifacts,
    Encoder,
    PretrainConfig,
    PretrainResult,
    build_aug_bank,
    pretrain,
    pretrain_streams,
    write_loss_history,
)
from clar.data import Corpus, load_corpus, pair_candidates, save_corpus, synth_generate
from clar.diffusion import (
    EpsNet,
    GuidanceConfig,
    NoiseSchedule,
    conditioned_generate_batch,
    make_schedule,
    scaled_schedule,
    train_ddpm,
)
from clar.signal import dtw_distance, dtw_pairwise


class PipelineError(RuntimeError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require_file(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise PipelineError(f"{what} not found at {path}; run `{hint}` first")
    return path


# ------------------------------------------------------------------- data


def generate_corpus(cfg: RunConfig) -> Corpus:
    d = cfg.data
    return synth_generate(
        num_classes=d.num_classes,
        per_class=d.per_class,
        subjects=d.subjects,
        length=d.length,
        noise_std=d.noise_std,
        seed=cfg.seed,
        test_fraction=d.test_fraction,
        labeled_fraction=d.labeled_fraction,
        split_mode=d.split_mode,
        static_pool=d.static_pool,
        active_fraction=d.active_fraction,
    )


def gen_data(cfg: RunConfig) -> Corpus:
    corpus = generate_corpus(cfg)
    save_corpus(cfg.out / "corpus.csv", corpus)
    return corpus


def read_corpus(cfg: RunConfig) -> Corpus:
    return load_corpus(_require_file(cfg.out / "corpus.csv", "corpus", "clar gen-data"))


# ------------------------------------------------------------- diffusion


def schedule(cfg: RunConfig) -> NoiseSchedule:
    d = cfg.ddpm
    build = scaled_schedule if d.scale_betas else make_schedule
    return build(d.T, d.beta_start, d.beta_end)


def guidance(cfg: RunConfig, zero: bool = False) -> GuidanceConfig:
    g = cfg.guidance
    T = cfg.ddpm.T
    default = GuidanceConfig.default(T)
    return GuidanceConfig(
        lambda_h=g.lambda_h if g.lambda_h is not None else default.lambda_h,
        lambda_l=g.lambda_l if g.lambda_l is not None else default.lambda_l,
        n_h=0.0 if zero else g.n_h,
        n_l=0.0 if zero else g.n_l,
    )


def _ddpm_meta(cfg: RunConfig, net: EpsNet) -> dict:
    return {
        "length": net.length,
        "hidden": net.hidden,
        "emb_dim": net.emb_dim,
        "steps_trained": net.steps_trained,
    }


def train_ddpm_stage(cfg: RunConfig, corpus: Corpus, resume: bool = False) -> tuple[EpsNet, list[float]]:
    """Train (or continue training) the noise predictor on the train split."""
    out = cfg.out
    rng = substream(cfg.seed, "ddpm")
    net = EpsNet(corpus.length, rng, hidden=cfg.ddpm.hidden, emb_dim=cfg.ddpm.emb_dim)
    opt = Adam(net.parameters(), lr=cfg.ddpm.lr)
    loss_path = out / "ddpm_loss.csv"
    start = 0
    if resume:
        net = load_ddpm(cfg)
        opt = Adam(net.parameters(), lr=cfg.ddpm.lr)
        state = load_params(_require_file(out / "ddpm_opt.ckpt", "optimizer state", "clar train-ddpm"))
        opt.load_state_dict(state)
        start = net.steps_trained
        # continue the stream where the previous run would have been
        rng = np.random.default_rng([cfg.seed, 1, start])
    sched = schedule(cfg)
    total = start + cfg.ddpm.steps
    history = train_ddpm(
        net,
        corpus.X[corpus.train_idx],
        sched,
        steps=cfg.ddpm.steps,
        batch=cfg.ddpm.batch,
        lr=cfg.ddpm.lr,
        rng=rng,
        optimizer=opt,
        decay_total=total if cfg.ddpm.cosine_decay else None,
    )
    save_params(out / "ddpm.ckpt", net.state_dict())
    save_params(out / "ddpm_opt.ckpt", opt.state_dict())
    _write_json(out / "ddpm.json", _ddpm_meta(cfg, net))
    mode = "a" if resume and loss_path.exists() else "w"
    with loss_path.open(mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(["step", "loss"])
        for i, loss in enumerate(history, start=start + 1):
            w.writerow([i, _fmt(loss)])
    return net, history


def load_ddpm(cfg: RunConfig) -> EpsNet:
    meta_path = _require_file(cfg.out / "ddpm.json", "noise-prediction network", "clar train-ddpm")
    meta = json.loads(meta_path.read_text())
    net = EpsNet(meta["length"], np.random.default_rng(0), hidden=meta["hidden"], emb_dim=meta["emb_dim"])
    net.load_state_dict(load_params(_require_file(cfg.out / "ddpm.ckpt", "ddpm checkpoint", "clar train-ddpm")))
    net.steps_trained = int(meta["steps_trained"])
    return net


def artifacts(cfg: RunConfig, corpus: Corpus, net: EpsNet) -> DiffusionArtifacts:
    return DiffusionArtifacts(
        net=net,
        sched=schedule(cfg),
        guidance=guidance(cfg),
        references=pair_candidates(corpus, cfg.data.k_neighbors),
    )


def augment_stage(cfg: RunConfig, corpus: Corpus, net: EpsNet, n: int, zero_guidance: bool = False) -> dict:
    """Generate ``n`` augmentations from random train sources and summarise their DTW proximity."""
    rng = substream(cfg.seed, "augment")
    table = pair_candidates(corpus, cfg.data.k_neighbors)
    train = corpus.train_idx
    src = rng.choice(train, size=n, replace=True)
    ref = np.array([table.draw(int(i), rng) for i in src])
    aug = conditioned_generate_batch(
        corpus.X[src], corpus.X[ref], net, schedule(cfg), guidance(cfg, zero=zero_guidance), rng
    )
    with (cfg.out / "augment.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "reference_id", *[f"t{i}" for i in range(corpus.length)]])
        for s, r, row in zip(src, ref, aug):
            w.writerow([int(corpus.sample_id[s]), int(corpus.sample_id[r]), *map(_fmt, row)])
    summary = {
        "n": n,
        "zero_guidance": zero_guidance,
        "mean_dtw_aug_src": float(np.mean([dtw_distance(a, corpus.X[s]) for a, s in zip(aug, src)])),
        "mean_dtw_aug_ref": float(np.mean([dtw_distance(a, corpus.X[r]) for a, r in zip(aug, ref)])),
        "mean_dtw_cross_class": cross_class_dtw(corpus),
    }
    _write_json(cfg.out / "augment.json", summary)
    return summary


def cross_class_dtw(corpus: Corpus) -> float:
    D = dtw_pairwise(corpus.X)
    return float(D[corpus.y[:, None] != corpus.y[None, :]].mean())


# -------------------------------------------------------- representation


def pretrain_config(cfg: RunConfig, augment: bool, weighting: bool) -> PretrainConfig:
    p, w = cfg.pretrain, cfg.weighting
    return PretrainConfig(
        tau=p.tau,
        alpha=w.alpha,
        batch=p.batch,
        epochs=p.epochs,
        lr=p.lr,
        crop_range=(p.crop_min, p.crop_max),
        augment=augment,
        weighting=weighting,
        weight_floor=w.floor,
        H=w.H,
        K=w.K,
        bank_size=p.bank_size,
    )


def _encoder_meta(enc: Encoder) -> dict:
    return {"length": enc.length, "d": enc.d, "proj": enc.head2.weight.shape[1]}


def save_encoder(path_dir: Path, enc: Encoder) -> None:
    save_params(path_dir / "encoder.ckpt", enc.state_dict())
    _write_json(path_dir / "encoder.json", _encoder_meta(enc))


def load_encoder(cfg: RunConfig) -> Encoder:
    meta = json.loads(_require_file(cfg.out / "encoder.json", "encoder", "clar pretrain").read_text())
    enc = Encoder(meta["length"], np.random.default_rng(0), d=meta["d"], proj=meta["proj"])
    enc.load_state_dict(load_params(cfg.out / "encoder.ckpt"))
    return enc


def pretrain_stage(cfg: RunConfig, corpus: Corpus, net: EpsNet | None) -> PretrainResult:
    p = cfg.pretrain
    if p.augment and net is None:
        raise PipelineError("augmentation is enabled but no noise-prediction network is available")
    art = artifacts(cfg, corpus, net) if p.augment else None
    result = pretrain(corpus, pretrain_config(cfg, p.augment, p.weighting), substream(cfg.seed, "pretrain"), art)
    save_encoder(cfg.out, result.encoder)
    write_loss_history(cfg.out / "pretrain_loss.csv", result.history)
    return result


def fit_probe_for(cfg: RunConfig, corpus: Corpus, enc: Encoder, seed: int | None = None) -> LinearProbe:
    lab = corpus.labeled_idx
    if len(lab) == 0:
        raise PipelineError("corpus has no labeled samples")
    rng = substream(cfg.seed if seed is None else seed, "probe")
    return fit_probe(
        enc.features(corpus.X[lab]), corpus.y[lab], corpus.num_classes, cfg.probe.epochs, cfg.probe.lr, rng
    )


def finetune_stage(cfg: RunConfig, corpus: Corpus, enc: Encoder) -> LinearProbe:
    probe = fit_probe_for(cfg, corpus, enc)
    save_params(cfg.out / "probe.ckpt", probe.state_dict())
    _write_json(cfg.out / "probe.json", {"d": enc.d, "num_classes": probe.num_classes})
    return probe


def load_probe(cfg: RunConfig) -> LinearProbe:
    meta = json.loads(_require_file(cfg.out / "probe.json", "probe", "clar finetune").read_text())
    probe = LinearProbe(meta["d"], meta["num_classes"], np.random.default_rng(0))
    probe.load_state_dict(load_params(cfg.out / "probe.ckpt"))
    return probe


def evaluate_stage(cfg: RunConfig, corpus: Corpus, enc: Encoder, probe: LinearProbe) -> Metrics:
    test = corpus.test_idx
    if len(test) == 0:
        raise PipelineError("corpus has no test samples")
    metrics = evaluate(probe, enc, corpus.X[test], corpus.y[test])
    write_metrics(cfg.out / "metrics.json", metrics)
    return metrics


# -------------------------------------------------------------- ablation


@dataclass(frozen=True)
class ArmResult:
    arm: str
    seed: int
    accuracy: float
    macro_f1: float


def ablate(cfg: RunConfig, corpus: Corpus, net: EpsNet | None, log=None) -> list[ArmResult]:
    """Every arm under every seed; arms sharing a seed share data, initialisation and crops."""
    arms = cfg.ablate.arms
    need_net = [a for a in arms if ARMS[a][0]]
    if need_net and net is None:
        raise PipelineError(f"arm {need_net[0]} needs a trained noise-prediction network")
    art = artifacts(cfg, corpus, net) if need_net else None
    train = corpus.train_idx
    results = []
    for seed in cfg.ablate.seeds:
        bank = None
        if need_net:
            # the bank depends only on the seed, so augmenting arms share it
            bank_rng = pretrain_streams(substream(seed, "pretrain"))["bank"]
            bank = build_aug_bank(corpus.X[train], train, corpus, art, cfg.pretrain.bank_size, bank_rng)
        for arm in arms:
            augment, weighting = ARMS[arm]
            pcfg = pretrain_config(cfg, augment, weighting)
            res = pretrain(corpus, pcfg, substream(seed, "pretrain"), art, bank=bank if augment else None)
            probe = fit_probe_for(cfg, corpus, res.encoder, seed=seed)
            m = evaluate(probe, res.encoder, corpus.X[corpus.test_idx], corpus.y[corpus.test_idx])
            results.append(ArmResult(arm, seed, m.accuracy, m.macro_f1))
            if log is not None:
                log(f"{arm} seed={seed} accuracy={m.accuracy:.4f} macro_f1={m.macro_f1:.4f}")
    return results


def arm_means(results: list[ArmResult]) -> dict[str, tuple[float, float]]:
    out = {}
    for arm in dict.fromkeys(r.arm for r in results):
        rows = [r for r in results if r.arm == arm]
        out[arm] = (float(np.mean([r.accuracy for r in rows])), float(np.mean([r.macro_f1 for r in rows])))
    return out


def write_ablation(path: Path, results: list[ArmResult]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "seed", "accuracy", "macro_f1"])
        for r in results:
            w.writerow([r.arm, r.seed, _fmt(r.accuracy), _fmt(r.macro_f1)])
        for arm, (acc, f1) in arm_means(results).items():
            w.writerow([arm, "mean", _fmt(acc), _fmt(f1)])
