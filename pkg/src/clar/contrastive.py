"""Encoder, weighted NT-Xent and the contrastive pretraining loop.

Positive pairs occupy consecutive rows of an embedding batch: rows 2k and
2k + 1 are the two views of pair k. The pair weight scales only the
positive similarity in the numerator; the denominator stays unweighted.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from clar.autodiff import Adam, Conv1d, Dense, Module, Tape, Tensor, ops
from clar.data import Corpus, ReferenceTable
from clar.diffusion import GuidanceConfig, NoiseSchedule, conditioned_generate_batch
from clar.signal import DEFAULT_CROP_RANGE, crop_resize
from clar.weighting import batch_weights, default_window, select_templates


class ContrastiveError(ValueError):
    pass


class Encoder(Module):
    """conv(1->8, k5, s2) -> conv(8->16, k5, s2) -> average pool -> dense(d); head dense(d) -> relu -> dense(p)."""

    def __init__(self, length: int, rng: np.random.Generator, d: int = 32, proj: int = 16):
        self.length = length
        self.d = d
        self.conv1 = Conv1d(1, 8, 5, 2, rng)
        self.conv2 = Conv1d(8, 16, 5, 2, rng)
        if self.conv2.out_length(self.conv1.out_length(length)) < 1:
            raise ContrastiveError(f"series length {length} too short for the encoder")
        self.fc = Dense(16, d, rng)
        self.head1 = Dense(d, d, rng)
        self.head2 = Dense(d, proj, rng)

    def _check(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.length:
            raise ContrastiveError(f"encoder expects (batch, {self.length}), got {x.shape}")

    def represent(self, x: Tensor) -> Tensor:
        self._check(x)
        h = ops.relu(self.conv1(x.reshape(x.shape[0], 1, self.length)))
        h = ops.relu(self.conv2(h))
        return self.fc(ops.mean(h, axis=2))

    def project(self, h: Tensor) -> Tensor:
        return ops.l2_normalize(self.head2(ops.relu(self.head1(h))), axis=1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(self.represent(x))

    def features(self, X: np.ndarray) -> np.ndarray:
        """Frozen d-dimensional representations, no tape involvement."""
        return self.represent(Tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)))).data


def encode_project(x, encoder: Encoder) -> np.ndarray:
    """Unit-norm embedding of one series (or each row of a batch)."""
    x = np.asarray(x, dtype=np.float64)
    out = encoder(Tensor(np.atleast_2d(x))).data
    return out[0] if x.ndim == 1 else out


# ------------------------------------------------------------------- losses


@dataclass
class EmbeddingBatch:
    embeddings: Tensor
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = self.embeddings.shape[0]
        if self.embeddings.ndim != 2 or n % 2:
            raise ContrastiveError(f"embeddings must be (2M, d), got {self.embeddings.shape}")
        if n // 2 < 2:
            raise ContrastiveError("need M >= 2 pairs so every anchor has negatives")
        if self.weights.shape != (n // 2,):
            raise ContrastiveError(f"expected {n // 2} pair weights, got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ContrastiveError("pair weights must be finite")
        norms = np.linalg.norm(self.embeddings.data, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ContrastiveError("embeddings must have unit L2 norm")

    @property
    def M(self) -> int:
        return self.embeddings.shape[0] // 2


def weighted_ntxent(batch: EmbeddingBatch, tau: float) -> Tensor:
    """Mean over all 2M anchors of -(W * sim_pos / tau) + logsumexp_{k != i}(sim_ik / tau)."""
    if tau <= 0:
        raise ContrastiveError(f"tau must be positive, got {tau}")
    z = batch.embeddings
    n = z.shape[0]
    logits = (z @ z.T) * (1.0 / tau)
    partner = np.arange(n) ^ 1
    pos = logits[np.arange(n), partner]
    w = np.repeat(batch.weights, 2)
    denom = ops.logsumexp(logits, axis=1, where=~np.eye(n, dtype=bool))
    return ops.mean(denom - pos * w)


def total_loss(aug: EmbeddingBatch, ori: EmbeddingBatch, tau: float) -> Tensor:
    return weighted_ntxent(aug, tau) + weighted_ntxent(ori, tau)


# ------------------------------------------------------------- pretraining


@dataclass
class PretrainConfig:
    tau: float = 0.1
    alpha: float = 0.5
    batch: int = 50
    epochs: int = 50
    lr: float = 1e-3
    crop_range: tuple[float, float] = DEFAULT_CROP_RANGE
    augment: bool = True
    weighting: bool = True
    weight_floor: float = 0.0
    H: int | None = None
    K: int = 5
    bank_size: int = 4

    def __post_init__(self):
        if self.tau <= 0 or self.alpha <= 0:
            raise ContrastiveError("tau and alpha must be positive")
        if self.batch < 2:
            raise ContrastiveError(f"batch must be >= 2, got {self.batch}")
        if self.epochs < 1 or self.lr <= 0:
            raise ContrastiveError("epochs must be >= 1 and lr positive")
        lo, hi = self.crop_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ContrastiveError(f"crop range must satisfy 0 < lo <= hi <= 1, got {self.crop_range}")
        if self.augment and self.bank_size < 2:
            raise ContrastiveError("bank_size must be >= 2 to draw two distinct augmentations")


@dataclass
class DiffusionArtifacts:
    net: object
    sched: NoiseSchedule
    guidance: GuidanceConfig
    references: ReferenceTable


@dataclass
class PretrainResult:
    encoder: Encoder
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def build_aug_bank(
    sources: np.ndarray,
    source_idx: np.ndarray,
    corpus: Corpus,
    art: DiffusionArtifacts,
    per_source: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``per_source`` guided generations for every source, shape (N, per_source, L)."""
    src = np.repeat(sources, per_source, axis=0)
    refs = np.array([corpus.X[art.references.draw(int(i), rng)] for i in np.repeat(source_idx, per_source)])
    out = conditioned_generate_batch(src, refs, art.net, art.sched, art.guidance, rng)
    return out.reshape(len(sources), per_source, -1)


def _crops(xs: np.ndarray, cfg: PretrainConfig, rng: np.random.Generator) -> np.ndarray:
    L = xs.shape[1]
    return np.array([crop_resize(x, L, rng=rng, crop_range=cfg.crop_range) for x in xs])


def _pair_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((2 * len(a), a.shape[1]))
    out[0::2], out[1::2] = a, b
    return out


def pretrain_streams(rng: np.random.Generator) -> dict[str, np.random.Generator]:
    """Independent child streams, so switching a component on or off leaves the others' draws intact."""
    return dict(zip(("init", "templates", "bank", "loop", "views"), rng.spawn(5)))


def pretrain(
    corpus: Corpus,
    cfg: PretrainConfig,
    rng: np.random.Generator,
    artifacts: DiffusionArtifacts | None = None,
    bank: np.ndarray | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> PretrainResult:
    """Contrastive pretraining over the train split (labels unused except through reference pairing).

    ``bank`` may supply precomputed augmentations of shape (n_train, bank_size, L);
    otherwise they are generated from ``artifacts``.
    """
    train = corpus.train_idx
    if len(train) < 2:
        raise ContrastiveError("need at least 2 train samples")
    streams = pretrain_streams(rng)
    L = corpus.length
    X = corpus.X[train]
    if cfg.augment and bank is None:
        if artifacts is None or artifacts.net is None:
            raise ContrastiveError("augmentation enabled but no trained noise-prediction network supplied")
        bank = build_aug_bank(X, train, corpus, artifacts, cfg.bank_size, streams["bank"])
    if not cfg.augment:
        bank = None
    elif bank.shape != (len(train), cfg.bank_size, L):
        raise ContrastiveError(f"augmentation bank has shape {bank.shape}, expected {(len(train), cfg.bank_size, L)}")
    enc = Encoder(L, streams["init"])
    opt = Adam(enc.parameters(), lr=cfg.lr)
    H = cfg.H or default_window(L)
    templates = select_templates(list(corpus.static_pool), cfg.K, H, streams["templates"]) if cfg.weighting else None
    loop, views = streams["loop"], streams["views"]

    def weights_for(v1, v2):
        if templates is None:
            return np.ones(len(v1))
        w1 = batch_weights(v1, templates, H, cfg.alpha, cfg.weight_floor)
        w2 = batch_weights(v2, templates, H, cfg.alpha, cfg.weight_floor)
        return w1 + w2

    M = min(cfg.batch, len(train))
    result = PretrainResult(encoder=enc)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = loop.permutation(len(train))
        losses = []
        for b0 in range(0, len(order) - M + 1, M):
            idx = order[b0 : b0 + M]
            o1, o2 = _crops(X[idx], cfg, loop), _crops(X[idx], cfg, loop)
            w_ori = weights_for(o1, o2)
            if bank is not None:
                pick = np.array([views.choice(cfg.bank_size, size=2, replace=False) for _ in idx])
                a1 = _crops(bank[idx, pick[:, 0]], cfg, views)
                a2 = _crops(bank[idx, pick[:, 1]], cfg, views)
                w_aug = weights_for(a1, a2)
            opt.zero_grad()
            with Tape() as tape:
                l_ori = weighted_ntxent(EmbeddingBatch(enc(Tensor(_pair_rows(o1, o2))), w_ori), cfg.tau)
                if bank is not None:
                    l_aug = weighted_ntxent(EmbeddingBatch(enc(Tensor(_pair_rows(a1, a2))), w_aug), cfg.tau)
                    loss = l_aug + l_ori
                else:
                    l_aug, loss = None, l_ori
            tape.backward(loss)
            opt.step()
            step += 1
            la = float(l_aug.data) if l_aug is not None else math.nan
            result.history.append((step, la, float(l_ori.data), float(loss.data)))
            losses.append(float(loss.data))
        result.epoch_losses.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, result.epoch_losses[-1])
    return result


def write_loss_history(path: str | Path, history) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_aug", "L_ori", "L_all"])
        for step, la, lo, lt in history:
            w.writerow([step, *(format(v, ".17g") for v in (la, lo, lt))])
