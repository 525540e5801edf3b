import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clar.autodiff import Tensor
from clar.autodiff.gradcheck import gradcheck
from clar.contrastive import (
    ContrastiveError,
    DiffusionArtifacts,
    EmbeddingBatch,
    Encoder,
    PretrainConfig,
    encode_project,
    pretrain,
    total_loss,
    weighted_ntxent,
    write_loss_history,
)
from clar.data import pair_candidates, synth_generate
from clar.diffusion import GuidanceConfig, scaled_schedule
from oracles import ntxent_reference


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def batch(z, w=None):
    z = np.asarray(z, dtype=float)
    return EmbeddingBatch(Tensor(z), np.ones(len(z) // 2) if w is None else w)


# ---------------------------------------------------------------- encoder


def test_encoder_unit_norm_and_determinism():
    enc = Encoder(64, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 64))
    out = encode_project(x, enc)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, rtol=0, atol=1e-9)
    assert out.tobytes() == encode_project(x, enc).tobytes()
    assert encode_project(x[0], enc).shape == (16,)
    assert enc.features(x).shape == (5, 32)


def test_encoder_rejects_wrong_length():
    enc = Encoder(64, np.random.default_rng(0))
    with pytest.raises(ContrastiveError):
        encode_project(np.zeros(63), enc)
    with pytest.raises(ContrastiveError):
        Encoder(8, np.random.default_rng(0))


def test_encoder_gradcheck():
    enc = Encoder(24, np.random.default_rng(2), d=6, proj=4)
    x = Tensor(np.random.default_rng(3).normal(size=(3, 24)))
    c = np.random.default_rng(4).normal(size=(3, 4))
    errs = gradcheck(lambda: (enc(x) * Tensor(c)).sum(), enc.parameters())
    assert max(errs.values()) < 1e-4


# ------------------------------------------------------------------- loss


def test_unit_weights_match_plain_ntxent():
    rng = np.random.default_rng(5)
    for _ in range(20):
        z = unit_rows(rng, 16, 16)
        got = float(weighted_ntxent(batch(z), 0.1).data)
        assert got == pytest.approx(ntxent_reference(z, 0.1), rel=1e-12, abs=1e-12)


def test_two_orthogonal_pairs_closed_form():
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    loss = float(weighted_ntxent(batch([e1, e1, e2, e2]), 0.1).data)
    expected = math.log(1 + 2 * math.exp(-10))
    assert loss == pytest.approx(expected, rel=1e-12)
    assert loss == pytest.approx(9.08e-5, rel=1e-3)


def test_larger_weight_lowers_loss_when_similarity_positive():
    rng = np.random.default_rng(6)
    z = unit_rows(rng, 8, 5)
    z[1] = z[0] * 0.8 + unit_rows(rng, 1, 5)[0] * 0.2
    z[1] /= np.linalg.norm(z[1])
    losses = [float(weighted_ntxent(batch(z, np.array([w, 1, 1, 1])), 0.2).data) for w in (0.5, 1.0, 1.5)]
    assert losses[0] > losses[1] > losses[2]


@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
@settings(max_examples=30)
def test_pair_order_invariance(seed, tau):
    rng = np.random.default_rng(seed)
    z = unit_rows(rng, 10, 4)
    w = rng.uniform(0, 2, size=5)
    perm = rng.permutation(5)
    rows = np.concatenate([[2 * p, 2 * p + 1] for p in perm])
    a = float(weighted_ntxent(batch(z, w), tau).data)
    b = float(weighted_ntxent(batch(z[rows], w[perm]), tau).data)
    swapped = np.arange(10) ^ 1
    c = float(weighted_ntxent(batch(z[swapped], w), tau).data)
    assert a == pytest.approx(b, rel=1e-12) and a == pytest.approx(c, rel=1e-12)


@given(st.integers(0, 10_000), st.floats(0.01, 5.0), st.floats(0.0, 2.0))
@settings(max_examples=30)
def test_loss_finite(seed, tau, w):
    z = unit_rows(np.random.default_rng(seed), 6, 3)
    assert np.isfinite(float(weighted_ntxent(batch(z, np.full(3, w)), tau).data))


def test_total_loss_is_sum():
    rng = np.random.default_rng(7)
    a, b = batch(unit_rows(rng, 8, 4)), batch(unit_rows(rng, 8, 4))
    single = float(weighted_ntxent(a, 0.1).data)
    assert float(total_loss(a, a, 0.1).data) == pytest.approx(2 * single, rel=1e-14)
    assert float(total_loss(a, b, 0.1).data) == pytest.approx(single + float(weighted_ntxent(b, 0.1).data), rel=1e-14)


def test_gradcheck_through_encoder_and_loss():
    enc = Encoder(24, np.random.default_rng(8), d=6, proj=4)
    x1 = Tensor(np.random.default_rng(9).normal(size=(8, 24)))
    x2 = Tensor(np.random.default_rng(10).normal(size=(8, 24)))
    w1, w2 = np.random.default_rng(11).uniform(0, 2, size=(2, 4))
    errs = gradcheck(
        lambda: total_loss(EmbeddingBatch(enc(x1), w1), EmbeddingBatch(enc(x2), w2), 0.5), enc.parameters()
    )
    assert max(errs.values()) < 1e-4


def test_batch_validation():
    rng = np.random.default_rng(12)
    with pytest.raises(ContrastiveError):
        batch(unit_rows(rng, 2, 3))  # M = 1
    with pytest.raises(ContrastiveError):
        batch(unit_rows(rng, 4, 3), np.ones(3))
    with pytest.raises(ContrastiveError):
        batch(np.ones((4, 3)))
    with pytest.raises(ContrastiveError):
        weighted_ntxent(batch(unit_rows(rng, 4, 3)), 0.0)


# ------------------------------------------------------------ pretraining


@pytest.fixture(scope="module")
def small_corpus():
    return synth_generate(num_classes=3, per_class=12, length=64, seed=4)


def base_cfg(**kw):
    opts = dict(augment=False, weighting=False, epochs=3, batch=8, lr=1e-3)
    opts.update(kw)
    return PretrainConfig(**opts)


def test_pretrain_deterministic(small_corpus):
    a = pretrain(small_corpus, base_cfg(weighting=True), np.random.default_rng(0))
    b = pretrain(small_corpus, base_cfg(weighting=True), np.random.default_rng(0))
    assert a.history == b.history
    assert all(math.isnan(row[1]) for row in a.history)


def test_pretrain_loss_decreases(small_corpus):
    res = pretrain(small_corpus, base_cfg(epochs=20), np.random.default_rng(1))
    assert res.epoch_losses[19] < res.epoch_losses[0]


def test_augmentation_requires_network(small_corpus):
    with pytest.raises(ContrastiveError):
        pretrain(small_corpus, base_cfg(augment=True), np.random.default_rng(0))


class _ShiftNet:
    trained = True

    def predict(self, z, t):
        return np.zeros_like(z)


def test_pretrain_with_augmentation(small_corpus, tmp_path):
    art = DiffusionArtifacts(
        net=_ShiftNet(),
        sched=scaled_schedule(50),
        guidance=GuidanceConfig.default(50),
        references=pair_candidates(small_corpus, 3),
    )
    res = pretrain(small_corpus, base_cfg(augment=True, weighting=True, bank_size=2), np.random.default_rng(2), art)
    assert len(res.history) == 3 * (len(small_corpus.train_idx) // 8)
    assert all(np.isfinite(row[1]) for row in res.history)
    for step, la, lo, lt in res.history:
        assert lt == pytest.approx(la + lo, rel=1e-12)
    path = tmp_path / "loss.csv"
    write_loss_history(path, res.history)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "L_aug", "L_ori", "L_all"] and len(rows) == len(res.history) + 1


def test_bank_shape_checked(small_corpus):
    n = len(small_corpus.train_idx)
    with pytest.raises(ContrastiveError):
        pretrain(small_corpus, base_cfg(augment=True), np.random.default_rng(0), bank=np.zeros((n, 3, 64)))


def test_config_validation():
    with pytest.raises(ContrastiveError):
        PretrainConfig(tau=0)
    with pytest.raises(ContrastiveError):
        PretrainConfig(batch=1)
    with pytest.raises(ContrastiveError):
        PretrainConfig(crop_range=(0.0, 0.5))
