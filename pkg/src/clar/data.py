"""Synthetic CSI-like activity corpus, CSV persistence, and reference pairing.

A sample is a flat static segment, one or two Gaussian-windowed sinusoid
strokes (optionally separated by a near-flat pause), and another flat
segment, plus white noise. Each synthetic subject has a fixed habit that
scales amplitude and duration and jitters frequency.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from clar.signal import dtw_pairwise

SPLITS = ("train", "test")
STATIC = "static"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ActivitySpec:
    class_id: int
    freqs: tuple[float, ...]  # cycles per sample at nominal duration, one per stroke
    amps: tuple[float, ...]
    offsets: tuple[float, ...]  # slow bump added under each stroke, relative to its amplitude
    pause_fraction: float = 0.0

    def __post_init__(self):
        n = len(self.freqs)
        if n not in (1, 2) or len(self.amps) != n or len(self.offsets) != n:
            raise DataError("an activity has one or two strokes with matching parameters")
        if not 0.0 <= self.pause_fraction <= 0.4:
            raise DataError(f"pause_fraction must be in [0, 0.4], got {self.pause_fraction}")
        if n == 1 and self.pause_fraction:
            raise DataError("a single-stroke activity has no pause")

    @property
    def strokes(self) -> int:
        return len(self.freqs)


@dataclass(frozen=True)
class SubjectHabit:
    amplitude: float = 1.0
    duration: float = 1.0
    freq_jitter: float = 0.0

    def __post_init__(self):
        if not 0.6 <= self.amplitude <= 1.4:
            raise DataError(f"amplitude scale must be in [0.6, 1.4], got {self.amplitude}")
        if not 0.8 <= self.duration <= 1.2:
            raise DataError(f"duration scale must be in [0.8, 1.2], got {self.duration}")


# fixed catalogue; classes beyond it are drawn from a fixed-seed generator
_CATALOGUE = [
    ActivitySpec(0, (0.06,), (1.0,), (0.0,)),
    ActivitySpec(1, (0.06, 0.06), (1.0, 1.0), (0.0, 0.0), pause_fraction=0.3),
    ActivitySpec(2, (0.12, 0.05), (0.9, 1.0), (0.3, 0.3), pause_fraction=0.2),
    ActivitySpec(3, (0.12,), (0.8,), (0.5,)),
    ActivitySpec(4, (0.05, 0.12), (1.0, 0.9), (-0.3, -0.3), pause_fraction=0.35),
]


def activity_spec(class_id: int) -> ActivitySpec:
    if class_id < 0:
        raise DataError(f"class id must be non-negative, got {class_id}")
    if class_id < len(_CATALOGUE):
        return _CATALOGUE[class_id]
    r = np.random.default_rng([7919, class_id])
    strokes = int(r.integers(1, 3))
    return ActivitySpec(
        class_id,
        tuple(float(f) for f in r.uniform(0.04, 0.14, strokes)),
        tuple(float(a) for a in r.uniform(0.7, 1.1, strokes)),
        tuple(float(o) for o in r.uniform(-0.4, 0.6, strokes)),
        pause_fraction=float(r.uniform(0.15, 0.4)) if strokes == 2 else 0.0,
    )


ACTIVE_FRACTION = 0.6  # nominal share of the series covered by the activity


def render_sample(
    spec: ActivitySpec,
    habit: SubjectHabit,
    length: int,
    noise_std: float,
    rng: np.random.Generator,
    active_fraction: float = ACTIVE_FRACTION,
) -> tuple[np.ndarray, dict]:
    """One waveform plus its layout: ``{"strokes": [(a, b), ...], "pause": (a, b) | None}``."""
    if not 0.1 <= active_fraction <= 0.7:
        raise DataError(f"active_fraction must be in [0.1, 0.7], got {active_fraction}")
    t = np.arange(length, dtype=np.float64)
    span = active_fraction * length * habit.duration
    margin = 0.08 * length
    start = rng.uniform(margin, max(margin, length - span - margin))
    x = np.zeros(length)
    if spec.strokes == 1:
        segments = [(start, start + span)]
        pause = None
    else:
        stroke_len = span * (1.0 - spec.pause_fraction) / 2.0
        p0 = start + stroke_len
        p1 = p0 + span * spec.pause_fraction
        segments = [(start, p0), (p1, p1 + stroke_len)]
        pause = (p0, p1)
    for (a, b), f, amp, off in zip(segments, spec.freqs, spec.amps, spec.offsets):
        centre, width = (a + b) / 2.0, (b - a) / 5.0
        env = np.exp(-0.5 * ((t - centre) / width) ** 2)
        freq = f * (1.0 + habit.freq_jitter) / habit.duration
        phase = rng.uniform(-0.3, 0.3)
        scale = amp * habit.amplitude * rng.uniform(0.9, 1.1)
        x += scale * env * (np.sin(2 * math.pi * freq * (t - a) + phase) + off)
    if noise_std > 0:
        x += rng.normal(0.0, noise_std, size=length)
    layout = {"strokes": [(float(a), float(b)) for a, b in segments], "pause": pause}
    return x, layout


def static_sequence(length: int, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, noise_std, size=length) if noise_std > 0 else np.zeros(length)


# ----------------------------------------------------------------- corpus


@dataclass
class Corpus:
    X: np.ndarray
    y: np.ndarray
    subject: np.ndarray
    split: np.ndarray
    labeled: np.ndarray
    sample_id: np.ndarray
    static_pool: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.X)
        for name in ("y", "subject", "split", "labeled", "sample_id"):
            if len(getattr(self, name)) != n:
                raise DataError(f"corpus column {name} has wrong length")
        if np.any(self.labeled & (self.split != "train")):
            raise DataError("labeled samples must belong to the train split")

    @property
    def length(self) -> int:
        return self.X.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("num_classes", int(self.y.max()) + 1))

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == "train")

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == "test")

    @property
    def labeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labeled)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.subject, self.labeled, self.sample_id, self.static_pool):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("|".join(self.split.tolist()).encode())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.subject, other.subject)
            and np.array_equal(self.split, other.split)
            and np.array_equal(self.labeled, other.labeled)
            and np.array_equal(self.sample_id, other.sample_id)
            and np.array_equal(self.static_pool, other.static_pool)
        )


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def make_habits(subjects: int, seed: int) -> list[SubjectHabit]:
    r = _rng(seed, 1)
    return [
        SubjectHabit(
            amplitude=float(r.uniform(0.6, 1.4)),
            duration=float(r.uniform(0.8, 1.2)),
            freq_jitter=float(np.clip(r.normal(0.0, 0.08), -0.2, 0.2)),
        )
        for _ in range(subjects)
    ]


def synth_generate(
    num_classes: int = 5,
    per_class: int = 50,
    subjects: int = 5,
    length: int = 128,
    noise_std: float = 0.05,
    seed: int = 0,
    test_fraction: float = 0.2,
    labeled_fraction: float = 0.25,
    split_mode: str = "random",
    static_pool: int = 20,
    active_fraction: float = ACTIVE_FRACTION,
) -> Corpus:
    """Deterministic synthetic corpus with a stratified train/test split and labeled subset."""
    if num_classes < 1 or per_class < 1 or subjects < 1 or static_pool < 1:
        raise DataError("num_classes, per_class, subjects and static_pool must all be >= 1")
    if length < 32:
        raise DataError(f"length must be >= 32, got {length}")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    if not 0.0 <= test_fraction < 1.0 or not 0.0 < labeled_fraction <= 1.0:
        raise DataError("test_fraction must be in [0, 1) and labeled_fraction in (0, 1]")
    if split_mode not in ("random", "subject"):
        raise DataError(f"unknown split_mode {split_mode!r}")
    if split_mode == "subject" and subjects < 2:
        raise DataError("subject split needs at least 2 subjects")

    habits = make_habits(subjects, seed)
    X, y, subj = [], [], []
    for c in range(num_classes):
        spec = activity_spec(c)
        for k in range(per_class):
            s = k % subjects
            x, _ = render_sample(spec, habits[s], length, noise_std, _rng(seed, 2, c, k), active_fraction)
            X.append(x)
            y.append(c)
            subj.append(s)
    X = np.array(X)
    y = np.array(y, dtype=np.int64)
    subj = np.array(subj, dtype=np.int64)
    n = len(X)

    split = np.full(n, "train", dtype=object)
    split_rng = _rng(seed, 3)
    if split_mode == "random":
        for c in range(num_classes):
            idx = np.flatnonzero(y == c)
            n_test = int(round(test_fraction * len(idx)))
            split[split_rng.permutation(idx)[:n_test]] = "test"
    else:
        n_test_subj = max(1, int(round(test_fraction * subjects)))
        held_out = split_rng.permutation(subjects)[:n_test_subj]
        split[np.isin(subj, held_out)] = "test"
    split = split.astype(str)

    labeled = np.zeros(n, dtype=bool)
    lab_rng = _rng(seed, 4)
    for c in range(num_classes):
        idx = np.flatnonzero((y == c) & (split == "train"))
        if len(idx) == 0:
            continue
        # at least two per class so each labeled sample has a same-class peer
        n_lab = min(len(idx), max(2, int(round(labeled_fraction * len(idx)))))
        labeled[lab_rng.permutation(idx)[:n_lab]] = True

    pool_rng = _rng(seed, 5)
    pool = np.array([static_sequence(length, noise_std, pool_rng) for _ in range(static_pool)])
    meta = {
        "seed": seed,
        "num_classes": num_classes,
        "per_class": per_class,
        "subjects": subjects,
        "length": length,
        "noise_std": noise_std,
        "test_fraction": test_fraction,
        "labeled_fraction": labeled_fraction,
        "split_mode": split_mode,
        "static_pool": static_pool,
        "active_fraction": active_fraction,
    }
    return Corpus(X, y, subj, split, labeled, np.arange(n, dtype=np.int64), pool, meta)


# ---------------------------------------------------------------- pairing


@dataclass
class ReferenceTable:
    candidates: dict[int, np.ndarray]
    labeled: dict[int, bool]

    def draw(self, i: int, rng: np.random.Generator) -> int:
        cands = self.candidates[i]
        return int(cands[rng.integers(len(cands))])


def pair_candidates(corpus: Corpus, k: int = 10, distances: np.ndarray | None = None) -> ReferenceTable:
    """Reference candidates for every train sample.

    Labeled samples pair with the other labeled train samples of their class;
    unlabeled samples pair with their ``k`` DTW-nearest train samples.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    train = corpus.train_idx
    if len(train) == 0:
        raise DataError("corpus has no train samples")
    if distances is None:
        distances = dtw_pairwise(corpus.X[train])
    cands: dict[int, np.ndarray] = {}
    flags: dict[int, bool] = {}
    for pos, i in enumerate(train):
        if corpus.labeled[i]:
            peers = np.flatnonzero(corpus.labeled & (corpus.y == corpus.y[i]) & (corpus.split == "train"))
            peers = peers[peers != i]
            if len(peers) == 0:
                raise DataError(f"labeled sample {int(corpus.sample_id[i])} has no same-class labeled peer")
            cands[int(i)] = peers
        else:
            order = np.argsort(distances[pos], kind="stable")
            order = order[order != pos][:k]
            cands[int(i)] = train[order]
        flags[int(i)] = bool(corpus.labeled[i])
    return ReferenceTable(cands, flags)


# -------------------------------------------------------------------- I/O


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_corpus(path: str | Path, corpus: Corpus) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    L = corpus.length
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class", "subject", "split", "labeled", *[f"t{i}" for i in range(L)]])
        for i in range(len(corpus.X)):
            w.writerow(
                [
                    int(corpus.sample_id[i]),
                    int(corpus.y[i]),
                    int(corpus.subject[i]),
                    corpus.split[i],
                    int(corpus.labeled[i]),
                    *map(_fmt, corpus.X[i]),
                ]
            )
        for j, row in enumerate(corpus.static_pool):
            w.writerow([-(j + 1), -1, -1, STATIC, 0, *map(_fmt, row)])
    path.with_suffix(".json").write_text(json.dumps(corpus.meta, indent=2, sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: no samples")
    header = rows[0]
    if header[:5] != ["sample_id", "class", "subject", "split", "labeled"] or len(header) < 6:
        raise DataError(f"{path}: line 1: unexpected header")
    width = len(header)
    X, y, subj, split, lab, sid, pool = [], [], [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        try:
            values = [float(v) for v in row[5:]]
            kind = row[3]
            if kind == STATIC:
                pool.append(values)
                continue
            if kind not in SPLITS:
                raise ValueError(f"unknown split {kind!r}")
            sid.append(int(row[0]))
            y.append(int(row[1]))
            subj.append(int(row[2]))
            split.append(kind)
            lab.append(bool(int(row[4])))
            X.append(values)
        except ValueError as e:
            raise DataError(f"{path}: line {lineno}: {e}") from None
    if not X:
        raise DataError(f"{path}: no samples")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    L = width - 5
    return Corpus(
        np.array(X),
        np.array(y, dtype=np.int64),
        np.array(subj, dtype=np.int64),
        np.array(split),
        np.array(lab, dtype=bool),
        np.array(sid, dtype=np.int64),
        np.array(pool) if pool else np.zeros((0, L)),
        meta,
    )
