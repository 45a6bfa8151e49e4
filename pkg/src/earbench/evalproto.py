"""Closed-set identification protocol: splits, ranks, CMC, Rank-k, AUCMC.

Shared by the CNN and descriptor paths.  Scores are always a probe x subject
matrix; the subject axis follows the sorted subject list of the split.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import EmptyManifest, EmptyRanks, ShapeMismatch, SubjectSetMismatch

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject: str
    origin: str = "original"  # "original" | "augmented"
    source: str | None = None
    master_seed: int | None = None
    item_index: int | None = None

    def to_json(self) -> dict:
        d = {"path": self.path, "subject": self.subject, "origin": self.origin}
        if self.origin == "augmented":
            d["source"] = self.source
            d["master_seed"] = self.master_seed
            d["item_index"] = self.item_index
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        return cls(
            path=d["path"],
            subject=d["subject"],
            origin=d.get("origin", "original"),
            source=d.get("source"),
            master_seed=d.get("master_seed"),
            item_index=d.get("item_index"),
        )


@dataclass(frozen=True)
class DatasetManifest:
    entries: list

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    @property
    def subjects(self) -> list:
        return sorted({e.subject for e in self.entries})

    def originals(self) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.origin == "original"])

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "entries": [e.to_json() for e in self.entries],
            "subjects": self.subjects,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls([ManifestEntry.from_json(e) for e in d["entries"]])

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class Split:
    train: list
    test: list
    seed: int
    ratio: float
    singleton_subjects: tuple = ()

    @property
    def subjects(self) -> list:
        return sorted({e.subject for e in self.train} | {e.subject for e in self.test})

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "ratio": self.ratio,
            "singleton_subjects": list(self.singleton_subjects),
            "train": [e.to_json() for e in self.train],
            "test": [e.to_json() for e in self.test],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Split":
        return cls(
            train=[ManifestEntry.from_json(e) for e in d["train"]],
            test=[ManifestEntry.from_json(e) for e in d["test"]],
            seed=d["seed"],
            ratio=d["ratio"],
            singleton_subjects=tuple(d.get("singleton_subjects", [])),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Split":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class CMCCurve:
    values: np.ndarray  # percent, length num_subjects

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass
class ExperimentReport:
    rank1: float
    rank5: float
    aucmc: float
    curve: list
    config_digest: str
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "rank1": self.rank1,
            "rank5": self.rank5,
            "aucmc": self.aucmc,
            "curve": list(self.curve),
            "config_digest": self.config_digest,
            "counts": self.counts,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentReport":
        return cls(
            rank1=d["rank1"], rank5=d["rank5"], aucmc=d["aucmc"],
            curve=list(d["curve"]), config_digest=d["config_digest"],
            counts=d.get("counts", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path) as f:
            return cls.from_json(json.load(f))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(manifest: DatasetManifest, ratio: float, seed: int) -> Split:
    """Per-subject split: train count = round_half_up(ratio * n), clamped
    so both sides are nonempty for subjects with >= 2 images.  Subjects with
    a single image go entirely to train and are flagged."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not manifest.entries:
        raise EmptyManifest("cannot split an empty manifest")
    if any(e.origin != "original" for e in manifest.entries):
        raise ValueError("split_dataset expects a manifest of originals only")

    by_subject: dict = {}
    for e in manifest.entries:
        by_subject.setdefault(e.subject, []).append(e)

    rng = np.random.Generator(np.random.PCG64(seed))
    train, test, singletons = [], [], []
    for subject in sorted(by_subject):
        entries = by_subject[subject]
        n = len(entries)
        if n == 1:
            train.extend(entries)
            singletons.append(subject)
            continue
        k = min(max(_round_half_up(ratio * n), 1), n - 1)
        perm = rng.permutation(n)
        chosen = set(perm[:k].tolist())
        for i, e in enumerate(entries):
            (train if i in chosen else test).append(e)
    return Split(train=train, test=test, seed=seed, ratio=ratio,
                 singleton_subjects=tuple(singletons))


def ranks_from_scores(scores, higher_is_better: bool, true_labels) -> np.ndarray:
    """1-based rank of the true subject per probe.

    Ties break by ascending subject index; a subject tied with the true
    subject at a lower index outranks it."""
    scores = np.asarray(scores, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.intp)
    if scores.ndim != 2 or scores.shape[0] != true_labels.shape[0]:
        raise ShapeMismatch(f"scores {scores.shape} vs labels {true_labels.shape}")
    n_subjects = scores.shape[1]
    if np.any(true_labels < 0) or np.any(true_labels >= n_subjects):
        raise ShapeMismatch("true label out of range")
    true_scores = scores[np.arange(len(true_labels)), true_labels]
    if higher_is_better:
        better = scores > true_scores[:, None]
    else:
        better = scores < true_scores[:, None]
    tied = scores == true_scores[:, None]
    tied_before = tied & (np.arange(n_subjects)[None, :] < true_labels[:, None])
    return (better.sum(axis=1) + tied_before.sum(axis=1) + 1).astype(np.intp)


def cmc(ranks, num_subjects: int) -> CMCCurve:
    ranks = np.asarray(ranks, dtype=np.intp)
    if ranks.size == 0:
        raise EmptyRanks("no ranks")
    if np.any(ranks < 1) or np.any(ranks > num_subjects):
        raise ValueError("ranks must lie in [1, num_subjects]")
    ks = np.arange(1, num_subjects + 1)
    values = 100.0 * (ranks[None, :] <= ks[:, None]).mean(axis=1)
    return CMCCurve(values)


def aucmc(curve: CMCCurve) -> float:
    """Rectangular mean of the curve over the normalized rank axis."""
    return float(np.mean(curve.values))


def report_from_ranks(ranks, num_subjects: int, config_digest: str = "",
                      counts: dict | None = None) -> ExperimentReport:
    curve = cmc(ranks, num_subjects)
    rank1 = float(curve.values[0])
    rank5 = float(curve.values[4]) if num_subjects >= 5 else float(curve.values[-1])
    return ExperimentReport(
        rank1=rank1,
        rank5=rank5,
        aucmc=aucmc(curve),
        curve=curve.values.tolist(),
        config_digest=config_digest,
        counts=counts or {},
    )


def save_cmc_csv(curve_values, path) -> None:
    with open(path, "w") as f:
        f.write("rank,percent\n")
        for k, v in enumerate(curve_values, start=1):
            f.write(f"{k},{v:.6f}\n")


def evaluate_scores(scores, true_labels, higher_is_better: bool, num_subjects: int,
                    config_digest: str = "", counts: dict | None = None) -> ExperimentReport:
    ranks = ranks_from_scores(scores, higher_is_better, true_labels)
    return report_from_ranks(ranks, num_subjects, config_digest, counts)


def evaluate_model(model, split: Split, batch_size: int = 32,
                   config_digest: str = "") -> ExperimentReport:
    """CNN path: softmax class probabilities as scores (higher is better)."""
    from .nn.model import forward
    from .nn.data import load_batch_tensor

    subjects = split.subjects
    if model.spec.num_classes != len(subjects):
        raise SubjectSetMismatch(
            f"model head has {model.spec.num_classes} classes, split has {len(subjects)}"
        )
    expected = getattr(model, "train_digest", None)
    label_of = {s: i for i, s in enumerate(subjects)}
    probes = split.test
    all_scores = []
    labels = []
    for start in range(0, len(probes), batch_size):
        chunk = probes[start:start + batch_size]
        batch = load_batch_tensor(chunk, model.spec.input_shape, dtype=model.dtype)
        logits, _, _ = forward(model, batch)
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        all_scores.append(probs)
        labels.extend(label_of[e.subject] for e in chunk)
    scores = np.concatenate(all_scores, axis=0)
    counts = {"train": len(split.train), "test": len(split.test),
              "subjects": len(subjects)}
    if expected is not None:
        counts["train_digest"] = expected
    return evaluate_scores(scores, labels, True, len(subjects), config_digest, counts)


def evaluate_gallery(gallery, probe_features, probe_subjects, split_subjects,
                     metric: str = "chi2", config_digest: str = "",
                     counts: dict | None = None) -> ExperimentReport:
    """Descriptor path: negated per-subject minimum distances as scores."""
    from .descriptors import subject_scores

    subjects = list(split_subjects)
    label_of = {s: i for i, s in enumerate(subjects)}
    scores = np.stack([
        -subject_scores(gallery, fv, metric, subjects) for fv in probe_features
    ])
    labels = [label_of[s] for s in probe_subjects]
    return evaluate_scores(scores, labels, True, len(subjects), config_digest,
                           counts or {})
