"""Acceptance criteria, one test per criterion.

Each test prints a single `[ACCEPTANCE] criterion N (...): PASS|FAIL` line
(bypassing pytest capture so it is always visible).  Criteria 5 and 6 train
mini-squeezenet on a synthetic surrogate dataset and take several minutes.
"""

import os
import time

import numpy as np
import pytest

from conftest import write_toy_dataset
from surrogate import make_surrogate_dataset
from earbench.augment import (
    AugmentConfig, CANONICAL_ORDER, TransformSpec, apply_transform,
    augment_dataset, sample_plan,
)
from earbench.cli import ingest
from earbench.descriptors import (
    FeatureVector, Gallery, feature_distance, hog_descriptor, lbp_descriptor,
)
from earbench.errors import CheckpointCorrupt
from earbench.evalproto import (
    DatasetManifest, ExperimentReport, ManifestEntry, cmc, evaluate_gallery,
    evaluate_model, ranks_from_scores, report_from_ranks, split_dataset,
)
from earbench.imagecore import (
    Image, InterpMethod, load_image, resize, save_image, to_grayscale,
)
from earbench.nn import (
    ArchSpec, LayerSpec, PRESETS, Schedule, apply_freeze_policy, build_model,
    grad_check, load_checkpoint, save_checkpoint, train,
)

SQUEEZE_LR = 0.002
INPUT_HW = 32


@pytest.fixture
def verdict(capsys):
    def _verdict(num: int, name: str, ok: bool, detail: str = ""):
        line = f"[ACCEPTANCE] criterion {num} ({name}): {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        with capsys.disabled():
            print(line, flush=True)
        assert ok, line
    return _verdict


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def surrogate_split(workdir):
    root = str(workdir / "surrogate_a")
    make_surrogate_dataset(root, classes=20, per_class=10, seed=0, size=64)
    manifest, _ = ingest(root)
    return split_dataset(manifest, 0.6, 1)


def _train_squeezenet(split, entries, iterations, seed, model=None):
    subjects = split.subjects
    if model is None:
        spec = PRESETS["mini-squeezenet"](len(subjects), input_hw=INPUT_HW)
        model = build_model(spec, seed=seed)
    sched = Schedule(iterations=iterations, batch_size=32, lr=SQUEEZE_LR,
                     eval_every=iterations, log_every=10**9)
    model, _ = train(model, entries, subjects, sched, seed=seed)
    return model, evaluate_model(model, split, batch_size=64)


def _augment_train(split, factor, seed, out_dir):
    cfg = AugmentConfig(factor=factor, master_seed=seed)
    return augment_dataset(DatasetManifest(list(split.train)), cfg, out_dir).entries


# --- criterion 1 -------------------------------------------------------------

def _kind_specs():
    """One minimal net per layer kind (every net also covers fc + head)."""
    fc = lambda n, nc: LayerSpec("fully_connected", n, {"out_features": nc})
    head = LayerSpec("softmax_xent_head", "head")
    conv = lambda n, o, k, p=0: LayerSpec(
        "conv2d", n, {"out_channels": o, "kernel": k, "pad": p})
    return {
        "conv2d": ArchSpec([conv("c1", 3, 3, 1), fc("f", 3), head], (2, 5, 5), 3),
        "maxpool": ArchSpec([conv("c1", 3, 3, 1),
                             LayerSpec("maxpool", "p1", {"kernel": 2, "stride": 2}),
                             fc("f", 3), head], (2, 6, 6), 3),
        "avgpool_global": ArchSpec([conv("c1", 3, 1),
                                    LayerSpec("avgpool_global", "gap"), head],
                                   (2, 4, 4), 3),
        "relu": ArchSpec([conv("c1", 3, 3, 1), LayerSpec("relu", "r1"),
                          fc("f", 3), head], (2, 5, 5), 3),
        "fully_connected": ArchSpec([fc("f1", 4), fc("f2", 3), head], (2, 4, 4), 3),
        "fire": ArchSpec([LayerSpec("fire", "fire1",
                                    {"squeeze": 2, "expand1": 2, "expand3": 2}),
                          fc("f", 3), head], (3, 5, 5), 3),
        "residual_add": ArchSpec([conv("c1", 4, 3, 1),
                                  LayerSpec("fire", "fire1",
                                            {"squeeze": 2, "expand1": 2,
                                             "expand3": 2}),
                                  LayerSpec("residual_add", "res1",
                                            {"source": "c1"}),
                                  fc("f", 3), head], (2, 5, 5), 3),
        "lrn": ArchSpec([conv("c1", 5, 3, 1),
                         LayerSpec("lrn", "n1", {"depth": 5, "alpha": 1e-4,
                                                 "beta": 0.75, "k": 1.0}),
                         fc("f", 3), head], (2, 5, 5), 3),
    }


def test_criterion_1_gradient_oracle(verdict):
    rng = np.random.default_rng(0)
    start = time.monotonic()
    worst = {}
    for kind, spec in _kind_specs().items():
        batch = rng.normal(size=(2,) + spec.input_shape)
        worst[kind] = grad_check(spec, batch, np.array([0, 1]))
    for preset, builder in PRESETS.items():
        spec = builder(4, input_hw=INPUT_HW)
        batch = rng.normal(size=(2,) + spec.input_shape)
        worst[preset] = grad_check(spec, batch, np.array([0, 1]),
                                   max_coords_per_param=8)
    elapsed = time.monotonic() - start
    bad = {k: v for k, v in worst.items() if v > 1e-5}
    verdict(1, "gradient oracle", not bad and elapsed < 60.0,
             f"worst {max(worst.values()):.2e}, {elapsed:.1f}s")


# --- criterion 2 -------------------------------------------------------------

def test_criterion_2_metric_oracle(verdict):
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(1000):
        p = int(rng.integers(1, 7))
        s = int(rng.integers(2, 6))
        scores = rng.integers(0, 5, (p, s)).astype(float)  # frequent ties
        labels = rng.integers(0, s, p)
        higher = bool(rng.integers(0, 2))
        got = ranks_from_scores(scores, higher, labels)
        for i in range(p):
            key = ((lambda j: (-scores[i][j], j)) if higher
                   else (lambda j: (scores[i][j], j)))
            want = sorted(range(s), key=key).index(labels[i]) + 1
            ok &= got[i] == want
        curve = cmc(got, s).values
        ok &= bool(np.all(np.diff(curve) >= 0)) and curve[-1] == 100.0
        rep = report_from_ranks(got, s)
        ok &= rep.aucmc == np.mean(curve) and rep.rank1 == curve[0]
    verdict(2, "metric oracle", ok)


# --- criterion 3 -------------------------------------------------------------

def test_criterion_3_protocol_exactness(workdir, verdict):
    mult = [14] * 36 + [13] * 75 + [15] * 55  # 166 subjects, 2304 images
    entries = [ManifestEntry(path=f"/d/s{s:03d}/{i:03d}.png", subject=f"s{s:03d}")
               for s, n in enumerate(mult) for i in range(n)]
    manifest = DatasetManifest(entries)
    counts_ok = all(
        (len(sp.train), len(sp.test)) == (1383, 921)
        for sp in (split_dataset(manifest, 0.6, seed) for seed in range(10))
    )

    root = workdir / "c3"
    toy = [ManifestEntry(path=p, subject=s)
           for p, s in write_toy_dataset(str(root / "data"), 3, 4, size=16)]
    aug_ok = True
    for seed in range(10):
        sp = split_dataset(DatasetManifest(toy), 0.6, seed)
        aug = _augment_train(sp, 2, seed, str(root / f"aug{seed}"))
        aug_paths = {e.path for e in aug if e.origin == "augmented"}
        aug_ok &= all(e.origin == "original" for e in sp.test)
        aug_ok &= not aug_paths & {e.path for e in sp.test}
    verdict(3, "protocol exactness", counts_ok and aug_ok)


# --- criterion 4 -------------------------------------------------------------

def test_criterion_4_augmentation_statistics(workdir, random_rgb, verdict):
    n = 10_000
    counts = dict.fromkeys(CANONICAL_ORDER, 0)
    for i in range(n):
        for t in sample_plan(2024, i).transforms:
            counts[t.kind] += 1
    rates_ok = all(0.48 <= c / n <= 0.52 for c in counts.values())

    identity_ok = all(
        apply_transform(random_rgb, TransformSpec(kind, params)) == random_rgb
        for kind, params in [
            ("blur", {"sigma": 0.0}),
            ("noise", {"scale": 0.0, "seed": 5}),
            ("rotate", {"degrees": 0.0}),
            ("scale", {"factor": 1.0}),
            ("trim", {"fractions": (0.0, 0.0, 0.0, 0.0)}),
        ]
    )

    root = workdir / "c4"
    entries = [ManifestEntry(path=p, subject=s)
               for p, s in write_toy_dataset(str(root / "data"), 2, 3, size=16)]
    cfg = AugmentConfig(factor=3, master_seed=9)
    outs = []
    for run_id, threads in (("r1", "2"), ("r2", "2"), ("t1", "1"), ("t4", "4")):
        os.environ["EARBENCH_THREADS"] = threads
        out = augment_dataset(DatasetManifest(entries), cfg, str(root / run_id))
        outs.append([open(e.path, "rb").read() for e in out.entries
                     if e.origin == "augmented"])
    os.environ.pop("EARBENCH_THREADS", None)
    determinism_ok = outs[0] == outs[1] == outs[2] == outs[3]
    verdict(4, "augmentation statistics",
             rates_ok and identity_ok and determinism_ok)


# --- criterion 5 -------------------------------------------------------------

def test_criterion_5_augmentation_trend(workdir, surrogate_split, verdict):
    split = surrogate_split
    iterations = 4000
    results = []
    for seed in (3, 4, 5):
        _, rep0 = _train_squeezenet(split, list(split.train), iterations, seed)
        aug = _augment_train(split, 100, seed, str(workdir / f"c5_aug{seed}"))
        _, rep100 = _train_squeezenet(split, aug, iterations, seed)
        results.append((seed, rep0.rank1, rep100.rank1))
    wins = sum(r100 > r0 for _, r0, r100 in results)
    detail = "; ".join(f"seed {s}: {r0:.1f} vs {r100:.1f}"
                       for s, r0, r100 in results)
    verdict(5, "augmentation helps", wins == 3, detail)


# --- criterion 6 -------------------------------------------------------------

def test_criterion_6_selective_beats_full(workdir, surrogate_split, verdict):
    split = surrogate_split
    proxy_root = str(workdir / "surrogate_b")
    make_surrogate_dataset(proxy_root, classes=20, per_class=10, seed=999,
                           size=64)
    proxy_manifest, _ = ingest(proxy_root)
    proxy_split = split_dataset(proxy_manifest, 0.6, 1)
    proxy_aug = _augment_train(proxy_split, 20, 11, str(workdir / "c6_aug"))
    pre_model, _ = _train_squeezenet(proxy_split, proxy_aug, 3000, 7)
    ckpt = str(workdir / "c6_pretrain.earn")
    save_checkpoint(pre_model, ckpt)

    iterations = 1500
    results = []
    for seed in (3, 4, 5):
        _, rep_full = _train_squeezenet(split, list(split.train), iterations,
                                        seed)
        spec = PRESETS["mini-squeezenet"](len(split.subjects), input_hw=INPUT_HW)
        model = build_model(spec, seed=seed, checkpoint=ckpt)
        model = apply_freeze_policy(model, "selective_all_but_head",
                                    reinit_seed=seed)
        _, rep_sel = _train_squeezenet(split, list(split.train), iterations,
                                       seed, model=model)
        results.append((seed, rep_full.rank1, rep_sel.rank1))
    wins = sum(sel > full for _, full, sel in results)
    detail = "; ".join(f"seed {s}: {full:.1f} vs {sel:.1f}"
                       for s, full, sel in results)
    verdict(6, "selective beats full", wins >= 2, detail)


# --- criterion 7 -------------------------------------------------------------

def test_criterion_7_freeze_invariance(workdir, verdict):
    entries = [ManifestEntry(path=p, subject=s)
               for p, s in write_toy_dataset(str(workdir / "c7"), 3, 4, size=32)]
    subjects = sorted({e.subject for e in entries})
    ok = True
    for preset in ("mini-alexnet", "mini-vgg"):  # presets with fc layers
        model = build_model(PRESETS[preset](3, input_hw=32), seed=0)
        apply_freeze_policy(model, "selective_fc", reinit_seed=1)
        frozen = {n: model.params[n].copy() for n in model.params
                  if not n.startswith("fc")}
        sched = Schedule(iterations=500, batch_size=8, lr=0.01, log_every=10**9)
        train(model, entries, subjects, sched, seed=0)
        ok &= model.iteration == 500
        ok &= all(np.array_equal(model.params[n], v) for n, v in frozen.items())
    verdict(7, "freeze invariance", ok)


# --- criterion 8 -------------------------------------------------------------

def _extract(path, descriptor):
    gray = resize(to_grayscale(load_image(path)), 100, 100,
                  InterpMethod.BILINEAR)
    if descriptor == "lbp":
        return lbp_descriptor(gray, (4, 4))
    return hog_descriptor(gray, cell=10, block=2, bins=9)


def test_criterion_8_descriptor_sanity(workdir, surrogate_split, verdict):
    # (a) probes duplicating gallery images -> Rank-1 = 100
    rng = np.random.default_rng(1)
    dup_root = workdir / "c8_dup"
    for s in range(3):
        arr = rng.integers(0, 256, (48, 48, 3)).astype(np.uint8)
        os.makedirs(dup_root / f"s{s}")
        for i in range(4):
            save_image(Image.from_array(arr), str(dup_root / f"s{s}" / f"{i}.png"))
    dup_manifest, _ = ingest(str(dup_root))
    dup_split = split_dataset(dup_manifest, 0.6, 1)
    dup_ok = True
    for desc, metric in (("lbp", "chi2"), ("hog", "euclidean")):
        gal = Gallery([(_extract(e.path, desc), e.subject)
                       for e in dup_split.train])
        rep = evaluate_gallery(
            gal, [_extract(e.path, desc) for e in dup_split.test],
            [e.subject for e in dup_split.test], dup_split.subjects, metric)
        dup_ok &= rep.rank1 == 100.0

    # (b) above the 1/N chance line by 3 sigma on the surrogate
    split = surrogate_split
    n_sub, n_probe = len(split.subjects), len(split.test)
    p = 1.0 / n_sub
    threshold = 100.0 * (p + 3.0 * np.sqrt(p * (1 - p) / n_probe))
    rank1s = {}
    for desc, metric in (("lbp", "chi2"), ("hog", "euclidean")):
        gal = Gallery([(_extract(e.path, desc), e.subject) for e in split.train])
        rep = evaluate_gallery(
            gal, [_extract(e.path, desc) for e in split.test],
            [e.subject for e in split.test], split.subjects, metric)
        rank1s[desc] = rep.rank1
    chance_ok = all(r > threshold for r in rank1s.values())

    # (c) metric identity and symmetry on 1,000 random pairs
    metric_ok = True
    for _ in range(1000):
        a = FeatureVector(rng.uniform(0, 1, 32), "lbp", (1, 1, 32))
        b = FeatureVector(rng.uniform(0, 1, 32), "lbp", (1, 1, 32))
        for metric in ("chi2", "cosine", "euclidean"):
            metric_ok &= abs(feature_distance(a, a, metric)) <= 1e-6
            metric_ok &= abs(feature_distance(a, b, metric)
                             - feature_distance(b, a, metric)) <= 1e-6
    verdict(8, "descriptor sanity", dup_ok and chance_ok and metric_ok,
             f"lbp {rank1s['lbp']:.1f} / hog {rank1s['hog']:.1f} "
             f"vs chance+3sigma {threshold:.1f}")


# --- criterion 9 -------------------------------------------------------------

def test_criterion_9_uniform_scorer_baseline(verdict):
    n_sub, n_probe, trials = 166, 921, 100
    rng = np.random.default_rng(42)
    r1, auc = [], []
    for _ in range(trials):
        scores = rng.uniform(0, 1, (n_probe, n_sub))
        labels = rng.integers(0, n_sub, n_probe)
        rep = report_from_ranks(ranks_from_scores(scores, True, labels), n_sub)
        r1.append(rep.rank1)
        auc.append(rep.aucmc)
    p = 1.0 / n_sub
    n = n_probe * trials
    r1_target = 100.0 * p
    r1_tol = 3.0 * 100.0 * np.sqrt(p * (1 - p) / n)
    auc_target = 100.0 * (n_sub + 1) / (2 * n_sub)
    auc_tol = 3.0 * (100.0 * np.sqrt((n_sub**2 - 1) / 12.0) / n_sub) / np.sqrt(n)
    ok = (abs(np.mean(r1) - r1_target) <= r1_tol
          and abs(np.mean(auc) - auc_target) <= auc_tol)
    verdict(9, "uniform-scorer baseline", ok,
             f"rank1 {np.mean(r1):.3f} vs {r1_target:.3f}+-{r1_tol:.3f}, "
             f"aucmc {np.mean(auc):.3f} vs {auc_target:.3f}+-{auc_tol:.3f}")


# --- criterion 10 ------------------------------------------------------------

def test_criterion_10_roundtrip_formats(workdir, verdict):
    entries = [ManifestEntry(path=p, subject=s)
               for p, s in write_toy_dataset(str(workdir / "c10"), 2, 4, size=32)]
    subjects = sorted({e.subject for e in entries})
    spec = PRESETS["mini-squeezenet"](2, input_hw=32)
    model = build_model(spec, seed=0)
    sched = Schedule(iterations=3, batch_size=4, lr=0.001, log_every=10**9)
    train(model, entries, subjects, sched, seed=0)

    p1, p2 = workdir / "a.earn", workdir / "b.earn"
    save_checkpoint(model, str(p1))
    save_checkpoint(load_checkpoint(str(p1)), str(p2))
    ckpt_ok = p1.read_bytes() == p2.read_bytes()

    rep = report_from_ranks([1, 2, 1], 2, config_digest="d")
    r1, r2 = workdir / "r1.json", workdir / "r2.json"
    rep.save(str(r1))
    ExperimentReport.load(str(r1)).save(str(r2))
    report_ok = r1.read_bytes() == r2.read_bytes()

    blob = bytearray(p1.read_bytes())
    blob[-2] ^= 0xFF  # flip a CRC byte
    bad = workdir / "bad.earn"
    bad.write_bytes(bytes(blob))
    try:
        load_checkpoint(str(bad))
        corrupt_ok = False
    except CheckpointCorrupt:
        corrupt_ok = True
    verdict(10, "round-trip formats", ckpt_ok and report_ok and corrupt_ok)
