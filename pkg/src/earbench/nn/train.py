"""Mini-batch SGD training over a manifest.

Batch order is a pure function of (seed, iteration): the permutation for
epoch e derives from hash(seed, e), so a run resumed from any checkpoint
continues identically.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from ..augment import item_stream_seed
from .data import load_batch_tensor
from .model import Model, backward, forward, save_checkpoint, sgd_step


@dataclass
class Schedule:
    iterations: int
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    eval_every: int = 100
    log_every: int = 50
    lr_decay_at: tuple = (0.5, 0.75)  # fractions of the run where lr drops x0.1

    def lr_at(self, iteration: int) -> float:
        lr = self.lr
        for frac in self.lr_decay_at:
            if iteration >= int(frac * self.iterations):
                lr *= 0.1
        return lr


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)  # (iteration, loss)
    checkpoints: list = field(default_factory=list)  # (iteration, path)


def manifest_digest(entries) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e.path}|{e.subject}|{e.origin}\n".encode())
    return h.hexdigest()


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(item_stream_seed(seed, epoch)))
    return rng.permutation(n)


def train(model: Model, entries, subjects, schedule: Schedule, seed: int,
          checkpoint_dir=None) -> tuple:
    """Run `schedule.iterations` mini-batch updates; returns (model, log)."""
    if not entries:
        raise ValueError("training manifest is empty")
    if schedule.iterations < 1:
        raise ValueError("iterations must be >= 1")
    subjects = sorted(subjects)
    label_of = {s: i for i, s in enumerate(subjects)}
    labels_all = np.array([label_of[e.subject] for e in entries], dtype=np.intp)

    n = len(entries)
    bs = min(schedule.batch_size, n)
    batches_per_epoch = (n + bs - 1) // bs

    log = TrainingLog()
    model.train_digest = manifest_digest(entries)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    perm_epoch = -1
    perm = None
    start = model.iteration
    for t in range(start, schedule.iterations):
        epoch, slot = divmod(t, batches_per_epoch)
        if epoch != perm_epoch:
            perm = _epoch_permutation(seed, epoch, n)
            perm_epoch = epoch
        idx = perm[slot * bs:(slot + 1) * bs]
        batch = load_batch_tensor([entries[i] for i in idx], model.spec.input_shape,
                                  dtype=model.dtype)
        _, loss, cache = forward(model, batch, labels_all[idx])
        grads = backward(model, cache)
        sgd_step(model, grads, schedule.lr_at(t), schedule.momentum,
                 schedule.weight_decay)
        it = model.iteration
        if it % schedule.log_every == 0 or it == schedule.iterations:
            log.losses.append((it, loss))
        if checkpoint_dir is not None and (
                it % schedule.eval_every == 0 or it == schedule.iterations):
            path = os.path.join(checkpoint_dir, f"iter_{it:07d}.earn")
            save_checkpoint(model, path)
            log.checkpoints.append((it, path))
    return model, log


def accuracy(model: Model, entries, subjects, batch_size: int = 64) -> float:
    subjects = sorted(subjects)
    label_of = {s: i for i, s in enumerate(subjects)}
    correct = 0
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        batch = load_batch_tensor(chunk, model.spec.input_shape, dtype=model.dtype)
        logits, _, _ = forward(model, batch)
        pred = logits.argmax(axis=1)
        correct += int(sum(pred[i] == label_of[e.subject] for i, e in enumerate(chunk)))
    return correct / len(entries)
