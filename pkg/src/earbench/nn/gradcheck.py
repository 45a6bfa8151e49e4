"""Central finite-difference verification of the backward pass."""

from __future__ import annotations

import numpy as np

from .arch import ArchSpec
from .model import backward, build_model, forward


def grad_check(spec: ArchSpec, batch, labels, epsilon: float = 1e-5,
               dtype=np.float64, max_coords_per_param: int | None = None,
               seed: int = 0) -> float:
    """Worst relative error between analytic and numeric gradients.

    For large parameter tensors `max_coords_per_param` limits the number of
    coordinates probed (chosen by a seeded RNG); small nets are checked
    exhaustively."""
    model = build_model(spec, seed=seed, dtype=dtype)
    batch = np.asarray(batch, dtype=dtype)
    labels = np.asarray(labels, dtype=np.intp)

    _, _, cache = forward(model, batch, labels)
    analytic = backward(model, cache)

    def loss_fn():
        _, loss, c = forward(model, batch, labels)
        return loss, _kink_signature(spec, c)

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for name in sorted(analytic):
        p = model.params[name]
        flat = p.reshape(-1)
        n_coords = flat.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            coords = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            coords = range(n_coords)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus, sig_plus = loss_fn()
            flat[i] = orig - epsilon
            f_minus, sig_minus = loss_fn()
            flat[i] = orig
            if sig_plus != sig_minus:
                # perturbation crossed a ReLU/maxpool kink; the numeric
                # derivative is meaningless there
                continue
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = a_flat[i]
            denom = max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def _kink_signature(spec, cache):
    """Hash of every ReLU mask and maxpool argmax in the forward cache."""
    import hashlib

    h = hashlib.sha256()
    for layer, c in zip(spec.layers, cache["caches"]):
        if layer.kind == "relu":
            h.update(np.packbits(c).tobytes())
        elif layer.kind == "maxpool":
            h.update(c[1].astype(np.int64).tobytes())
        elif layer.kind == "fire":
            for m in (c[1], c[3], c[5]):
                h.update(np.packbits(m).tobytes())
    return h.digest()
