"""Model state, forward/backward execution, SGD and freeze policies."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    CheckpointCorrupt, LabelOutOfRange, NonFiniteGradient, PolicyMismatch,
    ShapeMismatch, StaleCache,
)
from . import ops
from .arch import ArchSpec, LayerSpec, PARAMETRIC_KINDS

FREEZE_POLICIES = ("full_learning", "selective_fc", "selective_all_but_head")

CHECKPOINT_MAGIC = b"EARN"
CHECKPOINT_VERSION = 1


@dataclass
class Model:
    spec: ArchSpec
    params: dict  # name -> np.ndarray
    opt_state: dict = field(default_factory=dict)  # momentum buffers
    iteration: int = 0
    dtype: type = np.float32
    restore_report: list = field(default_factory=list)  # He-initialized names on partial restore
    train_digest: str | None = None

    def trainable_param_names(self) -> list:
        names = []
        for layer in self.spec.layers:
            if layer.kind in PARAMETRIC_KINDS and layer.trainable:
                names.extend(n for n in self.params if _owner(n) == layer.name)
        return sorted(names)


def _owner(param_name: str) -> str:
    return param_name.split(".", 1)[0]


def _param_shapes(spec: ArchSpec) -> dict:
    """name -> shape for every parameter, in layer order."""
    shapes = {}
    cur = spec.input_shape
    seen = {}
    for layer in spec.layers:
        if layer.kind == "conv2d":
            c = cur[0]
            hp = layer.hyper
            shapes[f"{layer.name}.w"] = (hp["out_channels"], c, hp["kernel"], hp["kernel"])
            shapes[f"{layer.name}.b"] = (hp["out_channels"],)
        elif layer.kind == "fully_connected":
            feats = int(np.prod(cur))
            shapes[f"{layer.name}.w"] = (feats, layer.hyper["out_features"])
            shapes[f"{layer.name}.b"] = (layer.hyper["out_features"],)
        elif layer.kind == "fire":
            c = cur[0]
            s = layer.hyper["squeeze"]
            e1, e3 = layer.hyper["expand1"], layer.hyper["expand3"]
            shapes[f"{layer.name}.squeeze.w"] = (s, c, 1, 1)
            shapes[f"{layer.name}.squeeze.b"] = (s,)
            shapes[f"{layer.name}.expand1.w"] = (e1, s, 1, 1)
            shapes[f"{layer.name}.expand1.b"] = (e1,)
            shapes[f"{layer.name}.expand3.w"] = (e3, s, 3, 3)
            shapes[f"{layer.name}.expand3.b"] = (e3,)
        from .arch import _infer_one
        cur = _infer_one(layer, cur, seen, spec.num_classes)
        seen[layer.name] = cur
    return shapes


def _he_init(shape, rng, dtype):
    if len(shape) == 1:  # bias
        return np.zeros(shape, dtype=dtype)
    if len(shape) == 2:  # fc: (in, out)
        fan_in = shape[0]
    else:  # conv: (out, in, kh, kw)
        fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def build_model(spec: ArchSpec, seed: int = 0, checkpoint: str | None = None,
                dtype=np.float32) -> Model:
    spec.infer_shapes()  # raises ShapeInferenceError on invalid specs
    shapes = _param_shapes(spec)
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {name: _he_init(shape, rng, dtype) for name, shape in shapes.items()}
    report = []
    if checkpoint is not None:
        stored, _, _ = _read_checkpoint_entries(checkpoint)
        for name, shape in shapes.items():
            if name in stored and stored[name].shape == shape:
                params[name] = stored[name].astype(dtype)
            else:
                report.append(name)
    return Model(spec=spec, params=params, dtype=dtype, restore_report=report)


def parameter_count(model: Model) -> int:
    return int(sum(p.size for p in model.params.values()))


def _fire_forward(x, layer, params, name):
    sq, c_sq = ops.conv2d_forward(x, params[f"{name}.squeeze.w"],
                                  params[f"{name}.squeeze.b"], 1, 0)
    sqr, m_sq = ops.relu_forward(sq)
    e1, c_e1 = ops.conv2d_forward(sqr, params[f"{name}.expand1.w"],
                                  params[f"{name}.expand1.b"], 1, 0)
    e1r, m_e1 = ops.relu_forward(e1)
    e3, c_e3 = ops.conv2d_forward(sqr, params[f"{name}.expand3.w"],
                                  params[f"{name}.expand3.b"], 1, 1)
    e3r, m_e3 = ops.relu_forward(e3)
    out = np.concatenate([e1r, e3r], axis=1)
    return out, (c_sq, m_sq, c_e1, m_e1, c_e3, m_e3, e1r.shape[1])


def _fire_backward(dy, cache, name):
    c_sq, m_sq, c_e1, m_e1, c_e3, m_e3, n1 = cache
    d_e1 = ops.relu_backward(dy[:, :n1], m_e1)
    d_e3 = ops.relu_backward(dy[:, n1:], m_e3)
    dx1, dw1, db1 = ops.conv2d_backward(d_e1, c_e1)
    dx3, dw3, db3 = ops.conv2d_backward(d_e3, c_e3)
    d_sqr = ops.relu_backward(dx1 + dx3, m_sq)
    dx, dws, dbs = ops.conv2d_backward(d_sqr, c_sq)
    grads = {
        f"{name}.squeeze.w": dws, f"{name}.squeeze.b": dbs,
        f"{name}.expand1.w": dw1, f"{name}.expand1.b": db1,
        f"{name}.expand3.w": dw3, f"{name}.expand3.b": db3,
    }
    return dx, grads


def forward(model: Model, batch: np.ndarray, labels=None):
    """Run the network.  Returns (logits, loss_or_None, cache)."""
    spec = model.spec
    x = np.asarray(batch, dtype=model.dtype)
    expected = (x.shape[0],) + tuple(spec.input_shape)
    if x.shape != expected:
        raise ShapeMismatch(f"batch shape {x.shape} != {expected}")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.intp)
        if labels.shape != (x.shape[0],):
            raise ShapeMismatch(f"labels shape {labels.shape} != ({x.shape[0]},)")
        if np.any(labels < 0) or np.any(labels >= spec.num_classes):
            raise LabelOutOfRange(f"labels must be in [0, {spec.num_classes})")

    caches = []
    outputs = {}  # layer name -> output (residual sources only)
    residual_sources = {l.hyper["source"] for l in spec.layers
                        if l.kind == "residual_add"}
    loss = None
    for layer in spec.layers:
        name = layer.name
        hp = layer.hyper
        if layer.kind == "conv2d":
            x, c = ops.conv2d_forward(x, model.params[f"{name}.w"],
                                      model.params[f"{name}.b"],
                                      hp.get("stride", 1), hp.get("pad", 0))
        elif layer.kind == "maxpool":
            x, c = ops.maxpool_forward(x, hp["kernel"], hp.get("stride", hp["kernel"]))
        elif layer.kind == "avgpool_global":
            x, c = ops.avgpool_global_forward(x)
        elif layer.kind == "relu":
            x, c = ops.relu_forward(x)
        elif layer.kind == "fully_connected":
            x, c = ops.fc_forward(x, model.params[f"{name}.w"], model.params[f"{name}.b"])
        elif layer.kind == "fire":
            x, c = _fire_forward(x, layer, model.params, name)
        elif layer.kind == "residual_add":
            x = x + outputs[hp["source"]]
            c = None
        elif layer.kind == "lrn":
            x, c = ops.lrn_forward(x, hp["depth"], hp["alpha"], hp["beta"], hp["k"])
        elif layer.kind == "softmax_xent_head":
            logits = x.reshape(x.shape[0], -1)
            c = None
            if labels is not None:
                loss, _, dlogits = ops.softmax_xent(logits, labels)
                c = (dlogits, x.shape)
            x = logits
        caches.append(c)
        if name in residual_sources:
            outputs[name] = x

    cache = {
        "caches": caches,
        "labels": labels,
        "iteration": model.iteration,
        "batch_n": batch.shape[0],
    }
    return x, loss, cache


def backward(model: Model, cache, labels=None) -> dict:
    """Gradients for trainable parameters.  Frozen layers still propagate."""
    if cache["iteration"] != model.iteration:
        raise StaleCache("cache does not match the model's current iteration")
    if cache["labels"] is None:
        raise StaleCache("forward was run without labels; no loss to differentiate")
    if labels is not None and not np.array_equal(labels, cache["labels"]):
        raise StaleCache("labels differ from the ones used in forward")

    spec = model.spec
    caches = cache["caches"]
    grads = {}
    # pending[i]: extra gradient for the output of layer index i (skip edges)
    pending = {}
    index_of = {l.name: i for i, l in enumerate(spec.layers)}

    head_cache = caches[-1]
    dlogits, pre_head_shape = head_cache
    g = dlogits.reshape(pre_head_shape).astype(model.dtype)

    for i in range(len(spec.layers) - 2, -1, -1):
        layer = spec.layers[i]
        if i in pending:
            g = g + pending.pop(i)
        c = caches[i]
        name = layer.name
        if layer.kind == "conv2d":
            g, dw, db = ops.conv2d_backward(g, c)
            if layer.trainable:
                grads[f"{name}.w"] = dw
                grads[f"{name}.b"] = db
        elif layer.kind == "maxpool":
            g = ops.maxpool_backward(g, c)
        elif layer.kind == "avgpool_global":
            g = ops.avgpool_global_backward(g, c)
        elif layer.kind == "relu":
            g = ops.relu_backward(g, c)
        elif layer.kind == "fully_connected":
            g, dw, db = ops.fc_backward(g, c)
            if layer.trainable:
                grads[f"{name}.w"] = dw
                grads[f"{name}.b"] = db
        elif layer.kind == "fire":
            g, layer_grads = _fire_backward(g, c, name)
            if layer.trainable:
                grads.update(layer_grads)
        elif layer.kind == "residual_add":
            src = index_of[layer.hyper["source"]]
            pending[src] = pending.get(src, 0) + g
        elif layer.kind == "lrn":
            g = ops.lrn_backward(g, c)
    return grads


def sgd_step(model: Model, grads: dict, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> Model:
    """In-place SGD with momentum: v <- mu*v + g + wd*p; p <- p - lr*v."""
    trainable = set(model.trainable_param_names())
    unknown = set(grads) - trainable
    if unknown:
        raise ValueError(f"gradients for non-trainable parameters: {sorted(unknown)}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    for name, g in grads.items():
        p = model.params[name]
        v = model.opt_state.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v + g + weight_decay * p
        model.opt_state[name] = v.astype(model.dtype)
        model.params[name] = (p - lr * v).astype(model.dtype)
    model.iteration += 1
    return model


def _last_layer(spec: ArchSpec, kinds) -> LayerSpec | None:
    for layer in reversed(spec.layers):
        if layer.kind in kinds:
            return layer
    return None


def apply_freeze_policy(model: Model, policy: str, reinit_seed: int = 0) -> Model:
    """Set per-layer trainable flags and re-initialize the classifier head."""
    if policy not in FREEZE_POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    spec = model.spec
    if policy == "full_learning":
        for layer in spec.layers:
            layer.trainable = True
        model.opt_state = {}
        return model

    head = _last_layer(spec, PARAMETRIC_KINDS)
    if policy == "selective_fc":
        fc_layers = [l for l in spec.layers if l.kind == "fully_connected"]
        if not fc_layers:
            raise PolicyMismatch("selective_fc needs fully-connected layers")
        for layer in spec.layers:
            layer.trainable = layer.kind == "fully_connected"
    else:  # selective_all_but_head
        for layer in spec.layers:
            layer.trainable = True

    # the final classifier layer is learned from scratch
    rng = np.random.Generator(np.random.PCG64(reinit_seed))
    shapes = _param_shapes(spec)
    for name in list(model.params):
        if _owner(name) == head.name:
            model.params[name] = _he_init(shapes[name], rng, model.dtype)
    model.opt_state = {}
    return model


# --- checkpoint format ------------------------------------------------------
# magic "EARN", version u16 LE, count u32; per entry: name_len u16 + UTF-8
# name, rank u8, dims u32[rank], f32 payload; trailing CRC32 of everything
# before it.  Optimizer state is stored under "opt/<param>" and metadata
# under "meta/..." names.

def _encode_entries(entries: dict) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(entries))]
    for name in sorted(entries):
        arr = np.asarray(entries[name], dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _read_checkpoint_entries(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise CheckpointCorrupt(f"cannot read {path}: {exc}") from exc
    if len(blob) < 14 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorrupt(f"bad magic in {path}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointCorrupt(f"CRC mismatch in {path}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointCorrupt(f"unsupported version {version} in {path}")
    off = 10
    entries = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
            off += 4 * size
            entries[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointCorrupt(f"truncated checkpoint {path}") from exc
    if off != len(body):
        raise CheckpointCorrupt(f"trailing bytes in {path}")
    meta = {k: v for k, v in entries.items() if k.startswith("meta/")}
    opt = {k[len("opt/"):]: v for k, v in entries.items() if k.startswith("opt/")}
    params = {k: v for k, v in entries.items()
              if not k.startswith(("meta/", "opt/"))}
    return params, opt, meta


def save_checkpoint(model: Model, path) -> None:
    entries = dict(model.params)
    for name, v in model.opt_state.items():
        entries[f"opt/{name}"] = v
    entries["meta/iteration"] = np.array([model.iteration], dtype=np.float32)
    arch_bytes = np.frombuffer(
        json.dumps(model.spec.to_json(), sort_keys=True).encode(), dtype=np.uint8
    )
    entries["meta/arch_json"] = arch_bytes.astype(np.float32)
    with open(path, "wb") as f:
        f.write(_encode_entries(entries))


def load_checkpoint(path, dtype=np.float32) -> Model:
    params, opt, meta = _read_checkpoint_entries(path)
    if "meta/arch_json" not in meta:
        raise CheckpointCorrupt(f"checkpoint {path} lacks architecture metadata")
    spec = ArchSpec.from_json(
        json.loads(bytes(meta["meta/arch_json"].astype(np.uint8)).decode())
    )
    model = build_model(spec, dtype=dtype)
    report = []
    for name in model.params:
        if name in params and params[name].shape == model.params[name].shape:
            model.params[name] = params[name].astype(dtype)
        else:
            report.append(name)
    model.opt_state = {k: v.astype(dtype) for k, v in opt.items()
                       if k in model.params}
    model.iteration = int(meta.get("meta/iteration", [0])[0])
    model.restore_report = report
    return model
