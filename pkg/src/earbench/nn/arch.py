"""Declarative layer lists, shape inference and the three mini presets."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ShapeInferenceError

LAYER_KINDS = {
    "conv2d", "maxpool", "avgpool_global", "relu", "fully_connected",
    "fire", "residual_add", "lrn", "softmax_xent_head",
}

PARAMETRIC_KINDS = {"conv2d", "fully_connected", "fire"}


@dataclass
class LayerSpec:
    kind: str
    name: str
    hyper: dict = field(default_factory=dict)
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "fire":
            s = self.hyper.get("squeeze", 0)
            e1 = self.hyper.get("expand1", 0)
            e3 = self.hyper.get("expand3", 0)
            if s < 1 or e1 + e3 < 1:
                raise ValueError(f"fire layer {self.name!r}: squeeze >= 1 and expand1+expand3 >= 1 required")

    def to_json(self):
        return {"kind": self.kind, "name": self.name, "hyper": dict(self.hyper),
                "trainable": self.trainable}

    @classmethod
    def from_json(cls, d):
        return cls(kind=d["kind"], name=d["name"], hyper=dict(d["hyper"]),
                   trainable=d["trainable"])


@dataclass
class ArchSpec:
    layers: list
    input_shape: tuple  # (C, H, W)
    num_classes: int

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        if not self.layers or self.layers[-1].kind != "softmax_xent_head":
            raise ValueError("final layer must be softmax_xent_head")
        self.input_shape = tuple(self.input_shape)

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def infer_shapes(self) -> list:
        """Per-layer output shapes (channels-first, without batch dim).

        fully_connected and the head produce flat (features,) shapes."""
        shapes = {}
        shape = self.input_shape
        out = []
        for layer in self.layers:
            try:
                shape = _infer_one(layer, shape, shapes, self.num_classes)
            except Exception as exc:
                raise ShapeInferenceError(f"layer {layer.name!r}: {exc}") from exc
            shapes[layer.name] = shape
            out.append(shape)
        return out

    def to_json(self):
        return {
            "layers": [l.to_json() for l in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            layers=[LayerSpec.from_json(l) for l in d["layers"]],
            input_shape=tuple(d["input_shape"]),
            num_classes=d["num_classes"],
        )


def _conv_out(h, k, stride, pad):
    o = (h + 2 * pad - k) // stride + 1
    if o < 1:
        raise ValueError(f"kernel {k} stride {stride} pad {pad} does not fit extent {h}")
    return o


def _infer_one(layer: LayerSpec, shape, shapes, num_classes):
    kind = layer.kind
    hp = layer.hyper
    if kind == "conv2d":
        c, h, w = shape
        k, s, p = hp["kernel"], hp.get("stride", 1), hp.get("pad", 0)
        return (hp["out_channels"], _conv_out(h, k, s, p), _conv_out(w, k, s, p))
    if kind == "maxpool":
        c, h, w = shape
        k, s = hp["kernel"], hp.get("stride", hp["kernel"])
        return (c, _conv_out(h, k, s, 0), _conv_out(w, k, s, 0))
    if kind == "avgpool_global":
        c, h, w = shape
        return (c,)
    if kind == "relu":
        return shape
    if kind == "fully_connected":
        feats = 1
        for d in shape:
            feats *= d
        return (hp["out_features"],)
    if kind == "fire":
        c, h, w = shape
        return (hp["expand1"] + hp["expand3"], h, w)
    if kind == "residual_add":
        src = hp["source"]
        if src not in shapes:
            raise ValueError(f"residual source {src!r} not found upstream")
        if shapes[src] != shape:
            raise ValueError(f"residual source shape {shapes[src]} != {shape}")
        return shape
    if kind == "lrn":
        if len(shape) != 3:
            raise ValueError("lrn needs a (C, H, W) input")
        return shape
    if kind == "softmax_xent_head":
        feats = 1
        for d in shape:
            feats *= d
        if feats != num_classes:
            raise ValueError(f"head input has {feats} features, expected {num_classes} classes")
        return (num_classes,)
    raise ValueError(kind)


# --- presets ----------------------------------------------------------------

LRN_DEFAULTS = {"depth": 5, "alpha": 1e-4, "beta": 0.75, "k": 1.0}


def _conv(name, out_channels, kernel, stride=1, pad=0):
    return LayerSpec("conv2d", name,
                     {"out_channels": out_channels, "kernel": kernel,
                      "stride": stride, "pad": pad})


def _fire(name, squeeze, expand):
    return LayerSpec("fire", name,
                     {"squeeze": squeeze, "expand1": expand // 2,
                      "expand3": expand - expand // 2})


def mini_alexnet(num_classes: int, input_hw: int = 64) -> ArchSpec:
    """Five conv layers, three max-pools with LRN after the first two pools,
    three fully-connected layers."""
    layers = [
        _conv("conv1", 16, 5, stride=2, pad=2),
        LayerSpec("relu", "relu1"),
        LayerSpec("maxpool", "pool1", {"kernel": 3, "stride": 2}),
        LayerSpec("lrn", "norm1", dict(LRN_DEFAULTS)),
        _conv("conv2", 32, 5, pad=2),
        LayerSpec("relu", "relu2"),
        LayerSpec("maxpool", "pool2", {"kernel": 3, "stride": 2}),
        LayerSpec("lrn", "norm2", dict(LRN_DEFAULTS)),
        _conv("conv3", 48, 3, pad=1),
        LayerSpec("relu", "relu3"),
        _conv("conv4", 48, 3, pad=1),
        LayerSpec("relu", "relu4"),
        _conv("conv5", 32, 3, pad=1),
        LayerSpec("relu", "relu5"),
        LayerSpec("maxpool", "pool5", {"kernel": 3, "stride": 2}),
        LayerSpec("fully_connected", "fc6", {"out_features": 256}),
        LayerSpec("relu", "relu6"),
        LayerSpec("fully_connected", "fc7", {"out_features": 256}),
        LayerSpec("relu", "relu7"),
        LayerSpec("fully_connected", "fc8", {"out_features": num_classes}),
        LayerSpec("softmax_xent_head", "head"),
    ]
    return ArchSpec(layers, (3, input_hw, input_hw), num_classes)


def mini_vgg(num_classes: int, input_hw: int = 64) -> ArchSpec:
    """2-2-2 stacks of 3x3 convs with max-pools, then three fc layers."""
    layers = []
    widths = [16, 32, 64]
    for b, width in enumerate(widths, start=1):
        for i in (1, 2):
            layers.append(_conv(f"conv{b}_{i}", width, 3, pad=1))
            layers.append(LayerSpec("relu", f"relu{b}_{i}"))
        layers.append(LayerSpec("maxpool", f"pool{b}", {"kernel": 2, "stride": 2}))
    layers += [
        LayerSpec("fully_connected", "fc6", {"out_features": 256}),
        LayerSpec("relu", "relu6"),
        LayerSpec("fully_connected", "fc7", {"out_features": 256}),
        LayerSpec("relu", "relu7"),
        LayerSpec("fully_connected", "fc8", {"out_features": num_classes}),
        LayerSpec("softmax_xent_head", "head"),
    ]
    return ArchSpec(layers, (3, input_hw, input_hw), num_classes)


def mini_squeezenet(num_classes: int, input_hw: int = 64) -> ArchSpec:
    """conv - pool - 3 fires - pool - 4 fires - pool - fire - 1x1 conv -
    global average pool, with identity bypasses around alternate fires."""
    layers = [
        _conv("conv1", 16, 3, stride=2, pad=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("maxpool", "pool1", {"kernel": 3, "stride": 2}),
        _fire("fire2", 8, 32),
        _fire("fire3", 8, 32),
        LayerSpec("residual_add", "res3", {"source": "fire2"}),
        _fire("fire4", 12, 48),
        LayerSpec("maxpool", "pool2", {"kernel": 3, "stride": 2}),
        _fire("fire5", 12, 48),
        LayerSpec("residual_add", "res5", {"source": "pool2"}),
        _fire("fire6", 16, 64),
        _fire("fire7", 16, 64),
        LayerSpec("residual_add", "res7", {"source": "fire6"}),
        _fire("fire8", 20, 80),
        LayerSpec("maxpool", "pool3", {"kernel": 3, "stride": 2}),
        _fire("fire9", 20, 80),
        LayerSpec("residual_add", "res9", {"source": "pool3"}),
        _conv("conv10", num_classes, 1),
        LayerSpec("avgpool_global", "gap"),
        LayerSpec("softmax_xent_head", "head"),
    ]
    return ArchSpec(layers, (3, input_hw, input_hw), num_classes)


PRESETS = {
    "mini-alexnet": mini_alexnet,
    "mini-vgg": mini_vgg,
    "mini-squeezenet": mini_squeezenet,
}
