"""The attention-state network and its parameter containers.

Five stages: a low-level feature extractor (1-D conv + batchnorm), a
squeeze-excitation style channel-attention gate, a non-local temporal
attention block with an embedded-Gaussian similarity, a 1-D DenseNet-121
backbone, and a 5-way softmax head.

Parameters are plain dataclasses of Tensors; forwards are functions so
the same parameter set can serve concurrent eval-mode graphs.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    avgpool1d,
    batchnorm1d,
    concat,
    conv1d,
    linear,
    matmul,
    maxpool1d,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    swapaxes,
)
from .recordings import NUM_CHANNELS, NUM_CLASSES, WINDOW_LEN

MODEL_MAGIC = b"EEGATTN\x01"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    lfe_filters: int = 32          # feature-map channels out of the first conv
    lfe_kernel: int = 7
    ca_hidden: int = 64            # channel-attention MLP width
    growth: int = 32               # dense-block growth rate
    block_layers: tuple = (6, 12, 24, 16)
    compression: float = 0.5
    bottleneck_mult: int = 4
    num_channels: int = NUM_CHANNELS
    window_len: int = WINDOW_LEN
    num_classes: int = NUM_CLASSES

    def validate(self):
        if self.lfe_filters < 2 or self.lfe_filters % 2:
            raise ValueError("lfe_filters must be an even number >= 2")
        if not 0 < self.compression <= 1:
            raise ValueError("compression must be in (0, 1]")
        if not self.block_layers or any(n < 1 for n in self.block_layers):
            raise ValueError("block_layers must be non-empty positive counts")
        return self

    @property
    def embed_channels(self):
        # non-local embedding reduction: half of the feature channels
        return self.lfe_filters // 2

    @property
    def stem_channels(self):
        return 2 * self.growth

    def feature_width(self):
        """Channel count leaving the backbone (1024 for the 121 layout)."""
        ch = self.stem_channels
        for i, layers in enumerate(self.block_layers):
            ch += layers * self.growth
            if i < len(self.block_layers) - 1:
                ch = int(ch * self.compression)
        return ch

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def tiny(cls):
        """Desk-scale configuration used for gradient checks and CPU runs."""
        return cls(lfe_filters=8, growth=8, block_layers=(2, 2, 2, 2))


@dataclass
class LfeParams:
    kernel: Tensor
    bn: BatchNormState


@dataclass
class CaParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class NtaParams:
    w_theta: Tensor
    w_phi: Tensor
    w_g: Tensor
    w_w: Tensor
    bn: BatchNormState


@dataclass
class DenseLayerParams:
    bn1: BatchNormState
    conv1: Tensor   # 1x1 bottleneck
    bn2: BatchNormState
    conv2: Tensor   # width-3 growth conv


@dataclass
class TransitionParams:
    bn: BatchNormState
    kernel: Tensor  # 1x1 compression conv


@dataclass
class HfeParams:
    stem_kernel: Tensor
    stem_bn: BatchNormState
    blocks: list
    transitions: list
    final_bn: BatchNormState


@dataclass
class ClassifierParams:
    weight: Tensor
    bias: Tensor


@dataclass
class ModelParams:
    config: ModelConfig
    lfe: LfeParams
    ca: CaParams
    nta: NtaParams
    hfe: HfeParams
    classifier: ClassifierParams

    def named_parameters(self):
        """Ordered name -> trainable Tensor map."""
        return dict(_walk_tensors(self))

    def named_buffers(self):
        """Ordered name -> running-statistics array map."""
        return {f"{name}.{attr}": getattr(state, attr)
                for name, state in _walk_bn_states(self)
                for attr in ("running_mean", "running_var")}

    def bn_states(self):
        return dict(_walk_bn_states(self))

    def copy(self):
        return _map_structure(self, lambda t: Tensor(t.data.copy(), requires_grad=True),
                              lambda s: BatchNormState(
                                  gamma=Tensor(s.gamma.data.copy(), requires_grad=True),
                                  beta=Tensor(s.beta.data.copy(), requires_grad=True),
                                  running_mean=s.running_mean.copy(),
                                  running_var=s.running_var.copy(),
                                  momentum=s.momentum,
                                  epsilon=s.epsilon))

    def astype(self, dtype):
        dtype = np.dtype(dtype)
        return _map_structure(self, lambda t: Tensor(t.data.astype(dtype), requires_grad=True),
                              lambda s: BatchNormState(
                                  gamma=Tensor(s.gamma.data.astype(dtype), requires_grad=True),
                                  beta=Tensor(s.beta.data.astype(dtype), requires_grad=True),
                                  running_mean=s.running_mean.astype(dtype),
                                  running_var=s.running_var.astype(dtype),
                                  momentum=s.momentum,
                                  epsilon=s.epsilon))


def _walk(obj, prefix=""):
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, BatchNormState):
        yield prefix, obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from _walk(item, f"{prefix}.{i}")
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, ModelConfig):
        for f in dataclasses.fields(obj):
            if f.name == "config":
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from _walk(getattr(obj, f.name), name)


def _walk_tensors(params):
    for name, obj in _walk(params):
        if isinstance(obj, Tensor):
            yield name, obj
        else:
            yield f"{name}.gamma", obj.gamma
            yield f"{name}.beta", obj.beta


def _walk_bn_states(params):
    for name, obj in _walk(params):
        if isinstance(obj, BatchNormState):
            yield name, obj


def _map_structure(obj, tensor_fn, bn_fn):
    if isinstance(obj, Tensor):
        return tensor_fn(obj)
    if isinstance(obj, BatchNormState):
        return bn_fn(obj)
    if isinstance(obj, list):
        return [_map_structure(v, tensor_fn, bn_fn) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_map_structure(v, tensor_fn, bn_fn) for v in obj)
    if isinstance(obj, ModelConfig):
        return obj
    if dataclasses.is_dataclass(obj):
        return type(obj)(**{f.name: _map_structure(getattr(obj, f.name), tensor_fn, bn_fn)
                            for f in dataclasses.fields(obj)})
    return obj


def init_params(seed, config=None, dtype=np.float64):
    """Deterministic fan-in-scaled uniform init; batchnorm gamma=1, beta=0."""
    config = (config or ModelConfig()).validate()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)

    def conv(c_out, c_in, k):
        bound = 1.0 / np.sqrt(c_in * k)
        return Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k)).astype(dtype),
                      requires_grad=True)

    def affine(d_out, d_in):
        bound = 1.0 / np.sqrt(d_in)
        w = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
        return w, b

    def bn(channels):
        return BatchNormState.create(channels, dtype=dtype)

    cf = config.lfe_filters
    ce = config.embed_channels
    lfe = LfeParams(kernel=conv(cf, config.num_channels, config.lfe_kernel), bn=bn(cf))
    w1, b1 = affine(config.ca_hidden, cf)
    w2, b2 = affine(cf, config.ca_hidden)
    ca = CaParams(w1=w1, b1=b1, w2=w2, b2=b2)
    nta = NtaParams(w_theta=conv(ce, cf, 1), w_phi=conv(ce, cf, 1),
                    w_g=conv(ce, cf, 1), w_w=conv(cf, ce, 1), bn=bn(cf))

    blocks = []
    transitions = []
    ch = config.stem_channels
    stem_kernel = conv(ch, cf, 7)
    stem_bn = bn(ch)
    width = config.bottleneck_mult * config.growth
    for i, n_layers in enumerate(config.block_layers):
        layers = []
        for _ in range(n_layers):
            layers.append(DenseLayerParams(
                bn1=bn(ch), conv1=conv(width, ch, 1),
                bn2=bn(width), conv2=conv(config.growth, width, 3)))
            ch += config.growth
        blocks.append(layers)
        if i < len(config.block_layers) - 1:
            out_ch = int(ch * config.compression)
            transitions.append(TransitionParams(bn=bn(ch), kernel=conv(out_ch, ch, 1)))
            ch = out_ch
    hfe = HfeParams(stem_kernel=stem_kernel, stem_bn=stem_bn,
                    blocks=blocks, transitions=transitions, final_bn=bn(ch))
    cw, cb = affine(config.num_classes, ch)
    classifier = ClassifierParams(weight=cw, bias=cb)
    return ModelParams(config=config, lfe=lfe, ca=ca, nta=nta, hfe=hfe,
                       classifier=classifier)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def lfe_forward(x, p, training=False):
    """Same-padded conv over the raw channels, then batch normalization."""
    if x.ndim != 3 or x.shape[1] != p.kernel.shape[1]:
        raise ValueError(f"low-level extractor expects [B, {p.kernel.shape[1]}, T] "
                         f"input, got shape {x.shape}")
    return batchnorm1d(conv1d(x, p.kernel, stride=1, padding="same"), p.bn, training)


def channel_attention_forward(x, p, return_weights=False):
    """Gate each feature channel by a sigmoid MLP of its temporal mean."""
    squeezed = x.mean(axis=2)
    hidden = relu(linear(squeezed, p.w1, p.b1))
    weights = sigmoid(linear(hidden, p.w2, p.b2))
    gated = mul(x, reshape(weights, (x.shape[0], x.shape[1], 1)))
    if return_weights:
        return gated, weights
    return gated


def nta_forward(x, p, training=False, return_nl=False):
    """Non-local temporal attention with embedded-Gaussian similarity.

    The query path keeps full temporal resolution; key and value paths are
    max-pooled by 2 (skipped when T == 1). Output adds a residual, so
    zeroed projection weights reduce the block to identity.
    """
    t_len = x.shape[2]
    theta = conv1d(x, p.w_theta)
    phi = conv1d(x, p.w_phi)
    g = conv1d(x, p.w_g)
    if t_len >= 2:
        phi = maxpool1d(phi, kernel=2, stride=2)
        g = maxpool1d(g, kernel=2, stride=2)
    scores = matmul(swapaxes(theta, 1, 2), phi)          # [B, T, T_s]
    attention = softmax(scores, axis=2)
    pooled = swapaxes(matmul(attention, swapaxes(g, 1, 2)), 1, 2)  # [B, C_e, T]
    projected = batchnorm1d(conv1d(pooled, p.w_w), p.bn, training)
    out = projected + x
    if return_nl:
        return out, pooled
    return out


def _dense_layer(x, layer, training):
    h = relu(batchnorm1d(x, layer.bn1, training))
    h = conv1d(h, layer.conv1)
    h = relu(batchnorm1d(h, layer.bn2, training))
    h = conv1d(h, layer.conv2, padding=1)
    return concat([x, h], axis=1)


def hfe_forward(x, p, training=False):
    """1-D dense backbone: stem, dense blocks with transitions, global pool."""
    h = conv1d(x, p.stem_kernel, stride=2, padding=3)
    h = relu(batchnorm1d(h, p.stem_bn, training))
    h = maxpool1d(h, kernel=3, stride=2, padding=1)
    for i, block in enumerate(p.blocks):
        for layer in block:
            h = _dense_layer(h, layer, training)
        if i < len(p.blocks) - 1:
            trans = p.transitions[i]
            h = relu(batchnorm1d(h, trans.bn, training))
            h = conv1d(h, trans.kernel)
            h = avgpool1d(h, kernel=2, stride=2)
    h = relu(batchnorm1d(h, p.final_bn, training))
    return h.mean(axis=2)


def classify(x, p, return_logits=False):
    logits = linear(x, p.weight, p.bias)
    probabilities = softmax(logits, axis=1)
    if return_logits:
        return probabilities, logits
    return probabilities


@dataclass
class ActivationCache:
    """Every named activation of one forward pass."""

    x: Tensor
    x_lfe: Tensor
    x_ca: Tensor
    x_nl: Tensor
    x_nta: Tensor
    x_hfe: Tensor
    logits: Tensor
    probabilities: Tensor


def model_forward(x, params, training=False):
    """Chain the five blocks, asserting the shape contract at each stage."""
    cfg = params.config
    batch = x.shape[0]
    x_lfe = lfe_forward(x, params.lfe, training)
    assert x_lfe.shape == (batch, cfg.lfe_filters, cfg.window_len)
    x_ca = channel_attention_forward(x_lfe, params.ca)
    assert x_ca.shape == x_lfe.shape
    x_nta, x_nl = nta_forward(x_ca, params.nta, training, return_nl=True)
    assert x_nta.shape == x_ca.shape
    x_hfe = hfe_forward(x_nta, params.hfe, training)
    assert x_hfe.shape == (batch, cfg.feature_width())
    probabilities, logits = classify(x_hfe, params.classifier, return_logits=True)
    assert probabilities.shape == (batch, cfg.num_classes)
    return ActivationCache(x=x, x_lfe=x_lfe, x_ca=x_ca, x_nl=x_nl, x_nta=x_nta,
                           x_hfe=x_hfe, logits=logits, probabilities=probabilities)


# ---------------------------------------------------------------------------
# serialization: manifest + little-endian raw float64 tensors
# ---------------------------------------------------------------------------

def _all_named_arrays(params):
    arrays = {name: t.data for name, t in params.named_parameters().items()}
    arrays.update(params.named_buffers())
    return arrays


def save_model(params, path):
    arrays = _all_named_arrays(params)
    index = []
    offset = 0
    for name, arr in arrays.items():
        index.append({"name": name, "shape": list(arr.shape),
                      "dtype": str(arr.dtype), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": dataclasses.asdict(params.config),
        "tensors": index,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        data = fh.read()
    if manifest["format_version"] != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {manifest['format_version']}")
    cfg_dict = dict(manifest["config"])
    cfg_dict["block_layers"] = tuple(cfg_dict["block_layers"])
    config = ModelConfig(**cfg_dict)
    params = init_params(0, config)
    tensors = params.named_parameters()
    states = params.bn_states()
    for entry in manifest["tensors"]:
        raw = np.frombuffer(data, dtype="<f8", count=int(np.prod(entry["shape"], dtype=int)),
                            offset=entry["offset"]).reshape(entry["shape"])
        value = raw.astype(entry["dtype"])
        name = entry["name"]
        if name in tensors:
            tensors[name].data = value.copy()
        else:
            prefix, attr = name.rsplit(".", 1)
            setattr(states[prefix], attr, value.copy())
    return params
