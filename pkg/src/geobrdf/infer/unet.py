"""Encoder-decoder predictor of per-pixel BRDF coefficients from a DEM crop."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..brdf import BrdfModel, CoefficientMap
from ..errors import InvalidInputError, ShapeError
from . import tape
from .tape import Tensor

CHECKPOINT_MAGIC = b"SG2N"
CHECKPOINT_VERSION = 1


class Conv2d:
    def __init__(self, c_in, c_out, k=3, bias=True, rng=None, zero=False):
        fan_in = c_in * k * k
        if zero:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x):
        return tape.conv2d(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class BatchNorm2d:
    def __init__(self, c, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training):
        return tape.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               training, self.momentum, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]


class Block:
    """conv3x3 -> batch-norm -> leaky ReLU."""

    def __init__(self, c_in, c_out, slope, rng):
        self.conv = Conv2d(c_in, c_out, 3, bias=False, rng=rng)
        self.bn = BatchNorm2d(c_out)
        self.slope = slope

    def __call__(self, x, training):
        return tape.leaky_relu(self.bn(self.conv(x), training), self.slope)

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()


@dataclass
class NetConfig:
    encoder_widths: tuple = (8, 16, 32, 64)
    decoder_widths: tuple = (48, 24, 12, 8)
    leaky_slope: float = 0.01
    in_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        self.decoder_widths = tuple(int(v) for v in self.decoder_widths)
        if len(self.encoder_widths) != len(self.decoder_widths) or not self.encoder_widths:
            raise InvalidInputError("encoder and decoder need the same (non-zero) number of stages")


class PredictorNet:
    """U-Net with max-pool downsampling and nearest-neighbour upsampling.

    Encoder stage s: block -> (skip_s) -> max-pool.  Decoder stage s:
    upsample -> concat skip_s -> block.  A zero-initialized 1x1 projection
    maps the last decoder features to ``n_params`` coefficient channels.
    """

    def __init__(self, model, config: NetConfig | None = None):
        self.model = BrdfModel(model)
        self.config = config or NetConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.encoder = []
        c = cfg.in_channels
        for width in cfg.encoder_widths:
            self.encoder.append(Block(c, width, cfg.leaky_slope, rng))
            c = width
        self.decoder = []
        for skip, width in zip(reversed(cfg.encoder_widths), cfg.decoder_widths):
            self.decoder.append(Block(c + skip, width, cfg.leaky_slope, rng))
            c = width
        self.head = Conv2d(c, self.model.n_params, 1, bias=True, zero=True)
        self.training = True

    @property
    def n_stages(self) -> int:
        return len(self.encoder)

    def layers(self):
        """(name, module) pairs in a fixed order."""
        out = [(f"enc{i}", b) for i, b in enumerate(self.encoder)]
        out += [(f"dec{i}", b) for i, b in enumerate(self.decoder)]
        out.append(("head", self.head))
        return out

    def parameters(self):
        params = []
        for _, layer in self.layers():
            params.extend(layer.parameters())
        return params

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def check_input(self, shape):
        factor = 2**self.n_stages
        if len(shape) != 4 or shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (N, {self.config.in_channels}, H, W) input, got {shape}")
        if shape[2] % factor or shape[3] % factor:
            raise ShapeError(f"crop size {shape[2:]} must be divisible by {factor}")

    def __call__(self, x) -> Tensor:
        x = tape.as_tensor(x)
        self.check_input(x.shape)
        skips = []
        for block in self.encoder:
            x = block(x, self.training)
            skips.append(x)
            x = tape.max_pool2(x)
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(tape.concat(tape.upsample2(x), skip), self.training)
        return self.head(x)

    # -- persistence ---------------------------------------------------------
    def state(self):
        """Ordered (name, array) pairs: parameters then batch-norm running moments."""
        items = []
        for name, layer in self.layers():
            if isinstance(layer, Block):
                items += [(f"{name}.conv.weight", layer.conv.weight.data),
                          (f"{name}.bn.gamma", layer.bn.gamma.data),
                          (f"{name}.bn.beta", layer.bn.beta.data),
                          (f"{name}.bn.running_mean", layer.bn.running_mean),
                          (f"{name}.bn.running_var", layer.bn.running_var)]
            else:
                items += [(f"{name}.weight", layer.weight.data), (f"{name}.bias", layer.bias.data)]
        return items

    def load_state(self, arrays: dict):
        for name, layer in self.layers():
            if isinstance(layer, Block):
                layer.conv.weight.data = np.array(arrays[f"{name}.conv.weight"], dtype=np.float64)
                layer.bn.gamma.data = np.array(arrays[f"{name}.bn.gamma"], dtype=np.float64)
                layer.bn.beta.data = np.array(arrays[f"{name}.bn.beta"], dtype=np.float64)
                layer.bn.running_mean[...] = arrays[f"{name}.bn.running_mean"]
                layer.bn.running_var[...] = arrays[f"{name}.bn.running_var"]
            else:
                layer.weight.data = np.array(arrays[f"{name}.weight"], dtype=np.float64)
                layer.bias.data = np.array(arrays[f"{name}.bias"], dtype=np.float64)


def predictor_forward(net: PredictorNet, crop) -> CoefficientMap | list:
    """Inference-mode coefficients for one normalized crop (H, W) or a batch (N, H, W)."""
    x = np.asarray(crop, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    was_training = net.training
    net.eval()
    try:
        out = net(x[:, None]).data
    finally:
        net.train(was_training)
    maps = [CoefficientMap(net.model, o) for o in out]
    return maps[0] if single else maps


def save_checkpoint(net: PredictorNet, path, extra=None) -> None:
    """Layer manifest (JSON) followed by little-endian float32 blobs."""
    state = net.state()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "model": net.model.value,
        "config": {
            "encoder_widths": list(net.config.encoder_widths),
            "decoder_widths": list(net.config.decoder_widths),
            "leaky_slope": net.config.leaky_slope,
            "in_channels": net.config.in_channels,
            "seed": net.config.seed,
        },
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in state],
        "extra": extra or {},
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, a in state:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (net, extra)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise InvalidInputError(f"{path} is not a predictor checkpoint")
        version, n = struct.unpack("<HI", fh.read(6))
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(n))
        arrays = {}
        for t in manifest["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arrays[t["name"]] = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(t["shape"])
    net = PredictorNet(manifest["model"], NetConfig(**manifest["config"]))
    net.load_state(arrays)
    return net, manifest.get("extra", {})


@dataclass
class ParamSummary:
    total: int
    per_layer: dict = field(default_factory=dict)


def summarize(net: PredictorNet) -> ParamSummary:
    per = {name: int(sum(p.data.size for p in layer.parameters())) for name, layer in net.layers()}
    return ParamSummary(sum(per.values()), per)
