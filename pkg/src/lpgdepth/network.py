"""Toy encoder / ASPP / decoder with local planar guidance heads.

Variants mirror an incremental ablation:

* ``baseline``: strided encoder, 1x1 depth head at H/8, nearest upsample x8.
* ``aspp``: baseline plus the dilated context block at H/8.
* ``aspp_upconv``: ASPP plus the upconv decoder with skips; depth comes from
  the final conv over the 1x1 reduction cue alone.
* ``full``: adds LPG heads at H/8, H/4 and H/2. Each cue map is routed
  (nearest-downsampled, divided by kappa) into every later decoder stage and
  the final 3x3 conv combines all four cues.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ops
from .core.tensor import Tensor
from .lpg import PlaneCoeffMap, lpg_expand, reduce_to_coeffs, reduction_widths

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "aspp", "aspp_upconv", "full")
LPG_SCALES = (8, 4, 2)


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    base_width: int = 16
    aspp_rates: tuple[int, ...] = (3, 6, 12, 18, 24)
    kappa: float = 10.0
    input_size: tuple[int, int] = (64, 64)
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % 8 or w % 8:
            raise ValueError(f"input size {h}x{w} must be positive multiples of 8")
        if self.input_channels not in (1, 3):
            raise ValueError("input_channels must be 1 or 3")
        if self.base_width < 4 or self.base_width % 2:
            raise ValueError("base_width must be an even number >= 4")
        rates = list(self.aspp_rates)
        if not rates or any(r < 1 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"aspp_rates must be strictly increasing and >= 1, got {rates}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def usable_rates(rates, extent: int) -> list[int]:
    """Dilation rates whose off-centre taps can still land inside an ``extent`` map."""
    return [r for r in rates if r < extent]


@dataclass
class ForwardOutputs:
    depth: Tensor
    cues: dict[str, Tensor] = field(default_factory=dict)


class DepthNet:
    """Parameters plus the forward wiring for one :class:`ModelConfig`."""

    def __init__(self, cfg: ModelConfig, params: Optional["OrderedDict[str, Tensor]"] = None):
        self.cfg = cfg
        h8, w8 = cfg.input_size[0] // 8, cfg.input_size[1] // 8
        self.rates = usable_rates(cfg.aspp_rates, min(h8, w8))
        dropped = [r for r in cfg.aspp_rates if r not in self.rates]
        if dropped and cfg.variant != "baseline":
            log.info("ASPP rates %s exceed the %dx%d feature map and are dropped", dropped, h8, w8)
        self.shapes = param_shapes(cfg, self.rates)
        self.params = params if params is not None else init_params(cfg, cfg.seed, self.shapes)
        for name, shape in self.shapes.items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValueError(f"parameter {name!r} missing or not shaped {shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _conv(self, name: str, x: Tensor, dilation: int = 1, stride: int = 1) -> Tensor:
        w = self.params[f"{name}.weight"]
        pad = dilation * (w.shape[-1] // 2)
        return ops.conv2d(x, w, self.params[f"{name}.bias"], stride=stride, dilation=dilation, padding=pad)

    def aspp(self, x: Tensor) -> Tensor:
        branches = [ops.elu(self._conv("aspp.branch1x1", x))]
        for r in self.rates:
            branches.append(ops.elu(self._conv(f"aspp.rate{r}", x, dilation=r)))
        return ops.elu(self._conv("aspp.fuse", ops.concat(branches, axis=1)))

    def _lpg(self, name: str, feats: Tensor, k: int) -> tuple[PlaneCoeffMap, Tensor]:
        n = len(reduction_widths(feats.shape[1])) - 1
        layers = [(self.params[f"{name}.reduc{i}.weight"], self.params[f"{name}.reduc{i}.bias"]) for i in range(n)]
        coeffs = reduce_to_coeffs(feats, layers, self.cfg.kappa, k)
        return coeffs, lpg_expand(coeffs)

    def _upconv(self, name: str, x: Tensor) -> Tensor:
        # Exact fused form of a 3x3 conv over the x2 nearest-upsampled map.
        return ops.elu(ops.upconv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"]))

    def forward(self, x: Tensor) -> ForwardOutputs:
        cfg = self.cfg
        expected = (cfg.input_channels, *cfg.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"input must be shaped (B, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")
        kappa = cfg.kappa
        e1 = ops.elu(self._conv("encoder.conv1", x, stride=2))
        e2 = ops.elu(self._conv("encoder.conv2", e1, stride=2))
        e3 = ops.elu(self._conv("encoder.conv3", e2, stride=2))
        feats8 = e3 if cfg.variant == "baseline" else self.aspp(e3)

        if cfg.variant in ("baseline", "aspp"):
            d8 = ops.mul_scalar(ops.sigmoid(self._conv("head8", feats8)), kappa)
            return ForwardOutputs(ops.nearest_upsample(d8, 8))

        use_lpg = cfg.variant == "full"
        cues: dict[str, Tensor] = {}
        routed: list[Tensor] = []

        def route(factor: int) -> list[Tensor]:
            return [ops.mul_scalar(ops.downsample_nearest(c, factor) if factor > 1 else c, 1.0 / kappa) for c in routed]

        if use_lpg:
            _, cues["8x8"] = self._lpg("lpg8", feats8, 8)
            routed.append(cues["8x8"])

        up = self._upconv("decoder.up4", feats8)
        f4 = ops.elu(self._conv("decoder.iconv4", ops.concat([up, e2, *route(4)], axis=1)))
        if use_lpg:
            _, cues["4x4"] = self._lpg("lpg4", f4, 4)
            routed.append(cues["4x4"])

        up = self._upconv("decoder.up2", f4)
        f2 = ops.elu(self._conv("decoder.iconv2", ops.concat([up, e1, *route(2)], axis=1)))
        if use_lpg:
            _, cues["2x2"] = self._lpg("lpg2", f2, 2)
            routed.append(cues["2x2"])

        up = self._upconv("decoder.up1", f2)
        f1 = ops.elu(self._conv("decoder.iconv1", ops.concat([up, x, *route(1)], axis=1)))
        cues["1x1"] = ops.mul_scalar(ops.sigmoid(self._conv("decoder.reduc1x1", f1)), kappa)

        stack = [cues[key] for key in ("1x1", "2x2", "4x4", "8x8") if key in cues]
        depth = ops.mul_scalar(ops.sigmoid(self._conv("final.conv", ops.concat(stack, axis=1))), kappa)
        return ForwardOutputs(depth, cues)

    __call__ = forward


def param_shapes(cfg: ModelConfig, rates: list[int]) -> "OrderedDict[str, tuple]":
    """Name -> shape for every parameter; a pure function of the config."""
    w = cfg.base_width
    shapes: "OrderedDict[str, tuple]" = OrderedDict()

    def conv(name, cin, cout, k):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    conv("encoder.conv1", cfg.input_channels, w, 3)
    conv("encoder.conv2", w, 2 * w, 3)
    conv("encoder.conv3", 2 * w, 4 * w, 3)
    c8 = 4 * w
    if cfg.variant != "baseline":
        branch = c8 // 2
        conv("aspp.branch1x1", c8, branch, 1)
        for r in rates:
            conv(f"aspp.rate{r}", c8, branch, 3)
        conv("aspp.fuse", branch * (1 + len(rates)), c8, 1)
    if cfg.variant in ("baseline", "aspp"):
        conv("head8", c8, 1, 1)
        return shapes

    use_lpg = cfg.variant == "full"

    def lpg(name, cin):
        widths = reduction_widths(cin)
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            conv(f"{name}.reduc{i}", a, b, 1)

    if use_lpg:
        lpg("lpg8", c8)
    conv("decoder.up4", c8, 2 * w, 3)
    conv("decoder.iconv4", 2 * w + 2 * w + (1 if use_lpg else 0), 2 * w, 3)
    if use_lpg:
        lpg("lpg4", 2 * w)
    conv("decoder.up2", 2 * w, w, 3)
    conv("decoder.iconv2", w + w + (2 if use_lpg else 0), w, 3)
    if use_lpg:
        lpg("lpg2", w)
    conv("decoder.up1", w, w // 2, 3)
    conv("decoder.iconv1", w // 2 + cfg.input_channels + (3 if use_lpg else 0), w // 2, 3)
    conv("decoder.reduc1x1", w // 2, 1, 1)
    conv("final.conv", 4 if use_lpg else 1, 1, 3)
    return shapes


def init_params(cfg: ModelConfig, seed: int, shapes: Optional[dict] = None) -> "OrderedDict[str, Tensor]":
    """He-style uniform weights (variance 2 / fan_in), zero biases.

    The final conv reads raw cues in depth units, so its weights are further
    divided by kappa; the last layer of each LPG reduction stack is scaled by
    0.1 so training starts from near fronto-parallel planes.
    """
    if shapes is None:
        shapes = param_shapes(cfg, usable_rates(cfg.aspp_rates, min(cfg.input_size) // 8))
    rng = np.random.default_rng(seed)
    last_reduc = {}
    for name in shapes:
        if name.startswith("lpg") and name.endswith(".weight"):
            head = name.split(".")[0]
            last_reduc[head] = name
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
            if name == "final.conv.weight":
                data /= cfg.kappa
            elif name in last_reduc.values():
                data *= 0.1
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def build_model(cfg: ModelConfig) -> DepthNet:
    return DepthNet(cfg)


def model_forward(model: DepthNet, x: Tensor) -> ForwardOutputs:
    return model.forward(x)
