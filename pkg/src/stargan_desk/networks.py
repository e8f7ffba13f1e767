"""Generator and discriminator builders for multi-domain image translation.

The generator maps an image plus a target-domain one-hot label to an image
of the same size; the label is spatially replicated and concatenated to the
input channels before the first layer. The discriminator is a fully
convolutional critic with two heads: an unbounded per-patch realness score
and per-domain classification logits.

Parameter naming and iteration order follow construction order and are the
contract for checkpoints: stem, down1, down2, res1..resN (conv1/norm1/
conv2/norm2 each), up1, up2, head for the generator; body1..bodyN, src,
cls for the discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class GeneratorConfig:
    conv_dim: int = 64
    c_dim: int = 7
    repeat_num: int = 6
    in_channels: int = IMAGE_CHANNELS

    def __post_init__(self):
        if self.conv_dim < 1:
            raise ValueError(f"conv_dim must be >= 1, got {self.conv_dim}")
        if self.c_dim < 2:
            raise ValueError(f"c_dim must be >= 2, got {self.c_dim}")
        if self.repeat_num < 1:
            raise ValueError(f"repeat_num must be >= 1, got {self.repeat_num}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    image_size: int = 64
    conv_dim: int = 64
    c_dim: int = 7
    repeat_num: int = 6

    def __post_init__(self):
        if self.conv_dim < 1:
            raise ValueError(f"conv_dim must be >= 1, got {self.conv_dim}")
        if self.c_dim < 2:
            raise ValueError(f"c_dim must be >= 2, got {self.c_dim}")
        if self.repeat_num < 1:
            raise ValueError(f"repeat_num must be >= 1, got {self.repeat_num}")
        stride_total = 2**self.repeat_num
        if self.image_size % stride_total != 0 or self.image_size // stride_total < 1:
            raise ValueError(
                f"image_size {self.image_size} must be a positive multiple of 2^repeat_num = {stride_total}"
            )


class Network:
    """Named parameter store with deterministic iteration order."""

    def __init__(self):
        self.params: dict[str, ad.Tensor] = {}

    def add_param(self, name, array):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = ad.Tensor(array, requires_grad=True)
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def __getitem__(self, name):
        return self.params[name]


def count_params(net):
    """Total number of scalar parameters in the network."""
    return sum(p.size for p in net.params.values())


def _he_conv(rng, out_c, in_c, kh, kw):
    fan_in = in_c * kh * kw
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_c, in_c, kh, kw))


def _he_convt(rng, in_c, out_c, kh, kw):
    fan_in = in_c * kh * kw
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(in_c, out_c, kh, kw))


class Generator(Network):
    def __init__(self, cfg: GeneratorConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        d = cfg.conv_dim

        def conv_in_block(name, out_c, in_c, k):
            self.add_param(f"{name}.weight", _he_conv(rng, out_c, in_c, k, k))
            self.add_param(f"{name}.gamma", np.ones(out_c))
            self.add_param(f"{name}.beta", np.zeros(out_c))

        conv_in_block("stem", d, cfg.in_channels + cfg.c_dim, 7)
        conv_in_block("down1", 2 * d, d, 4)
        conv_in_block("down2", 4 * d, 2 * d, 4)
        for k in range(1, cfg.repeat_num + 1):
            self.add_param(f"res{k}.conv1.weight", _he_conv(rng, 4 * d, 4 * d, 3, 3))
            self.add_param(f"res{k}.norm1.gamma", np.ones(4 * d))
            self.add_param(f"res{k}.norm1.beta", np.zeros(4 * d))
            self.add_param(f"res{k}.conv2.weight", _he_conv(rng, 4 * d, 4 * d, 3, 3))
            self.add_param(f"res{k}.norm2.gamma", np.ones(4 * d))
            self.add_param(f"res{k}.norm2.beta", np.zeros(4 * d))
        self.add_param("up1.weight", _he_convt(rng, 4 * d, 2 * d, 4, 4))
        self.add_param("up1.gamma", np.ones(2 * d))
        self.add_param("up1.beta", np.zeros(2 * d))
        self.add_param("up2.weight", _he_convt(rng, 2 * d, d, 4, 4))
        self.add_param("up2.gamma", np.ones(d))
        self.add_param("up2.beta", np.zeros(d))
        self.add_param("head.weight", _he_conv(rng, cfg.in_channels, d, 7, 7))

    def forward(self, x, c):
        """Translate batch ``x`` toward the domains one-hot encoded in ``c``.

        ``x``: (N, in_channels, H, W) with H == W divisible by 4.
        ``c``: (N, c_dim) one-hot rows.
        """
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        c = c if isinstance(c, ad.Tensor) else ad.Tensor(c)
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ad.ShapeError(f"expected (N, {cfg.in_channels}, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        if h != w or h % 4 != 0:
            raise ad.ShapeError(f"input must be square with side divisible by 4, got {h}x{w}")
        if c.shape != (n, cfg.c_dim):
            raise ad.ShapeError(f"labels must have shape ({n}, {cfg.c_dim}), got {c.shape}")
        rows = c.data
        if not (np.all((rows == 0.0) | (rows == 1.0)) and np.all(rows.sum(axis=1) == 1.0)):
            raise ValueError("domain labels must be one-hot rows")

        cmap = ad.broadcast_to(ad.reshape(c, (n, cfg.c_dim, 1, 1)), (n, cfg.c_dim, h, w))
        out = ad.concat([x, cmap], axis=1)

        def conv_in_relu(name, t, k, stride, padding):
            t = ad.conv2d(t, self[f"{name}.weight"], stride=stride, padding=padding)
            t = ad.instance_norm(t, self[f"{name}.gamma"], self[f"{name}.beta"])
            return ad.relu(t)

        out = conv_in_relu("stem", out, 7, 1, 3)
        out = conv_in_relu("down1", out, 4, 2, 1)
        out = conv_in_relu("down2", out, 4, 2, 1)
        for k in range(1, cfg.repeat_num + 1):
            h_in = out
            t = ad.conv2d(h_in, self[f"res{k}.conv1.weight"], stride=1, padding=1)
            t = ad.instance_norm(t, self[f"res{k}.norm1.gamma"], self[f"res{k}.norm1.beta"])
            t = ad.relu(t)
            t = ad.conv2d(t, self[f"res{k}.conv2.weight"], stride=1, padding=1)
            t = ad.instance_norm(t, self[f"res{k}.norm2.gamma"], self[f"res{k}.norm2.beta"])
            out = ad.add(h_in, t)
        for name in ("up1", "up2"):
            out = ad.conv_transpose2d(out, self[f"{name}.weight"], stride=2, padding=1)
            out = ad.instance_norm(out, self[f"{name}.gamma"], self[f"{name}.beta"])
            out = ad.relu(out)
        out = ad.conv2d(out, self["head.weight"], stride=1, padding=3)
        return ad.tanh(out)


class Discriminator(Network):
    def __init__(self, cfg: DiscriminatorConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        in_c = IMAGE_CHANNELS
        out_c = cfg.conv_dim
        for k in range(1, cfg.repeat_num + 1):
            self.add_param(f"body{k}.weight", _he_conv(rng, out_c, in_c, 4, 4))
            self.add_param(f"body{k}.bias", np.zeros(out_c))
            in_c, out_c = out_c, out_c * 2
        top = cfg.conv_dim * 2 ** (cfg.repeat_num - 1)
        self.add_param("src.weight", _he_conv(rng, 1, top, 3, 3))
        k_cls = cfg.image_size // 2**cfg.repeat_num
        self.add_param("cls.weight", _he_conv(rng, cfg.c_dim, top, k_cls, k_cls))

    def forward(self, x):
        """Score a batch: (per-patch realness map, (N, c_dim) domain logits)."""
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != IMAGE_CHANNELS:
            raise ad.ShapeError(f"expected (N, {IMAGE_CHANNELS}, H, W) input, got {x.shape}")
        if x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise ad.ShapeError(
                f"input spatial size {x.shape[2]}x{x.shape[3]} does not match configured {cfg.image_size}"
            )
        out = x
        for k in range(1, cfg.repeat_num + 1):
            out = ad.conv2d(out, self[f"body{k}.weight"], self[f"body{k}.bias"], stride=2, padding=1)
            out = ad.leaky_relu(out, 0.01)
        src = ad.conv2d(out, self["src.weight"], stride=1, padding=1)
        cls = ad.conv2d(out, self["cls.weight"], stride=1, padding=0)
        n = x.shape[0]
        cls = ad.reshape(cls, (n, cfg.c_dim))
        return src, cls


def build_generator(cfg: GeneratorConfig | None = None, seed=0) -> Generator:
    return Generator(cfg or GeneratorConfig(), seed=seed)


def build_discriminator(cfg: DiscriminatorConfig | None = None, seed=0) -> Discriminator:
    return Discriminator(cfg or DiscriminatorConfig(), seed=seed)


def forward_g(net: Generator, x, c):
    return net.forward(x, c)


def forward_d(net: Discriminator, x):
    return net.forward(x)
