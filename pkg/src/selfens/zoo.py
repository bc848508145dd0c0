"""Declarative layer specifications and network builders.

A network is an ordered tuple of `Layer` descriptors. Builders cover the
full-scale 32x32 RGB classifier (`conv_large`), a scaled-down CNN that
exercises every layer kind (`cnn_small`), and a small MLP for 2-D toy
problems (`mlp`). Specs are immutable values; shape chaining is validated
before any parameters exist.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigurationError

KINDS = ("gaussian_noise", "conv", "leaky_relu", "max_pool", "dropout",
         "dense", "global_avg_pool", "softmax")


@dataclass(frozen=True)
class Layer:
    """One layer descriptor. Only the fields relevant to `kind` are read."""

    kind: str
    sigma: float = 0.0        # gaussian_noise
    kernel: int = 0           # conv, max_pool
    channels: int = 0         # conv output channels
    padding: str = "same"     # conv: same | valid
    stride: int = 0           # max_pool; 0 means equal to kernel
    slope: float = 0.0        # leaky_relu
    rate: float = 0.0         # dropout probability
    width: int = 0            # dense output width
    weight_norm: bool = False
    mean_bn: bool = False
    bn_momentum: float = 0.999


def gaussian_noise(sigma: float) -> Layer:
    return Layer("gaussian_noise", sigma=sigma)


def conv(kernel: int, channels: int, padding: str = "same",
         weight_norm: bool = True, mean_bn: bool = True,
         bn_momentum: float = 0.999) -> Layer:
    return Layer("conv", kernel=kernel, channels=channels, padding=padding,
                 weight_norm=weight_norm, mean_bn=mean_bn, bn_momentum=bn_momentum)


def leaky_relu(slope: float = 0.1) -> Layer:
    return Layer("leaky_relu", slope=slope)


def max_pool(kernel: int = 2, stride: int = 0) -> Layer:
    return Layer("max_pool", kernel=kernel, stride=stride or kernel)


def dropout(rate: float) -> Layer:
    return Layer("dropout", rate=rate)


def dense(width: int, weight_norm: bool = True, mean_bn: bool = True,
          bn_momentum: float = 0.999) -> Layer:
    return Layer("dense", width=width, weight_norm=weight_norm, mean_bn=mean_bn,
                 bn_momentum=bn_momentum)


def global_avg_pool() -> Layer:
    return Layer("global_avg_pool")


def softmax() -> Layer:
    return Layer("softmax")


def chain_shapes(layers: tuple[Layer, ...], input_shape: tuple[int, ...],
                 ) -> list[tuple[int, ...]]:
    """Per-layer output shapes (batch dimension excluded).

    Raises ConfigurationError on any wiring problem: bad kernel/stride,
    pooling a non-divisible extent, dense after nothing, etc.
    """
    shapes = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind not in KINDS:
            raise ConfigurationError(f"{where}: unknown layer kind")
        if layer.kind in ("gaussian_noise", "leaky_relu", "dropout", "softmax"):
            pass
        elif layer.kind == "conv":
            if len(shape) != 3:
                raise ConfigurationError(f"{where}: needs (channels, H, W) input, got {shape}")
            c, h, w = shape
            k = layer.kernel
            if k < 1 or layer.channels < 1:
                raise ConfigurationError(f"{where}: kernel and channels must be >= 1")
            if layer.padding == "same":
                shape = (layer.channels, h, w)
            elif layer.padding == "valid":
                if h < k or w < k:
                    raise ConfigurationError(f"{where}: {k}x{k} valid conv on {h}x{w} input")
                shape = (layer.channels, h - k + 1, w - k + 1)
            else:
                raise ConfigurationError(f"{where}: padding must be 'same' or 'valid'")
        elif layer.kind == "max_pool":
            if len(shape) != 3:
                raise ConfigurationError(f"{where}: needs (channels, H, W) input, got {shape}")
            c, h, w = shape
            k, s = layer.kernel, layer.stride or layer.kernel
            if s != k:
                raise ConfigurationError(f"{where}: only stride == kernel pooling is supported")
            if h % k or w % k:
                raise ConfigurationError(f"{where}: {h}x{w} not divisible by pool size {k}")
            shape = (c, h // k, w // k)
        elif layer.kind == "global_avg_pool":
            if len(shape) != 3:
                raise ConfigurationError(f"{where}: needs (channels, H, W) input, got {shape}")
            shape = (shape[0],)
        elif layer.kind == "dense":
            if layer.width < 1:
                raise ConfigurationError(f"{where}: width must be >= 1")
            # dense flattens whatever shape precedes it
            shape = (layer.width,)
        shapes.append(shape)
    return shapes


def validate_layers(layers: tuple[Layer, ...], input_shape: tuple[int, ...],
                    num_classes: int | None = None) -> None:
    shapes = chain_shapes(layers, input_shape)
    if num_classes is not None and shapes[-1] != (num_classes,):
        raise ConfigurationError(
            f"network output shape {shapes[-1]} does not match {num_classes} classes")


def build_conv_large(input_shape: tuple[int, ...], num_classes: int) -> tuple[Layer, ...]:
    """Full-scale classifier for 3x32x32 RGB inputs.

    Thirteen trainable layers: three 128-channel 3x3 conv blocks, pool,
    dropout, three 256-channel blocks, pool, dropout, a 512-channel valid
    conv narrowing to 6x6, two 1x1 convs, global average pooling, and a
    softmax classifier. Leaky ReLU slope 0.1; weight normalization and
    mean-only batch normalization (momentum 0.999) on all data layers;
    additive input noise sigma 0.15 at train time.
    """
    if tuple(input_shape) != (3, 32, 32):
        raise ConfigurationError(
            f"conv_large expects (3, 32, 32) inputs, got {tuple(input_shape)}")
    if num_classes < 2:
        raise ConfigurationError("num_classes must be >= 2")
    layers = (
        gaussian_noise(0.15),
        conv(3, 128), leaky_relu(0.1),
        conv(3, 128), leaky_relu(0.1),
        conv(3, 128), leaky_relu(0.1),
        max_pool(2),
        dropout(0.5),
        conv(3, 256), leaky_relu(0.1),
        conv(3, 256), leaky_relu(0.1),
        conv(3, 256), leaky_relu(0.1),
        max_pool(2),
        dropout(0.5),
        conv(3, 512, padding="valid"), leaky_relu(0.1),
        conv(1, 256), leaky_relu(0.1),
        conv(1, 128), leaky_relu(0.1),
        global_avg_pool(),
        dense(num_classes),
        softmax(),
    )
    validate_layers(layers, input_shape, num_classes)
    return layers


def build_small_network(preset: str, input_shape: tuple[int, ...], num_classes: int,
                        noise_sigma: float = 0.15, dropout_rate: float = 0.5,
                        hidden: int = 64) -> tuple[Layer, ...]:
    """Desk-scale networks: `mlp` for flat inputs, `cnn_small` with at least
    one instance of every layer kind used by the full network."""
    if preset == "mlp":
        if len(input_shape) != 1:
            raise ConfigurationError(f"mlp expects flat inputs, got {tuple(input_shape)}")
        layers = (
            gaussian_noise(noise_sigma),
            dense(hidden), leaky_relu(0.1),
            dropout(dropout_rate),
            dense(hidden), leaky_relu(0.1),
            dropout(dropout_rate),
            dense(num_classes),
            softmax(),
        )
    elif preset == "cnn_small":
        if len(input_shape) != 3:
            raise ConfigurationError(
                f"cnn_small expects (channels, H, W) inputs, got {tuple(input_shape)}")
        layers = (
            gaussian_noise(noise_sigma),
            conv(3, 8), leaky_relu(0.1),
            max_pool(2),
            dropout(dropout_rate),
            conv(3, 16), leaky_relu(0.1),
            conv(1, 8), leaky_relu(0.1),
            global_avg_pool(),
            dense(num_classes),
            softmax(),
        )
    else:
        raise ConfigurationError(f"unknown preset '{preset}'")
    validate_layers(layers, input_shape, num_classes)
    return layers


# Human-readable one-line-per-layer encoding used inside run config files.

_FIELDS = {
    "gaussian_noise": ("sigma",),
    "conv": ("kernel", "channels", "padding", "weight_norm", "mean_bn", "bn_momentum"),
    "leaky_relu": ("slope",),
    "max_pool": ("kernel", "stride"),
    "dropout": ("rate",),
    "dense": ("width", "weight_norm", "mean_bn", "bn_momentum"),
    "global_avg_pool": (),
    "softmax": (),
}


def layers_to_text(layers: tuple[Layer, ...]) -> str:
    lines = []
    for layer in layers:
        parts = [layer.kind]
        for name in _FIELDS[layer.kind]:
            parts.append(f"{name}={getattr(layer, name)}")
        lines.append(" ".join(parts))
    return "\n".join(lines)


def layers_from_text(text: str) -> tuple[Layer, ...]:
    layers = []
    for raw_line in text.strip().splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *pairs = line.split()
        if kind not in _FIELDS:
            raise ConfigurationError(f"unknown layer kind '{kind}'")
        kwargs = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigurationError(f"malformed layer field '{pair}' in '{line}'")
            name, value = pair.split("=", 1)
            if name not in _FIELDS[kind]:
                raise ConfigurationError(f"field '{name}' not valid for '{kind}'")
            current = getattr(Layer("softmax"), name)
            if isinstance(current, bool):
                kwargs[name] = value in ("True", "true", "1")
            elif isinstance(current, int):
                kwargs[name] = int(value)
            elif isinstance(current, float):
                kwargs[name] = float(value)
            else:
                kwargs[name] = value
        layers.append(replace(Layer(kind), **kwargs))
    if not layers:
        raise ConfigurationError("empty layer specification")
    return tuple(layers)
