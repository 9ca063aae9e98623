"""Two-branch speech network plus the vision-side projection.

The trunk is a strided 1-D conv stack over MFCC-like frames, ReLU
throughout, max-pooled over time into a fixed-width embedding. Both output
heads (visual keywords and bag-of-words keywords) read that one shared
trunk; only the feedforward-and-sigmoid heads are task specific.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

MASK_OFFSET = -1e9


@dataclass
class ModelArch:
    """Architecture knobs that do not depend on the corpus or vocabularies."""

    conv_channels: tuple[int, ...] = (32, 64, 128)
    conv_kernels: tuple[int, ...] = (9, 7, 7)
    conv_strides: tuple[int, ...] = (1, 2, 2)
    conv_padding: str = "same"
    embed_dim: int = 128
    head_hidden: tuple[int, ...] = (128,)
    masked_pooling: bool = False


@dataclass
class SpeechModelConfig:
    d_feat: int = 13
    t_max: int = 200
    conv_channels: tuple[int, ...] = (32, 64, 128)
    conv_kernels: tuple[int, ...] = (9, 7, 7)
    conv_strides: tuple[int, ...] = (1, 2, 2)
    conv_padding: str = "same"
    embed_dim: int = 128
    head_hidden: tuple[int, ...] = (128,)
    n_vis: int = 40
    n_bow: int = 40
    d_vis_hidden: int = 64
    masked_pooling: bool = False

    def validate(self) -> None:
        if min(self.n_vis, self.n_bow, self.embed_dim) < 1:
            raise ConfigError("model: n_vis, n_bow and embed_dim must be >= 1")
        if not (len(self.conv_channels) == len(self.conv_kernels)
                == len(self.conv_strides)):
            raise ConfigError("model: conv channel/kernel/stride lists must align")
        if not self.conv_channels:
            raise ConfigError("model: need at least one conv layer")
        if self.embed_dim != self.conv_channels[-1]:
            raise ConfigError(
                f"model: embed_dim {self.embed_dim} must equal the last conv "
                f"channel count {self.conv_channels[-1]} (pooled trunk output)")
        if self.conv_padding not in ("same", "valid"):
            raise ConfigError(f"model: unknown conv padding {self.conv_padding!r}")

    def to_dict(self) -> dict:
        return {
            "d_feat": self.d_feat, "t_max": self.t_max,
            "conv_channels": list(self.conv_channels),
            "conv_kernels": list(self.conv_kernels),
            "conv_strides": list(self.conv_strides),
            "conv_padding": self.conv_padding,
            "embed_dim": self.embed_dim,
            "head_hidden": list(self.head_hidden),
            "n_vis": self.n_vis, "n_bow": self.n_bow,
            "d_vis_hidden": self.d_vis_hidden,
            "masked_pooling": self.masked_pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpeechModelConfig":
        d = dict(d)
        for key in ("conv_channels", "conv_kernels", "conv_strides", "head_hidden"):
            d[key] = tuple(d[key])
        return cls(**d)


def config_from_arch(arch: ModelArch, *, d_feat: int, t_max: int, n_vis: int,
                     n_bow: int, d_vis_hidden: int) -> SpeechModelConfig:
    return SpeechModelConfig(
        d_feat=d_feat, t_max=t_max, conv_channels=arch.conv_channels,
        conv_kernels=arch.conv_kernels, conv_strides=arch.conv_strides,
        conv_padding=arch.conv_padding, embed_dim=arch.embed_dim,
        head_hidden=arch.head_hidden, n_vis=n_vis, n_bow=n_bow,
        d_vis_hidden=d_vis_hidden, masked_pooling=arch.masked_pooling)


def paper_scale_arch() -> ModelArch:
    """Preset at the published operating point: 1024-wide embedding (input
    padding of 800 frames and 1000 tags come from the corpus/tagger side)."""
    return ModelArch(conv_channels=(64, 256, 1024), embed_dim=1024,
                     head_hidden=(1024,))


def paper_scale(config: SpeechModelConfig | None = None) -> SpeechModelConfig:
    base = config or SpeechModelConfig()
    return replace(base, t_max=800, conv_channels=(64, 256, 1024),
                   embed_dim=1024, head_hidden=(1024,), n_vis=1000,
                   n_bow=1000, d_vis_hidden=2048)


@dataclass
class Dense:
    w: Tensor
    b: Tensor


@dataclass
class ConvLayer:
    kernels: Tensor   # (C_out, K, C_in)
    bias: Tensor      # (C_out,)
    stride: int
    padding: str


@dataclass
class SpeechModelParams:
    config: SpeechModelConfig
    conv: list[ConvLayer]
    vis_head: list[Dense]
    bow_head: list[Dense]

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv):
            out[f"trunk.conv{i}.k"] = layer.kernels
            out[f"trunk.conv{i}.b"] = layer.bias
        for name, head in (("vis_head", self.vis_head), ("bow_head", self.bow_head)):
            for i, dense in enumerate(head):
                out[f"{name}.fc{i}.w"] = dense.w
                out[f"{name}.fc{i}.b"] = dense.b
        return out


@dataclass
class VisionProjectionParams:
    layers: list[Dense]

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, dense in enumerate(self.layers):
            out[f"proj.fc{i}.w"] = dense.w
            out[f"proj.fc{i}.b"] = dense.b
        return out


@dataclass
class SpeechForwardOutput:
    y_vis: Tensor      # (n_vis,) or (batch, n_vis), strictly inside (0, 1)
    y_bow: Tensor
    embedding: Tensor  # shared-trunk pooled output


def _uniform(rng, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _dense_stack(rng, widths: list[int], dtype) -> list[Dense]:
    return [Dense(w=_uniform(rng, (widths[i + 1], widths[i]), widths[i], dtype),
                  b=_zeros(widths[i + 1], dtype))
            for i in range(len(widths) - 1)]


def init_params(config: SpeechModelConfig, seed: int, dtype=np.float32
                ) -> tuple[SpeechModelParams, VisionProjectionParams]:
    """Fan-in scaled uniform weights, zero biases; deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    conv = []
    c_in = config.d_feat
    for c_out, k, stride in zip(config.conv_channels, config.conv_kernels,
                                config.conv_strides):
        conv.append(ConvLayer(
            kernels=_uniform(rng, (c_out, k, c_in), k * c_in, dtype),
            bias=_zeros(c_out, dtype), stride=stride, padding=config.conv_padding))
        c_in = c_out
    head_widths = [config.embed_dim, *config.head_hidden]
    vis_head = _dense_stack(rng, head_widths + [config.n_vis], dtype)
    bow_head = _dense_stack(rng, head_widths + [config.n_bow], dtype)
    proj = VisionProjectionParams(layers=_dense_stack(
        rng, [config.d_vis_hidden, config.embed_dim, config.embed_dim], dtype))
    return (SpeechModelParams(config=config, conv=conv, vis_head=vis_head,
                              bow_head=bow_head), proj)


def _head_forward(h: Tensor, head: list[Dense]) -> Tensor:
    for dense in head[:-1]:
        h = T.relu(T.linear(h, dense.w, dense.b))
    return T.sigmoid(T.linear(h, head[-1].w, head[-1].b))


def _trunk_lengths(config: SpeechModelConfig, lengths: np.ndarray) -> np.ndarray:
    out = lengths.astype(np.int64)
    for stride in config.conv_strides:
        if config.conv_padding == "same":
            out = -(-out // stride)
        else:
            raise ConfigError("masked pooling requires same padding")
    return np.maximum(out, 1)


def forward(frames, params: SpeechModelParams, lengths=None) -> SpeechForwardOutput:
    """Trunk + both heads; frames is (T, d_feat) or (batch, T, d_feat).

    All intermediate activations stay referenced by the graph, so a
    subsequent backward pass needs no recomputation. ``lengths`` only
    matters when the config enables masked pooling.
    """
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    for layer in params.conv:
        x = T.relu(T.conv1d(x, layer.kernels, layer.bias, stride=layer.stride,
                            padding=layer.padding))
    if params.config.masked_pooling and lengths is not None:
        single = x.data.ndim == 2
        t_out = x.data.shape[-2]
        valid = _trunk_lengths(params.config, np.atleast_1d(lengths))
        mask = (np.arange(t_out)[None, :] >= valid[:, None]) * MASK_OFFSET
        mask = mask[..., None] * np.ones(x.data.shape[-1])
        mask = mask.astype(x.data.dtype)
        x = T.add(x, Tensor(mask[0] if single else mask))
    s = T.max_pool_over_time(x)
    return SpeechForwardOutput(y_vis=_head_forward(s, params.vis_head),
                               y_bow=_head_forward(s, params.bow_head),
                               embedding=s)


def project_vision(feature, params: VisionProjectionParams) -> Tensor:
    """Two linear+ReLU layers mapping the tagger feature to the speech
    embedding width; gradients reach only the projection parameters."""
    h = feature if isinstance(feature, Tensor) else Tensor(feature)
    for dense in params.layers:
        h = T.relu(T.linear(h, dense.w, dense.b))
    return h


def predict(frames, params: SpeechModelParams, lengths=None
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference-only forward returning (y_vis, y_bow, embedding) arrays."""
    with T.no_grad():
        out = forward(frames, params, lengths=lengths)
    return out.y_vis.data, out.y_bow.data, out.embedding.data


def params_checksum(*param_sets) -> str:
    import hashlib
    h = hashlib.sha256()
    for ps in param_sets:
        for name, t in sorted(ps.tensors().items()):
            h.update(name.encode())
            h.update(t.data.tobytes())
    return h.hexdigest()
