"""Image tagger: a feedforward stack over image feature vectors.

Trained once on the image-text split with cross entropy against the
normalized caption bag, then frozen. Its softmax posteriors become the
visual targets; one hidden activation becomes the visual feature that the
projection network maps into the speech embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio, tensor as T
from .errors import ConfigError, DimensionError
from .model import Dense, _dense_stack
from .optim import AdamConfig, AdamState, adam_step
from .tensor import Tensor


@dataclass
class TaggerConfig:
    d_img: int = 16
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    n_vis: int = 40
    feature_layer: int = -1   # which hidden activation feeds the projection
    steps: int = 600
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if self.n_vis < 1:
            raise ConfigError("tagger: n_vis must be >= 1")
        if not self.hidden:
            raise ConfigError("tagger: need at least one hidden layer")
        if not -len(self.hidden) <= self.feature_layer < len(self.hidden):
            raise ConfigError("tagger: feature_layer out of range")

    @property
    def d_feature(self) -> int:
        return self.hidden[self.feature_layer]

    def to_dict(self) -> dict:
        return {"d_img": self.d_img, "hidden": list(self.hidden),
                "n_vis": self.n_vis, "feature_layer": self.feature_layer,
                "steps": self.steps, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TaggerConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class TaggerParams:
    config: TaggerConfig
    tag_vocabulary: list[str]
    layers: list[Dense]

    def tensors(self) -> dict[str, Tensor]:
        return {f"tagger.fc{i}.{part}": getattr(dense, part)
                for i, dense in enumerate(self.layers) for part in ("w", "b")}


@dataclass
class VisualTargets:
    y_vis: np.ndarray     # (n_vis,) softmax posteriors
    feature: np.ndarray   # (d_feature,) hidden activation


def init_tagger(config: TaggerConfig, tag_vocabulary: list[str]) -> TaggerParams:
    config.validate()
    if len(tag_vocabulary) != config.n_vis:
        raise ConfigError(
            f"tagger: vocabulary size {len(tag_vocabulary)} != n_vis {config.n_vis}")
    rng = np.random.default_rng(config.seed)
    widths = [config.d_img, *config.hidden, config.n_vis]
    return TaggerParams(config=config, tag_vocabulary=list(tag_vocabulary),
                        layers=_dense_stack(rng, widths, np.float32))


def _forward(x: Tensor, layers: list[Dense]) -> tuple[Tensor, list[Tensor]]:
    hiddens = []
    h = x
    for dense in layers[:-1]:
        h = T.relu(T.linear(h, dense.w, dense.b))
        hiddens.append(h)
    logits = T.linear(h, layers[-1].w, layers[-1].b)
    return T.softmax(logits), hiddens


def tag(image_vec: np.ndarray, params: TaggerParams) -> VisualTargets:
    """Posteriors plus the configured intermediate feature for one image."""
    vec = np.asarray(image_vec)
    if vec.shape != (params.config.d_img,):
        raise DimensionError(
            f"tagger: image vector shape {vec.shape} != ({params.config.d_img},)")
    with T.no_grad():
        posterior, hiddens = _forward(Tensor(vec.astype(np.float32)), params.layers)
    return VisualTargets(y_vis=posterior.data,
                         feature=hiddens[params.config.feature_layer].data)


def tag_batch(image_vecs: np.ndarray, params: TaggerParams
              ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized tag(): returns (posteriors, features) for a (B, d_img) stack."""
    vecs = np.asarray(image_vecs, dtype=np.float32)
    if vecs.ndim != 2 or vecs.shape[1] != params.config.d_img:
        raise DimensionError(
            f"tagger: image stack shape {vecs.shape} != (B, {params.config.d_img})")
    with T.no_grad():
        posterior, hiddens = _forward(Tensor(vecs), params.layers)
    return posterior.data, hiddens[params.config.feature_layer].data


def caption_bag_targets(items, tag_vocabulary: list[str], corpus_vocab: list[str]
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Normalized caption-bag distributions over the tag vocabulary.

    Returns (targets, keep_mask); items whose caption shares no word with
    the tag vocabulary cannot supply a distribution and are masked out.
    """
    index = {w: i for i, w in enumerate(tag_vocabulary)}
    targets = np.zeros((len(items), len(tag_vocabulary)), dtype=np.float32)
    keep = np.zeros(len(items), dtype=bool)
    for row, item in enumerate(items):
        for w in item.transcript or []:
            col = index.get(corpus_vocab[w])
            if col is not None:
                targets[row, col] += 1.0
        total = targets[row].sum()
        if total > 0:
            targets[row] /= total
            keep[row] = True
    return targets, keep


def train_tagger(items, tag_vocabulary: list[str], corpus_vocab: list[str],
                 config: TaggerConfig) -> tuple[TaggerParams, list[dict]]:
    """Gradient training on the image-text split; deterministic per seed."""
    if not items:
        raise ConfigError("tagger: training split is empty")
    params = init_tagger(config, tag_vocabulary)
    targets, keep = caption_bag_targets(items, tag_vocabulary, corpus_vocab)
    pool = [i for i in range(len(items)) if keep[i]]
    if not pool:
        raise ConfigError("tagger: no training item overlaps the tag vocabulary")
    vecs = np.stack([items[i].image_vec for i in pool]).astype(np.float32)
    targets = targets[pool]

    rng = np.random.default_rng(config.seed + 1)
    tensors = params.tensors()
    state = AdamState()
    adam = AdamConfig(learning_rate=config.learning_rate)
    log: list[dict] = []
    batch = min(config.batch_size, len(pool))
    for step in range(1, config.steps + 1):
        rows = rng.choice(len(pool), size=batch, replace=False)
        posterior, _ = _forward(Tensor(vecs[rows]), params.layers)
        p = T.clamp(posterior, 1e-7, 1.0)
        loss = T.affine(T.sum_all(T.mul(Tensor(targets[rows]), T.log(p))),
                        -1.0 / batch, 0.0)
        loss.backward()
        grads = {name: t.grad for name, t in tensors.items() if t.grad is not None}
        adam_step(tensors, grads, state, adam)
        for t in tensors.values():
            t.zero_grad()
        log.append({"step": step, "loss": float(loss.item())})
    return params, log


def save_tagger(params: TaggerParams, path) -> None:
    arrays = {name: t.data for name, t in params.tensors().items()}
    binio.write_container(path, {"kind": "tagger",
                                 "config": params.config.to_dict(),
                                 "vocabulary": params.tag_vocabulary}, arrays)


def load_tagger(path) -> TaggerParams:
    meta, arrays = binio.read_container(path)
    if meta.get("kind") != "tagger":
        raise ConfigError(f"{path}: not a tagger checkpoint")
    config = TaggerConfig.from_dict(meta["config"])
    params = init_tagger(config, meta["vocabulary"])
    for name, tensor in params.tensors().items():
        tensor.data = arrays[name].copy()
    return params
