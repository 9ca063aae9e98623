"""Training objectives: bag cross-entropy, the margin contrastive term over
matched image/speech embeddings, and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

LOG_CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights; whatever vis and bow leave over goes to the
    representation term."""

    vis: float = 0.35
    bow: float = 0.35

    def __post_init__(self):
        if not (0.0 <= self.vis <= 1.0 and 0.0 <= self.bow <= 1.0):
            raise ConfigError(f"loss weights must be in [0, 1], got {self}")
        if self.vis + self.bow > 1.0 + 1e-12:
            raise ConfigError(f"vis + bow weights exceed 1: {self}")

    @property
    def rep(self) -> float:
        return max(0.0, 1.0 - self.vis - self.bow)


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 0.4
    n_neg: int = 4

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError(f"contrastive margin must be >= 0, got {self.margin}")
        if self.n_neg < 1:
            raise ConfigError(f"n_neg must be >= 1, got {self.n_neg}")


def bce_bag_loss(y_hat: Tensor, y) -> Tensor:
    """Summed binary cross entropy over keyword slots, mean over the batch.

    y_hat: (N,) or (batch, N) predictions in (0, 1); y: targets in [0, 1]
    (soft tagger posteriors or multi-hot bags). Predictions are clamped to
    [eps, 1-eps] before the logs.
    """
    target = np.asarray(y, dtype=y_hat.data.dtype)
    if target.shape != y_hat.data.shape:
        raise DimensionError(
            f"bce_bag_loss: target shape {target.shape} does not match "
            f"prediction shape {y_hat.data.shape}")
    p = T.clamp(y_hat, LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS)
    pos = T.mul(Tensor(target), T.log(p))
    neg = T.mul(Tensor(1.0 - target), T.log(T.affine(p, -1.0, 1.0)))
    batch = y_hat.data.shape[0] if y_hat.data.ndim == 2 else 1
    return T.affine(T.sum_all(T.add(pos, neg)), -1.0 / batch, 0.0)


def draw_negative_indices(batch_size: int, n_neg: int, rng
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per anchor: n_neg other-item indices for the image side, then n_neg
    for the speech side, drawn without replacement in that fixed order."""
    if batch_size < n_neg + 1:
        raise ConfigError(
            f"batch of {batch_size} too small for {n_neg} negatives per anchor")
    neg_v = np.empty((batch_size, n_neg), dtype=np.int64)
    neg_s = np.empty((batch_size, n_neg), dtype=np.int64)
    for i in range(batch_size):
        others = np.array([j for j in range(batch_size) if j != i])
        neg_v[i] = rng.choice(others, size=n_neg, replace=False)
        neg_s[i] = rng.choice(others, size=n_neg, replace=False)
    return neg_v, neg_s


def contrastive_loss_fixed_negatives(v: Tensor, s: Tensor,
                                     neg_v: np.ndarray, neg_s: np.ndarray,
                                     margin: float) -> Tensor:
    """Hinge terms for pre-drawn negatives; pure given its inputs, which is
    what the finite-difference checks need."""
    if v.data.ndim != 2 or s.data.ndim != 2 or v.data.shape != s.data.shape:
        raise DimensionError(
            f"contrastive loss expects matching (batch, dim) stacks, got "
            f"{v.data.shape} and {s.data.shape}")
    batch = v.data.shape[0]
    n_neg = neg_v.shape[1]
    per_anchor = []
    for i in range(batch):
        v_i = T.take_row(v, i)
        s_i = T.take_row(s, i)
        d_pos = T.cosine_distance(v_i, s_i)
        hinges_v = [T.relu(T.affine(T.sub(d_pos, T.cosine_distance(
            T.take_row(v, int(j)), s_i)), 1.0, margin)) for j in neg_v[i]]
        hinges_s = [T.relu(T.affine(T.sub(d_pos, T.cosine_distance(
            v_i, T.take_row(s, int(j)))), 1.0, margin)) for j in neg_s[i]]
        per_anchor.append(T.add(T.affine(T.add_n(hinges_v), 1.0 / n_neg, 0.0),
                                T.affine(T.add_n(hinges_s), 1.0 / n_neg, 0.0)))
    return T.affine(T.add_n(per_anchor), 1.0 / batch, 0.0)


def contrastive_rep_loss(v: Tensor, s: Tensor, config: ContrastiveConfig,
                         rng) -> Tensor:
    """Margin contrastive loss over a batch of matched (image, speech)
    embedding pairs, negatives sampled within the batch from ``rng``."""
    neg_v, neg_s = draw_negative_indices(v.data.shape[0], config.n_neg, rng)
    return contrastive_loss_fixed_negatives(v, s, neg_v, neg_s, config.margin)


VISUAL_BATCH = "visual-batch"
TEXT_BATCH = "text-batch"


def combined_loss(task: str, weights: LossWeights, *, l_vis: Tensor | None = None,
                  l_bow: Tensor | None = None, l_rep: Tensor | None = None
                  ) -> Tensor:
    """Weighted sum of the supplied components for one batch.

    Visual batches combine the visual and representation terms; text
    batches take the bag term (callers opting text batches into the visual
    terms pass those components as well). A component whose weight is zero
    may be omitted entirely, which keeps the untouched branch off the
    gradient path.
    """
    if task not in (VISUAL_BATCH, TEXT_BATCH):
        raise ConfigError(f"unknown task tag {task!r}")
    terms: list[Tensor] = []
    if task == VISUAL_BATCH:
        wanted = [("visual", weights.vis, l_vis), ("representation", weights.rep, l_rep)]
    else:
        wanted = [("bag-of-words", weights.bow, l_bow)]
        if l_vis is not None:
            wanted.append(("visual", weights.vis, l_vis))
        if l_rep is not None:
            wanted.append(("representation", weights.rep, l_rep))
    for label, weight, component in wanted:
        if weight == 0.0:
            continue
        if component is None:
            raise ConfigError(f"{task}: {label} loss has weight {weight} "
                              f"but no component was supplied")
        terms.append(T.affine(component, weight, 0.0))
    if not terms:
        return Tensor(np.asarray(0.0))
    if len(terms) == 1:
        return terms[0]
    return T.add_n(terms)
