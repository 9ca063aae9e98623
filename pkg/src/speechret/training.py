"""Multitask training loop.

Each step samples a mini-batch from the image-speech pool or the
transcribed pool with probability proportional to pool size, combines the
active loss terms, and applies Adam to the parameter blocks that received
gradients. Dev-set keyword-spotting F1 at a fixed detection threshold
drives early stopping. Checkpoints carry optimizer moments and the RNG
state, so a resumed run replays the exact batch sequence.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import binio, evaluation as E, losses as L, model as M
from .corpus import Corpus, select_keywords, set_c_items
from .errors import ConfigError, DivergenceError, EvaluationError
from .optim import AdamConfig, AdamState, adam_step, state_arrays, state_from_arrays
from .tagger import TaggerParams, tag_batch
from .tensor import Tensor

BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"
LOG_FILE = "train_log.jsonl"


@dataclass
class TrainConfig:
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 1400
    eval_interval: int = 150
    patience: int = 5
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    contrastive: L.ContrastiveConfig = field(default_factory=L.ContrastiveConfig)
    n_bow: int = 40
    seed: int = 0
    set_c_fraction: float = 1.0
    visual_pool_enabled: bool = True
    text_batches_use_visual_losses: bool = False
    stopping_head: str = "auto"   # vis | bow | ensemble | auto
    detection_threshold: float = 0.3
    dtype: str = "float32"

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("train: batch_size must be >= 2 (in-batch negatives)")
        if self.patience < 1:
            raise ConfigError("train: patience must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("train: eval_interval must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train: max_steps must be >= 0")
        if not 0.0 <= self.set_c_fraction <= 1.0:
            raise ConfigError("train: set_c_fraction must lie in [0, 1]")
        if self.contrastive.n_neg > self.batch_size - 1:
            raise ConfigError("train: n_neg must be <= batch_size - 1")
        if self.stopping_head not in ("vis", "bow", "ensemble", "auto"):
            raise ConfigError(f"train: unknown stopping head {self.stopping_head!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("train: dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = vars(self).copy()
        d["weights"] = {"vis": self.weights.vis, "bow": self.weights.bow}
        d["contrastive"] = {"margin": self.contrastive.margin,
                            "n_neg": self.contrastive.n_neg}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = L.LossWeights(**d["weights"])
        d["contrastive"] = L.ContrastiveConfig(**d["contrastive"])
        return cls(**d)


@dataclass
class TrainResult:
    run_dir: str
    best_path: str
    last_path: str
    log_path: str
    steps_completed: int
    best_f1: float | None
    best_step: int | None
    stopped_early: bool


def sample_batch(rng, pool_b, pool_c, batch_size: int):
    """Pick the source pool with probability proportional to its size, then
    sample ``batch_size`` members uniformly without replacement."""
    nb, nc = len(pool_b), len(pool_c)
    if nb + nc == 0:
        raise ConfigError("sample_batch: both pools are empty")
    for name, pool in (("image-speech", pool_b), ("transcribed", pool_c)):
        if pool and batch_size > len(pool):
            raise ConfigError(
                f"sample_batch: batch size {batch_size} exceeds the "
                f"{name} pool ({len(pool)} items)")
    take_b = nb > 0 and (nc == 0 or rng.random() < nb / (nb + nc))
    pool, task = (pool_b, L.VISUAL_BATCH) if take_b else (pool_c, L.TEXT_BATCH)
    chosen = rng.choice(len(pool), size=batch_size, replace=False)
    return [pool[i] for i in chosen], task


def bow_targets(items, bow_vocabulary: list[str], corpus_vocab: list[str]
                ) -> np.ndarray:
    index = {w: i for i, w in enumerate(bow_vocabulary)}
    out = np.zeros((len(items), len(bow_vocabulary)), dtype=np.float32)
    for row, item in enumerate(items):
        for w in item.transcript or []:
            col = index.get(corpus_vocab[w])
            if col is not None:
                out[row, col] = 1.0
    return out


def exact_truth(items, keywords: list[str], corpus_vocab: list[str]) -> np.ndarray:
    """keyword x utterance occurrence table from transcripts."""
    truth = np.zeros((len(keywords), len(items)), dtype=bool)
    for col, item in enumerate(items):
        present = {corpus_vocab[w] for w in item.transcript or []}
        for row, kw in enumerate(keywords):
            truth[row, col] = kw in present
    return truth


def f_score_exact(params: M.SpeechModelParams, items, keywords: list[str],
                  tag_vocabulary: list[str], bow_vocabulary: list[str],
                  corpus_vocab: list[str], threshold: float = 0.3,
                  head: str = "ensemble", average: str = "micro") -> float:
    """F1 for exact keyword retrieval at the detection threshold.

    Micro-averaged over all (keyword, utterance) pairs by default; macro
    (per keyword, then averaged) behind the ``average`` flag.
    """
    if not items:
        raise EvaluationError("f_score_exact: empty evaluation set")
    matrix = E.score_utterances(params, items, keywords, head,
                                tag_vocabulary, bow_vocabulary)
    truth = exact_truth(items, keywords, corpus_vocab)
    if average == "macro":
        return E.macro_f1(matrix.scores > threshold, truth)
    if average != "micro":
        raise ConfigError(f"f_score_exact: unknown average {average!r}")
    return E.micro_f1(matrix.scores > threshold, truth)


def _resolve_stopping_head(config: TrainConfig, c_pool_size: int) -> str:
    if config.stopping_head != "auto":
        return config.stopping_head
    text_active = c_pool_size > 0 and config.weights.bow > 0
    visual_active = config.visual_pool_enabled and (
        config.weights.vis > 0 or config.weights.rep > 0)
    if text_active and visual_active:
        return "ensemble"
    return "bow" if text_active else "vis"


def save_checkpoint(path, model_params: M.SpeechModelParams,
                    proj_params: M.VisionProjectionParams, state: AdamState,
                    meta: dict) -> None:
    arrays = {}
    for name, t in model_params.tensors().items():
        arrays[name] = t.data
    for name, t in proj_params.tensors().items():
        arrays[name] = t.data
    adam_arrays, adam_steps = state_arrays(state)
    arrays.update(adam_arrays)
    meta = dict(meta)
    meta["kind"] = "model-run"
    meta["adam_steps"] = adam_steps
    binio.write_container(path, meta, arrays)


def load_checkpoint(path) -> tuple[M.SpeechModelParams, M.VisionProjectionParams,
                                   AdamState, dict]:
    meta, arrays = binio.read_container(path)
    if meta.get("kind") != "model-run":
        raise ConfigError(f"{path}: not a model checkpoint")
    config = M.SpeechModelConfig.from_dict(meta["model_config"])
    model_params, proj_params = M.init_params(config, seed=0)
    for name, tensor in {**model_params.tensors(), **proj_params.tensors()}.items():
        tensor.data = arrays[name].copy()
    state = state_from_arrays(arrays, meta.get("adam_steps", {}))
    return model_params, proj_params, state, meta


class Trainer:
    """One training run rooted at ``run_dir``."""

    def __init__(self, corpus: Corpus, tagger: TaggerParams, config: TrainConfig,
                 keywords: list[str], run_dir,
                 model_config: M.SpeechModelConfig | None = None,
                 arch: M.ModelArch | None = None):
        config.validate()
        self.corpus = corpus
        self.tagger = tagger
        self.config = config
        self.keywords = list(keywords)
        self.run_dir = str(run_dir)
        self.dtype = np.float32 if config.dtype == "float32" else np.float64

        self.tag_vocabulary = list(tagger.tag_vocabulary)
        self.bow_vocabulary = select_keywords(corpus, config.n_bow,
                                              must_include=self.keywords)
        # The corpus may hold fewer eligible content words than requested;
        # the head is sized to the vocabulary actually available.
        self.model_config = model_config or M.config_from_arch(
            arch or M.ModelArch(), d_feat=corpus.d_feat, t_max=corpus.t_max,
            n_vis=tagger.config.n_vis, n_bow=len(self.bow_vocabulary),
            d_vis_hidden=tagger.config.d_feature)
        self.model_config.validate()
        if self.model_config.n_vis != len(tagger.tag_vocabulary):
            raise ConfigError("train: model n_vis != tagger vocabulary size")
        if self.model_config.n_bow != len(self.bow_vocabulary):
            raise ConfigError("train: model n_bow != bag-of-words vocabulary size")

        b_items = corpus.split_items("B")
        if not b_items:
            raise ConfigError("train: corpus has no image-speech items")
        c_items = set_c_items(corpus, config.set_c_fraction)
        c_ids = {it.item_id for it in c_items}
        self.pool_b = list(range(len(b_items))) if config.visual_pool_enabled else []
        self.pool_c = [i for i, it in enumerate(b_items) if it.item_id in c_ids]
        self.dev_items = corpus.split_items("dev")

        self.frames = np.stack([it.utterance.frames for it in b_items]
                               ).astype(self.dtype)
        self.lengths = np.array([it.utterance.true_length for it in b_items])
        images = np.stack([it.image_vec for it in b_items])
        y_vis, feats = tag_batch(images, tagger)
        self.y_vis = y_vis.astype(self.dtype)
        self.visual_features = feats.astype(self.dtype)
        self.y_bow = bow_targets(b_items, self.bow_vocabulary,
                                 corpus.vocabulary).astype(self.dtype)
        self.stopping_head = _resolve_stopping_head(config, len(self.pool_c))

    # -- checkpoint plumbing -------------------------------------------------

    def trained_heads(self) -> list[str]:
        heads = []
        if self.pool_b and self.config.weights.vis > 0:
            heads.append("vis")
        if self.pool_c and self.config.weights.bow > 0:
            heads.append("bow")
        return heads

    def _meta(self, step: int, rng, best_f1, best_step, evals_since_improve
              ) -> dict:
        return {
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
            "tag_vocabulary": self.tag_vocabulary,
            "bow_vocabulary": self.bow_vocabulary,
            "keywords": self.keywords,
            "stopping_head": self.stopping_head,
            "trained_heads": self.trained_heads(),
            "step": step,
            "best_f1": best_f1,
            "best_step": best_step,
            "evals_since_improve": evals_since_improve,
            "rng_state": rng.bit_generator.state,
        }

    # -- loss assembly -------------------------------------------------------

    def _batch_losses(self, positions: list[int], task: str, params, proj, rng):
        cfg = self.config
        w = cfg.weights
        out = M.forward(Tensor(self.frames[positions]), params,
                        lengths=self.lengths[positions])
        l_vis = l_bow = l_rep = None
        want_visual = task == L.VISUAL_BATCH or cfg.text_batches_use_visual_losses
        if want_visual and w.vis > 0:
            l_vis = L.bce_bag_loss(out.y_vis, self.y_vis[positions])
        if want_visual and w.rep > 0:
            v = M.project_vision(Tensor(self.visual_features[positions]), proj)
            l_rep = L.contrastive_rep_loss(v, out.embedding, cfg.contrastive, rng)
        if task == L.TEXT_BATCH and w.bow > 0:
            l_bow = L.bce_bag_loss(out.y_bow, self.y_bow[positions])
        total = L.combined_loss(task, w, l_vis=l_vis, l_bow=l_bow, l_rep=l_rep)
        return total, l_vis, l_bow, l_rep

    def _dev_f1(self, params) -> float:
        return f_score_exact(params, self.dev_items, self.keywords,
                             self.tag_vocabulary, self.bow_vocabulary,
                             self.corpus.vocabulary,
                             threshold=self.config.detection_threshold,
                             head=self.stopping_head)

    # -- main loop -----------------------------------------------------------

    def run(self, resume_from=None, eval_hook=None) -> TrainResult:
        os.makedirs(self.run_dir, exist_ok=True)
        best_path = os.path.join(self.run_dir, BEST_CKPT)
        last_path = os.path.join(self.run_dir, LAST_CKPT)
        log_path = os.path.join(self.run_dir, LOG_FILE)

        cfg = self.config
        adam_cfg = AdamConfig(learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                              beta2=cfg.beta2, eps=cfg.adam_eps)

        if resume_from is not None:
            params, proj, state, meta = load_checkpoint(resume_from)
            rng = np.random.default_rng(0)
            rng.bit_generator.state = meta["rng_state"]
            start_step = meta["step"]
            best_f1 = meta["best_f1"]
            best_step = meta["best_step"]
            evals_since_improve = meta["evals_since_improve"]
            log_fh = open(log_path, "a")
        else:
            params, proj = M.init_params(self.model_config, cfg.seed,
                                         dtype=self.dtype)
            state = AdamState()
            rng = np.random.default_rng(cfg.seed)
            start_step = 0
            best_f1 = None
            best_step = None
            evals_since_improve = 0
            log_fh = open(log_path, "w")
            if cfg.max_steps == 0:
                meta = self._meta(0, rng, None, None, 0)
                save_checkpoint(best_path, params, proj, state, meta)
                save_checkpoint(last_path, params, proj, state, meta)
                log_fh.close()
                return TrainResult(self.run_dir, best_path, last_path, log_path,
                                   0, None, None, False)

        tensors = {**params.tensors(), **proj.tensors()}
        stopped_early = False
        step = start_step
        try:
            while step < cfg.max_steps:
                step += 1
                positions, task = sample_batch(rng, self.pool_b, self.pool_c,
                                               cfg.batch_size)
                total, l_vis, l_bow, l_rep = self._batch_losses(
                    positions, task, params, proj, rng)
                loss_value = float(total.item())
                if not np.isfinite(loss_value):
                    meta = self._meta(step, rng, best_f1, best_step,
                                      evals_since_improve)
                    save_checkpoint(last_path, params, proj, state, meta)
                    raise DivergenceError(
                        f"non-finite loss {loss_value} at step {step}; "
                        f"last checkpoint retained at {last_path}")
                if total._parents or total.requires_grad:
                    total.backward()
                grads = {n: t.grad for n, t in tensors.items()
                         if t.grad is not None}
                adam_step(tensors, grads, state, adam_cfg)
                for t in tensors.values():
                    t.zero_grad()

                record = {"kind": "step", "step": step, "task": task,
                          "loss": loss_value}
                for key, comp in (("loss_vis", l_vis), ("loss_bow", l_bow),
                                  ("loss_rep", l_rep)):
                    if comp is not None:
                        record[key] = float(comp.item())
                log_fh.write(json.dumps(record) + "\n")

                if step % cfg.eval_interval == 0:
                    f1 = self._dev_f1(params)
                    if eval_hook is not None:
                        eval_hook(step=step, params=params, f1=f1)
                    improved = best_f1 is None or f1 > best_f1
                    if improved:
                        best_f1 = f1
                        best_step = step
                        evals_since_improve = 0
                    else:
                        evals_since_improve += 1
                    meta = self._meta(step, rng, best_f1, best_step,
                                      evals_since_improve)
                    if improved:
                        save_checkpoint(best_path, params, proj, state, meta)
                    save_checkpoint(last_path, params, proj, state, meta)
                    log_fh.write(json.dumps(
                        {"kind": "eval", "step": step, "f1": f1,
                         "best_f1": best_f1, "improved": improved}) + "\n")
                    log_fh.flush()
                    if evals_since_improve >= cfg.patience:
                        stopped_early = True
                        break
        finally:
            log_fh.close()

        meta = self._meta(step, rng, best_f1, best_step, evals_since_improve)
        save_checkpoint(last_path, params, proj, state, meta)
        if best_f1 is None:
            # No eval ever ran; the final state is the best we know about.
            save_checkpoint(best_path, params, proj, state, meta)
        return TrainResult(self.run_dir, best_path, last_path, log_path, step,
                           best_f1, best_step, stopped_early)


def train(corpus: Corpus, tagger: TaggerParams, config: TrainConfig,
          keywords: list[str], run_dir,
          model_config: M.SpeechModelConfig | None = None,
          arch: M.ModelArch | None = None,
          resume_from=None, eval_hook=None) -> TrainResult:
    trainer = Trainer(corpus, tagger, config, keywords, run_dir,
                      model_config=model_config, arch=arch)
    return trainer.run(resume_from=resume_from, eval_hook=eval_hook)


def read_log(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
