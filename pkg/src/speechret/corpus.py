"""Synthetic paired image/speech corpus: generation, splits, and disk format.

A corpus directory holds ``manifest.json`` plus ``corpus.bin`` (a flat blob
of little-endian float32 with an 8-byte magic header and format version).
Byte offsets in the manifest are absolute file offsets into the blob.
Judgments live in a separate delimited table. Externally prepared feature
files that follow the same manifest layout load through the same path.
"""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import (ConfigError, FormatError, TruncatedFileError,
                     VersionError, VocabularyError)

MANIFEST_FORMAT = "speechret-corpus"
MANIFEST_VERSION = 1

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class Ontology:
    """Word inventory with concept geometry, relatedness, and frame prototypes."""

    vocabulary: list[str]
    stopword: np.ndarray              # bool (W,)
    word_embeddings: np.ndarray       # (W, d_concept) float32
    cluster_centers: np.ndarray       # (num_concepts, d_concept) float32
    word_cluster: np.ndarray          # int32 (W,)
    relatedness: np.ndarray           # (W, W) float32, symmetric, unit diagonal
    prototypes: list[np.ndarray]      # per word (L_w, d_feat) float32
    gamma: float
    word_prominence: np.ndarray | None = None  # (W,) Zipf-like usage weights
    synonym_pairs: list[tuple[int, int]] = field(default_factory=list)

    def prominence(self) -> np.ndarray:
        if self.word_prominence is None:
            return np.ones(self.num_words, dtype=np.float64)
        return self.word_prominence.astype(np.float64)

    @property
    def num_words(self) -> int:
        return len(self.vocabulary)

    @property
    def d_feat(self) -> int:
        return self.prototypes[0].shape[1]

    def word_index(self, word: str) -> int:
        try:
            return self.vocabulary.index(word)
        except ValueError:
            raise VocabularyError(f"unknown word {word!r}") from None

    def validate(self) -> None:
        w = self.num_words
        if len(set(self.vocabulary)) != w:
            raise ConfigError("ontology: surface strings must be unique")
        if self.relatedness.shape != (w, w):
            raise ConfigError("ontology: relatedness matrix shape mismatch")
        if not np.array_equal(self.relatedness, self.relatedness.T):
            raise ConfigError("ontology: relatedness must be symmetric")
        if not np.all(self.relatedness.diagonal() == 1.0):
            raise ConfigError("ontology: relatedness diagonal must be 1")
        for i, proto in enumerate(self.prototypes):
            if proto.shape[0] < 1:
                raise ConfigError(f"ontology: prototype {i} has no frames")


@dataclass
class UtteranceFeatures:
    """One spoken caption as a zero-padded fixed-length frame matrix."""

    frames: np.ndarray        # (t_max, d_feat) float32
    true_length: int
    frame_period: float = 1.0

    def validate(self) -> None:
        t_max = self.frames.shape[0]
        if not 0 <= self.true_length <= t_max:
            raise ConfigError(
                f"utterance true_length {self.true_length} outside [0, {t_max}]")
        if self.true_length < t_max and np.any(self.frames[self.true_length:]):
            raise ConfigError("utterance padding region must be exactly zero")


@dataclass
class CorpusItem:
    item_id: str
    image_id: int
    split: str                      # "A" | "B" | "dev" | "test" | "unused"
    image_vec: np.ndarray           # (d_img,) float32
    utterance: UtteranceFeatures
    transcript: list[int] | None    # word ids; None only for external data
    truncated: bool = False


@dataclass
class Judgments:
    """Per (query, utterance) annotator vote counts and majority labels."""

    queries: list[str]
    utterance_ids: list[str]
    votes: np.ndarray               # (Q, M) int
    num_annotators: int = 5

    @property
    def hard_labels(self) -> np.ndarray:
        return self.votes * 2 > self.num_annotators

    def validate(self) -> None:
        q, m = len(self.queries), len(self.utterance_ids)
        if self.votes.shape != (q, m):
            raise ConfigError("judgments: vote table shape mismatch")
        if np.any(self.votes < 0) or np.any(self.votes > self.num_annotators):
            raise ConfigError("judgments: vote counts out of range")


@dataclass
class Corpus:
    d_feat: int
    t_max: int
    d_img: int
    frame_period: float
    vocabulary: list[str]
    stopword: np.ndarray
    items: list[CorpusItem]
    ontology: Ontology | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.word_index = {w: i for i, w in enumerate(self.vocabulary)}

    def split_items(self, split: str) -> list[CorpusItem]:
        return [it for it in self.items if it.split == split]

    def words(self, ids) -> list[str]:
        return [self.vocabulary[i] for i in ids]


@dataclass
class CorpusConfig:
    """Desk-scale defaults; the paper-scale preset lives in presets()."""

    seed: int = 0
    num_items: int = 2000
    num_words: int = 60
    num_concepts: int = 12
    d_concept: int = 16
    d_feat: int = 13
    t_max: int = 200
    prototype_len_min: int = 6
    prototype_len_max: int = 12
    scene_size_min: int = 1
    scene_size_max: int = 3
    caption_len_min: int = 4
    caption_len_max: int = 8
    captions_per_image: int = 1
    split_a: int = 500
    split_b: int = 1200
    split_dev: int = 150
    split_test: int = 150
    stopword_fraction: float = 0.2
    stopword_rate: float = 0.3
    concept_spread: float = 2.0
    word_jitter: float = 0.15
    relatedness_gamma: float = 1.0
    relatedness_floor: float = 0.02
    image_noise: float = 0.1
    frame_noise: float = 0.1
    time_warp: float = 0.2
    planted_synonyms: int = 1
    num_annotators: int = 5
    annotator_noise: float = 0.1
    num_queries: int = 20
    frame_period: float = 1.0

    def validate(self) -> None:
        if self.num_concepts < 1 or self.num_words < self.num_concepts:
            raise ConfigError("corpus: need num_words >= num_concepts >= 1")
        if self.prototype_len_min < 1 or self.prototype_len_max < self.prototype_len_min:
            raise ConfigError("corpus: bad prototype length range")
        if not (1 <= self.scene_size_min <= self.scene_size_max <= self.num_concepts):
            raise ConfigError("corpus: bad scene size range")
        if self.caption_len_min < 1 or self.caption_len_max < self.caption_len_min:
            raise ConfigError("corpus: bad caption length range")
        if self.captions_per_image < 1:
            raise ConfigError("corpus: captions_per_image must be >= 1")
        if not 0.0 <= self.stopword_fraction < 1.0:
            raise ConfigError("corpus: stopword_fraction must be in [0, 1)")
        num_images = self.num_items // self.captions_per_image
        wanted = self.split_a + self.split_b + self.split_dev + self.split_test
        if wanted > num_images:
            raise ConfigError(
                f"corpus: split sizes sum to {wanted} but only {num_images} images")
        if self.num_annotators < 1:
            raise ConfigError("corpus: num_annotators must be >= 1")
        if not 0 < self.num_queries <= self.num_words:
            raise ConfigError("corpus: num_queries out of range")


# ---------------------------------------------------------------------------
# Generation


def _make_word(rng) -> str:
    n_syll = int(rng.integers(2, 4))
    return "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))]
                   + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(n_syll))


def generate_ontology(seed: int, num_words: int, num_concepts: int,
                      d_concept: int, d_feat: int,
                      prototype_len_range: tuple[int, int],
                      *, concept_spread: float = 2.0, word_jitter: float = 0.15,
                      gamma: float = 1.0, stopword_fraction: float = 0.2,
                      planted_synonyms: int = 0) -> Ontology:
    """Build the word inventory: clustered concept embeddings, a Gaussian-kernel
    relatedness matrix, and a distinct smooth frame prototype per word."""
    if num_concepts < 1 or num_words < num_concepts:
        raise ConfigError("generate_ontology: need num_words >= num_concepts >= 1")
    lo, hi = prototype_len_range
    if lo < 1 or hi < lo:
        raise ConfigError("generate_ontology: bad prototype length range")
    rng = np.random.default_rng(seed)

    vocab: list[str] = []
    seen = set()
    while len(vocab) < num_words:
        w = _make_word(rng)
        if w not in seen:
            seen.add(w)
            vocab.append(w)

    centers = rng.normal(size=(num_concepts, d_concept)) * concept_spread
    cluster = np.arange(num_words, dtype=np.int32) % num_concepts
    embeddings = centers[cluster] + rng.normal(size=(num_words, d_concept)) * word_jitter

    n_stop = int(round(stopword_fraction * num_words))
    stopword = np.zeros(num_words, dtype=bool)
    if n_stop:
        stopword[rng.choice(num_words, size=n_stop, replace=False)] = True

    pairs: list[tuple[int, int]] = []
    content_ids = [i for i in range(num_words) if not stopword[i]]
    if planted_synonyms * 2 > len(content_ids):
        raise ConfigError("generate_ontology: not enough content words for synonyms")
    for p in range(planted_synonyms):
        a, b = content_ids[2 * p], content_ids[2 * p + 1]
        embeddings[b] = embeddings[a]
        cluster[b] = cluster[a]
        pairs.append((a, b))

    # Zipf-like usage: within each cluster, later words fall off sharply, so
    # the conditional word distribution given a scene is peaked rather than
    # flat (as word frequencies are in natural captions).
    prominence = np.ones(num_words, dtype=np.float32)
    for c in range(num_concepts):
        members = np.flatnonzero(cluster == c)
        prominence[members] = 1.0 / (1.0 + np.arange(len(members))) ** 2

    diff = embeddings[:, None, :] - embeddings[None, :, :]
    relatedness = np.exp(-gamma * (diff ** 2).sum(axis=2))
    relatedness = np.triu(relatedness)  # mirror to force exact symmetry
    relatedness = relatedness + relatedness.T - np.diag(relatedness.diagonal())
    np.fill_diagonal(relatedness, 1.0)

    prototypes = []
    for _ in range(num_words):
        length = int(rng.integers(lo, hi + 1))
        steps = rng.normal(size=(length, d_feat)) * 0.3
        steps[0] = rng.normal(size=d_feat)
        prototypes.append(np.cumsum(steps, axis=0).astype(np.float32))

    ont = Ontology(vocabulary=vocab, stopword=stopword,
                   word_embeddings=embeddings.astype(np.float32),
                   cluster_centers=centers.astype(np.float32),
                   word_cluster=cluster,
                   relatedness=relatedness.astype(np.float32),
                   prototypes=prototypes, gamma=gamma,
                   word_prominence=prominence, synonym_pairs=pairs)
    ont.validate()
    return ont


def ontology_checksum(ont: Ontology) -> str:
    h = hashlib.sha256()
    h.update("\x00".join(ont.vocabulary).encode())
    h.update(ont.stopword.tobytes())
    h.update(ont.word_embeddings.tobytes())
    h.update(ont.cluster_centers.tobytes())
    h.update(ont.word_cluster.astype(np.int32).tobytes())
    h.update(ont.relatedness.tobytes())
    h.update(ont.prominence().tobytes())
    for proto in ont.prototypes:
        h.update(proto.tobytes())
    return h.hexdigest()


def _scene_relevance(ont: Ontology, scene: np.ndarray) -> np.ndarray:
    """Per-word max Gaussian affinity to the scene's cluster centers."""
    centers = ont.cluster_centers[scene]
    diff = ont.word_embeddings[:, None, :].astype(np.float64) - centers[None, :, :]
    return np.exp(-ont.gamma * (diff ** 2).sum(axis=2)).max(axis=1)


def _render_word(rng, proto: np.ndarray, warp: float, noise: float) -> np.ndarray:
    length = proto.shape[0]
    u = float(rng.uniform(1.0 - warp, 1.0 + warp))
    out_len = max(1, int(round(length * u)))
    if out_len == length:
        warped = proto.astype(np.float64)
    else:
        src = np.linspace(0.0, length - 1.0, out_len)
        base = np.arange(length, dtype=np.float64)
        warped = np.stack([np.interp(src, base, proto[:, d]) for d in
                           range(proto.shape[1])], axis=1)
    if noise > 0:
        warped = warped + rng.normal(size=warped.shape) * noise
    return warped


def synthesize_item(ontology: Ontology, seed, scene_size_range: tuple[int, int],
                    caption_len_range: tuple[int, int], t_max: int,
                    *, image_noise: float = 0.1, frame_noise: float = 0.1,
                    time_warp: float = 0.2, relatedness_floor: float = 0.02,
                    stopword_rate: float = 0.3, item_id: str = "item",
                    image_id: int = 0, frame_period: float = 1.0) -> CorpusItem:
    """Sample one scene, caption, and rendered utterance.

    The image vector is the mean of the scene's concept embeddings plus
    noise; caption words are drawn with probability increasing in their
    relatedness to the scene plus a floor for distractors. Words of a
    planted synonym pair never co-occur within one caption.
    """
    rng = np.random.default_rng(seed)
    n_scene = int(rng.integers(scene_size_range[0], scene_size_range[1] + 1))
    scene = rng.choice(ontology.cluster_centers.shape[0], size=n_scene, replace=False)
    image = ontology.cluster_centers[scene].astype(np.float64).mean(axis=0)
    if image_noise > 0:
        image = image + rng.normal(size=image.shape) * image_noise

    relevance = _scene_relevance(ontology, scene)
    partner = {a: b for a, b in ontology.synonym_pairs}
    partner.update({b: a for a, b in ontology.synonym_pairs})
    content_ids = np.flatnonzero(~ontology.stopword)
    stop_ids = np.flatnonzero(ontology.stopword)

    prominence = ontology.prominence()
    cap_len = int(rng.integers(caption_len_range[0], caption_len_range[1] + 1))
    caption: list[int] = []
    chosen: set[int] = set()
    for _ in range(cap_len):
        if len(stop_ids) and rng.random() < stopword_rate:
            word = int(stop_ids[rng.integers(len(stop_ids))])
        else:
            weights = (relevance[content_ids] + relatedness_floor) \
                * prominence[content_ids]
            for i, w in enumerate(content_ids):
                if partner.get(int(w)) in chosen:
                    weights[i] = 0.0
            weights = weights / weights.sum()
            word = int(rng.choice(content_ids, p=weights))
        caption.append(word)
        chosen.add(word)

    pieces = [_render_word(rng, ontology.prototypes[w], time_warp, frame_noise)
              for w in caption]
    rendered = np.concatenate(pieces, axis=0)
    truncated = rendered.shape[0] > t_max
    true_length = min(rendered.shape[0], t_max)
    frames = np.zeros((t_max, ontology.d_feat), dtype=np.float32)
    frames[:true_length] = rendered[:true_length]

    return CorpusItem(
        item_id=item_id, image_id=image_id, split="B",
        image_vec=image.astype(np.float32),
        utterance=UtteranceFeatures(frames=frames, true_length=true_length,
                                    frame_period=frame_period),
        transcript=caption, truncated=truncated)


def generate_judgments(ontology: Ontology, items: list[CorpusItem],
                       queries: list[str], num_annotators: int = 5,
                       annotator_noise: float = 0.1, seed: int = 0) -> Judgments:
    """Simulated relevance votes: strength is the max relatedness between the
    query and any transcript word; each annotator votes with that probability
    perturbed by Gaussian noise, clamped to [0, 1]."""
    query_ids = [ontology.word_index(q) for q in queries]
    rng = np.random.default_rng(seed)
    votes = np.zeros((len(queries), len(items)), dtype=np.int64)
    rel = ontology.relatedness.astype(np.float64)
    for col, item in enumerate(items):
        words = item.transcript or []
        for row, q in enumerate(query_ids):
            strength = float(rel[q, words].max()) if words else 0.0
            p = np.clip(strength + rng.normal(size=num_annotators) * annotator_noise,
                        0.0, 1.0)
            votes[row, col] = int((rng.random(num_annotators) < p).sum())
    j = Judgments(queries=list(queries),
                  utterance_ids=[it.item_id for it in items],
                  votes=votes, num_annotators=num_annotators)
    j.validate()
    return j


def split_assignments(num_images: int, seed: int, split_a: int, split_b: int,
                      split_dev: int, split_test: int) -> list[str]:
    """Disjoint image-level partition into A / B / dev / test."""
    wanted = split_a + split_b + split_dev + split_test
    if wanted > num_images:
        raise ConfigError(f"split sizes sum to {wanted} but only {num_images} images")
    rng = np.random.default_rng(seed)
    order = rng.permutation(num_images)
    labels = ["unused"] * num_images
    cursor = 0
    for name, count in (("A", split_a), ("B", split_b),
                        ("dev", split_dev), ("test", split_test)):
        for idx in order[cursor:cursor + count]:
            labels[idx] = name
        cursor += count
    return labels


def set_c_items(corpus: Corpus, fraction: float, seed: int | None = None) -> list[CorpusItem]:
    """Transcript-available subset of set B; nested across fractions.

    The selection permutation is seeded from the corpus generation seed, so
    a given corpus always yields the same subset for a given fraction.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"set-C fraction {fraction} outside [0, 1]")
    pool = corpus.split_items("B")
    if seed is None:
        seed = int(corpus.meta.get("seed", 0)) + 7919
    order = np.random.default_rng(seed).permutation(len(pool))
    count = int(round(fraction * len(pool)))
    return [pool[i] for i in order[:count]]


def select_keywords(corpus: Corpus, n: int, must_include: list[str] = ()) -> list[str]:
    """Top-n content words by set-A transcript frequency, must_include first."""
    counts = np.zeros(len(corpus.vocabulary), dtype=np.int64)
    for item in corpus.split_items("A"):
        for w in item.transcript or []:
            counts[w] += 1
    ranked = sorted((i for i in range(len(corpus.vocabulary))
                     if not corpus.stopword[i]),
                    key=lambda i: (-counts[i], i))
    chosen: list[str] = []
    for w in must_include:
        if w not in corpus.word_index:
            raise VocabularyError(f"keyword {w!r} not in corpus vocabulary")
        if w not in chosen:
            chosen.append(w)
    for i in ranked:
        if len(chosen) >= n:
            break
        w = corpus.vocabulary[i]
        if w not in chosen:
            chosen.append(w)
    return chosen[:n]


def choose_queries(corpus: Corpus, num_queries: int) -> list[str]:
    """Evaluation queries: planted synonym query words first, then frequent
    content words."""
    must = []
    if corpus.ontology is not None:
        must = [corpus.vocabulary[a] for a, _ in corpus.ontology.synonym_pairs]
    return select_keywords(corpus, num_queries, must_include=must)


def generate_corpus(config: CorpusConfig) -> tuple[Corpus, Judgments]:
    """Full pipeline: ontology, items, splits, and test-set judgments."""
    config.validate()
    ont = generate_ontology(
        config.seed, config.num_words, config.num_concepts, config.d_concept,
        config.d_feat, (config.prototype_len_min, config.prototype_len_max),
        concept_spread=config.concept_spread, word_jitter=config.word_jitter,
        gamma=config.relatedness_gamma,
        stopword_fraction=config.stopword_fraction,
        planted_synonyms=config.planted_synonyms)

    num_images = config.num_items // config.captions_per_image
    items: list[CorpusItem] = []
    for image_id in range(num_images):
        for cap in range(config.captions_per_image):
            idx = image_id * config.captions_per_image + cap
            items.append(synthesize_item(
                ont, [config.seed, 1000 + idx],
                (config.scene_size_min, config.scene_size_max),
                (config.caption_len_min, config.caption_len_max),
                config.t_max, image_noise=config.image_noise,
                frame_noise=config.frame_noise, time_warp=config.time_warp,
                relatedness_floor=config.relatedness_floor,
                stopword_rate=config.stopword_rate,
                item_id=f"item{idx:05d}", image_id=image_id,
                frame_period=config.frame_period))

    labels = split_assignments(num_images, config.seed, config.split_a,
                               config.split_b, config.split_dev, config.split_test)
    for item in items:
        item.split = labels[item.image_id]

    corpus = Corpus(d_feat=config.d_feat, t_max=config.t_max,
                    d_img=config.d_concept, frame_period=config.frame_period,
                    vocabulary=ont.vocabulary, stopword=ont.stopword,
                    items=items, ontology=ont,
                    meta={"seed": config.seed,
                          "num_items": config.num_items,
                          "captions_per_image": config.captions_per_image})

    queries = choose_queries(corpus, config.num_queries)
    judgments = generate_judgments(
        ont, corpus.split_items("test"), queries,
        num_annotators=config.num_annotators,
        annotator_noise=config.annotator_noise, seed=config.seed + 31337)
    return corpus, judgments


# ---------------------------------------------------------------------------
# Disk format


def save_corpus(corpus: Corpus, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    chunks: list[bytes] = []
    cursor = binio.blob_payload_offset()

    def put(arr: np.ndarray) -> int:
        nonlocal cursor
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(raw)
        offset = cursor
        cursor += len(raw)
        return offset

    records = []
    for item in corpus.items:
        item.utterance.validate()
        records.append({
            "id": item.item_id,
            "image_id": item.image_id,
            "split": item.split,
            "transcript": (None if item.transcript is None
                           else [corpus.vocabulary[w] for w in item.transcript]),
            "true_length": item.utterance.true_length,
            "truncated": item.truncated,
            "frames_offset": put(item.utterance.frames),
            "image_offset": put(item.image_vec),
        })

    ontology_meta = None
    if corpus.ontology is not None:
        ont = corpus.ontology
        ontology_meta = {
            "gamma": ont.gamma,
            "num_concepts": int(ont.cluster_centers.shape[0]),
            "d_concept": int(ont.cluster_centers.shape[1]),
            "word_cluster": ont.word_cluster.tolist(),
            "synonym_pairs": [list(p) for p in ont.synonym_pairs],
            "word_embeddings_offset": put(ont.word_embeddings),
            "cluster_centers_offset": put(ont.cluster_centers),
            "relatedness_offset": put(ont.relatedness),
            "prominence_offset": put(ont.prominence().astype(np.float32)),
            "prototypes": [{"offset": put(p), "length": int(p.shape[0])}
                           for p in ont.prototypes],
        }

    payload = b"".join(chunks)
    crc = binio.write_blob(os.path.join(directory, "corpus.bin"), payload)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "blob_file": "corpus.bin",
        "blob_crc32": crc,
        "d_feat": corpus.d_feat,
        "t_max": corpus.t_max,
        "d_img": corpus.d_img,
        "frame_period": corpus.frame_period,
        "vocabulary": corpus.vocabulary,
        "stopwords": corpus.stopword.astype(int).tolist(),
        "ontology": ontology_meta,
        "meta": corpus.meta,
        "items": records,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh)


def _floats_at(payload: bytes, base: int, file_offset: int, count: int,
               path: str) -> np.ndarray:
    start = file_offset - base
    end = start + count * 4
    if start < 0 or end > len(payload):
        raise TruncatedFileError(f"{path}: record points past end of blob")
    return np.frombuffer(payload[start:end], dtype="<f4").copy()


def load_corpus(directory) -> Corpus:
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{manifest_path}: unknown manifest format "
                          f"{manifest.get('format')!r}")
    if manifest.get("version") != MANIFEST_VERSION:
        raise VersionError(f"{manifest_path}: manifest version "
                           f"{manifest.get('version')}, expected {MANIFEST_VERSION}")

    blob_path = os.path.join(directory, manifest["blob_file"])
    payload = binio.read_blob(blob_path, expected_crc=manifest["blob_crc32"])
    base = binio.blob_payload_offset()
    d_feat, t_max, d_img = manifest["d_feat"], manifest["t_max"], manifest["d_img"]
    vocabulary = manifest["vocabulary"]
    word_index = {w: i for i, w in enumerate(vocabulary)}

    items = []
    for rec in manifest["items"]:
        frames = _floats_at(payload, base, rec["frames_offset"], t_max * d_feat,
                            blob_path).reshape(t_max, d_feat)
        image = _floats_at(payload, base, rec["image_offset"], d_img, blob_path)
        transcript = rec["transcript"]
        if transcript is not None:
            try:
                transcript = [word_index[w] for w in transcript]
            except KeyError as exc:
                raise VocabularyError(
                    f"{manifest_path}: transcript word {exc} not in vocabulary"
                ) from None
        items.append(CorpusItem(
            item_id=rec["id"], image_id=rec["image_id"], split=rec["split"],
            image_vec=image,
            utterance=UtteranceFeatures(frames=frames,
                                        true_length=rec["true_length"],
                                        frame_period=manifest["frame_period"]),
            transcript=transcript, truncated=rec["truncated"]))

    ontology = None
    om = manifest.get("ontology")
    if om is not None:
        w = len(vocabulary)
        k, d = om["num_concepts"], om["d_concept"]
        prototypes = [_floats_at(payload, base, p["offset"], p["length"] * d_feat,
                                 blob_path).reshape(p["length"], d_feat)
                      for p in om["prototypes"]]
        ontology = Ontology(
            vocabulary=vocabulary,
            stopword=np.array(manifest["stopwords"], dtype=bool),
            word_embeddings=_floats_at(payload, base, om["word_embeddings_offset"],
                                       w * d, blob_path).reshape(w, d),
            cluster_centers=_floats_at(payload, base, om["cluster_centers_offset"],
                                       k * d, blob_path).reshape(k, d),
            word_cluster=np.array(om["word_cluster"], dtype=np.int32),
            relatedness=_floats_at(payload, base, om["relatedness_offset"],
                                   w * w, blob_path).reshape(w, w),
            prototypes=prototypes, gamma=om["gamma"],
            word_prominence=_floats_at(payload, base, om["prominence_offset"],
                                       w, blob_path),
            synonym_pairs=[tuple(p) for p in om["synonym_pairs"]])

    return Corpus(d_feat=d_feat, t_max=t_max, d_img=d_img,
                  frame_period=manifest["frame_period"], vocabulary=vocabulary,
                  stopword=np.array(manifest["stopwords"], dtype=bool),
                  items=items, ontology=ontology, meta=manifest.get("meta", {}))


def save_judgments(judgments: Judgments, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# num_annotators={judgments.num_annotators}\n")
        fh.write("query,utterance,votes\n")
        for qi, q in enumerate(judgments.queries):
            for ui, u in enumerate(judgments.utterance_ids):
                fh.write(f"{q},{u},{judgments.votes[qi, ui]}\n")


def load_judgments(path) -> Judgments:
    num_annotators = 5
    rows: list[tuple[str, str, int]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "num_annotators":
                    num_annotators = int(value)
                continue
            if line == "query,utterance,votes":
                continue
            q, u, v = line.split(",")
            rows.append((q, u, int(v)))
    queries: list[str] = []
    utterances: list[str] = []
    for q, u, _ in rows:
        if q not in queries:
            queries.append(q)
        if u not in utterances:
            utterances.append(u)
    votes = np.zeros((len(queries), len(utterances)), dtype=np.int64)
    qpos = {q: i for i, q in enumerate(queries)}
    upos = {u: i for i, u in enumerate(utterances)}
    for q, u, v in rows:
        votes[qpos[q], upos[u]] = v
    j = Judgments(queries=queries, utterance_ids=utterances, votes=votes,
                  num_annotators=num_annotators)
    j.validate()
    return j


def corpus_checksum(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for item in corpus.items:
        h.update(item.item_id.encode())
        h.update(item.split.encode())
        h.update(item.image_vec.tobytes())
        h.update(item.utterance.frames.tobytes())
        if item.transcript is not None:
            h.update(np.asarray(item.transcript, dtype=np.int64).tobytes())
    return h.hexdigest()
