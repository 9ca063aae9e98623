"""Shared fixtures: a small corpus and a trained tagger, built once."""

import numpy as np
import pytest

from speechret import corpus as C
from speechret import tagger as TG


def mini_corpus_config(**kw):
    base = dict(seed=7, num_items=300, num_words=24, num_concepts=6,
                d_concept=8, d_feat=6, t_max=80, prototype_len_min=4,
                prototype_len_max=8, caption_len_min=3, caption_len_max=6,
                split_a=80, split_b=140, split_dev=40, split_test=40,
                num_queries=8, planted_synonyms=1)
    base.update(kw)
    return C.CorpusConfig(**base)


@pytest.fixture(scope="session")
def mini_corpus():
    return C.generate_corpus(mini_corpus_config())


@pytest.fixture(scope="session")
def mini_tagger(mini_corpus):
    corpus, judgments = mini_corpus
    tag_vocab = C.select_keywords(corpus, 16, must_include=judgments.queries)
    cfg = TG.TaggerConfig(d_img=corpus.d_img, hidden=(32, 32), n_vis=16,
                          steps=300, seed=3)
    params, _ = TG.train_tagger(corpus.split_items("A"), tag_vocab,
                                corpus.vocabulary, cfg)
    return params
