"""Synthetic corpus generators for tests and desk-scale experiments.

Three families:

* ``copy_task`` -- the final utterance recalls a payload token planted in
  the first utterance, at least 20 flattened positions back. Separates
  models that can reach back over the whole history from ones that must
  carry the payload through the recurrence.
* ``topical`` -- every turn of a dialogue draws from one topic's word set
  (plus shared function words); optionally a fraction of responses are
  generic function-word sentences, which trains models to prefer safe
  replies and gives a topic reranker room to help.
* ``topic_documents`` -- plain word bags from disjoint topic vocabularies,
  for exercising the LDA machinery in isolation.

All generators emit word-level dialogues compatible with the corpus file
format; build a Vocabulary over them to get token ids.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class CopyTaskCorpus:
    dialogues: list  # word-level dialogues: [turn][word]
    payload_flat_index: list  # flattened position of the planted payload
    recall_flat_index: list  # flattened position of the recalling token
    payload_words: list
    filler_words: list
    cue_word: str


def copy_task(n_dialogues, seed, n_payload=12, n_filler=20, u1_len=7, u2_len=12):
    """Dialogues whose last utterance repeats a token from the first one.

    Layout per dialogue (marker and </u> positions included in indices):
    turn 1 holds the payload at a random early slot among fillers, turn 2
    is pure filler, turn 3 is [cue, filler, payload]. The recall distance
    is at least 20 flattened positions by construction.
    """
    rng = np.random.default_rng(seed)
    payload_words = [f"p{i:02d}" for i in range(n_payload)]
    filler_words = [f"f{i:02d}" for i in range(n_filler)]
    cue = "cue"
    dialogues = []
    payload_pos = []
    recall_pos = []
    for _ in range(n_dialogues):
        payload = payload_words[rng.integers(0, n_payload)]
        slot = int(rng.integers(1, 4))  # payload index within turn 1
        u1 = [filler_words[rng.integers(0, n_filler)] for _ in range(u1_len)]
        u1[slot] = payload
        u2 = [filler_words[rng.integers(0, n_filler)] for _ in range(u2_len)]
        u3 = [cue, filler_words[rng.integers(0, n_filler)], payload]
        dialogues.append([u1, u2, u3])
        # flattened: [A] u1 [</u>] [B] u2 [</u>] [A] u3 [</u>] [</d>]
        p_idx = 1 + slot
        r_idx = (1 + u1_len + 1) + (1 + u2_len + 1) + 1 + 2
        payload_pos.append(p_idx)
        recall_pos.append(r_idx)
        assert r_idx - p_idx >= 20
    return CopyTaskCorpus(
        dialogues=dialogues,
        payload_flat_index=payload_pos,
        recall_flat_index=recall_pos,
        payload_words=payload_words,
        filler_words=filler_words,
        cue_word=cue,
    )


@dataclass
class TopicalCorpus:
    dialogues: list
    topic_of: list  # topic index per dialogue
    is_generic_response: list
    topic_words: list  # per topic, its word list
    function_words: list
    generic_sentences: list
    response_templates: list  # per topic, its fixed response sentences (may be empty)


def _topical_sentence(rng, topic_words, function_words, length, function_prob):
    words = []
    for _ in range(length):
        if rng.random() < function_prob:
            words.append(function_words[rng.integers(0, len(function_words))])
        else:
            words.append(topic_words[rng.integers(0, len(topic_words))])
    return words


def topical(n_dialogues, seed, n_topics=4, words_per_topic=12, n_function=10,
            n_turns=3, min_len=5, max_len=8, function_prob=0.35,
            generic_prob=0.0, templates_per_topic=0):
    """Topic-coherent dialogues, optionally with generic safe responses.

    Every turn of a dialogue draws from the same topic's word set mixed
    with shared function words. With probability ``generic_prob`` the final
    turn is replaced by one of a small set of fixed function-word
    sentences. With ``templates_per_topic`` > 0, topical responses come
    from that many fixed per-topic sentences instead of fresh samples, so
    they form identifiable high-probability continuations a decoder can
    actually propose.
    """
    rng = np.random.default_rng(seed)
    topic_words = [
        [f"t{k}w{j:02d}" for j in range(words_per_topic)] for k in range(n_topics)
    ]
    function_words = [f"s{j}" for j in range(n_function)]
    f = lambda i: function_words[i % n_function]
    generic_sentences = [
        [f(0), f(1), f(2)],
        [f(3), f(4)],
        [f(5), f(6), f(7)],
        [f(8), f(9), f(0)],
    ]
    templates = []
    for k in range(n_topics):
        templates.append([
            _topical_sentence(rng, topic_words[k], function_words,
                              int(rng.integers(4, 7)), 0.15)
            for _ in range(templates_per_topic)
        ])
    dialogues = []
    topic_of = []
    is_generic = []
    for _ in range(n_dialogues):
        k = int(rng.integers(0, n_topics))
        turns = []
        for _ in range(n_turns - 1):
            length = int(rng.integers(min_len, max_len + 1))
            turns.append(_topical_sentence(rng, topic_words[k], function_words,
                                           length, function_prob))
        generic = rng.random() < generic_prob
        if generic:
            turns.append(list(generic_sentences[rng.integers(0, len(generic_sentences))]))
        elif templates[k]:
            turns.append(list(templates[k][rng.integers(0, len(templates[k]))]))
        else:
            length = int(rng.integers(min_len, max_len + 1))
            turns.append(_topical_sentence(rng, topic_words[k], function_words,
                                           length, function_prob))
        dialogues.append(turns)
        topic_of.append(k)
        is_generic.append(bool(generic))
    return TopicalCorpus(
        dialogues=dialogues,
        topic_of=topic_of,
        is_generic_response=is_generic,
        topic_words=topic_words,
        function_words=function_words,
        generic_sentences=generic_sentences,
        response_templates=templates,
    )


@dataclass
class TopicDocuments:
    docs: list  # word lists
    topic_of: list
    topic_words: list


def topic_documents(n_docs, seed, n_topics=2, words_per_topic=15, doc_len=20):
    """Word bags with disjoint per-topic vocabularies."""
    rng = np.random.default_rng(seed)
    topic_words = [
        [f"t{k}w{j:02d}" for j in range(words_per_topic)] for k in range(n_topics)
    ]
    docs = []
    topic_of = []
    for _ in range(n_docs):
        k = int(rng.integers(0, n_topics))
        docs.append([topic_words[k][rng.integers(0, words_per_topic)]
                     for _ in range(doc_len)])
        topic_of.append(k)
    return TopicDocuments(docs=docs, topic_of=topic_of, topic_words=topic_words)
