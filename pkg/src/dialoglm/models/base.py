"""Shared containers and conventions for the model zoo.

Scoring convention used by every model here: a sequence w_0..w_{n-1} is
scored position by position, where position t is scored from the recurrent
state that has consumed tokens 0..t-1. The initial state (nothing consumed)
is the zero vector, so the very first position of a language-model sequence
is scored from all-zero logits context. Teacher-forced scoring and stepwise
decoding share this convention exactly, so they produce identical
distributions for identical prefixes.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SequenceScore:
    """Per-position scores for one teacher-forced pass.

    ``alphas`` is present for attention models: one weight row per scored
    position (None at positions scored without attention).
    """

    logp: float
    per_token: np.ndarray
    argmax: np.ndarray
    alphas: list | None = None


@dataclass
class DialogueScore:
    """What a model can say about one dialogue, for the metric suite.

    ``per_token`` / ``argmax`` / ``refs`` cover exactly the positions this
    model scores (the whole flattened dialogue for language models, the
    final utterance for seq2seq); ``last_slice`` marks the final-utterance
    span within those positions.
    """

    per_token: np.ndarray
    argmax: np.ndarray
    refs: np.ndarray
    last_slice: slice


@dataclass
class LmDecodeState:
    """Stepwise decoding state for the language-model family.

    ``h`` scores the next position; ``prev_h`` is the state before the most
    recent token was consumed (the attention query). ``reps`` holds one
    token representation per consumed token; ``ureps`` caches U @ rep for
    the attention models. States are cheap to branch: ``advance`` copies the
    lists shallowly.
    """

    tokens: list = field(default_factory=list)
    h: np.ndarray = None
    prev_h: np.ndarray = None
    reps: list = field(default_factory=list)
    ureps: list = field(default_factory=list)
    theta: np.ndarray = None


@dataclass
class Seq2SeqDecodeState:
    """Decoder-side state; the encoder pass is shared read-only by branches."""

    enc_states: np.ndarray  # (M+1, d)
    uenc: np.ndarray  # (M+1, d) cached U @ enc_states[m], attention only
    tokens: list = field(default_factory=list)
    h: np.ndarray = None
    prev_h: np.ndarray = None
