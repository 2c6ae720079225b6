"""dialoglm: dialogue language modeling with dynamic-scope attention,
encoder-decoder baselines, LDA-based candidate reranking, and a full
evaluation suite (PPL, WER, recall@N, BLEU, Distinct-1)."""

__version__ = "0.1.0"
