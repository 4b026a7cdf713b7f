"""Cross-domain semantic parsing by ranking canonical utterances with a paraphrase model."""

__version__ = "0.1.0"
