"""Forward attention (with and without a transition agent) for monotonic seq2seq alignment."""

__version__ = "0.1.0"
