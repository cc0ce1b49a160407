"""retriever_trainer: contrastive fine-tuning over exported triplet files."""

__version__ = "0.1.0"
