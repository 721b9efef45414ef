"""Desk-scale visually-situated language understanding.

Dual encoders (vision patches + typed feature evidence) aligned with a
contrastive objective, a prompt-conditioned decoder trained on a multitask
curriculum over self-generated synthetic documents, and a soft-prompt bridge
into a frozen toy language model.
"""

__version__ = "0.1.0"
