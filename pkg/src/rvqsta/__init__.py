"""Residual vector quantization with semantic token assignment (RVQ-STA),
a semantic-token distillation branch, and a small numpy trainer."""

__version__ = "0.1.0"
