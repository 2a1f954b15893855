"""Two-stage self-supervised video pretraining (distillation warm-up + segment pace prediction)."""

__version__ = "0.1.0"
