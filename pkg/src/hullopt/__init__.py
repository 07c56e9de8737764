"""Hull shape optimization: FFD and RBF morphing, POD-GPR reduced-order models and ASGA."""

__version__ = "0.1.0"
