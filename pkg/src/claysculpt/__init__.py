"""Goal-conditioned diffusion imitation learning for simulated clay sculpting."""

__version__ = "0.1.0"
