"""MIMO receivers that decode with a noisy channel estimate: BER simulation and achievable rates."""

__version__ = "0.1.0"
