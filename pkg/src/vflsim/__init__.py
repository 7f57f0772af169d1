"""Federated learning over a vehicular edge network under imperfect CSI.

Seedable, deterministic desk-scale simulator: Gauss-Markov fading with a
closed-form transmission-success probability, per-round joint client
inclusion and rate selection by block coordinate descent, and
inverse-probability-weighted model aggregation.
"""

__version__ = "0.1.0"

from .config import ConfigError, SimConfig, parse_config, serialize_config  # noqa: F401
