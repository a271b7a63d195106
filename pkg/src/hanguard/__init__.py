"""Hanguard: per-flow access control for IoT devices on a home network."""

__version__ = "0.1.0"

import logging

logging.getLogger(__name__).addHandler(logging.NullHandler())
