"""Minimum-variance linear precoding for OSTBC transmission with
polarized antennas under an interference constraint."""

__version__ = "0.1.0"
