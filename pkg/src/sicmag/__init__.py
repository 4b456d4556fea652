"""Simulation and analysis toolkit for SiC V2-center ensemble magnetometry."""

__version__ = "0.1.0"
