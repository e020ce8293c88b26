"""Learned radar measurement models and extended-object LMB tracking of vehicles."""

__version__ = "0.1.0"
