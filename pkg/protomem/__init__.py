"""Прототипная память 3D-конфигураций человеческого тела."""

__version__ = "0.1.0"
