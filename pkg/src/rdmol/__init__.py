"""Method-of-lines solver and analysis toolkit for reaction-diffusion networks on the unit interval."""

__version__ = "0.1.0"
