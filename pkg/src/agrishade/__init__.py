"""Ground shading and PAR distribution under agrivoltaic layouts."""

__version__ = "0.1.0"
