"""Street-level tree health from paired multispectral (RGN) and thermal captures."""

__version__ = "0.1.0"
