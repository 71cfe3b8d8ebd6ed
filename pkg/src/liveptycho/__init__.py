"""Live (streaming) ptychographic phase retrieval with a fixed-size exit-wave buffer."""

__version__ = "0.1.0"
