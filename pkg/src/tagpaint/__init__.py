"""Tag-conditioned line art colorization toolkit."""

__version__ = "0.1.0"
