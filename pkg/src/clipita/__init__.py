"""Small contrastive image-text model for Italian captions, built on numpy."""

__version__ = "0.1.0"
