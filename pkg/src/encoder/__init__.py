"""
Radiograph feature extraction
"""
from .unet import ViewEncoder

__all__ = ["ViewEncoder"]
