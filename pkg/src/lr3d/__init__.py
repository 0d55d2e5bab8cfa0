"""Long-range monocular 3D detection from 2D supervision."""
__version__ = "0.1.0"
