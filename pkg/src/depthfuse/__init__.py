"""Multi-view multi-person 3D pose fusion from 2D keypoints and aligned depth images."""

__version__ = "0.1.0"
