"""Radar-anchored metric depth recovery at desk scale.

Label generation from sparse LiDAR, a small numpy radar-refinement network,
radar screening/refinement and global affine alignment of monocular
inverse depth, depth metrics, and a deterministic synthetic scene generator.
"""

__version__ = "0.1.0"
